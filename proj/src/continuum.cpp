#include "modalchain/continuum.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace modalchain::continuum {

namespace {

constexpr int kPhiPlus = 0;
constexpr int kPhiMinus = 1;
constexpr int kChiMinus = 3;

// Flat indices in A(4) (x) E(4).
constexpr int kPpE1 = 0;   // phi_+ e1
constexpr int kCpE2 = 9;   // chi_+ e2
constexpr int kPmE1 = 4;   // phi_- e1
constexpr int kPmE3 = 6;   // phi_- e3
constexpr int kCmE4 = 15;  // chi_- e4

struct Amplitudes {
    double a, b, c, d, x, s;
    double da, db, dc, dd, dx, ds;
};

Amplitudes amplitudes(const CrossoverModel& m, double t) {
    Amplitudes r{};
    const double a2 = m.p0 + m.a1 * t, b2 = m.qp() - m.a1 * t;
    const double c2 = m.p0 + m.a2 * t, d2 = m.qm() - m.a2 * t;
    if (a2 <= 0 || b2 <= 0 || c2 <= 0 || d2 <= 0) {
        std::ostringstream os;
        os << "crossover model: t=" << t << " is outside the range where all branch masses are positive";
        throw std::domain_error(os.str());
    }
    r.a = std::sqrt(a2);
    r.b = std::sqrt(b2);
    r.c = std::sqrt(c2);
    r.d = std::sqrt(d2);
    r.x = m.p0 * m.delta / r.a;
    if (r.x >= r.c) throw std::domain_error("crossover model: off-diagonal element exceeds branch amplitude");
    r.s = std::sqrt(c2 - r.x * r.x);
    r.da = m.a1 / (2 * r.a);
    r.db = -m.a1 / (2 * r.b);
    r.dc = m.a2 / (2 * r.c);
    r.dd = -m.a2 / (2 * r.d);
    r.dx = -m.p0 * m.delta * r.da / (r.a * r.a);
    r.ds = (m.a2 - 2 * r.x * r.dx) / (2 * r.s);
    return r;
}

// Rotation taking unit u to unit w, acting in their span.
Eigen::Matrix3d align(const Eigen::Vector3d& u, const Eigen::Vector3d& w) {
    const Eigen::Vector3d v = u.cross(w);
    const double c = u.dot(w);
    Eigen::Matrix3d k;
    k << 0, -v(2), v(1), v(2), 0, -v(0), -v(1), v(0), 0;
    return Eigen::Matrix3d::Identity() + k + k * k / (1.0 + c);
}

int content_of(const OnticDecomposition& d, int i) { return crossover_content(d.ontic[i]); }

double phi_plus_weight(const CrossoverModel& m, double t, int label) {
    const auto d = ontic_decompose(crossover_state(m, t), {0}, t);
    return std::norm(d.ontic[label](kPhiPlus));
}

double bisect_weight(const CrossoverModel& m, double lo, double hi, int label, double target) {
    double flo = phi_plus_weight(m, lo, label) - target;
    for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = phi_plus_weight(m, mid, label) - target;
        if ((fm > 0) == (flo > 0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace

double CrossoverModel::tau() const { return 1.0 / std::max(std::abs(a1), std::abs(a2)); }

double CrossoverModel::qp() const { return q_plus >= 0 ? q_plus : 0.65 * (1 - 2 * p0); }

double CrossoverModel::qm() const { return q_minus >= 0 ? q_minus : 0.35 * (1 - 2 * p0); }

void CrossoverModel::validate() const {
    if (!(p0 > 0 && p0 < 0.5)) throw std::invalid_argument("crossover model: p0 must lie in (0, 1/2)");
    if (!(delta > 0 && delta < 1)) throw std::invalid_argument("crossover model: delta must lie in (0, 1)");
    if (a1 == a2) throw std::invalid_argument("crossover model: a1 and a2 must differ");
    if (std::abs(2 * p0 + qp() + qm() - 1) > 1e-12)
        throw std::invalid_argument("crossover model: 2 p0 + q_plus + q_minus must equal 1");
}

namespace foil {

RateMatrix j_matrix(const OnticDecomposition& dec, const LinearMap& h) {
    const int n = dec.labels();
    std::vector<CVec> x(n), hx(n);
    for (int j = 0; j < n; ++j) {
        if (dec.probs(j) <= 0.0) continue;
        x[j] = dec.product_state(j);
        hx[j] = h(x[j]);
    }
    RateMatrix r;
    r.J = RMat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        if (dec.probs(i) <= 0.0) continue;
        for (int j = i + 1; j < n; ++j) {
            if (dec.probs(j) <= 0.0) continue;
            const double v = 2.0 * std::sqrt(dec.probs(i) * dec.probs(j)) * x[i].dot(hx[j]).imag();
            r.J(i, j) = v;
            r.J(j, i) = -v;
        }
    }
    r.T = bell_rates(r.J, dec.probs).T;
    return r;
}

RateMatrix j_matrix(const OnticDecomposition& dec, const CMat& h) {
    if (h.rows() != dec.dims.total()) throw std::invalid_argument("j_matrix: operator dimension mismatch");
    return j_matrix(dec, LinearMap([&h](const CVec& v) -> CVec { return h * v; }));
}

RateMatrix bell_rates(const RMat& J, const RVec& p) {
    const long n = J.rows();
    if (J.cols() != n || p.size() != n) throw std::invalid_argument("bell_rates: shape mismatch");
    RateMatrix r;
    r.J = J;
    r.T = RMat::Zero(n, n);
    for (long j = 0; j < n; ++j) {
        if (p(j) <= kNullCutoff) continue;
        for (long i = 0; i < n; ++i)
            if (i != j) r.T(i, j) = std::max(J(i, j), 0.0) / p(j);
    }
    return r;
}

MasterSeries integrate_master(const RateProvider& rates, const RVec& p0, double t0, double t1, double dt) {
    if (!(dt > 0)) throw std::invalid_argument("integrate_master: dt must be positive");
    if (t1 < t0) throw std::invalid_argument("integrate_master: t1 < t0");
    const long steps = std::max<long>(1, std::lround(std::ceil((t1 - t0) / dt - 1e-9)));
    const double h = (t1 - t0) / static_cast<double>(steps);

    auto deriv = [&](double t, const RVec& p) -> RVec {
        const RMat T = rates(t);
        if (T.rows() != p.size()) throw std::invalid_argument("integrate_master: rate matrix shape mismatch");
        const RVec out = T.colwise().sum().transpose();
        const double fastest = out.size() ? out.maxCoeff() : 0.0;
        if (h * fastest > 0.1) {
            std::ostringstream os;
            os << "integrate_master: dt=" << h << " does not resolve rate " << fastest << " at t=" << t
               << "; use dt <= " << 0.1 / fastest;
            throw std::domain_error(os.str());
        }
        return T * p - out.cwiseProduct(p);
    };

    MasterSeries s;
    s.times.reserve(steps + 1);
    s.p.reserve(steps + 1);
    RVec p = p0;
    s.times.push_back(t0);
    s.p.push_back(p);
    for (long k = 0; k < steps; ++k) {
        const double t = t0 + static_cast<double>(k) * h;
        const RVec k1 = deriv(t, p);
        const RVec k2 = deriv(t + 0.5 * h, p + 0.5 * h * k1);
        const RVec k3 = deriv(t + 0.5 * h, p + 0.5 * h * k2);
        const RVec k4 = deriv(t + h, p + h * k3);
        p += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
        s.times.push_back(t0 + static_cast<double>(k + 1) * h);
        s.p.push_back(p);
    }
    return s;
}

}  // namespace foil

CrossoverEigen crossover_eigensystem(const CrossoverModel& m, double t) {
    const double at = m.a() * t, g = m.p0 * m.delta;
    const double r = std::hypot(at, g);
    const double mean = m.p0 + 0.5 * (m.a1 + m.a2) * t;
    // at + r without cancellation for at < 0.
    const double num = at >= 0 ? at + r : g * g / (r - at);
    CrossoverEigen e;
    e.p_plus = mean + r;
    e.p_minus = mean - r;
    e.theta = std::atan2(num, g);
    const double c = std::cos(e.theta), s = std::sin(e.theta);
    e.psi_plus << s, c;
    e.psi_minus << c, -s;
    return e;
}

StateVector crossover_state(const CrossoverModel& m, double t) {
    const Amplitudes r = amplitudes(m, t);
    CVec v = CVec::Zero(16);
    v(kPpE1) = r.a;
    v(kCpE2) = r.b;
    v(kPmE1) = r.x;
    v(kPmE3) = r.s;
    v(kCmE4) = r.d;
    v /= v.norm();
    return StateVector(v, DimSignature({4, 4}));
}

CMat crossover_generator(const CrossoverModel& m, double t) {
    const Amplitudes r = amplitudes(m, t);
    RMat k = RMat::Zero(16, 16);
    {
        const double n1 = std::hypot(r.a, r.b);
        const Eigen::Vector2d u(r.a / n1, r.b / n1), du(r.da / n1, r.db / n1);
        const Eigen::Matrix2d k2 = du * u.transpose() - u * du.transpose();
        const int idx[2] = {kPpE1, kCpE2};
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) k(idx[i], idx[j]) = k2(i, j);
    }
    {
        const Eigen::Vector3d w(r.x, r.s, r.d), dw(r.dx, r.ds, r.dd);
        const double n2 = w.norm();
        const Eigen::Vector3d u = w / n2, du = dw / n2;
        const Eigen::Matrix3d k3 = du * u.transpose() - u * du.transpose();
        const int idx[3] = {kPmE1, kPmE3, kCmE4};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) k(idx[i], idx[j]) = k3(i, j);
    }
    return cplx(0, 1) * k.cast<cplx>();
}

CMat crossover_step(const CrossoverModel& m, double t, double eta) {
    const Amplitudes r0 = amplitudes(m, t), r1 = amplitudes(m, t + eta);
    CMat u = CMat::Identity(16, 16);
    {
        const Eigen::Vector2d p(r0.a, r0.b), q(r1.a, r1.b);
        const Eigen::Vector2d pu = p.normalized(), qu = q.normalized();
        const double c = pu.dot(qu), s = pu(0) * qu(1) - pu(1) * qu(0);
        const int idx[2] = {kPpE1, kCpE2};
        u(idx[0], idx[0]) = c;
        u(idx[0], idx[1]) = -s;
        u(idx[1], idx[0]) = s;
        u(idx[1], idx[1]) = c;
    }
    {
        const Eigen::Vector3d p(r0.x, r0.s, r0.d), q(r1.x, r1.s, r1.d);
        const Eigen::Matrix3d rot = align(p.normalized(), q.normalized());
        const int idx[3] = {kPmE1, kPmE3, kCmE4};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) u(idx[i], idx[j]) = rot(i, j);
    }
    return u;
}

int crossover_content(const CVec& psi) {
    for (long k = 0; k < psi.size(); ++k)
        if (std::norm(psi(k)) > 0.5) return static_cast<int>(k);
    return -1;
}

void check_regime(const CrossoverModel& m, double eta) {
    const double tau = m.tau();
    const double lo = 1e3 * tau * m.delta, hi = 1e-2 * tau;
    if (!(eta >= lo && eta <= hi)) {
        std::ostringstream os;
        os << "macro-flip comparison needs 1e3*tau*Delta <= eta <= 1e-2*tau, i.e. eta in [" << lo << ", " << hi
           << "]; got eta=" << eta << " with Delta=" << m.delta;
        throw RegimeError(os.str());
    }
}

MacroflipReport macroflip_compare(const CrossoverModel& m, double eta, double t0, double t1, double continuum_dt) {
    m.validate();
    check_regime(m, eta);
    const double span = t1 - t0;
    const long n = std::lround(span / eta);
    if (n < 1 || std::abs(static_cast<double>(n) * eta - span) > 1e-9 * std::max(1.0, std::abs(span)))
        throw std::invalid_argument("macroflip_compare: t_span must be a whole number of steps eta");

    MacroflipReport rep;
    rep.eta = eta;
    rep.t0 = t0;
    rep.t1 = t1;
    rep.continuum_dt = continuum_dt;

    // Coarse-grained branch.
    const std::vector<int> cut{0};
    OnticDecomposition prev = ontic_decompose(crossover_state(m, t0), cut, t0);
    const OnticDecomposition first = prev;
    std::vector<TransitionStep> steps;
    steps.reserve(n);
    for (long k = 0; k <= n; ++k) {
        const double t = t0 + static_cast<double>(k) * eta;
        const CrossoverEigen e = crossover_eigensystem(m, t);
        rep.times.push_back(t);
        rep.p_plus.push_back(e.p_plus);
        rep.p_minus.push_back(e.p_minus);
        rep.theta.push_back(e.theta);
        if (k == n) break;
        const double tn = t0 + static_cast<double>(k + 1) * eta;
        auto [next, mr] = match_labels(prev, ontic_decompose(crossover_state(m, tn), cut, tn));
        rep.coarse_min_overlap = std::min(rep.coarse_min_overlap, mr.min_overlap);
        const RMat V = v_exact(prev, next, Propagator{crossover_step(m, t, eta), eta});
        steps.push_back(transition_matrix(V, prev.probs, eta, t));
        if (!steps.back().consistent) {
            std::ostringstream os;
            os << "macroflip_compare: coarse step " << k << " at t=" << t << " is inconsistent; use a smaller eta";
            throw std::domain_error(os.str());
        }
        prev = next;
    }
    const RMat composed = compose(steps);
    for (int i = 0; i < first.labels(); ++i) {
        rep.coarse_start_content.push_back(content_of(first, i));
        rep.coarse_end_content.push_back(content_of(prev, i));
        if (rep.coarse_start_content.back() == kPhiPlus) rep.coarse_start_label = i;
    }
    if (rep.coarse_start_label < 0) throw std::domain_error("macroflip_compare: no label carries phi_+ at t0");
    rep.coarse_labels_keep_content = rep.coarse_start_content == rep.coarse_end_content;
    for (int i = 0; i < prev.labels(); ++i) {
        const int c = rep.coarse_end_content[i];
        if (c == kPhiMinus || c == kChiMinus) rep.coarse_cross_prob += composed(i, rep.coarse_start_label);
    }

    // Continuum branch with eigenvalue-ordered labels.
    auto rates = [&](double t) -> RMat {
        const auto d = ontic_decompose(crossover_state(m, t), cut, t);
        return foil::j_matrix(d, crossover_generator(m, t)).T;
    };
    RVec occ = RVec::Zero(first.labels());
    occ(rep.coarse_start_label) = 1.0;
    const foil::MasterSeries series = foil::integrate_master(rates, occ, t0, t1, continuum_dt);
    const auto last = ontic_decompose(crossover_state(m, t1), cut, t1);
    const RVec& pend = series.p.back();
    for (int i = 0; i < last.labels(); ++i)
        if (content_of(last, i) == kPhiMinus) rep.continuum_flip_prob += pend(i);
    // Sample the occupation at the coarse grid for emission.
    for (double t : rep.times) {
        const double f = (t - t0) / (t1 - t0) * static_cast<double>(series.p.size() - 1);
        const auto idx = static_cast<std::size_t>(std::clamp<long>(std::lround(f), 0, series.p.size() - 1));
        rep.continuum_occupation.push_back(series.p[idx]);
    }
    rep.ratio = rep.continuum_flip_prob > 0 ? rep.coarse_cross_prob / rep.continuum_flip_prob : 0.0;

    // Width of the phi_+ -> phi_- swap of the tracked eigenvector.
    const int tracked = rep.coarse_start_label;
    const double w90 = bisect_weight(m, t0, t1, tracked, 0.9);
    const double w10 = bisect_weight(m, t0, t1, tracked, 0.1);
    rep.flip_window = std::abs(w10 - w90);
    rep.flip_window_tau_delta = rep.flip_window / (m.tau() * m.delta);
    return rep;
}

}  // namespace modalchain::continuum
