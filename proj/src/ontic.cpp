#include "modalchain/ontic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/SVD>

namespace modalchain {

CVec OnticDecomposition::product_state(int i) const {
    return join_cut(ontic.at(i), mirrors.at(i), dims, cut);
}

CVec OnticDecomposition::reconstruct() const {
    CVec out = CVec::Zero(dims.total());
    for (int i = 0; i < labels(); ++i) {
        if (probs(i) <= 0.0) continue;
        out += std::sqrt(probs(i)) * product_state(i);
    }
    return out;
}

OnticDecomposition ontic_decompose(const StateVector& psi, const std::vector<int>& cut, double time) {
    if (cut.empty()) throw std::invalid_argument("ontic_decompose: cut must name at least one factor");
    const std::vector<int> rest = psi.dims.complement(cut);
    if (rest.empty()) throw std::invalid_argument("ontic_decompose: complement of the cut is empty");

    const CMat m = bipartite_matrix(psi, cut);
    Eigen::JacobiSVD<CMat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const RVec s = svd.singularValues();
    const CMat& u = svd.matrixU();
    const CMat& v = svd.matrixV();

    OnticDecomposition d;
    d.time = time;
    d.dims = psi.dims;
    d.cut = cut;
    d.swapped = m.rows() > m.cols();
    const long r = s.size();
    d.probs = s.array().square();
    d.ontic.reserve(r);
    d.mirrors.reserve(r);
    for (long i = 0; i < r; ++i) {
        d.ontic.push_back(u.col(i));
        d.mirrors.push_back(v.col(i).conjugate());
    }
    d.rank = static_cast<int>((d.probs.array() > kNullCutoff).count());
    for (long i = 0; i + 1 < d.rank; ++i)
        if (s(i) - s(i + 1) <= kDegeneracyTol) d.degenerate = true;
    return d;
}

std::vector<int> max_weight_assignment(const RMat& weight) {
    const int n = static_cast<int>(weight.rows());
    if (weight.cols() != n) throw std::invalid_argument("max_weight_assignment: matrix must be square");
    if (n == 0) return {};
    const double big = weight.maxCoeff();
    // Shortest augmenting path form of the Hungarian method on cost = big - weight.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = (big - weight(i0 - 1, j - 1)) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> result(n, -1);
    for (int j = 1; j <= n; ++j) result[p[j] - 1] = j - 1;
    return result;
}

std::pair<OnticDecomposition, MatchReport> match_labels(const OnticDecomposition& prev, const OnticDecomposition& next) {
    if (!(prev.dims == next.dims) || prev.cut != next.cut)
        throw std::invalid_argument("match_labels: decompositions live on different cuts");
    const int n = prev.labels();
    if (next.labels() != n) throw std::invalid_argument("match_labels: label counts differ");

    RMat w(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) w(r, c) = std::norm(prev.ontic[r].dot(next.ontic[c]));
    const std::vector<int> assign = max_weight_assignment(w);

    OnticDecomposition out = next;
    MatchReport rep;
    rep.permutation = assign;
    for (int r = 0; r < n; ++r) {
        out.probs(r) = next.probs(assign[r]);
        out.ontic[r] = next.ontic[assign[r]];
        out.mirrors[r] = next.mirrors[assign[r]];
    }

    // Rotate inside blocks of equal Schmidt coefficient to follow the previous basis.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return out.probs(a) > out.probs(b); });
    std::size_t start = 0;
    while (start < order.size()) {
        std::size_t end = start + 1;
        while (end < order.size() &&
               std::sqrt(std::max(out.probs(order[end - 1]), 0.0)) - std::sqrt(std::max(out.probs(order[end]), 0.0)) <=
                   kDegeneracyTol)
            ++end;
        const int k = static_cast<int>(end - start);
        if (k > 1) {
            CMat nb(out.ontic[0].size(), k), pb(prev.ontic[0].size(), k), mb(out.mirrors[0].size(), k);
            for (int q = 0; q < k; ++q) {
                const int lab = order[start + q];
                nb.col(q) = out.ontic[lab];
                pb.col(q) = prev.ontic[lab];
                mb.col(q) = out.mirrors[lab];
            }
            const CMat a = pb.adjoint() * nb;
            Eigen::JacobiSVD<CMat> sv(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
            const CMat rot = sv.matrixV() * sv.matrixU().adjoint();
            const CMat nb2 = nb * rot;
            const CMat mb2 = mb * rot.conjugate();
            for (int q = 0; q < k; ++q) {
                const int lab = order[start + q];
                out.ontic[lab] = nb2.col(q);
                out.mirrors[lab] = mb2.col(q);
            }
        }
        start = end;
    }

    rep.overlaps.resize(n);
    rep.min_overlap = 1.0;
    for (int i = 0; i < n; ++i) {
        const cplx z = prev.ontic[i].dot(out.ontic[i]);
        if (std::abs(z) > 0.0) {
            const cplx ph = z / std::abs(z);
            out.ontic[i] *= std::conj(ph);
            out.mirrors[i] *= ph;
        }
        rep.overlaps[i] = std::norm(z);
        const bool pn = prev.is_null(i), nn = out.is_null(i);
        if (pn != nn) rep.rank_changed = true;
        if (!pn && !nn) rep.min_overlap = std::min(rep.min_overlap, rep.overlaps[i]);
    }
    rep.min_overlap = std::clamp(rep.min_overlap, 0.0, 1.0);
    rep.continuity_degraded = rep.min_overlap < 0.5;
    out.degenerate = next.degenerate;
    return {out, rep};
}

RMat overlap_matrix(const std::vector<CVec>& states) {
    const int n = static_cast<int>(states.size());
    RMat o(n, n);
    for (int i = 0; i < n; ++i) {
        if (states[i].size() != states[0].size()) throw std::invalid_argument("overlap_matrix: dimension mismatch");
        for (int j = 0; j < n; ++j) o(i, j) = i == j ? 1.0 : std::abs(states[i].dot(states[j]));
    }
    return o;
}

RMat overlap_matrix(const std::vector<StateVector>& states) {
    std::vector<CVec> v;
    v.reserve(states.size());
    for (const auto& s : states) v.push_back(s.amp);
    return overlap_matrix(v);
}

double gaussian_distinctness(double n, double length, double ell) {
    if (!(ell > 0.0)) throw std::invalid_argument("gaussian_distinctness: ell must be positive");
    if (n < 1.0) throw std::invalid_argument("gaussian_distinctness: N must be >= 1");
    if (length < 0.0) throw std::invalid_argument("gaussian_distinctness: L must be >= 0");
    return -n * (length / ell) * (length / ell);
}

}  // namespace modalchain
