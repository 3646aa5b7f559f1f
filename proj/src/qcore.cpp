#include "modalchain/qcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/Eigenvalues>
#include <lapacke.h>

namespace modalchain {

DimSignature::DimSignature(std::vector<int> factors) : factors_(std::move(factors)) {
    total_ = 1;
    for (int f : factors_) {
        if (f < 1) throw std::invalid_argument("DimSignature: factor dimension must be >= 1");
        total_ *= f;
    }
}

std::vector<int> DimSignature::multi_index(long flat) const {
    if (flat < 0 || flat >= total_) throw std::out_of_range("DimSignature: flat index out of range");
    std::vector<int> out(factors_.size());
    for (int k = size() - 1; k >= 0; --k) {
        out[k] = static_cast<int>(flat % factors_[k]);
        flat /= factors_[k];
    }
    return out;
}

long DimSignature::flat_index(const std::vector<int>& multi) const {
    if (multi.size() != factors_.size()) throw std::invalid_argument("DimSignature: rank mismatch");
    long flat = 0;
    for (int k = 0; k < size(); ++k) {
        if (multi[k] < 0 || multi[k] >= factors_[k])
            throw std::out_of_range("DimSignature: digit out of range");
        flat = flat * factors_[k] + multi[k];
    }
    return flat;
}

DimSignature DimSignature::select(const std::vector<int>& keep) const {
    std::vector<int> f;
    for (int k : keep) {
        if (k < 0 || k >= size()) throw std::invalid_argument("invalid factor index " + std::to_string(k));
        f.push_back(factors_[k]);
    }
    return DimSignature(f);
}

DimSignature DimSignature::concat(const DimSignature& other) const {
    std::vector<int> f = factors_;
    f.insert(f.end(), other.factors_.begin(), other.factors_.end());
    return DimSignature(f);
}

std::vector<int> DimSignature::complement(const std::vector<int>& keep) const {
    std::vector<bool> used(factors_.size(), false);
    for (int k : keep) {
        if (k < 0 || k >= size()) throw std::invalid_argument("invalid factor index " + std::to_string(k));
        if (used[k]) throw std::invalid_argument("repeated factor index " + std::to_string(k));
        used[k] = true;
    }
    std::vector<int> rest;
    for (int k = 0; k < size(); ++k)
        if (!used[k]) rest.push_back(k);
    return rest;
}

StateVector::StateVector(CVec a, DimSignature d) : amp(std::move(a)), dims(std::move(d)) {
    if (amp.size() != dims.total()) throw std::invalid_argument("StateVector: length does not match dims");
    if (std::abs(amp.norm() - 1.0) > kNormTol) throw std::invalid_argument("StateVector: not normalized");
}

StateVector StateVector::basis(const DimSignature& d, long index) {
    CVec v = CVec::Zero(d.total());
    v(index) = 1.0;
    return StateVector(v, d);
}

DensityMatrix::DensityMatrix(CMat m, DimSignature d) : mat(std::move(m)), dims(std::move(d)) {
    if (mat.rows() != dims.total() || mat.cols() != dims.total())
        throw std::invalid_argument("DensityMatrix: shape does not match dims");
    if (!is_hermitian(mat, kNormTol)) throw std::invalid_argument("DensityMatrix: not Hermitian");
    if (std::abs(mat.trace().real() - 1.0) > kNormTol) throw std::invalid_argument("DensityMatrix: trace != 1");
}

DensityMatrix DensityMatrix::from_state(const StateVector& s) {
    CMat m = s.amp * s.amp.adjoint();
    m = 0.5 * (m + m.adjoint()).eval();
    return DensityMatrix(m, s.dims);
}

CMat HamiltonianSplit::total() const {
    const long da = h_a.rows(), de = h_e.rows();
    CMat h = h_int;
    for (long a = 0; a < da; ++a)
        for (long b = 0; b < da; ++b)
            for (long e = 0; e < de; ++e) h(a * de + e, b * de + e) += h_a(a, b);
    for (long a = 0; a < da; ++a)
        for (long e = 0; e < de; ++e)
            for (long f = 0; f < de; ++f) h(a * de + e, a * de + f) += h_e(e, f);
    return h;
}

StateVector tensor(const StateVector& a, const StateVector& b) {
    CVec out(a.amp.size() * b.amp.size());
    for (long i = 0; i < a.amp.size(); ++i) out.segment(i * b.amp.size(), b.amp.size()) = a.amp(i) * b.amp;
    return StateVector(out, a.dims.concat(b.dims));
}

CVec permute_factors(const CVec& v, const DimSignature& dims, const std::vector<int>& order) {
    const int n = dims.size();
    if (static_cast<int>(order.size()) != n) throw std::invalid_argument("permute_factors: order must cover all factors");
    bool identity = true;
    for (int k = 0; k < n; ++k) identity = identity && order[k] == k;
    if (identity) return v;

    // Source strides, then walk the target index as an odometer.
    std::vector<long> stride(n, 1);
    for (int k = n - 2; k >= 0; --k) stride[k] = stride[k + 1] * dims[k + 1];
    std::vector<int> digit(n, 0), ext(n);
    std::vector<long> tstride(n);
    for (int k = 0; k < n; ++k) {
        ext[k] = dims[order[k]];
        tstride[k] = stride[order[k]];
    }
    CVec out(v.size());
    long src = 0;
    for (long flat = 0; flat < v.size(); ++flat) {
        out(flat) = v(src);
        for (int k = n - 1; k >= 0; --k) {
            if (++digit[k] < ext[k]) {
                src += tstride[k];
                break;
            }
            src -= tstride[k] * (ext[k] - 1);
            digit[k] = 0;
        }
    }
    return out;
}

CMat bipartite_matrix(const StateVector& psi, const std::vector<int>& keep) {
    const std::vector<int> rest = psi.dims.complement(keep);
    std::vector<int> order = keep;
    order.insert(order.end(), rest.begin(), rest.end());
    const long da = psi.dims.select(keep).total();
    const long de = psi.dims.total() / da;
    const CVec p = permute_factors(psi.amp, psi.dims, order);
    // Row-major reshape: index = a * de + e.
    CMat m(da, de);
    for (long a = 0; a < da; ++a)
        for (long e = 0; e < de; ++e) m(a, e) = p(a * de + e);
    return m;
}

CVec join_cut(const CVec& a, const CVec& e, const DimSignature& dims, const std::vector<int>& keep) {
    const std::vector<int> rest = dims.complement(keep);
    std::vector<int> order = keep;
    order.insert(order.end(), rest.begin(), rest.end());
    CVec prod(a.size() * e.size());
    for (long i = 0; i < a.size(); ++i) prod.segment(i * e.size(), e.size()) = a(i) * e;
    // Inverse permutation: position of each original factor in `order`.
    std::vector<int> inv(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) inv[order[k]] = static_cast<int>(k);
    return permute_factors(prod, dims.select(order), inv);
}

DensityMatrix partial_trace(const DensityMatrix& rho, const std::vector<int>& keep) {
    if (keep.empty()) throw std::invalid_argument("partial_trace: keep must be nonempty");
    const std::vector<int> rest = rho.dims.complement(keep);
    const DimSignature kd = rho.dims.select(keep);
    const DimSignature rd = rho.dims.select(rest);
    CMat out = CMat::Zero(kd.total(), kd.total());
    std::vector<int> full(rho.dims.size());
    auto flat = [&](const std::vector<int>& km, const std::vector<int>& rm) {
        for (std::size_t k = 0; k < keep.size(); ++k) full[keep[k]] = km[k];
        for (std::size_t k = 0; k < rest.size(); ++k) full[rest[k]] = rm[k];
        return rho.dims.flat_index(full);
    };
    for (long i = 0; i < kd.total(); ++i) {
        const auto mi = kd.multi_index(i);
        for (long j = 0; j < kd.total(); ++j) {
            const auto mj = kd.multi_index(j);
            cplx acc = 0.0;
            for (long r = 0; r < rd.total(); ++r) {
                const auto mr = rd.multi_index(r);
                acc += rho.mat(flat(mi, mr), flat(mj, mr));
            }
            out(i, j) = acc;
        }
    }
    out = 0.5 * (out + out.adjoint()).eval();
    return DensityMatrix(out, kd);
}

DensityMatrix reduced_density(const StateVector& psi, const std::vector<int>& keep) {
    if (keep.empty()) throw std::invalid_argument("reduced_density: keep must be nonempty");
    const CMat m = bipartite_matrix(psi, keep);
    CMat r = m * m.adjoint();
    r = 0.5 * (r + r.adjoint()).eval();
    return DensityMatrix(r, psi.dims.select(keep));
}

Propagator propagate(const CMat& h, double dt) {
    if (h.rows() != h.cols()) throw std::invalid_argument("propagate: H must be square");
    if (!is_hermitian(h)) throw std::invalid_argument("propagate: H is not Hermitian");
    CMat hs = 0.5 * (h + h.adjoint());
    const lapack_int n = static_cast<lapack_int>(hs.rows());
    RVec w(n);
    CMat v(n, n);
    std::vector<lapack_int> support(2 * static_cast<std::size_t>(n));
    lapack_int found = 0;
    // zheevr: the divide-and-conquer driver is unreliable in some OpenBLAS builds.
    const lapack_int info = LAPACKE_zheevr(LAPACK_COL_MAJOR, 'V', 'A', 'U', n,
                                           reinterpret_cast<lapack_complex_double*>(hs.data()), n, 0.0, 0.0, 0, 0, 0.0,
                                           &found, w.data(), reinterpret_cast<lapack_complex_double*>(v.data()), n,
                                           support.data());
    if (info != 0 || found != n) throw std::runtime_error("propagate: eigensolver failed (info " + std::to_string(info) + ")");
    CVec phase(w.size());
    for (long k = 0; k < w.size(); ++k) phase(k) = std::polar(1.0, -w(k) * dt);
    return Propagator{v * phase.asDiagonal() * v.adjoint(), dt};
}

StateVector haar_random_state(long dim, std::uint64_t seed) {
    return haar_random_state(DimSignature({static_cast<int>(dim)}), seed);
}

StateVector haar_random_state(const DimSignature& dims, std::uint64_t seed) {
    const long dim = dims.total();
    if (dim < 1) throw std::invalid_argument("haar_random_state: dim must be >= 1");
    if (dim == 1) return StateVector(CVec::Ones(1), dims);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    CVec v(dim);
    for (long k = 0; k < dim; ++k) {
        const double re = g(rng);
        const double im = g(rng);
        v(k) = cplx(re, im);
    }
    v /= v.norm();
    return StateVector(v, dims);
}

CMat random_hermitian(int dim, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    CMat a(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) {
            const double re = g(rng);
            const double im = g(rng);
            a(i, j) = cplx(re, im);
        }
    CMat h = 0.5 * (a + a.adjoint());
    // GUE normalisation: spectrum of width ~ scale.
    return h * (scale / std::sqrt(2.0 * dim));
}

CMat embed_operator(const CMat& op, const DimSignature& dims, const std::vector<int>& sites) {
    const DimSignature sd = dims.select(sites);
    if (op.rows() != sd.total() || op.cols() != sd.total())
        throw std::invalid_argument("embed_operator: operator shape does not match sites");
    const std::vector<int> rest = dims.complement(sites);
    const DimSignature rd = dims.select(rest);
    CMat out = CMat::Zero(dims.total(), dims.total());
    std::vector<int> full(dims.size());
    auto flat = [&](const std::vector<int>& sm, const std::vector<int>& rm) {
        for (std::size_t k = 0; k < sites.size(); ++k) full[sites[k]] = sm[k];
        for (std::size_t k = 0; k < rest.size(); ++k) full[rest[k]] = rm[k];
        return dims.flat_index(full);
    };
    for (long r = 0; r < rd.total(); ++r) {
        const auto mr = rd.multi_index(r);
        for (long i = 0; i < sd.total(); ++i) {
            const auto mi = sd.multi_index(i);
            const long row = flat(mi, mr);
            for (long j = 0; j < sd.total(); ++j) {
                if (op(i, j) == cplx(0.0)) continue;
                out(row, flat(sd.multi_index(j), mr)) = op(i, j);
            }
        }
    }
    return out;
}

bool is_hermitian(const CMat& m, double tol) {
    if (m.rows() != m.cols()) return false;
    return (m - m.adjoint()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, m.cwiseAbs().maxCoeff());
}

bool is_unitary(const CMat& m, double tol) {
    if (m.rows() != m.cols()) return false;
    return (m.adjoint() * m - CMat::Identity(m.rows(), m.cols())).cwiseAbs().maxCoeff() <= tol;
}

}  // namespace modalchain
