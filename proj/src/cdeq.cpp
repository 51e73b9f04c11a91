#include "deqntk/cdeq.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "deqntk/errors.hpp"
#include "deqntk/ntk.hpp"

namespace deqntk {

namespace {

void check_q(int P, int Q, int q) {
    if (q < 1 || q % 2 == 0) throw ConfigError("filter size must be a positive odd integer, got " + std::to_string(q));
    if (q > std::min(P, Q)) throw ConfigError("filter size exceeds image dimensions");
}

// N_{ab} = 1 / (s_a s_b) as a (PQ) x (PQ) matrix.
Eigen::MatrixXd norm_matrix(const ConvNormalizer& norm) {
    const Eigen::Index pq = norm.s.size();
    Eigen::VectorXd inv(pq);
    for (int i = 0; i < norm.s.rows(); ++i)
        for (int j = 0; j < norm.s.cols(); ++j) inv[i * norm.s.cols() + j] = 1.0 / norm.s(i, j);
    return inv * inv.transpose();
}

Eigen::VectorXd inv_s2(const ConvNormalizer& norm) {
    Eigen::VectorXd out(norm.s.size());
    for (int i = 0; i < norm.s.rows(); ++i)
        for (int j = 0; j < norm.s.cols(); ++j) out[i * norm.s.cols() + j] = 1.0 / (norm.s(i, j) * norm.s(i, j));
    return out;
}

// Window sum of a per-pixel vector: out_a = sum over in-bounds offsets of v_{a+o}.
Eigen::VectorXd window_sum(const Eigen::VectorXd& v, int P, int Q, int q) {
    const int r = (q - 1) / 2;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(P * Q);
    for (int i = 0; i < P; ++i)
        for (int j = 0; j < Q; ++j)
            for (int a = -r; a <= r; ++a)
                for (int b = -r; b <= r; ++b) {
                    const int ii = i + a, jj = j + b;
                    if (ii >= 0 && ii < P && jj >= 0 && jj < Q) out[i * Q + j] += v[ii * Q + jj];
                }
    return out;
}

Eigen::VectorXd self_k0(const ConvImage& x) { return x.pixels.rowwise().squaredNorm(); }

// dx^(h) from dx^(h-1): (1 / s^2) * window_sum(sw2 E[s s](d, d, d) + su2 |x|^2).
Eigen::VectorXd diag_step(const Eigen::VectorXd& d, const Eigen::VectorXd& k0, const Eigen::VectorXd& is2, int P, int Q,
                          int q, const KernelParams& p) {
    Eigen::VectorXd inner(d.size());
    for (Eigen::Index a = 0; a < d.size(); ++a)
        inner[a] = p.sigma_w_sq * gaussian_moments(d[a], d[a], d[a], p.activation).ss + p.sigma_u_sq * k0[a];
    return window_sum(inner, P, Q, q).cwiseProduct(is2);
}

void check_pair(const ConvImage& x, const ConvImage& y) {
    if (x.P != y.P || x.Q != y.Q || x.C != y.C) throw DataError("image shapes differ");
    if (x.pixels.rows() != x.P * x.Q || x.pixels.cols() != x.C) throw DataError("image storage does not match its shape");
}

}  // namespace

ConvNormalizer build_normalizer(int P, int Q, int q) {
    if (P < 1 || Q < 1) throw ConfigError("image dimensions must be positive");
    check_q(P, Q, q);
    const int r = (q - 1) / 2;
    ConvNormalizer n;
    n.q = q;
    n.s.resize(P, Q);
    for (int i = 0; i < P; ++i)
        for (int j = 0; j < Q; ++j) {
            const int rows = std::min(P - 1, i + r) - std::max(0, i - r) + 1;
            const int cols = std::min(Q - 1, j + r) - std::max(0, j - r) + 1;
            n.s(i, j) = std::sqrt(static_cast<double>(rows * cols));
        }
    return n;
}

ConvKernelTensor patch_trace(const ConvKernelTensor& M, int q) {
    const int P = M.P, Q = M.Q;
    check_q(P, Q, q);
    const int r = (q - 1) / 2;
    ConvKernelTensor out(P, Q);
    for (int i2 = 0; i2 < P; ++i2)
        for (int j2 = 0; j2 < Q; ++j2)
            for (int i = 0; i < P; ++i)
                for (int j = 0; j < Q; ++j) {
                    double acc = 0.0;
                    for (int a = -r; a <= r; ++a) {
                        const int ii = i + a, kk = i2 + a;
                        if (ii < 0 || ii >= P || kk < 0 || kk >= P) continue;
                        for (int b = -r; b <= r; ++b) {
                            const int jj = j + b, ll = j2 + b;
                            if (jj < 0 || jj >= Q || ll < 0 || ll >= Q) continue;
                            acc += M.data(ii * Q + jj, kk * Q + ll);
                        }
                    }
                    out.data(i * Q + j, i2 * Q + j2) = acc;
                }
    return out;
}

ConvKernelTensor input_kernel(const ConvImage& x, const ConvImage& y) {
    check_pair(x, y);
    ConvKernelTensor k(x.P, x.Q);
    k.data.noalias() = x.pixels * y.pixels.transpose();
    return k;
}

namespace {

// Unnormalized sw2 E[s s] + su2 K0 and sw2 E[s' s'].
void moments(const ConvKernelTensor& sigma, const ConvKernelTensor& K0, const KernelParams& p, const Eigen::VectorXd& dx,
             const Eigen::VectorXd& dy, Eigen::MatrixXd& kt, Eigen::MatrixXd* kdt) {
    const Eigen::Index n = sigma.data.rows();
    if (dx.size() != n || dy.size() != n || K0.data.rows() != n) throw DataError("tensor shapes differ");
    kt.resize(n, n);
    if (kdt) kdt->resize(n, n);
    for (Eigen::Index b = 0; b < n; ++b)
        for (Eigen::Index a = 0; a < n; ++a) {
            const double c = sigma.data(a, b);
            const double lim = std::sqrt(dx[a] * dy[b]);
            if (std::abs(c) > lim * (1.0 + 1e-9) + 1e-300)
                throw NumericError("covariance block is not positive semidefinite at entry (" + std::to_string(a) +
                                   ", " + std::to_string(b) + ")");
            const GaussianMoments m = gaussian_moments(dx[a], dy[b], std::clamp(c, -lim, lim), p.activation);
            kt(a, b) = p.sigma_w_sq * m.ss + p.sigma_u_sq * K0.data(a, b);
            if (kdt) (*kdt)(a, b) = p.sigma_w_sq * m.dd;
        }
}

}  // namespace

KPair cdeq_k_step(const ConvKernelTensor& sigma_prev, const ConvKernelTensor& K0, const ConvNormalizer& norm,
                  const KernelParams& params, const Eigen::VectorXd& dx, const Eigen::VectorXd& dy) {
    Eigen::MatrixXd kt, kdt;
    moments(sigma_prev, K0, params, dx, dy, kt, &kdt);
    const Eigen::MatrixXd N = norm_matrix(norm);
    KPair out{ConvKernelTensor(sigma_prev.P, sigma_prev.Q), ConvKernelTensor(sigma_prev.P, sigma_prev.Q)};
    out.K.data = N.cwiseProduct(kt);
    out.Kdot.data = N.cwiseProduct(kdt);
    return out;
}

KPair cdeq_k_step(const ConvKernelTensor& sigma_prev, const ConvKernelTensor& K0, const ConvNormalizer& norm,
                  const KernelParams& params) {
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(sigma_prev.data.rows());
    return cdeq_k_step(sigma_prev, K0, norm, params, ones, ones);
}

ConvKernelTensor cdeq_sigma_map(const ConvKernelTensor& sigma, const ConvKernelTensor& K0, const ConvNormalizer& norm,
                                const KernelParams& params, const Eigen::VectorXd& dx, const Eigen::VectorXd& dy) {
    ConvKernelTensor kt(sigma.P, sigma.Q);
    moments(sigma, K0, params, dx, dy, kt.data, nullptr);
    ConvKernelTensor out = patch_trace(kt, norm.q);
    out.data = out.data.cwiseProduct(norm_matrix(norm));
    return out;
}

Eigen::VectorXd cdeq_self_diagonal(const ConvImage& x, const ConvNormalizer& norm, const KernelParams& params,
                                   const CdeqOptions& opts) {
    params.validate_fixed_point();
    const Eigen::VectorXd is2 = inv_s2(norm), k0 = self_k0(x);
    Eigen::VectorXd d = window_sum(k0, x.P, x.Q, norm.q).cwiseProduct(is2);
    for (int it = 0; it < opts.sigma_max_iter; ++it) {
        const Eigen::VectorXd nd = diag_step(d, k0, is2, x.P, x.Q, norm.q, params);
        const double ch = (nd - d).lpNorm<Eigen::Infinity>();
        d = nd;
        if (ch <= opts.sigma_tol) return d;
    }
    throw ConvergenceError("self-covariance iteration did not converge");
}

CdeqFixedPoint cdeq_sigma_fixed_point(const ConvImagePair& pair, int q, const KernelParams& params,
                                      const CdeqOptions& opts) {
    params.validate_fixed_point();
    check_pair(pair.x, pair.y);
    const int P = pair.x.P, Q = pair.x.Q;
    const ConvNormalizer norm = build_normalizer(P, Q, q);
    const Eigen::MatrixXd N = norm_matrix(norm);
    const Eigen::VectorXd is2 = inv_s2(norm);
    const ConvKernelTensor K0 = input_kernel(pair.x, pair.y);
    const Eigen::VectorXd kx = self_k0(pair.x), ky = self_k0(pair.y);

    CdeqFixedPoint fp;
    fp.sigma = patch_trace(K0, q);
    fp.sigma.data = fp.sigma.data.cwiseProduct(N);
    fp.dx = window_sum(kx, P, Q, q).cwiseProduct(is2);
    fp.dy = window_sum(ky, P, Q, q).cwiseProduct(is2);
    for (int it = 1; it <= opts.sigma_max_iter; ++it) {
        ConvKernelTensor next = cdeq_sigma_map(fp.sigma, K0, norm, params, fp.dx, fp.dy);
        const Eigen::VectorXd ndx = diag_step(fp.dx, kx, is2, P, Q, q, params);
        const Eigen::VectorXd ndy = diag_step(fp.dy, ky, is2, P, Q, q, params);
        const double ch = std::max({(next.data - fp.sigma.data).lpNorm<Eigen::Infinity>(),
                                    (ndx - fp.dx).lpNorm<Eigen::Infinity>(), (ndy - fp.dy).lpNorm<Eigen::Infinity>()});
        fp.sigma = std::move(next);
        fp.dx = ndx;
        fp.dy = ndy;
        fp.iterations = it;
        fp.last_change = ch;
        if (ch <= opts.sigma_tol) {
            KPair k = cdeq_k_step(fp.sigma, K0, norm, params, fp.dx, fp.dy);
            fp.K = std::move(k.K);
            fp.Kdot = std::move(k.Kdot);
            return fp;
        }
    }
    throw ConvergenceError("CDEQ covariance iteration exceeded " + std::to_string(opts.sigma_max_iter) + " iterations");
}

CdeqTheta cdeq_theta(const ConvKernelTensor& Kstar, const ConvKernelTensor& Kdotstar, int q, const CdeqOptions& opts) {
    CdeqTheta t;
    t.theta = Kstar;
    for (int it = 1; it <= opts.theta_max_iter; ++it) {
        ConvKernelTensor next = patch_trace(t.theta, q);
        next.data = Kdotstar.data.cwiseProduct(next.data) + Kstar.data;
        const double ch = (next.data - t.theta.data).lpNorm<Eigen::Infinity>();
        t.theta = std::move(next);
        t.iterations = it;
        if (!std::isfinite(ch)) break;
        if (ch <= opts.theta_tol) {
            t.value = t.theta.trace();
            return t;
        }
    }
    throw ConvergenceError("CDEQ tangent-kernel iteration did not converge");
}

CdeqTheta cdeq_theta_direct(const ConvKernelTensor& Kstar, const ConvKernelTensor& Kdotstar, int q) {
    const int P = Kstar.P, Q = Kstar.Q;
    check_q(P, Q, q);
    const int r = (q - 1) / 2;
    const Eigen::Index pq = static_cast<Eigen::Index>(P) * Q;
    const Eigen::Index n = pq * pq;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n) * (q * q + 1));
    // Unknown index: row + pq * col of the flattened (PQ) x (PQ) matrix (column-major like Eigen).
    for (int i2 = 0; i2 < P; ++i2)
        for (int j2 = 0; j2 < Q; ++j2)
            for (int i = 0; i < P; ++i)
                for (int j = 0; j < Q; ++j) {
                    const Eigen::Index ra = i * Q + j, cb = i2 * Q + j2;
                    const Eigen::Index row = ra + pq * cb;
                    trip.emplace_back(row, row, 1.0);
                    const double kd = Kdotstar.data(ra, cb);
                    if (kd == 0.0) continue;
                    for (int a = -r; a <= r; ++a)
                        for (int b = -r; b <= r; ++b) {
                            const int ii = i + a, jj = j + b, kk = i2 + a, ll = j2 + b;
                            if (ii < 0 || ii >= P || jj < 0 || jj >= Q || kk < 0 || kk >= P || ll < 0 || ll >= Q)
                                continue;
                            trip.emplace_back(row, (ii * Q + jj) + pq * (kk * Q + ll), -kd);
                        }
                }
    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw SingularityError("sparse factorization failed");
    const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(Kstar.data.data(), n);
    const Eigen::VectorXd sol = lu.solve(rhs);
    CdeqTheta t;
    t.theta = ConvKernelTensor(P, Q);
    t.theta.data = Eigen::Map<const Eigen::MatrixXd>(sol.data(), pq, pq);
    t.value = t.theta.trace();
    return t;
}

double cdeq_kernel(const ConvImage& x, const ConvImage& y, int q, const KernelParams& params, const CdeqOptions& opts) {
    const CdeqFixedPoint fp = cdeq_sigma_fixed_point({x, y}, q, params, opts);
    return cdeq_theta(fp.K, fp.Kdot, q, opts).value;
}

void normalize_pixels(ConvImage& img) {
    if (img.C < 1) throw DataError("image has no channels");
    const double u = 1.0 / std::sqrt(static_cast<double>(img.C));
    for (Eigen::Index a = 0; a < img.pixels.rows(); ++a) {
        const double nrm = img.pixels.row(a).norm();
        if (nrm == 0.0) img.pixels.row(a).setConstant(u);
        else img.pixels.row(a) /= nrm;
    }
}

}  // namespace deqntk
