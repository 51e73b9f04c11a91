#include "deqntk/empirical.hpp"

#include <cmath>
#include <string>

#include "deqntk/errors.hpp"
#include "deqntk/rng.hpp"

namespace deqntk {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

void fill_normal(double* data, Eigen::Index count, Stream& s) {
    for (Eigen::Index i = 0; i < count; ++i) data[i] = s.normal();
}

Eigen::VectorXd activate(const Eigen::VectorXd& pre, Activation a) {
    if (a == Activation::Linear) return pre;
    return (kSqrt2 * pre.array().max(0.0)).matrix();
}

Eigen::VectorXd activate_dot(const Eigen::VectorXd& pre, Activation a) {
    if (a == Activation::Linear) return Eigen::VectorXd::Ones(pre.size());
    return (pre.array() > 0.0).select(Eigen::VectorXd::Constant(pre.size(), kSqrt2), 0.0);
}

double scale_w(const KernelParams& p, int n) { return std::sqrt(p.sigma_w_sq / n); }

}  // namespace

DeqWeights DeqWeights::draw(int n, int m, std::uint64_t seed, const KernelParams& params, std::uint64_t trial) {
    if (n <= 0 || m <= 0) throw ConfigError("width and input dimension must be positive");
    params.validate();
    DeqWeights w;
    w.n = n;
    w.m = m;
    w.seed = seed;
    w.trial = trial;
    w.params = params;
    w.W.resize(n, n);
    w.U.resize(n, m);
    w.b.resize(n);
    w.v.resize(n);
    Stream sw(seed, "W", trial), su(seed, "U", trial), sb(seed, "b", trial), sv(seed, "v", trial);
    fill_normal(w.W.data(), w.W.size(), sw);
    fill_normal(w.U.data(), w.U.size(), su);
    fill_normal(w.b.data(), w.b.size(), sb);
    fill_normal(w.v.data(), w.v.size(), sv);
    return w;
}

Eigen::MatrixXd DeqWeights::A() const { return scale_w(params, n) * W; }

Eigen::VectorXd DeqWeights::c() const { return std::sqrt(params.sigma_v_sq / n) * v; }

Eigen::VectorXd DeqWeights::injection(const Eigen::VectorXd& x) const {
    if (x.size() != m) throw DataError("input dimension mismatch");
    return std::sqrt(params.sigma_u_sq) * (U * x) + std::sqrt(params.sigma_b_sq) * b;
}

EquilibriumState deq_forward(const DeqWeights& w, const Eigen::VectorXd& x, const ForwardOptions& opts) {
    const Eigen::VectorXd inj = w.injection(x);
    const double sa = scale_w(w.params, w.n);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(w.n);
    Eigen::VectorXd pre(w.n);
    for (int it = 1; it <= opts.max_iter; ++it) {
        pre.noalias() = w.W * z;
        pre = sa * pre + inj;
        const Eigen::VectorXd f = activate(pre, w.params.activation);
        const double res = (f - z).norm() / (1.0 + z.norm());
        if (!std::isfinite(res)) break;
        if (res <= opts.tol) return {z, pre, res, it};
        z = (1.0 - opts.damping) * z + opts.damping * f;
    }
    throw ConvergenceError("equilibrium iteration did not converge for seed " + std::to_string(w.seed) +
                           " (n=" + std::to_string(w.n) + ")");
}

double deq_output(const DeqWeights& w, const Eigen::VectorXd& x, const ForwardOptions& opts) {
    return w.c().dot(deq_forward(w, x, opts).z_star);
}

Eigen::VectorXd adjoint_vector(const DeqWeights& w, const EquilibriumState& eq, const AdjointOptions& opts) {
    const Eigen::VectorXd D = activate_dot(eq.preact, w.params.activation);
    const Eigen::VectorXd c = w.c();
    const double sa = scale_w(w.params, w.n);
    Eigen::VectorXd q = c;
    Eigen::VectorXd next(w.n);
    bool ok = false;
    for (int it = 0; it < opts.max_iter; ++it) {
        next.noalias() = w.W.transpose() * D.cwiseProduct(q);
        next = c + sa * next;
        const double delta = (next - q).norm();
        q.swap(next);
        if (!std::isfinite(delta)) break;
        if (delta <= opts.tol * q.norm()) {
            ok = true;
            break;
        }
    }
    if (!ok) {
        Eigen::MatrixXd M = -sa * (w.W.transpose() * D.asDiagonal());
        M.diagonal().array() += 1.0;
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
        if (!(lu.rcond() > 1e-14)) throw SingularityError("I - A^T D is singular to working precision");
        q = lu.solve(c);
        if (!q.allFinite()) throw SingularityError("adjoint solve produced non-finite values");
    }
    return D.cwiseProduct(q);
}

DeqGradients ift_gradients(const DeqWeights& w, const Eigen::VectorXd& x, const AdjointOptions& opts) {
    const EquilibriumState eq = deq_forward(w, x, opts.forward);
    const Eigen::VectorXd p = adjoint_vector(w, eq, opts);
    const KernelParams& k = w.params;
    DeqGradients g;
    g.dW = scale_w(k, w.n) * p * eq.z_star.transpose();
    g.dU = std::sqrt(k.sigma_u_sq) * p * x.transpose();
    g.db = std::sqrt(k.sigma_b_sq) * p;
    g.dv = std::sqrt(k.sigma_v_sq / w.n) * eq.z_star;
    return g;
}

namespace {

EmpiricalNtkBreakdown breakdown(const KernelParams& k, int n, double pp, double zz, double xy) {
    EmpiricalNtkBreakdown r;
    r.w_term = k.sigma_w_sq / n * pp * zz;
    r.u_term = k.sigma_u_sq * pp * xy;
    r.b_term = k.sigma_b_sq * pp;
    r.v_term = k.sigma_v_sq / n * zz;
    r.total = r.w_term + r.u_term + r.b_term + r.v_term;
    return r;
}

}  // namespace

EmpiricalNtkBreakdown ift_ntk_pair(const DeqWeights& w, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                   const AdjointOptions& opts) {
    const EquilibriumState ex = deq_forward(w, x, opts.forward);
    const EquilibriumState ey = deq_forward(w, y, opts.forward);
    const Eigen::VectorXd px = adjoint_vector(w, ex, opts);
    const Eigen::VectorXd py = adjoint_vector(w, ey, opts);
    return breakdown(w.params, w.n, px.dot(py), ex.z_star.dot(ey.z_star), x.dot(y));
}

EmpiricalNtkBreakdown finite_depth_empirical_ntk(const DeqWeights& w, const Eigen::VectorXd& x,
                                                 const Eigen::VectorXd& y, int d, LayerTying tying) {
    if (d < 1) throw ConfigError("finite-depth empirical NTK needs d >= 1");
    if (x.size() != w.m || y.size() != w.m) throw DataError("input dimension mismatch");
    const KernelParams& k = w.params;
    const int n = w.n;
    const double sa = scale_w(k, n), su = std::sqrt(k.sigma_u_sq), sb = std::sqrt(k.sigma_b_sq);
    const bool tied = tying == LayerTying::Tied;

    // Per-layer weights for the untied network come from streams keyed by the layer index.
    Eigen::MatrixXd Wl, Ul;
    Eigen::VectorXd bl;
    auto layer = [&](int h) -> void {
        if (tied) return;
        Wl.resize(n, n);
        Ul.resize(n, w.m);
        bl.resize(n);
        Stream s1(derive_key(w.seed, "W", w.trial), "layer", static_cast<std::uint64_t>(h));
        Stream s2(derive_key(w.seed, "U", w.trial), "layer", static_cast<std::uint64_t>(h));
        Stream s3(derive_key(w.seed, "b", w.trial), "layer", static_cast<std::uint64_t>(h));
        fill_normal(Wl.data(), Wl.size(), s1);
        fill_normal(Ul.data(), Ul.size(), s2);
        fill_normal(bl.data(), bl.size(), s3);
    };
    const Eigen::MatrixXd& W = tied ? w.W : Wl;
    const Eigen::MatrixXd& U = tied ? w.U : Ul;
    const Eigen::VectorXd& b = tied ? w.b : bl;

    Eigen::MatrixXd U0(n, w.m);
    {
        Stream s(w.seed, "U0", w.trial);
        fill_normal(U0.data(), U0.size(), s);
    }

    // Columns h = 0..d hold sigma(f_h) and sigma'(f_h).
    Eigen::MatrixXd gx(n, d + 1), gy(n, d + 1), Dx(n, d + 1), Dy(n, d + 1);
    {
        const Eigen::VectorXd fx = U0 * x, fy = U0 * y;
        gx.col(0) = activate(fx, k.activation);
        gy.col(0) = activate(fy, k.activation);
        Dx.col(0) = activate_dot(fx, k.activation);
        Dy.col(0) = activate_dot(fy, k.activation);
    }
    for (int h = 1; h <= d; ++h) {
        layer(h);
        const Eigen::VectorXd fx = sa * (W * gx.col(h - 1)) + su * (U * x) + sb * b;
        const Eigen::VectorXd fy = sa * (W * gy.col(h - 1)) + su * (U * y) + sb * b;
        gx.col(h) = activate(fx, k.activation);
        gy.col(h) = activate(fy, k.activation);
        Dx.col(h) = activate_dot(fx, k.activation);
        Dy.col(h) = activate_dot(fy, k.activation);
    }

    // Backward: delta_h is the gradient with respect to f_h.
    const Eigen::VectorXd c = w.c();
    Eigen::MatrixXd delx(n, d + 1), dely(n, d + 1);
    delx.col(d) = Dx.col(d).cwiseProduct(c);
    dely.col(d) = Dy.col(d).cwiseProduct(c);
    const double xy = x.dot(y);
    EmpiricalNtkBreakdown r;
    for (int h = d; h >= 1; --h) {
        layer(h);
        if (!tied) {
            const double pp = delx.col(h).dot(dely.col(h));
            r.w_term += k.sigma_w_sq / n * pp * gx.col(h - 1).dot(gy.col(h - 1));
            r.u_term += k.sigma_u_sq * pp * xy;
            r.b_term += k.sigma_b_sq * pp;
        }
        delx.col(h - 1) = Dx.col(h - 1).cwiseProduct(sa * (W.transpose() * delx.col(h)));
        dely.col(h - 1) = Dy.col(h - 1).cwiseProduct(sa * (W.transpose() * dely.col(h)));
    }
    if (tied) {
        const auto Px = delx.rightCols(d), Py = dely.rightCols(d);
        const auto Gx = gx.leftCols(d), Gy = gy.leftCols(d);
        const Eigen::MatrixXd pp = Px.transpose() * Py;
        const Eigen::MatrixXd zz = Gx.transpose() * Gy;
        r.w_term = k.sigma_w_sq / n * pp.cwiseProduct(zz).sum();
        const double ss = Px.rowwise().sum().dot(Py.rowwise().sum());
        r.u_term = k.sigma_u_sq * ss * xy;
        r.b_term = k.sigma_b_sq * ss;
    }
    r.u_term += delx.col(0).dot(dely.col(0)) * xy;
    r.v_term = k.sigma_v_sq / n * gx.col(d).dot(gy.col(d));
    r.total = r.w_term + r.u_term + r.b_term + r.v_term;
    return r;
}

namespace {

Eigen::MatrixXd resolvent(const DeqWeights& w) {
    Eigen::MatrixXd M = -scale_w(w.params, w.n) * w.W;
    M.diagonal().array() += 1.0;
    Eigen::PartialPivLU<Eigen::Ref<Eigen::MatrixXd>> lu(M);
    if (!(lu.rcond() > 1e-14)) throw SingularityError("I - A is singular to working precision");
    Eigen::MatrixXd H = lu.inverse();
    if (!H.allFinite()) throw SingularityError("resolvent has non-finite entries");
    return H;
}

}  // namespace

ResolventStats linear_resolvent_stats(const DeqWeights& w, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    const Eigen::MatrixXd H = resolvent(w);
    ResolventStats s;
    s.trace_term = H.squaredNorm() / w.n;
    const Eigen::VectorXd zx = H * w.injection(x);
    const Eigen::VectorXd zy = H * w.injection(y);
    const Eigen::VectorXd p = H.transpose() * w.c();
    s.ntk_terms = breakdown(w.params, w.n, p.squaredNorm(), zx.dot(zy), x.dot(y));
    return s;
}

double resolvent_trace(const DeqWeights& w) { return resolvent(w).squaredNorm() / w.n; }

std::vector<double> empirical_spectrum(const DeqWeights& w) {
    Eigen::MatrixXd M = -scale_w(w.params, w.n) * w.W;
    M.diagonal().array() += 1.0;
    const Eigen::MatrixXd S = M.transpose() * M;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericError("eigensolver failed");
    std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
    for (double& e : ev) e = std::max(e, 0.0);
    return ev;
}

double operator_norm(const Eigen::MatrixXd& M, int iterations) {
    Eigen::VectorXd v = Eigen::VectorXd::Ones(M.cols()).normalized();
    double lam = 0.0;
    for (int i = 0; i < iterations; ++i) {
        const Eigen::VectorXd u = M.transpose() * (M * v);
        lam = u.norm();
        if (lam == 0.0) return 0.0;
        v = u / lam;
    }
    return std::sqrt(lam);
}

}  // namespace deqntk
