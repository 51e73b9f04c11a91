#include "deqntk/ntk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "deqntk/errors.hpp"

namespace deqntk {

namespace {

constexpr double kClamp = 1e-12;
constexpr double kRootTol = 1e-12;
constexpr int kMaxIter = 200;

struct RootResult {
    double rho;
    int iterations;
    double residual;
};

// Solves sigma_w_sq * dual(rho) + kappa = rho on [-1, 1]. The map is a contraction, so F is
// strictly decreasing; it is also convex, so Newton from rho = 1 approaches monotonically.
RootResult relu_root(double sw2, double kappa) {
    auto F = [&](double r) { return sw2 * dual_activation(r) + kappa - r; };
    double lo = -1.0, hi = 1.0, x = 1.0;
    int it = 0;
    for (; it < kMaxIter; ++it) {
        const double f = F(x);
        if (f == 0.0) break;
        if (f > 0.0) lo = x; else hi = x;
        const double fp = sw2 * dual_activation_dot(x) - 1.0;
        double nx = x - f / fp;
        if (!(nx > lo && nx < hi)) nx = 0.5 * (lo + hi);
        const double step = std::abs(nx - x);
        x = nx;
        if (step <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x))) {
            ++it;
            break;
        }
    }
    const double res = std::abs(F(x));
    if (!(res <= kRootTol))
        throw ConvergenceError("rho* root-finding did not converge (residual " + std::to_string(res) + ")");
    return {x, it, res};
}

}  // namespace

double clamp_correlation(double rho) {
    if (std::isnan(rho) || std::abs(rho) > 1.0 + kClamp)
        throw DomainError("correlation outside [-1, 1]: " + std::to_string(rho));
    return std::clamp(rho, -1.0, 1.0);
}

double dual_activation(double rho) {
    rho = clamp_correlation(rho);
    return (std::sqrt(1.0 - rho * rho) + (std::numbers::pi - std::acos(rho)) * rho) / std::numbers::pi;
}

double dual_activation_dot(double rho) {
    rho = clamp_correlation(rho);
    return (std::numbers::pi - std::acos(rho)) / std::numbers::pi;
}

GaussianMoments gaussian_moments(double a, double b, double c, Activation act) {
    if (act == Activation::Linear) return {c, 1.0};
    if (!(a > 0.0) || !(b > 0.0)) return {0.0, 0.0};
    const double s = std::sqrt(a * b);
    const double rho = c / s;
    return {s * dual_activation(rho), dual_activation_dot(rho)};
}

double r_sigma(double rho, double dot, const KernelParams& p) {
    return p.sigma_w_sq * dual_activation(rho) + p.sigma_u_sq * dot + p.sigma_b_sq;
}

PairKernelState finite_depth_ntk(double dot, int d, const KernelParams& p) {
    if (d < 0) throw ConfigError("depth must be nonnegative");
    p.validate();
    double q = 1.0;
    double sigma = dot;
    double sigma_dot = 0.0;
    double theta = dot;
    for (int h = 1; h <= d; ++h) {
        const GaussianMoments m = gaussian_moments(q, q, sigma, p.activation);
        const GaussianMoments mq = gaussian_moments(q, q, q, p.activation);
        sigma_dot = p.sigma_w_sq * m.dd;
        sigma = p.sigma_w_sq * m.ss + p.sigma_u_sq * dot + p.sigma_b_sq;
        q = p.sigma_w_sq * mq.ss + p.sigma_u_sq + p.sigma_b_sq;
        theta = sigma_dot * theta + sigma;
    }
    const GaussianMoments out = gaussian_moments(q, q, sigma, p.activation);
    PairKernelState st;
    st.rho = q > 0.0 ? sigma / q : 0.0;
    st.sigma = sigma;
    st.sigma_dot = sigma_dot;
    st.theta_pre = theta;
    st.theta = p.sigma_v_sq * (out.dd * theta + out.ss);
    st.depth = d;
    return st;
}

std::vector<double> finite_depth_ntk_sweep(double dot, const std::vector<int>& depths,
                                           const KernelParams& p) {
    p.validate();
    std::vector<double> out(depths.size());
    if (depths.empty()) return out;
    const int dmax = *std::max_element(depths.begin(), depths.end());
    if (*std::min_element(depths.begin(), depths.end()) < 0) throw ConfigError("depth must be nonnegative");
    std::vector<double> by_depth(static_cast<std::size_t>(dmax) + 1);
    double q = 1.0, sigma = dot, theta = dot;
    for (int h = 0;; ++h) {
        const GaussianMoments o = gaussian_moments(q, q, sigma, p.activation);
        by_depth[h] = p.sigma_v_sq * (o.dd * theta + o.ss);
        if (h == dmax) break;
        const GaussianMoments mq = gaussian_moments(q, q, q, p.activation);
        const double sigma_dot = p.sigma_w_sq * o.dd;
        sigma = p.sigma_w_sq * o.ss + p.sigma_u_sq * dot + p.sigma_b_sq;
        q = p.sigma_w_sq * mq.ss + p.sigma_u_sq + p.sigma_b_sq;
        theta = sigma_dot * theta + sigma;
    }
    for (std::size_t i = 0; i < depths.size(); ++i) out[i] = by_depth[depths[i]];
    return out;
}

namespace {

struct StarSolve {
    double q;
    RootResult root;
};

StarSolve solve_star(double dot, const KernelParams& p) {
    p.validate_fixed_point();
    dot = clamp_correlation(dot);
    const double q = p.stationary_variance();
    const double num = p.sigma_u_sq * dot + p.sigma_b_sq;
    if (p.activation == Activation::Linear) {
        if (q == 0.0) return {0.0, {0.0, 0, 0.0}};
        const double rho = num / (p.sigma_u_sq + p.sigma_b_sq);
        return {q, {rho, 0, std::abs(p.sigma_w_sq * rho + num / q - rho)}};
    }
    if (!(q > 0.0))
        throw DomainError("stationary variance is zero (sigma_u_sq + sigma_b_sq = 0); correlation undefined");
    return {q, relu_root(p.sigma_w_sq, num / q)};
}

}  // namespace

double solve_rho_star(double dot, const KernelParams& p) {
    return solve_star(dot, p).root.rho;
}

FixedPointResult theta_deq(double dot, const KernelParams& p) {
    const StarSolve s = solve_star(dot, p);
    FixedPointResult r;
    r.rho_star = s.root.rho;
    r.iterations = s.root.iterations;
    r.residual = s.root.residual;
    const bool lin = p.activation == Activation::Linear;
    r.rho_dot_star = lin ? 1.0 : dual_activation_dot(r.rho_star);
    r.sigma_dot_star = p.sigma_w_sq * r.rho_dot_star;
    r.sigma_star = s.q * r.rho_star;
    const double gap = 1.0 - r.sigma_dot_star;
    if (std::abs(gap) < 1e-14) throw SingularityError("1 - Sigma-dot* vanishes; kernel is singular");
    const double out_ss = lin ? r.sigma_star : s.q * dual_activation(r.rho_star);
    r.theta = p.sigma_v_sq * r.rho_dot_star * r.sigma_star / gap + p.sigma_v_sq * out_ss;
    return r;
}

double theta_linear_deq(double dot, const KernelParams& p) {
    p.validate_fixed_point();
    const double tau = 1.0 / (1.0 - p.sigma_w_sq);
    const double a = p.sigma_v_sq * p.sigma_u_sq * dot;
    return a * tau * tau + a * tau;
}

}  // namespace deqntk
