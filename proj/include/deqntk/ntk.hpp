#pragma once

#include <vector>

#include "deqntk/kernel_params.hpp"

namespace deqntk {

// Arc-cosine duals of sigma(x) = sqrt(2) max(0, x) for unit-variance inputs with
// correlation rho. Inputs within 1e-12 of +-1 are clamped; beyond that DomainError.
double dual_activation(double rho);
double dual_activation_dot(double rho);
double clamp_correlation(double rho);

// E[sigma(u)sigma(v)] and E[sigma'(u)sigma'(v)] for (u, v) ~ N(0, [[a, c], [c, b]]).
struct GaussianMoments {
    double ss;
    double dd;
};
GaussianMoments gaussian_moments(double a, double b, double c, Activation act);

double r_sigma(double rho, double dot, const KernelParams& params);

struct PairKernelState {
    double rho = 0.0;        // Sigma^(d) / sqrt(q_x q_y)
    double sigma = 0.0;      // Sigma^(d)
    double sigma_dot = 0.0;  // Sigma-dot^(d), 0 at d = 0
    double theta_pre = 0.0;  // Theta^(d) before the output layer
    double theta = 0.0;      // Theta after the sigma_v-scaled output layer
    int depth = 0;
};

// Unit-norm inputs with inner product dot; d interior layers then the output layer.
PairKernelState finite_depth_ntk(double dot, int d, const KernelParams& params);

// Output-layer Theta for every depth in `depths` (any order) from a single recursion pass.
std::vector<double> finite_depth_ntk_sweep(double dot, const std::vector<int>& depths,
                                           const KernelParams& params);

struct FixedPointResult {
    double rho_star = 0.0;
    double rho_dot_star = 0.0;
    double sigma_dot_star = 0.0;
    double sigma_star = 0.0;  // covariance at the fixed point, rho_star * q*
    double theta = 0.0;
    int iterations = 0;
    double residual = 0.0;
};

// Root of R(rho) - rho on [-1, 1]; safeguarded Newton with bisection fallback.
double solve_rho_star(double dot, const KernelParams& params);
FixedPointResult theta_deq(double dot, const KernelParams& params);

double theta_linear_deq(double dot, const KernelParams& params);

}  // namespace deqntk
