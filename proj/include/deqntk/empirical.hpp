#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "deqntk/kernel_params.hpp"

namespace deqntk {

// Standard-normal weights; variance scales are applied where the weights are used:
//   A = sqrt(sw2 / n) W,  injection sqrt(su2) U x,  bias sqrt(sb2) b,  readout sqrt(sv2 / n) v.
// Inputs are unit-norm, so U x already has O(1) entries and takes no 1/n factor.
struct DeqWeights {
    Eigen::MatrixXd W;  // n x n
    Eigen::MatrixXd U;  // n x m
    Eigen::VectorXd b;
    Eigen::VectorXd v;
    int n = 0;
    int m = 0;
    std::uint64_t seed = 0;
    std::uint64_t trial = 0;
    KernelParams params;

    // Sub-streams "W", "U", "b", "v" keyed by (seed, trial); entries filled in storage order.
    static DeqWeights draw(int n, int m, std::uint64_t seed, const KernelParams& params,
                           std::uint64_t trial = 0);

    Eigen::MatrixXd A() const;  // sqrt(sw2 / n) W
    Eigen::VectorXd c() const;  // sqrt(sv2 / n) v
    Eigen::VectorXd injection(const Eigen::VectorXd& x) const;  // sqrt(su2) U x + sqrt(sb2) b
};

struct ForwardOptions {
    double tol = 1e-10;      // relative residual ||F(z) - z|| / (1 + ||z||)
    int max_iter = 10000;
    double damping = 1.0;    // z <- (1 - damping) z + damping F(z)
};

struct EquilibriumState {
    Eigen::VectorXd z_star;
    Eigen::VectorXd preact;  // A z* + injection
    double residual = 0.0;
    int iterations = 0;
};

EquilibriumState deq_forward(const DeqWeights& w, const Eigen::VectorXd& x,
                             const ForwardOptions& opts = {});

double deq_output(const DeqWeights& w, const Eigen::VectorXd& x, const ForwardOptions& opts = {});

struct EmpiricalNtkBreakdown {
    double w_term = 0.0;
    double u_term = 0.0;
    double b_term = 0.0;
    double v_term = 0.0;
    double total = 0.0;
};

// Gradient of the readout with respect to the raw normal weights.
struct DeqGradients {
    Eigen::MatrixXd dW;
    Eigen::MatrixXd dU;
    Eigen::VectorXd db;
    Eigen::VectorXd dv;
};

struct AdjointOptions {
    ForwardOptions forward;
    double tol = 1e-13;  // relative change in the Neumann iterate
    int max_iter = 5000;
};

// p = D (I - A^T D)^{-1} c at the equilibrium for x. Solved by fixed-point iteration on
// q = c + A^T D q, falling back to a dense LU when that does not converge.
Eigen::VectorXd adjoint_vector(const DeqWeights& w, const EquilibriumState& eq, const AdjointOptions& opts = {});

DeqGradients ift_gradients(const DeqWeights& w, const Eigen::VectorXd& x, const AdjointOptions& opts = {});

EmpiricalNtkBreakdown ift_ntk_pair(const DeqWeights& w, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                   const AdjointOptions& opts = {});

enum class LayerTying { Tied, Untied };

// d-layer network with an input layer f0 = U0 x (stream "U0"), then
// f_h = A_h sigma(f_{h-1}) + sqrt(su2) U_h x + sqrt(sb2) b_h for h = 1..d and readout c^T sigma(f_d).
// Tied shares W, U, b, v with `w`; untied regenerates per-layer weights from streams keyed by the
// layer index, so memory stays O(n^2) for any d.
EmpiricalNtkBreakdown finite_depth_empirical_ntk(const DeqWeights& w, const Eigen::VectorXd& x,
                                                 const Eigen::VectorXd& y, int d, LayerTying tying);

struct ResolventStats {
    double trace_term = 0.0;  // (1/n) tr(H^T H), H = (I - A)^{-1}
    EmpiricalNtkBreakdown ntk_terms;
};

// Linear-activation quantities from an explicit LU inverse of I - A (no iteration).
ResolventStats linear_resolvent_stats(const DeqWeights& w, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

// (1/n) ||(I - sqrt(sw2/n) W)^{-1}||_F^2 only.
double resolvent_trace(const DeqWeights& w);

// Ascending eigenvalues of (I - A)^T (I - A).
std::vector<double> empirical_spectrum(const DeqWeights& w);

double operator_norm(const Eigen::MatrixXd& M, int iterations = 200);

}  // namespace deqntk
