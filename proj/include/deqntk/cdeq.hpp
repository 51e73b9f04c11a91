#pragma once

#include <vector>

#include <Eigen/Dense>

#include "deqntk/kernel_params.hpp"

namespace deqntk {

// P x Q x P x Q tensor stored as a (PQ) x (PQ) matrix; row i*Q + j, column i'*Q + j'.
struct ConvKernelTensor {
    int P = 0;
    int Q = 0;
    Eigen::MatrixXd data;

    ConvKernelTensor() = default;
    ConvKernelTensor(int p, int q, double fill = 0.0) : P(p), Q(q), data(Eigen::MatrixXd::Constant(p * q, p * q, fill)) {}

    double& operator()(int i, int j, int i2, int j2) { return data(i * Q + j, i2 * Q + j2); }
    double operator()(int i, int j, int i2, int j2) const { return data(i * Q + j, i2 * Q + j2); }
    double trace() const { return data.diagonal().sum(); }
};

struct ConvNormalizer {
    Eigen::MatrixXd s;  // P x Q
    int q = 1;
};

// Image with per-pixel channel vectors; row i*Q + j of `pixels` holds pixel (i, j).
struct ConvImage {
    int P = 0;
    int Q = 0;
    int C = 0;
    Eigen::MatrixXd pixels;  // (PQ) x C
};

struct ConvImagePair {
    ConvImage x;
    ConvImage y;
};

// s_ij^2 = number of in-bounds cells of the q x q window centred at (i, j).
ConvNormalizer build_normalizer(int P, int Q, int q);

// [L(M)]_{ij,i'j'} = sum over offsets (a, b) of M_{i+a, j+b, i'+a, j'+b}, zero outside the image.
ConvKernelTensor patch_trace(const ConvKernelTensor& M, int q);

// Pixel inner products x_ij . y_i'j'.
ConvKernelTensor input_kernel(const ConvImage& x, const ConvImage& y);

struct KPair {
    ConvKernelTensor K;
    ConvKernelTensor Kdot;
};

// K = (sw2 E[s(u)s(v)] + su2 K0) / (S S'),  Kdot = sw2 E[s'(u)s'(v)] / (S S'),
// with (u, v) ~ N(0, [[dx_ij, Sigma_ij,i'j'], [., dy_i'j']]). dx, dy are the self-covariance
// diagonals of the two images (all ones for unit pixels under sw2 + su2 = 1).
KPair cdeq_k_step(const ConvKernelTensor& sigma_prev, const ConvKernelTensor& K0, const ConvNormalizer& norm,
                  const KernelParams& params, const Eigen::VectorXd& dx, const Eigen::VectorXd& dy);
KPair cdeq_k_step(const ConvKernelTensor& sigma_prev, const ConvKernelTensor& K0, const ConvNormalizer& norm,
                  const KernelParams& params);

// One covariance step Sigma -> N * L(sw2 E[s s](Lambda) + su2 K0) with N = 1 / (S S').
ConvKernelTensor cdeq_sigma_map(const ConvKernelTensor& sigma, const ConvKernelTensor& K0, const ConvNormalizer& norm,
                                const KernelParams& params, const Eigen::VectorXd& dx, const Eigen::VectorXd& dy);

struct CdeqOptions {
    double sigma_tol = 1e-6;
    int sigma_max_iter = 500;
    double theta_tol = 1e-8;
    int theta_max_iter = 5000;
};

struct CdeqFixedPoint {
    ConvKernelTensor sigma;
    ConvKernelTensor K;
    ConvKernelTensor Kdot;
    Eigen::VectorXd dx;
    Eigen::VectorXd dy;
    int iterations = 0;
    double last_change = 0.0;
};

// Self-covariance diagonal of one image at the fixed point.
Eigen::VectorXd cdeq_self_diagonal(const ConvImage& x, const ConvNormalizer& norm, const KernelParams& params,
                                   const CdeqOptions& opts = {});

CdeqFixedPoint cdeq_sigma_fixed_point(const ConvImagePair& pair, int q, const KernelParams& params,
                                      const CdeqOptions& opts = {});

struct CdeqTheta {
    double value = 0.0;  // Tr(Theta*)
    ConvKernelTensor theta;
    int iterations = 0;
};

// Theta <- Kdot * L(Theta) + K until the l-infinity change is at most theta_tol.
CdeqTheta cdeq_theta(const ConvKernelTensor& Kstar, const ConvKernelTensor& Kdotstar, int q,
                     const CdeqOptions& opts = {});

// Same system solved directly with a sparse LU; intended for small P, Q.
CdeqTheta cdeq_theta_direct(const ConvKernelTensor& Kstar, const ConvKernelTensor& Kdotstar, int q);

double cdeq_kernel(const ConvImage& x, const ConvImage& y, int q, const KernelParams& params,
                   const CdeqOptions& opts = {});

// Per-pixel unit normalization; zero pixels become the uniform vector 1/sqrt(C).
void normalize_pixels(ConvImage& img);

}  // namespace deqntk
