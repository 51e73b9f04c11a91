#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "deqntk/kernel_params.hpp"

namespace deqntk {

// x = e1, y = dot e1 + sqrt(1 - dot^2) e2 in R^m (m >= 2).
std::pair<Eigen::VectorXd, Eigen::VectorXd> unit_pair(double dot, int m);

// Infinite-width kernel for the activation in params (closed form for linear).
double limiting_theta(double dot, const KernelParams& params);

struct ResidualSample {
    int n = 0;
    int seed = 0;
    double empirical = 0.0;
    double theory = 0.0;
    double rel_error = 0.0;
};

struct ResidualStudy {
    std::vector<ResidualSample> samples;
    std::vector<int> widths;
    std::vector<double> medians;  // per width
};

// Empirical NTK of the equilibrium network against the limiting kernel for every (width, seed).
ResidualStudy residual_study(const std::vector<int>& widths, int seeds, const KernelParams& params, double dot,
                             int m = 2, std::uint64_t base_seed = 0, int workers = 0);

struct TraceStudy {
    std::vector<double> traces;
    double mean = 0.0;
    double theory = 0.0;  // 1 / (1 - sw2)
};

TraceStudy trace_study(int n, double sigma_w_sq, int trials, std::uint64_t seed = 0);

struct SpectrumStudy {
    std::vector<double> eigenvalues;  // ascending
    double sup_distance = 0.0;
};

SpectrumStudy spectrum_study(int n, double sigma_w_sq, std::uint64_t seed = 0);

double median(std::vector<double> v);

}  // namespace deqntk
