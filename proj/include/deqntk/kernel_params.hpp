#pragma once

#include <string>

namespace deqntk {

enum class Activation { NormalizedRelu, Linear };

struct KernelParams {
    double sigma_w_sq = 0.5;
    double sigma_u_sq = 0.5;
    double sigma_b_sq = 0.0;
    double sigma_v_sq = 1.0;
    Activation activation = Activation::NormalizedRelu;

    // sigma_w_sq + sigma_u_sq + sigma_b_sq == 1 keeps unit-norm inputs at unit variance.
    bool deq_init() const;

    // Throws ConfigError on negative variances or sigma_v_sq <= 0.
    void validate() const;
    // validate() plus sigma_w_sq < 1.
    void validate_fixed_point() const;

    // Stationary diagonal variance (sigma_u_sq + sigma_b_sq) / (1 - sigma_w_sq).
    double stationary_variance() const;

    static KernelParams deq(double sigma_w_sq, double sigma_v_sq = 1.0);
    static KernelParams vanilla(double sigma_w_sq, double sigma_b_sq, double sigma_v_sq = 1.0);
};

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

}  // namespace deqntk
