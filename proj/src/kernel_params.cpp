#include "deqntk/kernel_params.hpp"

#include <cmath>

#include "deqntk/errors.hpp"

namespace deqntk {

bool KernelParams::deq_init() const {
    return std::abs(sigma_w_sq + sigma_u_sq + sigma_b_sq - 1.0) <= 1e-12;
}

void KernelParams::validate() const {
    if (!(sigma_w_sq >= 0.0) || !(sigma_u_sq >= 0.0) || !(sigma_b_sq >= 0.0))
        throw ConfigError("kernel variances must be nonnegative");
    if (!(sigma_v_sq > 0.0)) throw ConfigError("sigma_v_sq must be positive");
}

void KernelParams::validate_fixed_point() const {
    validate();
    if (!(sigma_w_sq < 1.0))
        throw ConfigError("fixed-point kernels require sigma_w_sq < 1 (absolute convergence), got " +
                          std::to_string(sigma_w_sq));
}

double KernelParams::stationary_variance() const {
    return (sigma_u_sq + sigma_b_sq) / (1.0 - sigma_w_sq);
}

KernelParams KernelParams::deq(double sw2, double sv2) {
    KernelParams p;
    p.sigma_w_sq = sw2;
    p.sigma_u_sq = 1.0 - sw2;
    p.sigma_b_sq = 0.0;
    p.sigma_v_sq = sv2;
    return p;
}

KernelParams KernelParams::vanilla(double sw2, double sb2, double sv2) {
    KernelParams p;
    p.sigma_w_sq = sw2;
    p.sigma_u_sq = 0.0;
    p.sigma_b_sq = sb2;
    p.sigma_v_sq = sv2;
    return p;
}

std::string to_string(Activation a) {
    return a == Activation::Linear ? "linear" : "relu";
}

Activation parse_activation(const std::string& s) {
    if (s == "relu" || s == "normalized-relu") return Activation::NormalizedRelu;
    if (s == "linear") return Activation::Linear;
    throw ConfigError("unknown activation '" + s + "'");
}

}  // namespace deqntk
