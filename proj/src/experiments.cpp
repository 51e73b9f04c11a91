#include "deqntk/experiments.hpp"

#include <algorithm>
#include <cmath>

#include "deqntk/empirical.hpp"
#include "deqntk/errors.hpp"
#include "deqntk/ntk.hpp"
#include "deqntk/parallel.hpp"
#include "deqntk/spectra.hpp"

namespace deqntk {

std::pair<Eigen::VectorXd, Eigen::VectorXd> unit_pair(double dot, int m) {
    if (m < 2) throw ConfigError("input dimension must be at least 2");
    if (!(std::abs(dot) <= 1.0)) throw ConfigError("dot must lie in [-1, 1]");
    Eigen::VectorXd x = Eigen::VectorXd::Zero(m), y = Eigen::VectorXd::Zero(m);
    x[0] = 1.0;
    y[0] = dot;
    y[1] = std::sqrt(1.0 - dot * dot);
    return {x, y};
}

double limiting_theta(double dot, const KernelParams& params) {
    return params.activation == Activation::Linear ? theta_linear_deq(dot, params) : theta_deq(dot, params).theta;
}

double median(std::vector<double> v) {
    if (v.empty()) throw ConfigError("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

ResidualStudy residual_study(const std::vector<int>& widths, int seeds, const KernelParams& params, double dot,
                             int m, std::uint64_t base_seed, int workers) {
    params.validate_fixed_point();
    if (seeds < 1) throw ConfigError("need at least one seed");
    const auto [x, y] = unit_pair(dot, m);
    const double theory = limiting_theta(dot, params);
    ResidualStudy st;
    st.widths = widths;
    st.samples.resize(widths.size() * static_cast<std::size_t>(seeds));
    parallel_for(st.samples.size(), workers, [&](std::size_t k) {
        const int n = widths[k / static_cast<std::size_t>(seeds)];
        const int s = static_cast<int>(k % static_cast<std::size_t>(seeds));
        const auto w = DeqWeights::draw(n, m, base_seed + static_cast<std::uint64_t>(s), params);
        const double emp = ift_ntk_pair(w, x, y).total;
        st.samples[k] = {n, s, emp, theory, std::abs(emp - theory) / std::abs(theory)};
    });
    for (std::size_t i = 0; i < widths.size(); ++i) {
        std::vector<double> e;
        for (int s = 0; s < seeds; ++s) e.push_back(st.samples[i * static_cast<std::size_t>(seeds) + s].rel_error);
        st.medians.push_back(median(e));
    }
    return st;
}

TraceStudy trace_study(int n, double sigma_w_sq, int trials, std::uint64_t seed) {
    KernelParams p = KernelParams::deq(sigma_w_sq);
    p.activation = Activation::Linear;
    p.validate_fixed_point();
    if (trials < 1) throw ConfigError("need at least one trial");
    TraceStudy st;
    for (int t = 0; t < trials; ++t) {
        const auto w = DeqWeights::draw(n, 1, seed, p, static_cast<std::uint64_t>(t));
        st.traces.push_back(resolvent_trace(w));
    }
    double sum = 0.0;
    for (double v : st.traces) sum += v;
    st.mean = sum / trials;
    st.theory = 1.0 / (1.0 - sigma_w_sq);
    return st;
}

SpectrumStudy spectrum_study(int n, double sigma_w_sq, std::uint64_t seed) {
    KernelParams p = KernelParams::deq(sigma_w_sq);
    p.activation = Activation::Linear;
    p.validate_fixed_point();
    SpectrumStudy st;
    st.eigenvalues = empirical_spectrum(DeqWeights::draw(n, 1, seed, p));
    st.sup_distance = cdf_sup_distance(sigma_w_sq, st.eigenvalues);
    return st;
}

}  // namespace deqntk
