#pragma once

#include <complex>
#include <optional>
#include <utility>
#include <vector>

namespace deqntk {

// Limiting spectral law of (I - sqrt(s/n) W)^T (I - sqrt(s/n) W) with s = sigma_w_sq.
// Stieltjes transform convention: g(z) = int dmu(l) / (l - z), so Im g > 0 on the upper half-plane.
// g solves  s^2 z g^3 + 2 s z g^2 + (z - 1 + s) g + 1 = 0, equivalently G = -g satisfies
// 1/G = (1 - s G) z - 1/(1 - s G).

// Coefficients (highest degree first) of the cubic above.
std::vector<std::complex<double>> stieltjes_cubic(std::complex<double> z, double s);

// All three roots from the companion matrix, Newton-polished.
std::vector<std::complex<double>> stieltjes_cubic_roots(std::complex<double> z, double s);

// Residual of 1/G - (1 - sG) z + 1/(1 - sG) with G = -g, relative to |1/G|.
double stieltjes_residual(std::complex<double> g, std::complex<double> z, double s);

// The root that is a Stieltjes transform of a measure on [0, inf): Im g > 0, Im(z g) >= 0,
// |g| Im z <= 1. Ties resolved by proximity to `previous` when given, else largest Im g.
std::complex<double> stieltjes_root(std::complex<double> z, double s,
                                    std::optional<std::complex<double>> previous = std::nullopt);

// (1/pi) Im g(lambda + i b) evaluated at b = 100 b_eps and b = b_eps, extrapolated linearly to b = 0.
double density(double lambda, double s, double b_eps = 1e-8);

// Discriminant of the cubic at real z = lambda; negative exactly where the density is positive.
double cubic_discriminant(double lambda, double s);

// Support [l, u] by bisection on the discriminant sign. s = 0 gives (1, 1).
std::pair<double, double> support_endpoints(double s);

// Closed-form endpoints (-s^2 + 20 s + 8 -+ sqrt(s^4 + 24 s^3 + 192 s^2 + 512 a^2)) / 8 with a^2 = s.
std::pair<double, double> support_endpoints_closed_form(double s);

// Explicit cube-root expression for the density using principal branches; valid inside the support.
double closed_form_density(double lambda, double s);

struct QuadratureResult {
    double value = 0.0;
    double error = 0.0;
};

// int density(l)/l dl over (l + 1e-6, u - 1e-6) plus square-root edge tails.
QuadratureResult integrate_inverse_eig(double s);
// Total mass of the density over the same range; should be 1.
QuadratureResult integrate_density(double s);

// Limiting CDF at each point of `points` (any order).
std::vector<double> spectral_cdf(double s, const std::vector<double>& points);

struct SpectralDensitySamples {
    double sigma_w_sq = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    std::vector<std::pair<double, double>> grid;
};

// Density on `points` equally spaced nodes spanning [l, u].
SpectralDensitySamples tabulate_density(double s, int points);

// sup_x |F_emp(x) - F(x)| with F_emp from sorted eigenvalues.
double cdf_sup_distance(double s, const std::vector<double>& sorted_eigenvalues);

}  // namespace deqntk
