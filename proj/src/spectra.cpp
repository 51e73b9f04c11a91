#include "deqntk/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "deqntk/errors.hpp"

namespace deqntk {

namespace {

using cd = std::complex<double>;

void check_s(double s) {
    if (!(s >= 0.0 && s < 1.0)) throw ConfigError("sigma_w_sq must lie in [0, 1), got " + std::to_string(s));
}

cd eval_cubic(const std::vector<cd>& c, cd g) { return ((c[0] * g + c[1]) * g + c[2]) * g + c[3]; }
cd eval_cubic_dot(const std::vector<cd>& c, cd g) { return (3.0 * c[0] * g + 2.0 * c[1]) * g + c[2]; }

constexpr double kEdgeOffset = 1e-6;

}  // namespace

std::vector<cd> stieltjes_cubic(cd z, double s) {
    return {s * s * z, 2.0 * s * z, z - 1.0 + s, cd(1.0, 0.0)};
}

std::vector<cd> stieltjes_cubic_roots(cd z, double s) {
    check_s(s);
    if (s == 0.0) return {1.0 / (1.0 - z)};
    const auto c = stieltjes_cubic(z, s);
    Eigen::Matrix3cd C = Eigen::Matrix3cd::Zero();
    C(0, 0) = -c[1] / c[0];
    C(0, 1) = -c[2] / c[0];
    C(0, 2) = -c[3] / c[0];
    C(1, 0) = 1.0;
    C(2, 1) = 1.0;
    Eigen::ComplexEigenSolver<Eigen::Matrix3cd> es(C, false);
    if (es.info() != Eigen::Success) throw NumericError("companion eigensolver failed");
    std::vector<cd> roots(3);
    for (int i = 0; i < 3; ++i) {
        cd g = es.eigenvalues()[i];
        for (int k = 0; k < 4; ++k) {
            const cd d = eval_cubic_dot(c, g);
            if (d == 0.0) break;
            const cd ng = g - eval_cubic(c, g) / d;
            if (!(std::abs(eval_cubic(c, ng)) < std::abs(eval_cubic(c, g)))) break;
            g = ng;
        }
        roots[i] = g;
    }
    return roots;
}

double stieltjes_residual(cd g, cd z, double s) {
    const cd G = -g;
    const cd lhs = 1.0 / G;
    const cd rhs = (1.0 - s * G) * z - 1.0 / (1.0 - s * G);
    return std::abs(lhs - rhs) / std::abs(lhs);
}

cd stieltjes_root(cd z, double s, std::optional<cd> previous) {
    if (!(z.imag() > 0.0)) throw DomainError("Stieltjes transform needs Im z > 0");
    const auto roots = stieltjes_cubic_roots(z, s);
    std::vector<cd> ok;
    for (const cd& g : roots) {
        const double tol = 1e-12 * std::abs(z * g);
        if (g.imag() > 0.0 && (z * g).imag() >= -tol && std::abs(g) * z.imag() <= 1.0 + 1e-9) ok.push_back(g);
    }
    if (ok.empty())
        throw NumericError("no admissible Stieltjes root at z = (" + std::to_string(z.real()) + ", " +
                           std::to_string(z.imag()) + ")");
    if (ok.size() == 1) return ok.front();
    if (previous) {
        return *std::min_element(ok.begin(), ok.end(), [&](cd a, cd b) {
            return std::abs(a - *previous) < std::abs(b - *previous);
        });
    }
    return *std::max_element(ok.begin(), ok.end(), [](cd a, cd b) { return a.imag() < b.imag(); });
}

double density(double lambda, double s, double b_eps) {
    if (!(b_eps > 0.0)) throw ConfigError("b_eps must be positive");
    const double b1 = 100.0 * b_eps, b2 = b_eps;
    const double d1 = stieltjes_root({lambda, b1}, s).imag() / std::numbers::pi;
    const double d2 = stieltjes_root({lambda, b2}, s).imag() / std::numbers::pi;
    const double d0 = d2 - b2 * (d1 - d2) / (b1 - b2);
    return std::max(d0, 0.0);
}

double cubic_discriminant(double lambda, double s) {
    const double a = s * s * lambda, b = 2.0 * s * lambda, c = lambda - 1.0 + s, d = 1.0;
    return 18.0 * a * b * c * d - 4.0 * b * b * b * d + b * b * c * c - 4.0 * a * c * c * c - 27.0 * a * a * d * d;
}

std::pair<double, double> support_endpoints(double s) {
    check_s(s);
    if (s == 0.0) return {1.0, 1.0};
    const double top = std::pow(1.0 + 2.0 * std::sqrt(s), 2) + 1.0;
    double inside = 1.0 + s;
    if (!(cubic_discriminant(inside, s) < 0.0)) {
        bool found = false;
        for (int i = 1; i < 4000 && !found; ++i) {
            const double t = top * i / 4000.0;
            if (cubic_discriminant(t, s) < 0.0) {
                inside = t;
                found = true;
            }
        }
        if (!found) throw NumericError("could not locate the spectral support");
    }
    auto edge = [&](double out, double in) {
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (out + in);
            if (mid == out || mid == in) break;
            if (cubic_discriminant(mid, s) < 0.0) in = mid; else out = mid;
        }
        return 0.5 * (out + in);
    };
    const double lo = 1e-300;
    return {edge(lo, inside), edge(top, inside)};
}

std::pair<double, double> support_endpoints_closed_form(double s) {
    const double a_sq = s;
    const double r = std::sqrt(std::pow(s, 4) + 24.0 * std::pow(s, 3) + 192.0 * s * s + 512.0 * a_sq);
    return {(-s * s + 20.0 * s - r + 8.0) / 8.0, (-s * s + 20.0 * s + r + 8.0) / 8.0};
}

double closed_form_density(double lambda, double s) {
    if (s == 0.0) return 0.0;
    const double b = lambda;
    const double T = 3.0 * std::pow(s, 3) * b - s * s * b * b - 3.0 * s * s * b;
    const double P = 9.0 * std::pow(s, 4) * b * b - 2.0 * std::pow(s, 3) * b * b * b + 18.0 * std::pow(s, 3) * b * b;
    const cd C = std::pow(P + std::sqrt(cd(P * P + 4.0 * T * T * T, 0.0)), 1.0 / 3.0);
    const double r3 = std::sqrt(3.0);
    const cd e = r3 * T / (3.0 * std::pow(2.0, 2.0 / 3.0) * s * s * b * C) + r3 * C / (6.0 * std::cbrt(2.0) * s * s * b);
    return e.real() / std::numbers::pi;
}

namespace {

template <class F>
QuadratureResult gk(F f, double a, double b, double tol = 1e-11) {
    QuadratureResult r;
    if (!(b > a)) return r;
    r.value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 20, tol, &r.error);
    r.error *= std::max(1.0, std::abs(r.value));
    return r;
}

QuadratureResult integrate_weighted(double s, bool inverse) {
    check_s(s);
    if (s == 0.0) return {1.0, 0.0};
    const auto [l, u] = support_endpoints(s);
    auto f = [&](double x) { return density(x, s) / (inverse ? x : 1.0); };
    const double a = l + kEdgeOffset, b = u - kEdgeOffset;
    QuadratureResult r = gk(f, a, b);
    // Density ~ sqrt(distance to edge): the omitted slivers hold about (2/3) * width * edge value.
    const double tail = 2.0 / 3.0 * kEdgeOffset * (f(a) + f(b));
    r.value += tail;
    r.error += 0.05 * tail;
    if (!(r.error <= 1e-4)) throw ConvergenceError("quadrature error estimate too large: " + std::to_string(r.error));
    return r;
}

}  // namespace

QuadratureResult integrate_inverse_eig(double s) { return integrate_weighted(s, true); }
QuadratureResult integrate_density(double s) { return integrate_weighted(s, false); }

std::vector<double> spectral_cdf(double s, const std::vector<double>& points) {
    check_s(s);
    std::vector<double> out(points.size());
    if (s == 0.0) {
        for (std::size_t i = 0; i < points.size(); ++i) out[i] = points[i] >= 1.0 ? 1.0 : 0.0;
        return out;
    }
    const auto [l, u] = support_endpoints(s);
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return points[a] < points[b]; });
    auto f = [&](double x) { return density(x, s); };
    double acc = 0.0, at = l;
    for (std::size_t k : order) {
        const double x = std::clamp(points[k], l, u);
        if (x > at) {
            acc += gk(f, at, x, 1e-9).value;
            at = x;
        }
        out[k] = acc;
    }
    return out;
}

SpectralDensitySamples tabulate_density(double s, int points) {
    if (points < 2) throw ConfigError("need at least two grid points");
    SpectralDensitySamples t;
    t.sigma_w_sq = s;
    std::tie(t.lower, t.upper) = support_endpoints(s);
    t.grid.reserve(points);
    for (int i = 0; i < points; ++i) {
        const double x = t.lower + (t.upper - t.lower) * i / (points - 1);
        t.grid.emplace_back(x, s == 0.0 ? 0.0 : density(x, s));
    }
    return t;
}

double cdf_sup_distance(double s, const std::vector<double>& ev) {
    const auto F = spectral_cdf(s, ev);
    const double n = static_cast<double>(ev.size());
    double sup = 0.0;
    for (std::size_t i = 0; i < ev.size(); ++i) {
        sup = std::max(sup, std::abs(static_cast<double>(i) / n - F[i]));
        sup = std::max(sup, std::abs(static_cast<double>(i + 1) / n - F[i]));
    }
    return sup;
}

}  // namespace deqntk
