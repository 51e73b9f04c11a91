#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "doctest.h"
#include "deqntk/empirical.hpp"
#include "deqntk/errors.hpp"
#include "deqntk/spectra.hpp"

using namespace deqntk;
using cd = std::complex<double>;

TEST_CASE("zero variance reduces to a point mass at one") {
    const cd z(2.0, 1e-6);
    const cd g = stieltjes_root(z, 0.0);
    CHECK(std::abs(g - 1.0 / (1.0 - z)) <= 1e-15);
    CHECK(g.imag() > 0.0);
    const auto [l, u] = support_endpoints(0.0);
    CHECK(l == 1.0);
    CHECK(u == 1.0);
    CHECK(integrate_inverse_eig(0.0).value == 1.0);
    CHECK(density(0.5, 0.0) <= 1e-6);
}

TEST_CASE("returned root satisfies the implicit equation") {
    for (double s : {0.1, 0.25, 0.5, 0.75, 0.9}) {
        for (int i = 0; i < 40; ++i) {
            const cd z(-1.0 + 0.2 * i, 1e-3 + 0.05 * (i % 7));
            const cd g = stieltjes_root(z, s);
            CHECK(g.imag() > 0.0);
            CHECK(stieltjes_residual(g, z, s) <= 1e-10);
        }
    }
}

TEST_CASE("exactly one admissible root on the upper half-plane") {
    for (double s : {0.1, 0.5, 0.9}) {
        for (int i = 0; i <= 400; ++i) {
            for (double b : {1e-8, 1e-4, 0.5}) {
                const cd z(-1.0 + 8.0 * i / 400, b);
                int count = 0;
                for (const cd& g : stieltjes_cubic_roots(z, s))
                    if (g.imag() > 0.0 && (z * g).imag() >= -1e-12 * std::abs(z * g) && std::abs(g) * b <= 1.0 + 1e-9)
                        ++count;
                CHECK(count == 1);
            }
        }
    }
}

TEST_CASE("root varies continuously along a sweep") {
    const double s = 0.5;
    cd prev = stieltjes_root({0.0, 1e-6}, s);
    double prev_step = 0.0;
    for (int i = 1; i <= 2000; ++i) {
        const cd g = stieltjes_root({5.0 * i / 2000, 1e-6}, s, prev);
        const double step = std::abs(g - prev);
        if (i > 1 && prev_step > 1e-3) CHECK(step <= 10.0 * prev_step + 1e-2);
        prev_step = step;
        prev = g;
    }
}

TEST_CASE("density agrees with the explicit cube-root expression inside the support") {
    const double s = 0.25;
    CHECK(density(1.0, s) == doctest::Approx(closed_form_density(1.0, s)).epsilon(1e-6));
    CHECK(std::abs(stieltjes_root({1.0, 1e-6}, s).imag() / std::numbers::pi - closed_form_density(1.0, s)) <= 1e-6);
    for (double sw : {0.25, 0.5, 0.75}) {
        const auto [l, u] = support_endpoints(sw);
        for (int i = 1; i < 50; ++i) {
            const double x = l + (u - l) * (0.02 + 0.96 * i / 50.0);
            CHECK(std::abs(density(x, sw) - closed_form_density(x, sw)) <= 1e-6);
        }
    }
}

TEST_CASE("density vanishes outside the support and is positive inside") {
    for (double s : {0.25, 0.5, 0.75}) {
        const auto [l, u] = support_endpoints(s);
        CHECK(l > 0.0);
        CHECK(l < u);
        CHECK(density(0.5 * l, s) <= 1e-6);
        CHECK(density(u + 0.1, s) <= 1e-6);
        CHECK(density(u * 1.5, s) <= 1e-6);
        CHECK(density(0.5 * (l + u), s) > 0.0);
        CHECK(density(l - 1e-4, s) <= 1e-6);
        CHECK(density(u + 1e-3, s) <= 1e-6);
    }
}

TEST_CASE("support is bounded away from zero") {
    for (int k = 1; k <= 9; ++k) {
        const double s = 0.1 * k;
        CHECK(support_endpoints(s).first > 0.0);
    }
}

TEST_CASE("numerical and closed-form endpoints agree") {
    struct Row { double s, l, u; };
    // Independent high-precision roots of 4L^2 + (s^2 - 20 s - 8) L + 4 (1 - s)^3.
    const Row rows[] = {
        {0.25, 0.136167442689414, 3.09820755731059},
        {0.5, 0.0283501363906178, 4.40914986360938},
        {0.75, 0.00278689993292232, 5.60658810006708},
    };
    for (const Row& r : rows) {
        const auto [l, u] = support_endpoints(r.s);
        const auto [cl, cu] = support_endpoints_closed_form(r.s);
        CHECK(l == doctest::Approx(r.l).epsilon(1e-12));
        CHECK(u == doctest::Approx(r.u).epsilon(1e-12));
        CHECK(cl == doctest::Approx(l).epsilon(1e-10));
        CHECK(cu == doctest::Approx(u).epsilon(1e-12));
    }
}

TEST_CASE("discriminant changes sign exactly at the support edges") {
    const double s = 0.5;
    const auto [l, u] = support_endpoints(s);
    CHECK(cubic_discriminant(0.5 * l, s) > 0.0);
    CHECK(cubic_discriminant(0.5 * (l + u), s) < 0.0);
    CHECK(cubic_discriminant(u + 1.0, s) > 0.0);
}

TEST_CASE("density is a probability measure") {
    for (double s : {0.1, 0.25, 0.5, 0.75, 0.9}) CHECK(std::abs(integrate_density(s).value - 1.0) <= 1e-3);
}

TEST_CASE("inverse moment matches the resolvent trace limit") {
    CHECK(std::abs(integrate_inverse_eig(0.25).value - 4.0 / 3.0) <= 1e-3);
    CHECK(std::abs(integrate_inverse_eig(0.5).value - 2.0) <= 2e-3);
    for (double s : {0.1, 0.75, 0.9}) {
        const auto r = integrate_inverse_eig(s);
        CHECK(r.error <= 1e-4);
        CHECK(r.value == doctest::Approx(1.0 / (1.0 - s)).epsilon(1e-5));
    }
}

TEST_CASE("mass concentrates at one for small variance") {
    const double s = 1e-4;
    const auto F = spectral_cdf(s, {0.9, 0.99, 1.0, 1.01, 1.1});
    CHECK(F[0] <= 1e-9);
    CHECK(F[4] >= 1.0 - 1e-3);
    CHECK(std::abs(F[2] - 0.5) <= 0.05);
}

TEST_CASE("cdf is monotone and ends at one") {
    const double s = 0.5;
    const auto [l, u] = support_endpoints(s);
    std::vector<double> xs;
    for (int i = 0; i <= 100; ++i) xs.push_back(l - 0.1 + (u - l + 0.2) * (100 - i) / 100.0);
    const auto F = spectral_cdf(s, xs);
    for (int i = 1; i <= 100; ++i) CHECK(F[i] <= F[i - 1]);
    CHECK(F.front() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(F.back() == 0.0);
}

TEST_CASE("tabulated density is nonnegative and spans the support") {
    const auto t = tabulate_density(0.25, 201);
    CHECK(t.grid.size() == 201);
    CHECK(t.grid.front().first == t.lower);
    CHECK(t.grid.back().first == doctest::Approx(t.upper).epsilon(1e-15));
    double trap = 0.0;
    for (std::size_t i = 0; i < t.grid.size(); ++i) {
        CHECK(t.grid[i].second >= 0.0);
        if (i) trap += 0.5 * (t.grid[i].second + t.grid[i - 1].second) * (t.grid[i].first - t.grid[i - 1].first);
    }
    CHECK(trap == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("empirical spectrum follows the limiting law") {
    KernelParams p;
    p.sigma_w_sq = 0.25;
    const auto ev = empirical_spectrum(DeqWeights::draw(400, 1, 3, p));
    CHECK(cdf_sup_distance(0.25, ev) <= 0.05);
}

TEST_CASE("invalid variance is rejected") {
    CHECK_THROWS_AS(support_endpoints(1.0), ConfigError);
    CHECK_THROWS_AS(stieltjes_root({1.0, 0.0}, 0.5), DomainError);
}
