#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "deqntk/errors.hpp"
#include "deqntk/gram.hpp"
#include "deqntk/ntk.hpp"
#include "deqntk/rng.hpp"

using namespace deqntk;

namespace {

Dataset sphere(int n, int m, int classes, std::uint64_t seed) {
    Dataset ds;
    ds.features.resize(n, m);
    ds.labels.resize(static_cast<std::size_t>(n));
    Stream s(seed, "sphere");
    for (int k = 0; k < n; ++k) {
        for (int a = 0; a < m; ++a) ds.features(k, a) = s.normal();
        ds.labels[static_cast<std::size_t>(k)] = static_cast<int>(s.below(static_cast<std::uint64_t>(classes)));
    }
    normalize(ds, Normalization::UnitSample);
    return ds;
}

// One noisy cluster per class; centers are shared by every seed.
Dataset clustered(int n, int m, int classes, std::uint64_t seed) {
    Stream cs(0, "centers");
    Eigen::MatrixXd centers(classes, m);
    for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = cs.normal();
    Stream s(seed, "noise");
    Dataset ds;
    ds.features.resize(n, m);
    ds.labels.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const int c = k % classes;
        ds.labels[static_cast<std::size_t>(k)] = c;
        for (int a = 0; a < m; ++a) ds.features(k, a) = centers(c, a) + 0.3 * s.normal();
    }
    normalize(ds, Normalization::UnitSample);
    return ds;
}

KernelSpec deq_spec(double sw = 0.6) {
    KernelSpec s;
    s.params = KernelParams::deq(sw);
    return s;
}

}  // namespace

TEST_CASE("kernel tags round trip through their names") {
    for (const char* n : {"deq-ntk", "finite-depth-ntk", "vanilla-ntk", "linear-deq", "cdeq-ntk"})
        CHECK(to_string(parse_kernel_tag(n)) == n);
    CHECK_THROWS_AS(parse_kernel_tag("rbf"), ConfigError);
}

TEST_CASE("single-sample Gram holds the self kernel") {
    const auto ds = sphere(1, 5, 2, 1);
    const auto g = assemble_gram(ds, deq_spec());
    REQUIRE(g.values.rows() == 1);
    CHECK(g.values(0, 0) == theta_deq(1.0, KernelParams::deq(0.6)).theta);
}

TEST_CASE("duplicate samples give identical Gram rows") {
    auto ds = sphere(6, 8, 2, 2);
    ds.features.row(4) = ds.features.row(1);
    const auto g = assemble_gram(ds, deq_spec());
    CHECK(g.values.row(4) == g.values.row(1));
}

TEST_CASE("deq Gram matches the scalar kernel entry by entry") {
    const auto ds = sphere(10, 7, 3, 3);
    const auto p = KernelParams::deq(0.6);
    const auto g = assemble_gram(ds, deq_spec());
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) {
            const double dot = i == j ? 1.0 : ds.features.row(std::min(i, j)).dot(ds.features.row(std::max(i, j)));
            CHECK(g.values(i, j) == theta_deq(dot, p).theta);
        }
    CHECK(g.values == g.values.transpose());
    CHECK(g.kernel_tag == KernelTag::DeqNtk);
    CHECK_FALSE(g.depth.has_value());
}

TEST_CASE("unit-norm data gives a constant diagonal") {
    const auto g = assemble_gram(sphere(12, 6, 2, 4), deq_spec());
    CHECK((g.values.diagonal().array() - g.values(0, 0)).abs().maxCoeff() <= 1e-12);
    CHECK(g.values(0, 0) == theta_deq(1.0, KernelParams::deq(0.6)).theta);
}

TEST_CASE("vanilla kernel drops the injection term") {
    const auto ds = sphere(5, 4, 2, 5);
    KernelSpec s;
    s.tag = KernelTag::VanillaNtk;
    s.params.sigma_w_sq = 0.6;
    s.params.sigma_u_sq = 0.3;
    s.params.sigma_b_sq = 0.4;
    s.depth = 7;
    const auto g = assemble_gram(ds, s);
    CHECK(g.params.sigma_u_sq == 0.0);
    CHECK(g.depth == 7);
    const auto p = KernelParams::vanilla(0.6, 0.4);
    CHECK(g.values(1, 3) == finite_depth_ntk(ds.features.row(1).dot(ds.features.row(3)), 7, p).theta);
}

TEST_CASE("linear deq kernel uses the closed form") {
    const auto ds = sphere(5, 4, 2, 6);
    KernelSpec s;
    s.tag = KernelTag::LinearDeq;
    s.params = KernelParams::deq(0.4, 2.0);
    const auto g = assemble_gram(ds, s);
    auto lp = s.params;
    lp.activation = Activation::Linear;
    CHECK(g.values(0, 2) == theta_linear_deq(ds.features.row(0).dot(ds.features.row(2)), lp));
}

TEST_CASE("cdeq Gram matches pairwise image kernels") {
    Dataset ds;
    ds.P = 4;
    ds.Q = 4;
    ds.C = 2;
    ds.features.resize(3, 32);
    Stream s(7, "img");
    for (Eigen::Index i = 0; i < ds.features.size(); ++i) ds.features.data()[i] = s.normal();
    ds.labels = {0, 1, 0};
    normalize(ds, Normalization::UnitPixel);
    KernelSpec spec;
    spec.tag = KernelTag::CdeqNtk;
    spec.params = KernelParams::deq(0.65);
    const auto g = assemble_gram(ds, spec);
    CHECK(g.values(0, 2) == cdeq_kernel(ds.image(0), ds.image(2), 3, spec.params));
    CHECK(g.values(2, 0) == g.values(0, 2));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.values);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8 * es.eigenvalues().maxCoeff());
}

TEST_CASE("cross Gram matches pointwise evaluation") {
    const auto tr = sphere(7, 5, 2, 8), te = sphere(3, 5, 2, 9);
    const auto X = assemble_cross(te, tr, deq_spec());
    REQUIRE(X.rows() == 3);
    REQUIRE(X.cols() == 7);
    CHECK(X(2, 5) == kernel_value(deq_spec(), te, 2, tr, 5));
}

TEST_CASE("depth-batched Grams match single-depth assembly") {
    const auto ds = sphere(6, 5, 2, 10), te = sphere(3, 5, 2, 11);
    KernelSpec s;
    s.tag = KernelTag::FiniteDepthNtk;
    s.params = KernelParams::deq(0.5);
    const std::vector<int> depths{0, 3, 20};
    const auto Ks = assemble_gram_depths(ds, s, depths);
    const auto Xs = assemble_cross_depths(te, ds, s, depths);
    for (std::size_t k = 0; k < depths.size(); ++k) {
        s.depth = depths[k];
        CHECK((Ks[k] - assemble_gram(ds, s).values).cwiseAbs().maxCoeff() == 0.0);
        CHECK((Xs[k] - assemble_cross(te, ds, s)).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK_THROWS_AS(assemble_gram_depths(ds, deq_spec(), depths), ConfigError);
}

TEST_CASE("deq Gram on random unit data is positive semidefinite") {
    const auto g = assemble_gram(sphere(200, 30, 10, 12), deq_spec());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.values);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8 * es.eigenvalues().maxCoeff());
}

TEST_CASE("Gram assembly is bitwise identical across worker counts") {
    const auto ds = sphere(40, 9, 3, 13);
    const auto a = assemble_gram(ds, deq_spec(), 1), b = assemble_gram(ds, deq_spec(), 4),
               c = assemble_gram(ds, deq_spec(), 7);
    CHECK(a.values == b.values);
    CHECK(a.values == c.values);
}

TEST_CASE("kernel failures carry the pair index") {
    auto ds = sphere(4, 3, 2, 14);
    ds.features.row(2) *= 1.5;
    try {
        assemble_gram(ds, deq_spec(), 1);
        FAIL("expected a domain error");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).find("pair (") != std::string::npos);
    }
}

TEST_CASE("fixed-point kernels reject sigma_w_sq >= 1") {
    const auto ds = sphere(3, 3, 2, 15);
    CHECK_THROWS_AS(assemble_gram(ds, deq_spec(1.0)), ConfigError);
    KernelSpec f;
    f.tag = KernelTag::FiniteDepthNtk;
    f.params = KernelParams::vanilla(2.0, 0.0);
    f.depth = 3;
    CHECK_NOTHROW(assemble_gram(ds, f));
}

TEST_CASE("label encoding") {
    const auto Y = encode_labels({3, 0, 9}, 10);
    CHECK(Y(0, 3) == 0.9);
    CHECK(Y(0, 2) == -0.1);
    for (int r = 0; r < 3; ++r) {
        CHECK(Y.row(r).sum() == doctest::Approx(0.9 - 0.1 * 9).epsilon(1e-14));
        CHECK((Y.row(r).array() == 0.9).count() == 1);
        Eigen::Index arg;
        Y.row(r).maxCoeff(&arg);
        CHECK(arg == std::vector<int>{3, 0, 9}[static_cast<std::size_t>(r)]);
    }
    const auto one = encode_labels({0, 0}, 1);
    CHECK((one.array() == 0.9).all());
    CHECK_THROWS_AS(encode_labels({10}, 10), DataError);
    CHECK_THROWS_AS(encode_labels({-1}, 10), DataError);
}

TEST_CASE("identity kernel recovers training labels") {
    const std::vector<int> y{0, 2, 1, 1, 0};
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(5, 5);
    CHECK(regress_and_score(I, I, y, y, 0.0) == 1.0);
}

TEST_CASE("frozen kernel is singular without regularization") {
    const Eigen::MatrixXd K = Eigen::MatrixXd::Constant(20, 20, 1.7);
    const Eigen::MatrixXd X = Eigen::MatrixXd::Constant(10, 20, 1.7);
    std::vector<int> ytr(20), yte(10);
    for (int i = 0; i < 20; ++i) ytr[static_cast<std::size_t>(i)] = i % 4;
    for (int i = 0; i < 10; ++i) yte[static_cast<std::size_t>(i)] = i % 4;
    CHECK_THROWS_AS(regress(K, X, ytr, yte, 0.0), SingularityError);
    const auto r = regress(K, X, ytr, yte, 1e-2);
    CHECK(std::all_of(r.predictions.begin(), r.predictions.end(), [&](int p) { return p == r.predictions[0]; }));
    // Equal class counts tie in every output, so the lowest class wins.
    CHECK(r.predictions[0] == 0);
    CHECK(r.accuracy == doctest::Approx(0.3));
}

TEST_CASE("slightly indefinite Gram is rescued by jitter") {
    Eigen::MatrixXd B(3, 6);
    B << 1, 0, 0, 1, 0.5, 0.2, 0, 1, 0, 0.3, 1, 0.4, 0, 0, 1, 0.1, 0.2, 1;
    Eigen::MatrixXd K = B.transpose() * B;  // rank 3
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
    Eigen::VectorXd ev = es.eigenvalues();
    for (int i = 0; i < 3; ++i) ev(i) = -1e-12 * (i + 1);
    const Eigen::MatrixXd Kn = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    const std::vector<int> y{0, 1, 2, 0, 1, 2};
    const auto r = regress(Kn, Kn, y, y, 0.0);
    CHECK(r.jitter > 0.0);
    CHECK(r.ridge == 0.0);
}

TEST_CASE("hopeless matrix fails after the jitter ceiling") {
    Eigen::MatrixXd K = Eigen::MatrixXd::Identity(4, 4);
    K(3, 3) = -1.0;
    const std::vector<int> y{0, 1, 0, 1};
    CHECK_THROWS_AS(regress(K, K, y, y, 0.0), SingularityError);
}

TEST_CASE("regression is invariant to permuting the training set") {
    const auto tr = clustered(60, 10, 3, 16), te = clustered(30, 10, 3, 17);
    const auto K = assemble_gram(tr, deq_spec()).values;
    const auto X = assemble_cross(te, tr, deq_spec());
    std::vector<int> perm(60);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[3], perm[40]);
    const auto trp = tr.subset(perm);
    const auto Kp = assemble_gram(trp, deq_spec()).values;
    for (int i = 0; i < 60; ++i)
        for (int j = 0; j < 60; ++j) CHECK(Kp(i, j) == K(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]));
    const auto Xp = assemble_cross(te, trp, deq_spec());
    const auto a = regress(K, X, tr.labels, te.labels, 1e-3), b = regress(Kp, Xp, trp.labels, te.labels, 1e-3);
    CHECK(a.predictions == b.predictions);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.accuracy >= 0.9);
}

TEST_CASE("predictions are invariant to a joint positive rescaling") {
    const auto tr = clustered(50, 8, 4, 18), te = clustered(40, 8, 4, 19);
    const auto K = assemble_gram(tr, deq_spec()).values;
    const auto X = assemble_cross(te, tr, deq_spec());
    const auto base = regress(K, X, tr.labels, te.labels, 0.1);
    for (double c : {1e-3, 7.25, 1e4}) {
        const auto r = regress(c * K, c * X, tr.labels, te.labels, 0.1);
        CHECK(r.predictions == base.predictions);
        CHECK(r.ridge == doctest::Approx(c * base.ridge).epsilon(1e-12));
    }
}

TEST_CASE("confidence intervals") {
    const auto one = summarize("k", 5, {0.4});
    CHECK(one.ci_low == one.ci_high);
    const auto same = summarize("k", 5, {0.1, 0.1, 0.1});
    CHECK(same.ci_low == same.mean);
    CHECK(same.ci_high == same.mean);
    const auto s = summarize("k", 5, {0.2, 0.4, 0.6});
    CHECK(s.mean == doctest::Approx(0.4));
    CHECK(s.ci_high - s.mean == doctest::Approx(1.959963984540054 * 0.2 / std::sqrt(3.0)));
}

TEST_CASE("resampling is seeded and without replacement") {
    const auto a = sample_without_replacement(100, 30, 5, 2), b = sample_without_replacement(100, 30, 5, 2);
    CHECK(a == b);
    CHECK(std::set<int>(a.begin(), a.end()).size() == 30);
    CHECK(a != sample_without_replacement(100, 30, 5, 3));
    CHECK_THROWS_AS(sample_without_replacement(10, 11, 0, 0), ConfigError);
}

TEST_CASE("single-depth single-rep sweep equals one regression") {
    const auto pool = clustered(80, 6, 3, 20), test = clustered(40, 6, 3, 21);
    DepthSweepConfig cfg;
    cfg.depths = {1};
    cfg.deq = KernelParams::deq(0.6);
    cfg.vanilla = KernelParams::vanilla(0.6, 0.4);
    cfg.n_train = 50;
    cfg.n_test = 20;
    cfg.seed = 3;
    const auto r = depth_sweep(pool, test, cfg);
    REQUIRE(r.records.size() == 2);
    REQUIRE(r.summary.size() == 2);
    const auto tr = pool.subset(sample_without_replacement(80, 50, 3, 0));
    const auto te = test.subset(sample_without_replacement(40, 20, 3, 1));
    KernelSpec s;
    s.tag = KernelTag::FiniteDepthNtk;
    s.params = cfg.deq;
    s.depth = 1;
    const double acc = regress_and_score(assemble_gram(tr, s).values, assemble_cross(te, tr, s), tr.labels, te.labels, 0.0);
    CHECK(r.records[0].accuracy == acc);
    CHECK(r.summary[0].ci_low == r.summary[0].ci_high);
}

TEST_CASE("vanilla kernel freezes with depth while the deq iteration stabilizes") {
    const auto pool = clustered(300, 12, 10, 22), test = clustered(200, 12, 10, 23);
    DepthSweepConfig cfg;
    cfg.depths = {5, 50, 500};
    cfg.deq.sigma_w_sq = 0.6;
    cfg.deq.sigma_u_sq = 0.3;
    cfg.deq.sigma_b_sq = 0.1;
    cfg.vanilla = KernelParams::vanilla(0.6, 0.4);
    cfg.reps = 2;
    cfg.n_train = 150;
    cfg.n_test = 100;
    cfg.reg_eps = 1e-3;
    cfg.seed = 11;
    const auto r = depth_sweep(pool, test, cfg);
    auto find = [&](const std::string& k, int d) {
        for (const auto& s : r.summary)
            if (s.kernel == k && s.depth == d) return s;
        FAIL("missing summary row");
        return SweepSummary{};
    };
    CHECK(find("vanilla-ntk", 5).mean >= 0.8);
    CHECK(find("vanilla-ntk", 500).mean <= 0.15);
    CHECK(std::abs(find("deq-finite-depth", 500).mean - find("deq-finite-depth", 50).mean) <= 0.03);
    CHECK(find("deq-finite-depth", 500).mean >= 0.8);
}

TEST_CASE("theta versus dot") {
    const std::vector<int> depths{0, 1, 10, 200};
    const auto v = theta_vs_dot_sweep(KernelParams::vanilla(0.6, 0.4), depths, 41);
    REQUIRE(v.size() == 41 * depths.size());
    for (const auto& row : v)
        if (row.depth == 0) CHECK(row.theta == row.dot);
    auto range = [](const std::vector<ThetaDotRow>& rows, int d) {
        double lo = 1e300, hi = -1e300, sum = 0.0;
        int n = 0;
        for (const auto& r : rows)
            if (r.depth == d) lo = std::min(lo, r.theta), hi = std::max(hi, r.theta), sum += r.theta, ++n;
        return (hi - lo) / std::abs(sum / n);
    };
    CHECK(range(v, 200) < 0.01);
    CHECK(range(v, 10) < range(v, 1));
    const auto d = theta_vs_dot_sweep(KernelParams::deq(0.6), {200}, 101);
    for (std::size_t i = 1; i < d.size(); ++i) CHECK(d[i].theta > d[i - 1].theta);
    CHECK(range(d, 200) > 0.5);
}
