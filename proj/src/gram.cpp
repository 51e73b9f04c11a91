#include "deqntk/gram.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "deqntk/errors.hpp"
#include "deqntk/ntk.hpp"
#include "deqntk/parallel.hpp"
#include "deqntk/rng.hpp"

namespace deqntk {

std::string to_string(KernelTag t) {
    switch (t) {
        case KernelTag::DeqNtk: return "deq-ntk";
        case KernelTag::FiniteDepthNtk: return "finite-depth-ntk";
        case KernelTag::VanillaNtk: return "vanilla-ntk";
        case KernelTag::LinearDeq: return "linear-deq";
        case KernelTag::CdeqNtk: return "cdeq-ntk";
    }
    return "deq-ntk";
}

KernelTag parse_kernel_tag(const std::string& s) {
    for (KernelTag t : {KernelTag::DeqNtk, KernelTag::FiniteDepthNtk, KernelTag::VanillaNtk, KernelTag::LinearDeq,
                        KernelTag::CdeqNtk})
        if (s == to_string(t)) return t;
    throw ConfigError("unknown kernel '" + s + "'");
}

KernelParams KernelSpec::effective_params() const {
    KernelParams p = params;
    if (tag == KernelTag::VanillaNtk) p.sigma_u_sq = 0.0;
    if (tag == KernelTag::LinearDeq) p.activation = Activation::Linear;
    return p;
}

void KernelSpec::validate() const {
    const KernelParams p = effective_params();
    switch (tag) {
        case KernelTag::DeqNtk:
        case KernelTag::LinearDeq:
        case KernelTag::CdeqNtk: p.validate_fixed_point(); break;
        case KernelTag::FiniteDepthNtk:
        case KernelTag::VanillaNtk:
            p.validate();
            if (depth < 0) throw ConfigError("depth must be nonnegative");
            break;
    }
    if (tag == KernelTag::CdeqNtk && (filter < 1 || filter % 2 == 0))
        throw ConfigError("cdeq filter size must be a positive odd integer");
}

namespace {

double dense_kernel(KernelTag tag, const KernelParams& p, int depth, double dot) {
    switch (tag) {
        case KernelTag::DeqNtk: return theta_deq(dot, p).theta;
        case KernelTag::LinearDeq: return theta_linear_deq(dot, p);
        case KernelTag::FiniteDepthNtk:
        case KernelTag::VanillaNtk: return finite_depth_ntk(dot, depth, p).theta;
        case KernelTag::CdeqNtk: break;
    }
    throw ConfigError("cdeq-ntk is not a dense kernel");
}

template <class E>
[[noreturn]] void rethrow_with(const E& e, const std::string& ctx) {
    throw E(ctx + e.what());
}

// Re-raises kernel failures with the (i, j) pair prepended, keeping the error category.
template <class F>
auto with_context(int i, int j, F&& f) {
    const auto ctx = [&] { return "pair (" + std::to_string(i) + ", " + std::to_string(j) + "): "; };
    try {
        return f();
    } catch (const DomainError& e) {
        rethrow_with(e, ctx());
    } catch (const ConvergenceError& e) {
        rethrow_with(e, ctx());
    } catch (const SingularityError& e) {
        rethrow_with(e, ctx());
    } catch (const NumericError& e) {
        rethrow_with(e, ctx());
    } catch (const DataError& e) {
        rethrow_with(e, ctx());
    }
}

void check_compatible(const Dataset& a, const Dataset& b, const KernelSpec& spec) {
    if (a.dim() != b.dim()) throw DataError("feature dimensions differ");
    if (spec.tag == KernelTag::CdeqNtk && (!a.is_image() || !b.is_image()))
        throw DataError("cdeq-ntk needs image datasets");
}

// A unit-sample self pair is exactly 1; the rounded norm would leak into the sqrt(1 - dot) terms.
double pair_dot(const Dataset& a, int i, const Dataset& b, int j) {
    if (&a == &b && i == j && a.normalization == Normalization::UnitSample) return 1.0;
    return a.features.row(i).dot(b.features.row(j));
}

}  // namespace

double kernel_value(const KernelSpec& spec, const Dataset& a, int i, const Dataset& b, int j) {
    const KernelParams p = spec.effective_params();
    if (spec.tag == KernelTag::CdeqNtk) return cdeq_kernel(a.image(i), b.image(j), spec.filter, p, spec.cdeq);
    return dense_kernel(spec.tag, p, spec.depth, pair_dot(a, i, b, j));
}

GramMatrix assemble_gram(const Dataset& ds, const KernelSpec& spec, int workers) {
    spec.validate();
    check_compatible(ds, ds, spec);
    const int n = ds.size();
    GramMatrix g;
    g.values.resize(n, n);
    g.kernel_tag = spec.tag;
    g.params = spec.effective_params();
    if (spec.tag == KernelTag::FiniteDepthNtk || spec.tag == KernelTag::VanillaNtk) g.depth = spec.depth;
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t row) {
        const int i = static_cast<int>(row);
        for (int j = i; j < n; ++j)
            g.values(i, j) = with_context(i, j, [&] { return kernel_value(spec, ds, i, ds, j); });
    });
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j) g.values(i, j) = g.values(j, i);
    return g;
}

Eigen::MatrixXd assemble_cross(const Dataset& test, const Dataset& train, const KernelSpec& spec, int workers) {
    spec.validate();
    check_compatible(test, train, spec);
    Eigen::MatrixXd out(test.size(), train.size());
    parallel_for(static_cast<std::size_t>(test.size()), workers, [&](std::size_t row) {
        const int i = static_cast<int>(row);
        for (int j = 0; j < train.size(); ++j)
            out(i, j) = with_context(i, j, [&] { return kernel_value(spec, test, i, train, j); });
    });
    return out;
}

namespace {

std::vector<Eigen::MatrixXd> depth_blocks(const Dataset& a, const Dataset& b, bool symmetric, const KernelSpec& spec,
                                          const std::vector<int>& depths, int workers) {
    if (spec.tag != KernelTag::FiniteDepthNtk && spec.tag != KernelTag::VanillaNtk)
        throw ConfigError("depth sweeps need finite-depth-ntk or vanilla-ntk");
    spec.validate();
    check_compatible(a, b, spec);
    const KernelParams p = spec.effective_params();
    std::vector<Eigen::MatrixXd> out(depths.size(), Eigen::MatrixXd(a.size(), b.size()));
    parallel_for(static_cast<std::size_t>(a.size()), workers, [&](std::size_t row) {
        const int i = static_cast<int>(row);
        for (int j = symmetric ? i : 0; j < b.size(); ++j) {
            const auto th = with_context(
                i, j, [&] { return finite_depth_ntk_sweep(pair_dot(a, i, b, j), depths, p); });
            for (std::size_t k = 0; k < depths.size(); ++k) out[k](i, j) = th[k];
        }
    });
    if (symmetric)
        for (auto& m : out)
            for (int i = 0; i < m.rows(); ++i)
                for (int j = 0; j < i; ++j) m(i, j) = m(j, i);
    return out;
}

}  // namespace

std::vector<Eigen::MatrixXd> assemble_gram_depths(const Dataset& ds, const KernelSpec& spec,
                                                  const std::vector<int>& depths, int workers) {
    return depth_blocks(ds, ds, true, spec, depths, workers);
}

std::vector<Eigen::MatrixXd> assemble_cross_depths(const Dataset& test, const Dataset& train, const KernelSpec& spec,
                                                   const std::vector<int>& depths, int workers) {
    return depth_blocks(test, train, false, spec, depths, workers);
}

Eigen::MatrixXd encode_labels(const std::vector<int>& labels, int classes) {
    if (classes < 1) throw ConfigError("need at least one class");
    Eigen::MatrixXd Y = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(labels.size()), classes, -0.1);
    for (std::size_t k = 0; k < labels.size(); ++k) {
        if (labels[k] < 0 || labels[k] >= classes)
            throw DataError("label " + std::to_string(labels[k]) + " outside [0, " + std::to_string(classes) + ")");
        Y(static_cast<Eigen::Index>(k), labels[k]) = 0.9;
    }
    return Y;
}

namespace {

std::string condition_text(const Eigen::LDLT<Eigen::MatrixXd>& ldlt) {
    const double rc = ldlt.rcond();
    return rc > 0.0 ? std::to_string(1.0 / rc) : std::string("inf");
}

}  // namespace

RegressionResult regress(const Eigen::MatrixXd& K, const Eigen::MatrixXd& cross, const std::vector<int>& train_labels,
                         const std::vector<int>& test_labels, double reg_eps, int classes) {
    const Eigen::Index n = K.rows();
    if (K.cols() != n || static_cast<Eigen::Index>(train_labels.size()) != n)
        throw DataError("train Gram and labels disagree in size");
    if (cross.cols() != n || cross.rows() != static_cast<Eigen::Index>(test_labels.size()))
        throw DataError("cross Gram must be N_test x N_train");
    if (!(reg_eps >= 0.0)) throw ConfigError("reg_eps must be nonnegative");
    if (n == 0) throw DataError("empty training set");
    if (classes <= 0) {
        for (int l : train_labels) classes = std::max(classes, l + 1);
        for (int l : test_labels) classes = std::max(classes, l + 1);
    }
    const Eigen::MatrixXd Y = encode_labels(train_labels, classes);

    const double mean_diag = K.diagonal().mean();
    RegressionResult res;
    res.ridge = reg_eps * mean_diag / static_cast<double>(n);

    if (reg_eps == 0.0) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(K);
        const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
        const double cutoff = static_cast<double>(n) * std::numeric_limits<double>::epsilon() * d.maxCoeff();
        const auto rank = (d.array() > cutoff).count();
        if (rank < n)
            throw SingularityError("kernel matrix is singular (numerical rank " + std::to_string(rank) + " of " +
                                   std::to_string(n) + ", condition estimate " + condition_text(ldlt) +
                                   "); set reg_eps > 0");
    }

    const double ladder[] = {0.0, 1e-10, 1e-8, 1e-6, 1e-4};
    Eigen::MatrixXd A = K;
    A.diagonal().array() += res.ridge;
    Eigen::LLT<Eigen::MatrixXd> llt;
    bool ok = false;
    for (double rel : ladder) {
        Eigen::MatrixXd Aj = A;
        Aj.diagonal().array() += rel * mean_diag;
        llt.compute(Aj);
        if (llt.info() == Eigen::Success) {
            res.jitter = rel * mean_diag;
            ok = true;
            break;
        }
    }
    if (!ok) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
        throw SingularityError("Cholesky failed up to jitter 1e-4 x mean diagonal (condition estimate " +
                               condition_text(ldlt) + ")");
    }
    const Eigen::MatrixXd alpha = llt.solve(Y);
    const Eigen::MatrixXd pred = cross * alpha;
    res.predictions.resize(test_labels.size());
    int correct = 0;
    for (Eigen::Index r = 0; r < pred.rows(); ++r) {
        // Near-singular solves leave ~1e-12 relative noise on exactly tied scores (frozen kernels),
        // so scores within 1e-10 of the row scale count as tied; ties go to the lowest class.
        const double tol = 1e-10 * pred.row(r).cwiseAbs().maxCoeff();
        int best = 0;
        for (int c = 1; c < classes; ++c)
            if (pred(r, c) > pred(r, best) + tol) best = c;
        res.predictions[static_cast<std::size_t>(r)] = best;
        correct += best == test_labels[static_cast<std::size_t>(r)];
    }
    res.accuracy = test_labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test_labels.size());
    return res;
}

double regress_and_score(const Eigen::MatrixXd& K, const Eigen::MatrixXd& cross, const std::vector<int>& train_labels,
                         const std::vector<int>& test_labels, double reg_eps) {
    return regress(K, cross, train_labels, test_labels, reg_eps).accuracy;
}

SweepSummary summarize(const std::string& kernel, int depth, const std::vector<double>& acc) {
    SweepSummary s{kernel, depth, 0.0, 0.0, 0.0};
    if (acc.empty()) return s;
    const double n = static_cast<double>(acc.size());
    const auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
    if (*lo == *hi) {
        s.mean = s.ci_low = s.ci_high = *lo;
        return s;
    }
    s.mean = std::accumulate(acc.begin(), acc.end(), 0.0) / n;
    double half = 0.0;
    {
        double ss = 0.0;
        for (double a : acc) ss += (a - s.mean) * (a - s.mean);
        half = 1.959963984540054 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    s.ci_low = s.mean - half;
    s.ci_high = s.mean + half;
    return s;
}

std::vector<int> sample_without_replacement(int n, int k, std::uint64_t seed, std::uint64_t rep) {
    if (k < 0 || k > n) throw ConfigError("cannot draw " + std::to_string(k) + " of " + std::to_string(n));
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Stream s(seed, "resample", rep);
    for (int i = 0; i < k; ++i) {
        const auto j = i + static_cast<int>(s.below(static_cast<std::uint64_t>(n - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

DepthSweepResult depth_sweep(const Dataset& train_pool, const Dataset& test_pool, const DepthSweepConfig& cfg) {
    if (cfg.reps < 1) throw ConfigError("reps must be at least 1");
    if (cfg.depths.empty()) throw ConfigError("no depths given");
    const int classes = std::max(train_pool.num_classes(), test_pool.num_classes());
    struct Arm {
        std::string name;
        KernelSpec spec;
    };
    std::vector<Arm> arms(2);
    arms[0].name = "deq-finite-depth";
    arms[0].spec.tag = KernelTag::FiniteDepthNtk;
    arms[0].spec.params = cfg.deq;
    arms[1].name = to_string(KernelTag::VanillaNtk);
    arms[1].spec.tag = KernelTag::VanillaNtk;
    arms[1].spec.params = cfg.vanilla;

    DepthSweepResult out;
    std::vector<std::vector<std::vector<double>>> acc(arms.size(), std::vector<std::vector<double>>(cfg.depths.size()));
    for (int rep = 0; rep < cfg.reps; ++rep) {
        const auto tr = train_pool.subset(
            sample_without_replacement(train_pool.size(), cfg.n_train, cfg.seed, 2 * static_cast<std::uint64_t>(rep)));
        const auto te = test_pool.subset(
            sample_without_replacement(test_pool.size(), cfg.n_test, cfg.seed, 2 * static_cast<std::uint64_t>(rep) + 1));
        for (std::size_t a = 0; a < arms.size(); ++a) {
            const auto K = assemble_gram_depths(tr, arms[a].spec, cfg.depths, cfg.workers);
            const auto X = assemble_cross_depths(te, tr, arms[a].spec, cfg.depths, cfg.workers);
            std::vector<double> res(cfg.depths.size());
            // Independent solves per depth.
            parallel_for(cfg.depths.size(), cfg.workers, [&](std::size_t k) {
                res[k] = regress(K[k], X[k], tr.labels, te.labels, cfg.reg_eps, classes).accuracy;
            });
            for (std::size_t k = 0; k < cfg.depths.size(); ++k) {
                out.records.push_back({arms[a].name, cfg.depths[k], rep, res[k]});
                acc[a][k].push_back(res[k]);
            }
        }
    }
    for (std::size_t a = 0; a < arms.size(); ++a)
        for (std::size_t k = 0; k < cfg.depths.size(); ++k)
            out.summary.push_back(summarize(arms[a].name, cfg.depths[k], acc[a][k]));
    return out;
}

std::vector<ThetaDotRow> theta_vs_dot_sweep(const KernelParams& params, const std::vector<int>& depths,
                                            int grid_points) {
    if (grid_points < 2) throw ConfigError("dot grid needs at least two points");
    std::vector<ThetaDotRow> rows;
    rows.reserve(static_cast<std::size_t>(grid_points) * depths.size());
    for (int g = 0; g < grid_points; ++g) {
        const double dot = -1.0 + 2.0 * g / (grid_points - 1);
        for (int d : depths) rows.push_back({dot, d, finite_depth_ntk(dot, d, params).theta_pre});
    }
    std::sort(rows.begin(), rows.end(), [](const ThetaDotRow& a, const ThetaDotRow& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.dot < b.dot;
    });
    return rows;
}

}  // namespace deqntk
