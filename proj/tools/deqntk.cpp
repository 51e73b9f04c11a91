#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deqntk/cdeq.hpp"
#include "deqntk/dataset.hpp"
#include "deqntk/errors.hpp"
#include "deqntk/experiments.hpp"
#include "deqntk/gram.hpp"
#include "deqntk/io.hpp"
#include "deqntk/ntk.hpp"
#include "deqntk/rng.hpp"
#include "deqntk/spectra.hpp"

using namespace deqntk;

namespace {

struct Key {
    std::string name;
    std::string fallback;
    std::string help;
};

struct Command {
    std::string name;
    std::string help;
    std::vector<Key> keys;
    std::function<void(const RunConfig&, Manifest&)> run;
};

const std::vector<Key> kParamKeys = {
    {"sw2", "0.5", "weight variance sigma_W^2"},
    {"su2", "0.5", "injection variance sigma_U^2"},
    {"sb2", "0", "bias variance sigma_b^2"},
    {"sv2", "1", "output variance sigma_v^2"},
    {"activation", "relu", "relu or linear"},
};

std::vector<Key> with_params(std::vector<Key> keys, const std::map<std::string, std::string>& defaults = {}) {
    for (Key k : kParamKeys) {
        if (auto it = defaults.find(k.name); it != defaults.end()) k.fallback = it->second;
        keys.push_back(k);
    }
    return keys;
}

KernelParams params_from(const RunConfig& c, const std::string& prefix = "") {
    KernelParams p;
    p.sigma_w_sq = c.get_double(prefix + "sw2");
    p.sigma_u_sq = c.has(prefix + "su2") ? c.get_double(prefix + "su2") : 0.0;
    p.sigma_b_sq = c.get_double(prefix + "sb2");
    p.sigma_v_sq = c.has(prefix + "sv2") ? c.get_double(prefix + "sv2") : 1.0;
    if (c.has(prefix + "activation")) p.activation = parse_activation(c.get_string(prefix + "activation"));
    p.validate();
    return p;
}

int positive(const RunConfig& c, const std::string& key) {
    const long long v = c.get_int(key);
    if (v < 1 || v > 1'000'000'000) throw ConfigError("config key '" + key + "' must be a positive integer");
    return static_cast<int>(v);
}

std::string out_file(const RunConfig& c, Manifest& m, const std::string& name) {
    const std::string dir = c.get_string("out");
    std::filesystem::create_directories(dir);
    m.outputs.push_back(name);
    return (std::filesystem::path(dir) / name).string();
}

void run_kernel(const RunConfig& c, Manifest& m) {
    const KernelParams p = params_from(c);
    p.validate_fixed_point();
    const auto depths = c.get_int_list("depths");
    const int grid = positive(c, "grid");
    if (grid < 2) throw ConfigError("grid must be at least 2");

    if (!c.get_string("dot").empty()) {
        const double dot = c.get_double("dot");
        const double theta = limiting_theta(dot, p);
        std::printf("theta=%s\n", format_double(theta).c_str());
        if (p.activation != Activation::Linear) {
            const auto fp = theta_deq(dot, p);
            std::printf("rho_star=%s\nsigma_dot_star=%s\n", format_double(fp.rho_star).c_str(),
                        format_double(fp.sigma_dot_star).c_str());
        }
    }
    CsvWriter fixed(out_file(c, m, "deq_theta.csv"), {"dot", "theta"});
    for (int g = 0; g < grid; ++g) {
        const double dot = -1.0 + 2.0 * g / (grid - 1);
        fixed.row(dot, limiting_theta(dot, p));
    }
    CsvWriter table(out_file(c, m, "theta_vs_dot.csv"), {"dot", "depth", "theta"});
    for (const auto& r : theta_vs_dot_sweep(p, depths, grid)) table.row(r.dot, r.depth, r.theta);
}

void run_depth_sweep(const RunConfig& c, Manifest& m) {
    DepthSweepConfig cfg;
    cfg.depths = c.get_int_list("depths");
    cfg.deq = params_from(c);
    cfg.vanilla = KernelParams::vanilla(c.get_double("vanilla_sw2"), c.get_double("vanilla_sb2"), c.get_double("sv2"));
    cfg.vanilla.validate();
    cfg.reps = positive(c, "reps");
    cfg.n_train = positive(c, "n_train");
    cfg.n_test = positive(c, "n_test");
    cfg.reg_eps = c.get_double("reg_eps");
    cfg.seed = c.get_u64("seed");
    cfg.workers = static_cast<int>(c.get_int("threads"));
    const auto split = load_named_split(c.get_string("dataset"), c.get_string("data_dir"), Normalization::UnitSample,
                                        positive(c, "held_out"), cfg.seed);
    const auto res = depth_sweep(split.train, split.test, cfg);
    CsvWriter rec(out_file(c, m, "depth_sweep.csv"), {"kernel", "depth", "rep", "accuracy"});
    for (const auto& r : res.records) rec.row(r.kernel, r.depth, r.rep, r.accuracy);
    CsvWriter sum(out_file(c, m, "depth_sweep_summary.csv"), {"kernel", "depth", "mean", "ci_low", "ci_high"});
    for (const auto& s : res.summary) {
        sum.row(s.kernel, s.depth, s.mean, s.ci_low, s.ci_high);
        std::printf("%-18s depth %5d  mean %.4f  ci [%.4f, %.4f]\n", s.kernel.c_str(), s.depth, s.mean, s.ci_low,
                    s.ci_high);
    }
}

void run_residual(const RunConfig& c, Manifest& m) {
    const KernelParams p = params_from(c);
    const auto st = residual_study(c.get_int_list("widths"), positive(c, "seeds"), p, c.get_double("dot"),
                                   positive(c, "m"), c.get_u64("seed"), static_cast<int>(c.get_int("threads")));
    CsvWriter all(out_file(c, m, "residual.csv"), {"n", "seed", "empirical", "theory", "rel_error"});
    for (const auto& s : st.samples) all.row(s.n, s.seed, s.empirical, s.theory, s.rel_error);
    CsvWriter med(out_file(c, m, "residual_median.csv"), {"n", "median_rel_error"});
    for (std::size_t i = 0; i < st.widths.size(); ++i) {
        med.row(st.widths[i], st.medians[i]);
        std::printf("n=%d median relative error %s\n", st.widths[i], format_double(st.medians[i]).c_str());
    }
}

void run_trace(const RunConfig& c, Manifest& m) {
    const auto st = trace_study(positive(c, "n"), c.get_double("sw2"), positive(c, "trials"), c.get_u64("seed"));
    CsvWriter t(out_file(c, m, "trace.csv"), {"trial", "trace"});
    for (std::size_t i = 0; i < st.traces.size(); ++i) t.row(i, st.traces[i]);
    std::printf("mean=%s theory=%s\n", format_double(st.mean).c_str(), format_double(st.theory).c_str());
}

void run_spectrum(const RunConfig& c, Manifest& m) {
    const double s = c.get_double("sw2");
    const auto st = spectrum_study(positive(c, "n"), s, c.get_u64("seed"));
    const double n = static_cast<double>(st.eigenvalues.size());
    CsvWriter e(out_file(c, m, "empirical.csv"), {"index", "eigenvalue", "ecdf"});
    for (std::size_t i = 0; i < st.eigenvalues.size(); ++i) e.row(i, st.eigenvalues[i], (i + 1) / n);
    const auto tab = tabulate_density(s, positive(c, "points"));
    std::vector<double> xs;
    for (const auto& [x, f] : tab.grid) xs.push_back(x);
    const auto cdf = spectral_cdf(s, xs);
    CsvWriter l(out_file(c, m, "limiting.csv"), {"lambda", "density", "cdf"});
    for (std::size_t i = 0; i < tab.grid.size(); ++i) l.row(tab.grid[i].first, tab.grid[i].second, cdf[i]);
    std::printf("support=[%s, %s] cdf_sup_distance=%s\n", format_double(tab.lower).c_str(),
                format_double(tab.upper).c_str(), format_double(st.sup_distance).c_str());
}

Dataset take(const Dataset& pool, int k, std::uint64_t seed, std::uint64_t stream) {
    return pool.subset(sample_without_replacement(pool.size(), k, seed, stream));
}

void run_regress(const RunConfig& c, Manifest& m) {
    KernelSpec spec;
    spec.tag = parse_kernel_tag(c.get_string("kernel"));
    spec.params = params_from(c);
    spec.depth = static_cast<int>(c.get_int("depth"));
    spec.filter = static_cast<int>(c.get_int("filter"));
    spec.validate();
    const bool conv = spec.tag == KernelTag::CdeqNtk;
    const std::uint64_t seed = c.get_u64("seed");
    auto split = load_named_split(c.get_string("dataset"), c.get_string("data_dir"), Normalization::None,
                                  positive(c, "held_out"), seed);
    const int pool = positive(c, "pool");
    if (pool > 1) split = {average_pool(split.train, pool), average_pool(split.test, pool)};
    const Normalization mode = conv ? Normalization::UnitPixel : Normalization::UnitSample;
    normalize(split.train, mode);
    normalize(split.test, mode);
    const auto tr = take(split.train, positive(c, "n_train"), seed, 0);
    const auto te = take(split.test, positive(c, "n_test"), seed, 1);
    const int workers = static_cast<int>(c.get_int("threads"));
    const auto K = assemble_gram(tr, spec, workers);
    const auto X = assemble_cross(te, tr, spec, workers);
    const int classes = std::max(split.train.num_classes(), split.test.num_classes());
    const auto r = regress(K.values, X, tr.labels, te.labels, c.get_double("reg_eps"), classes);
    CsvWriter out(out_file(c, m, "regress.csv"), {"kernel", "n_train", "n_test", "reg_eps", "jitter", "accuracy"});
    out.row(to_string(spec.tag), tr.size(), te.size(), c.get_double("reg_eps"), r.jitter, r.accuracy);
    CsvWriter pred(out_file(c, m, "predictions.csv"), {"test_index", "label", "prediction"});
    for (std::size_t i = 0; i < r.predictions.size(); ++i) pred.row(i, te.labels[i], r.predictions[i]);
    std::printf("accuracy=%s\n", format_double(r.accuracy).c_str());
}

void run_cdeq(const RunConfig& c, Manifest& m) {
    KernelParams p = params_from(c);
    p.validate_fixed_point();
    const int q = static_cast<int>(c.get_int("filter"));
    const int count = positive(c, "images");
    const std::uint64_t seed = c.get_u64("seed");
    const std::string source = c.get_string("dataset");
    Dataset ds;
    if (source == "synthetic") {
        const int side = positive(c, "size"), ch = positive(c, "channels");
        ds.P = ds.Q = side;
        ds.C = ch;
        ds.features.resize(count, side * side * ch);
        ds.labels.assign(static_cast<std::size_t>(count), 0);
        Stream s(seed, "synthetic-images");
        for (Eigen::Index i = 0; i < ds.features.size(); ++i) ds.features.data()[i] = s.normal();
        ds.source = "synthetic";
    } else {
        const auto split = load_named_split(source, c.get_string("data_dir"), Normalization::None, 1000, seed);
        ds = average_pool(take(split.train, count, seed, 0), positive(c, "pool"));
    }
    normalize(ds, Normalization::UnitPixel);
    CdeqOptions opts;
    opts.sigma_tol = c.get_double("sigma_tol");
    opts.theta_tol = c.get_double("theta_tol");
    const int n = ds.size();
    Eigen::MatrixXd G(n, n);
    CsvWriter pairs(out_file(c, m, "cdeq_pairs.csv"),
                    {"i", "j", "theta", "sigma_iterations", "sigma_change", "theta_iterations"});
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            const auto fp = cdeq_sigma_fixed_point({ds.image(i), ds.image(j)}, q, p, opts);
            const auto th = cdeq_theta(fp.K, fp.Kdot, q, opts);
            G(i, j) = G(j, i) = th.value;
            pairs.row(i, j, th.value, fp.iterations, fp.last_change, th.iterations);
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
    CsvWriter gram(out_file(c, m, "cdeq_gram.csv"), {"i", "j", "theta"});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) gram.row(i, j, G(i, j));
    std::printf("images=%d size=%dx%d channels=%d min_eig/max_eig=%s\n", n, ds.P, ds.Q, ds.C,
                format_double(es.eigenvalues().minCoeff() / es.eigenvalues().maxCoeff()).c_str());
}

std::vector<Command> commands() {
    const std::string data = default_data_dir();
    return {
        {"kernel", "DEQ kernel value and theta-vs-dot tables",
         with_params({{"dot", "", "print the fixed-point kernel at this inner product"},
                      {"depths", "0,1,2,5,10,20,50,100,200,500", "finite depths for the theta-vs-dot table"},
                      {"grid", "201", "dot grid points on [-1, 1]"}}),
         run_kernel},
        {"depth-sweep", "accuracy vs depth for the finite-depth DEQ iteration and the vanilla NTK",
         with_params({{"dataset", "cifar10", "mnist or cifar10"},
                      {"data_dir", data, "dataset directory"},
                      {"held_out", "1000", "test pool size when splitting the MNIST subset"},
                      {"depths", "1,5,10,50,100,500", "depths"},
                      {"reps", "5", "resampled train/test draws"},
                      {"n_train", "1000", "training samples per draw"},
                      {"n_test", "100", "test samples per draw"},
                      {"vanilla_sw2", "0.6", "vanilla weight variance"},
                      {"vanilla_sb2", "0.4", "vanilla bias variance"},
                      {"reg_eps", "1e-3", "ridge r = reg_eps * mean diagonal / N"}},
                     {{"sw2", "0.6"}, {"su2", "0.3"}, {"sb2", "0.1"}}),
         run_depth_sweep},
        {"residual", "empirical equilibrium NTK vs the limiting kernel across widths",
         with_params({{"widths", "256,1024,4096", "network widths"},
                      {"seeds", "10", "weight draws per width"},
                      {"dot", "0.5", "input inner product"},
                      {"m", "2", "input dimension"}},
                     {{"sw2", "0.125"}, {"su2", "0.875"}, {"sv2", "2"}, {"activation", "linear"}}),
         run_residual},
        {"trace", "(1/n) tr(H^T H) for H = (I - sqrt(sw2/n) W)^-1",
         {{"n", "5000", "matrix size"}, {"sw2", "0.25", "weight variance"}, {"trials", "10", "independent draws"}},
         run_trace},
        {"spectrum", "empirical vs limiting eigenvalue distribution of (I - A)^T (I - A)",
         {{"n", "1000", "matrix size"}, {"sw2", "0.25", "weight variance"}, {"points", "400", "density grid points"}},
         run_spectrum},
        {"regress", "kernel regression accuracy on a dataset subset",
         with_params({{"dataset", "mnist", "mnist or cifar10"},
                      {"data_dir", data, "dataset directory"},
                      {"held_out", "1000", "test pool size when splitting the MNIST subset"},
                      {"kernel", "deq-ntk", "deq-ntk, finite-depth-ntk, vanilla-ntk, linear-deq or cdeq-ntk"},
                      {"depth", "0", "depth for finite-depth kernels"},
                      {"filter", "3", "cdeq filter size"},
                      {"pool", "1", "average-pool factor applied before normalization"},
                      {"n_train", "2000", "training samples"},
                      {"n_test", "1000", "test samples"},
                      {"reg_eps", "0", "ridge r = reg_eps * mean diagonal / N"}},
                     {{"sw2", "0.6"}, {"su2", "0.4"}}),
         run_regress},
        {"cdeq", "convolutional DEQ kernel Gram over small images",
         with_params({{"dataset", "synthetic", "synthetic, mnist or cifar10"},
                      {"data_dir", data, "dataset directory"},
                      {"images", "8", "number of images"},
                      {"size", "8", "synthetic image side"},
                      {"channels", "3", "synthetic channels"},
                      {"pool", "4", "average-pool factor for dataset images"},
                      {"filter", "3", "filter size q"},
                      {"sigma_tol", "1e-6", "covariance iteration tolerance"},
                      {"theta_tol", "1e-8", "tangent iteration tolerance"}},
                     {{"sw2", "0.65"}, {"su2", "0.35"}}),
         run_cdeq},
    };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural tangent kernels of deep equilibrium models"};
    app.require_subcommand(1);
    auto cmds = commands();
    const std::vector<Key> common = {
        {"out", "", "output directory (default out/<command>)"},
        {"seed", "0", "random seed"},
        {"threads", "0", "worker threads (0 = $DEQNTK_THREADS or all cores)"},
    };
    std::map<std::string, std::map<std::string, std::string>> flags;
    std::map<std::string, std::string> config_paths;
    std::vector<std::pair<CLI::App*, Command*>> subs;
    for (auto& cmd : cmds) {
        cmd.keys.insert(cmd.keys.end(), common.begin(), common.end());
        CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
        sub->add_option("--config", config_paths[cmd.name], "key=value config file; flags override it");
        for (const auto& k : cmd.keys) {
            std::string help = k.help;
            if (!k.fallback.empty()) help += " [" + k.fallback + "]";
            sub->add_option("--" + k.name, flags[cmd.name][k.name], help);
        }
        subs.emplace_back(sub, &cmd);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    for (auto& [sub, cmd] : subs) {
        if (!sub->parsed()) continue;
        try {
            std::vector<std::string> allowed;
            RunConfig cfg;
            for (const auto& k : cmd->keys) {
                allowed.push_back(k.name);
                cfg.set(k.name, k.fallback);
            }
            cfg.set("out", "out/" + cmd->name);
            if (!config_paths[cmd->name].empty()) {
                const RunConfig file = RunConfig::from_file(config_paths[cmd->name]);
                file.require_known(allowed);
                cfg.merge(file);
            }
            for (const auto& k : cmd->keys)
                if (sub->count("--" + k.name) > 0) cfg.set(k.name, flags[cmd->name][k.name]);
            Manifest man;
            man.command = cmd->name;
            man.config = cfg;
            cmd->run(cfg, man);
            write_manifest(cfg.get_string("out"), man);
            return 0;
        } catch (const ConfigError& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return 2;
        } catch (const DataError& e) {
            std::cerr << "data error: " << e.what() << "\n";
            return 3;
        } catch (const NumericError& e) {
            std::cerr << "numeric error: " << e.what() << "\n";
            return 4;
        } catch (const std::filesystem::filesystem_error& e) {
            std::cerr << "data error: " << e.what() << "\n";
            return 3;
        }
    }
    return 2;
}
