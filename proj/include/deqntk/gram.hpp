#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deqntk/cdeq.hpp"
#include "deqntk/dataset.hpp"
#include "deqntk/kernel_params.hpp"

namespace deqntk {

enum class KernelTag { DeqNtk, FiniteDepthNtk, VanillaNtk, LinearDeq, CdeqNtk };

std::string to_string(KernelTag t);
KernelTag parse_kernel_tag(const std::string& s);

struct KernelSpec {
    KernelTag tag = KernelTag::DeqNtk;
    KernelParams params;
    int depth = 0;   // finite-depth-ntk and vanilla-ntk
    int filter = 3;  // cdeq-ntk
    CdeqOptions cdeq;

    // vanilla-ntk forces sigma_u_sq = 0; linear-deq forces the linear activation.
    KernelParams effective_params() const;
    void validate() const;
};

double kernel_value(const KernelSpec& spec, const Dataset& a, int i, const Dataset& b, int j);

struct GramMatrix {
    Eigen::MatrixXd values;
    KernelTag kernel_tag = KernelTag::DeqNtk;
    KernelParams params;
    std::optional<int> depth;
};

// Upper triangle evaluated in parallel and mirrored. workers <= 0 uses default_workers().
GramMatrix assemble_gram(const Dataset& ds, const KernelSpec& spec, int workers = 0);
// rows = test samples, cols = train samples.
Eigen::MatrixXd assemble_cross(const Dataset& test, const Dataset& train, const KernelSpec& spec,
                               int workers = 0);

// Finite-depth and vanilla kernels at several depths from one recursion per pair.
std::vector<Eigen::MatrixXd> assemble_gram_depths(const Dataset& ds, const KernelSpec& spec,
                                                  const std::vector<int>& depths, int workers = 0);
std::vector<Eigen::MatrixXd> assemble_cross_depths(const Dataset& test, const Dataset& train,
                                                   const KernelSpec& spec, const std::vector<int>& depths,
                                                   int workers = 0);

// 0.9 at the label, -0.1 elsewhere.
Eigen::MatrixXd encode_labels(const std::vector<int>& labels, int classes);

struct RegressionResult {
    double accuracy = 0.0;
    double ridge = 0.0;   // reg_eps * mean diagonal / N
    double jitter = 0.0;  // extra diagonal added by the ladder, absolute
    std::vector<int> predictions;
};

// Solves (K + rI) alpha = Y by Cholesky and predicts argmax(cross * alpha), ties to the lowest class.
// With reg_eps = 0 an exactly rank-deficient K is reported as SingularityError; otherwise a failed
// factorization retries with jitter 1e-10, 1e-8, 1e-6, 1e-4 times the mean diagonal.
RegressionResult regress(const Eigen::MatrixXd& train_gram, const Eigen::MatrixXd& cross_gram,
                         const std::vector<int>& train_labels, const std::vector<int>& test_labels, double reg_eps,
                         int classes = 0);
double regress_and_score(const Eigen::MatrixXd& train_gram, const Eigen::MatrixXd& cross_gram,
                         const std::vector<int>& train_labels, const std::vector<int>& test_labels,
                         double reg_eps);

struct SweepRecord {
    std::string kernel;
    int depth = 0;
    int rep = 0;
    double accuracy = 0.0;
};

struct SweepSummary {
    std::string kernel;
    int depth = 0;
    double mean = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

struct DepthSweepConfig {
    std::vector<int> depths;
    KernelParams deq;
    KernelParams vanilla;
    int reps = 1;
    int n_train = 1000;
    int n_test = 100;
    double reg_eps = 0.0;
    std::uint64_t seed = 0;
    int workers = 0;
};

struct DepthSweepResult {
    std::vector<SweepRecord> records;
    std::vector<SweepSummary> summary;
};

// Each rep draws n_train rows of train_pool and n_test rows of test_pool without replacement.
DepthSweepResult depth_sweep(const Dataset& train_pool, const Dataset& test_pool, const DepthSweepConfig& cfg);

// Mean and normal-approximation 95% interval; a single value gives a singleton interval.
SweepSummary summarize(const std::string& kernel, int depth, const std::vector<double>& acc);

// Draws k distinct indices in [0, n) from the seeded stream.
std::vector<int> sample_without_replacement(int n, int k, std::uint64_t seed, std::uint64_t rep);

struct ThetaDotRow {
    double dot = 0.0;
    int depth = 0;
    double theta = 0.0;
};

// Theta^(d) before the output layer on an even dot grid over [-1, 1], so depth 0 gives theta = dot.
std::vector<ThetaDotRow> theta_vs_dot_sweep(const KernelParams& params, const std::vector<int>& depths,
                                            int grid_points = 201);

}  // namespace deqntk
