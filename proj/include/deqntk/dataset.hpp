#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deqntk/cdeq.hpp"

namespace deqntk {

enum class Normalization { UnitSample, UnitPixel, None };

std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);

// Row k of `features` is sample k. Image samples are stored pixel-major: feature
// (i * Q + j) * C + c is channel c of pixel (i, j). P = Q = C = 0 for plain vectors.
struct Dataset {
    Eigen::MatrixXd features;
    std::vector<int> labels;
    int P = 0;
    int Q = 0;
    int C = 0;
    Normalization normalization = Normalization::None;
    std::string source;

    int size() const { return static_cast<int>(features.rows()); }
    int dim() const { return static_cast<int>(features.cols()); }
    bool is_image() const { return P > 0; }

    ConvImage image(int k) const;
    Dataset subset(const std::vector<int>& rows) const;
    int num_classes() const;  // max label + 1
};

// Zero rows (or zero pixels) become the uniform unit vector.
void normalize(Dataset& ds, Normalization mode);

// IDX image and label files, optionally gzip-compressed. Pixels are scaled to [0, 1].
Dataset load_mnist(const std::string& images_path, const std::string& labels_path,
                   Normalization mode = Normalization::UnitSample);
// Looks for {prefix}-images-idx3-ubyte[.gz] and {prefix}-labels-idx1-ubyte[.gz] in dir.
Dataset load_mnist_dir(const std::string& dir, const std::string& prefix,
                       Normalization mode = Normalization::UnitSample);

// Concatenates CIFAR-10 binary batches (3073-byte records).
Dataset load_cifar10(const std::vector<std::string>& batch_paths,
                     Normalization mode = Normalization::UnitSample);
// data_batch_1..5.bin for train, test_batch.bin otherwise.
Dataset load_cifar10_dir(const std::string& dir, bool train, Normalization mode = Normalization::UnitSample);

struct DataSplit {
    Dataset train;
    Dataset test;
};

// "mnist": train/t10k IDX files in dir, else the mnist5k subset in dir or dir/mnist-5k, whose rows are
// split into disjoint pools by a seeded permutation with `held_out` rows in the test pool.
// "cifar10": data_batch_*.bin and test_batch.bin in dir or dir/cifar-10-batches-bin.
DataSplit load_named_split(const std::string& name, const std::string& dir, Normalization mode,
                           int held_out = 1000, std::uint64_t seed = 0);

// Averages non-overlapping factor x factor pixel blocks (P and Q must be divisible) and
// leaves the result unnormalized.
Dataset average_pool(const Dataset& ds, int factor);

std::vector<unsigned char> read_maybe_gzip(const std::string& path);

// $DEQNTK_DATA_DIR if set, else "data".
std::string default_data_dir();

}  // namespace deqntk
