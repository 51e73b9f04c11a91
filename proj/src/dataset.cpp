#include "deqntk/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>

#include <zlib.h>

#include "deqntk/errors.hpp"
#include "deqntk/rng.hpp"

namespace deqntk {

std::string to_string(Normalization n) {
    switch (n) {
        case Normalization::UnitSample: return "unit-sample";
        case Normalization::UnitPixel: return "unit-pixel";
        case Normalization::None: return "none";
    }
    return "none";
}

Normalization parse_normalization(const std::string& s) {
    if (s == "unit-sample") return Normalization::UnitSample;
    if (s == "unit-pixel") return Normalization::UnitPixel;
    if (s == "none") return Normalization::None;
    throw ConfigError("unknown normalization '" + s + "'");
}

ConvImage Dataset::image(int k) const {
    if (!is_image()) throw DataError("dataset '" + source + "' has no image shape");
    ConvImage im{P, Q, C, Eigen::MatrixXd(P * Q, C)};
    for (int a = 0; a < P * Q; ++a)
        for (int c = 0; c < C; ++c) im.pixels(a, c) = features(k, a * C + c);
    return im;
}

Dataset Dataset::subset(const std::vector<int>& rows) const {
    Dataset out;
    out.P = P;
    out.Q = Q;
    out.C = C;
    out.normalization = normalization;
    out.source = source;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.labels.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= size()) throw DataError("subset row out of range");
        out.features.row(static_cast<Eigen::Index>(r)) = features.row(rows[r]);
        out.labels[r] = labels[static_cast<std::size_t>(rows[r])];
    }
    return out;
}

int Dataset::num_classes() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

namespace {

template <class Block>
void unit_or_uniform(Block&& v) {
    const double n = v.norm();
    if (n > 0.0)
        v /= n;
    else
        v.setConstant(1.0 / std::sqrt(static_cast<double>(v.size())));
}

}  // namespace

void normalize(Dataset& ds, Normalization mode) {
    if (mode == Normalization::UnitSample) {
        for (int k = 0; k < ds.size(); ++k) unit_or_uniform(ds.features.row(k));
    } else if (mode == Normalization::UnitPixel) {
        if (!ds.is_image()) throw ConfigError("unit-pixel normalization needs image data");
        for (int k = 0; k < ds.size(); ++k)
            for (int a = 0; a < ds.P * ds.Q; ++a) unit_or_uniform(ds.features.row(k).segment(a * ds.C, ds.C));
    }
    ds.normalization = mode;
}

std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw DataError("cannot open " + path);
    std::vector<unsigned char> out;
    unsigned char buf[1 << 16];
    for (;;) {
        const int got = gzread(f, buf, sizeof buf);
        if (got < 0) {
            int code = 0;
            const std::string msg = gzerror(f, &code);
            gzclose(f);
            throw DataError("read error in " + path + ": " + msg);
        }
        if (got == 0) break;
        out.insert(out.end(), buf, buf + got);
    }
    gzclose(f);
    return out;
}

namespace {

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
    return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) | (std::uint32_t(b[at + 2]) << 8) |
           std::uint32_t(b[at + 3]);
}

std::string find_with_gz(const std::string& dir, const std::string& name) {
    namespace fs = std::filesystem;
    for (const std::string& cand : {name, name + ".gz"}) {
        const fs::path p = fs::path(dir) / cand;
        if (fs::exists(p)) return p.string();
    }
    throw DataError("missing " + name + "[.gz] in " + dir);
}

}  // namespace

Dataset load_mnist(const std::string& images_path, const std::string& labels_path, Normalization mode) {
    const auto img = read_maybe_gzip(images_path);
    const auto lab = read_maybe_gzip(labels_path);
    if (img.size() < 16 || be32(img, 0) != 0x00000803)
        throw DataError(images_path + ": bad IDX image magic");
    if (lab.size() < 8 || be32(lab, 0) != 0x00000801)
        throw DataError(labels_path + ": bad IDX label magic");
    const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
    if (img.size() != 16 + n * rows * cols)
        throw DataError(images_path + ": expected " + std::to_string(16 + n * rows * cols) + " bytes, found " +
                        std::to_string(img.size()));
    const std::size_t nl = be32(lab, 4);
    if (lab.size() != 8 + nl) throw DataError(labels_path + ": truncated label file");
    if (nl != n)
        throw DataError("image count " + std::to_string(n) + " does not match label count " + std::to_string(nl));

    Dataset ds;
    ds.P = static_cast<int>(rows);
    ds.Q = static_cast<int>(cols);
    ds.C = 1;
    ds.source = images_path;
    const std::size_t m = rows * cols;
    ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    ds.labels.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t a = 0; a < m; ++a)
            ds.features(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(a)) = img[16 + k * m + a] / 255.0;
        ds.labels[k] = lab[8 + k];
    }
    normalize(ds, mode);
    return ds;
}

Dataset load_mnist_dir(const std::string& dir, const std::string& prefix, Normalization mode) {
    return load_mnist(find_with_gz(dir, prefix + "-images-idx3-ubyte"), find_with_gz(dir, prefix + "-labels-idx1-ubyte"),
                      mode);
}

Dataset load_cifar10(const std::vector<std::string>& batch_paths, Normalization mode) {
    constexpr std::size_t rec = 3073, side = 32, plane = side * side;
    std::vector<std::vector<unsigned char>> blobs;
    std::size_t total = 0;
    for (const auto& p : batch_paths) {
        blobs.push_back(read_maybe_gzip(p));
        if (blobs.back().size() % rec != 0)
            throw DataError(p + ": size " + std::to_string(blobs.back().size()) + " is not a multiple of 3073");
        total += blobs.back().size() / rec;
    }
    Dataset ds;
    ds.P = ds.Q = static_cast<int>(side);
    ds.C = 3;
    ds.source = batch_paths.empty() ? std::string() : batch_paths.front();
    ds.features.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(3 * plane));
    ds.labels.resize(total);
    std::size_t k = 0;
    for (std::size_t b = 0; b < blobs.size(); ++b) {
        const auto& blob = blobs[b];
        for (std::size_t r = 0; r < blob.size() / rec; ++r, ++k) {
            const unsigned char* p = blob.data() + r * rec;
            if (p[0] > 9)
                throw DataError(batch_paths[b] + ": record " + std::to_string(r) + " has label " +
                                std::to_string(p[0]));
            ds.labels[k] = p[0];
            // Source is channel-major; stored pixel-major.
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t a = 0; a < plane; ++a)
                    ds.features(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(a * 3 + c)) =
                        p[1 + c * plane + a] / 255.0;
        }
    }
    normalize(ds, mode);
    return ds;
}

Dataset load_cifar10_dir(const std::string& dir, bool train, Normalization mode) {
    std::vector<std::string> paths;
    if (train)
        for (int b = 1; b <= 5; ++b) paths.push_back(find_with_gz(dir, "data_batch_" + std::to_string(b) + ".bin"));
    else
        paths.push_back(find_with_gz(dir, "test_batch.bin"));
    return load_cifar10(paths, mode);
}

namespace {

bool has_file(const std::filesystem::path& dir, const std::string& name) {
    return std::filesystem::exists(dir / name) || std::filesystem::exists(dir / (name + ".gz"));
}

}  // namespace

DataSplit load_named_split(const std::string& name, const std::string& dir, Normalization mode, int held_out,
                           std::uint64_t seed) {
    namespace fs = std::filesystem;
    if (name == "mnist") {
        if (has_file(dir, "train-images-idx3-ubyte"))
            return {load_mnist_dir(dir, "train", mode), load_mnist_dir(dir, "t10k", mode)};
        for (const fs::path& d : {fs::path(dir), fs::path(dir) / "mnist-5k"}) {
            if (!has_file(d, "mnist5k-images-idx3-ubyte")) continue;
            const Dataset all = load_mnist_dir(d.string(), "mnist5k", mode);
            if (held_out < 0 || held_out >= all.size()) throw ConfigError("held-out size out of range");
            std::vector<int> perm(static_cast<std::size_t>(all.size()));
            for (int i = 0; i < all.size(); ++i) perm[static_cast<std::size_t>(i)] = i;
            Stream s(seed, "pool-split");
            for (int i = all.size() - 1; i > 0; --i)
                std::swap(perm[static_cast<std::size_t>(i)],
                          perm[s.below(static_cast<std::uint64_t>(i) + 1)]);
            const auto cut = perm.end() - held_out;
            return {all.subset({perm.begin(), cut}), all.subset({cut, perm.end()})};
        }
        throw DataError("no MNIST IDX files under " + dir);
    }
    if (name == "cifar10") {
        for (const fs::path& d : {fs::path(dir), fs::path(dir) / "cifar-10-batches-bin"})
            if (has_file(d, "data_batch_1.bin"))
                return {load_cifar10_dir(d.string(), true, mode), load_cifar10_dir(d.string(), false, mode)};
        throw DataError("no CIFAR-10 binary batches under " + dir);
    }
    throw ConfigError("unknown dataset '" + name + "' (expected mnist or cifar10)");
}

Dataset average_pool(const Dataset& ds, int factor) {
    if (!ds.is_image()) throw ConfigError("pooling needs image data");
    if (factor < 1 || ds.P % factor || ds.Q % factor)
        throw ConfigError("pool factor " + std::to_string(factor) + " does not divide the image size");
    Dataset out = ds;
    out.P = ds.P / factor;
    out.Q = ds.Q / factor;
    out.normalization = Normalization::None;
    out.features = Eigen::MatrixXd::Zero(ds.size(), out.P * out.Q * ds.C);
    const double w = 1.0 / (factor * factor);
    for (int k = 0; k < ds.size(); ++k)
        for (int i = 0; i < ds.P; ++i)
            for (int j = 0; j < ds.Q; ++j)
                for (int c = 0; c < ds.C; ++c)
                    out.features(k, ((i / factor) * out.Q + j / factor) * ds.C + c) +=
                        w * ds.features(k, (i * ds.Q + j) * ds.C + c);
    return out;
}

std::string default_data_dir() {
    const char* env = std::getenv("DEQNTK_DATA_DIR");
    return env && *env ? std::string(env) : std::string("data");
}

}  // namespace deqntk
