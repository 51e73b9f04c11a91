#pragma once

#include <cstdint>
#include <string_view>

namespace deqntk {

// Counter-based generator. Word i of a stream with key k is splitmix64_mix(k + (i + 1) * golden).
// Streams are keyed by derive_key(seed, tag, index) so every weight block and trial has its own
// reproducible sequence independent of evaluation order.
//
// Gaussians use the Box-Muller transform on pairs of consecutive words:
//   u1 = (w0 >> 11 + 1) * 2^-53  in (0, 1],  u2 = (w1 >> 11) * 2^-53  in [0, 1)
//   r = sqrt(-2 ln u1);  emits r cos(2 pi u2) then r sin(2 pi u2).
std::uint64_t splitmix64_mix(std::uint64_t z);
std::uint64_t derive_key(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);

class Stream {
public:
    explicit Stream(std::uint64_t key) : key_(key) {}
    Stream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0)
        : key_(derive_key(seed, tag, index)) {}

    std::uint64_t next_u64();
    double uniform();  // [0, 1)
    double normal();
    std::uint64_t below(std::uint64_t n);  // uniform integer in [0, n)

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace deqntk
