#pragma once

#include <cstdint>
#include <random>

namespace optmm {

/// Named substream tags. All randomness in a run derives from one master seed
/// plus a tag path, so any component can be re-run in isolation.
namespace stream_tag {
inline constexpr std::uint64_t paths = 1;
inline constexpr std::uint64_t init = 2;
inline constexpr std::uint64_t eval = 3;
inline constexpr std::uint64_t improvement = 4;
inline constexpr std::uint64_t checks = 5;
}  // namespace stream_tag

/// One independent random stream (mt19937_64 behind normal/uniform draws).
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
        // seed_seq consumes 32-bit words; split each key so the full width counts.
        std::seed_seq seq{
            static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
            static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
            static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32),
            static_cast<std::uint32_t>(c),    static_cast<std::uint32_t>(c >> 32)};
        gen_.seed(seq);
    }

    double normal() { return normal_(gen_); }
    double uniform01() { return uniform_(gen_); }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Derives named substreams from a master seed.
struct StreamFactory {
    std::uint64_t seed = 0;
    RngStream stream(std::uint64_t tag, std::uint64_t a = 0, std::uint64_t b = 0) const {
        return RngStream(seed, tag, a, b);
    }
};

}  // namespace optmm
