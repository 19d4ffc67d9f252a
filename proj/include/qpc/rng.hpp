#pragma once

#include <array>
#include <cstdint>

#include <boost/math/special_functions/erf.hpp>

namespace qpc {

// Philox4x32-10 block cipher (Salmon et al. constants). Counter-based so that
// draw i of stream (seed, stream_id) is a pure function of (seed, stream_id, i):
// replications can run on any worker in any order and still see identical noise.
class Philox {
  public:
    Philox(std::uint64_t seed, std::uint64_t stream)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_(stream) {}

    std::array<std::uint32_t, 4> block(std::uint64_t index) const {
        std::uint32_t c0 = static_cast<std::uint32_t>(index);
        std::uint32_t c1 = static_cast<std::uint32_t>(index >> 32);
        std::uint32_t c2 = static_cast<std::uint32_t>(stream_);
        std::uint32_t c3 = static_cast<std::uint32_t>(stream_ >> 32);
        std::uint32_t k0 = key_[0], k1 = key_[1];
        for (int round = 0; round < 10; ++round) {
            std::uint64_t p0 = 0xD2511F53ULL * c0;
            std::uint64_t p1 = 0xCD9E8D57ULL * c2;
            std::uint32_t h0 = static_cast<std::uint32_t>(p0 >> 32);
            std::uint32_t l0 = static_cast<std::uint32_t>(p0);
            std::uint32_t h1 = static_cast<std::uint32_t>(p1 >> 32);
            std::uint32_t l1 = static_cast<std::uint32_t>(p1);
            std::uint32_t n0 = h1 ^ c1 ^ k0;
            std::uint32_t n1 = l1;
            std::uint32_t n2 = h0 ^ c3 ^ k1;
            std::uint32_t n3 = l0;
            c0 = n0; c1 = n1; c2 = n2; c3 = n3;
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        return {c0, c1, c2, c3};
    }

  private:
    std::array<std::uint32_t, 2> key_;
    std::uint64_t stream_;
};

inline double standard_normal_quantile(double p) {
    // Phi^{-1}(p) = -sqrt(2) * erfc_inv(2p)
    return -1.4142135623730951 * boost::math::erfc_inv(2.0 * p);
}

// Sequential view over a Philox stream: uniforms in (0,1), normals by inverse CDF.
class RandomStream {
  public:
    RandomStream(std::uint64_t seed, std::uint64_t stream) : gen_(seed, stream) {}

    double uniform() {
        if (lane_ == 0) {
            auto b = gen_.block(index_++);
            pending_ = (static_cast<std::uint64_t>(b[1]) << 32) | b[0];
            spare_ = (static_cast<std::uint64_t>(b[3]) << 32) | b[2];
            lane_ = 1;
            return to_unit(pending_);
        }
        lane_ = 0;
        return to_unit(spare_);
    }

    double normal() { return standard_normal_quantile(uniform()); }

  private:
    static double to_unit(std::uint64_t bits) {
        // 53-bit mantissa, offset by half a ulp so the result is strictly inside (0,1).
        return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
    }

    Philox gen_;
    std::uint64_t index_ = 0;
    std::uint64_t pending_ = 0, spare_ = 0;
    int lane_ = 0;
};

}  // namespace qpc
