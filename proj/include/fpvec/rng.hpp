// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace fpvec {

/// Philox4x32-10 block function (Salmon et al., Random123). Pure: the output
/// depends only on (key, counter), so draws are independent of schedule.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) noexcept {
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = std::uint64_t{M0} * ctr[0];
        const std::uint64_t p1 = std::uint64_t{M1} * ctr[2];
        ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
               static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
        key[0] += W0;
        key[1] += W1;
    }
    return ctr;
}

/// FNV-1a, used to fold stream names into the Philox key.
inline std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Random-access generator keyed by (seed, stream name). Element `i` of the
/// stream is a pure function of (seed, name, i).
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::string_view stream) noexcept {
        const std::uint64_t k = splitmix64(seed ^ splitmix64(fnv1a64(stream)));
        mKey = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
    }

    [[nodiscard]] std::uint64_t bits(std::uint64_t index, std::uint32_t lane = 0) const noexcept {
        const auto out = philox4x32({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), lane, 0u}, mKey);
        return (std::uint64_t{out[0]} << 32) | out[1];
    }

    /// Uniform double in [0, 1) with 53 random bits.
    [[nodiscard]] double uniform(std::uint64_t index, std::uint32_t lane = 0) const noexcept {
        return static_cast<double>(bits(index, lane) >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on one Philox block.
    [[nodiscard]] double normal(std::uint64_t index) const noexcept {
        const auto out = philox4x32({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x6e6f726du, 0u}, mKey);
        const double u1 = (static_cast<double>((std::uint64_t{out[0]} << 21) ^ out[1]) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>((std::uint64_t{out[2]} << 21) ^ out[3]) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::array<std::uint32_t, 2> mKey{};
};

/// Sequential view over a CounterRng for code that just needs "the next draw".
class RngStream {
public:
    RngStream(std::uint64_t seed, std::string_view stream) noexcept : mRng(seed, stream) {}

    std::uint64_t next_u64() noexcept { return mRng.bits(mCounter++); }
    double next_uniform() noexcept { return mRng.uniform(mCounter++); }

    /// Unbiased integer in [0, n) by rejection; n must be > 0.
    std::uint64_t next_below(std::uint64_t n) noexcept {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    template <typename It>
    void shuffle(It first, It last) noexcept {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = next_below(i);
            std::iter_swap(first + static_cast<std::ptrdiff_t>(i - 1), first + static_cast<std::ptrdiff_t>(j));
        }
    }

private:
    CounterRng mRng;
    std::uint64_t mCounter = 0;
};

} // namespace fpvec
