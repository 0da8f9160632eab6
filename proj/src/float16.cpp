// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#include "lorax/float16.hpp"

#include <bit>
#include <cmath>
#include <limits>

namespace lorax {

std::uint16_t float16_encode(double value) {
    const float f = static_cast<float>(value);
    const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
    const std::uint32_t sign = (x >> 16) & 0x8000u;
    const std::uint32_t exp32 = (x >> 23) & 0xffu;
    const std::uint32_t frac = x & 0x7fffffu;

    if (exp32 == 0xffu) {  // inf or nan (nan keeps a nonzero mantissa)
        return static_cast<std::uint16_t>(
            sign | 0x7c00u | (frac ? (0x0200u | (frac >> 13)) : 0u));
    }

    const int e = static_cast<int>(exp32) - 127 + 15;
    if (e >= 0x1f) {  // overflow -> inf
        return static_cast<std::uint16_t>(sign | 0x7c00u);
    }
    if (e <= 0) {
        if (e < -10) return static_cast<std::uint16_t>(sign);  // underflow -> signed zero
        // subnormal half: shift the 24-bit significand into place with
        // round-to-nearest-even
        const std::uint32_t m = frac | 0x800000u;
        const int shift = 14 - e;
        std::uint32_t mant = m >> shift;
        const std::uint32_t rem = m & ((1u << shift) - 1u);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (mant & 1u))) ++mant;
        // a mantissa carry lands exactly on the smallest normal, which is
        // the correct rounding
        return static_cast<std::uint16_t>(sign | mant);
    }

    std::uint32_t bits = sign | (static_cast<std::uint32_t>(e) << 10) | (frac >> 13);
    const std::uint32_t rem = frac & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (bits & 1u))) {
        ++bits;  // carry propagates into the exponent (and into inf at the top)
    }
    return static_cast<std::uint16_t>(bits);
}

double float16_decode(std::uint16_t bits) {
    const std::uint32_t sign = (bits >> 15) & 1u;
    const std::uint32_t exp = (bits >> 10) & 0x1fu;
    const std::uint32_t man = bits & 0x3ffu;
    double v = 0.0;
    if (exp == 0) {
        v = std::ldexp(static_cast<double>(man), -24);
    } else if (exp == 0x1f) {
        v = man ? std::numeric_limits<double>::quiet_NaN()
                : std::numeric_limits<double>::infinity();
    } else {
        v = std::ldexp(static_cast<double>(man | 0x400u), static_cast<int>(exp) - 25);
    }
    return sign ? -v : v;
}

}  // namespace lorax
