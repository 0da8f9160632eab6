// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace lorax {

/// IEEE 754 binary16 codec. Encoding rounds to nearest, ties to even;
/// decoding is exact (every half value is representable in double).
std::uint16_t float16_encode(double value);
double float16_decode(std::uint16_t bits);

}  // namespace lorax
