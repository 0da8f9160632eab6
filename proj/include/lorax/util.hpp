// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>

namespace lorax {

/// Deterministic, platform-independent RNG (splitmix64 core with a
/// Box-Muller gaussian). The standard library distributions are
/// implementation-defined, which would break bit-reproducible fixtures.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();

    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    /// Standard normal deviate.
    double gaussian();
    /// Uniform index in [0, n).
    std::size_t index(std::size_t n);

    /// Derive an independent deterministic stream, e.g. one per module.
    Rng fork(std::uint64_t stream) const;

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// FNV-1a over a byte range; used as the content hash binding adapters
/// to the base model they were decomposed against.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string to_hex(std::uint64_t value);

/// Run fn(0..count-1) on up to `jobs` worker threads. Results must be
/// written to preallocated slots so output order is scheduling-independent.
/// The first exception thrown by a worker is rethrown on the caller.
void parallel_for(std::size_t count, std::size_t jobs,
                  const std::function<void(std::size_t)>& fn);

/// Spearman rank correlation with average ranks on ties.
double spearman_rho(std::span<const double> x, std::span<const double> y);

namespace log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

/// Current level, initialised once from the LORAX_LOG environment variable
/// (error|warn|info|debug). Defaults to warn.
Level level();
void set_level(Level level);

void write(Level level, const std::string& message);

inline void error(const std::string& m) { write(Level::error, m); }
inline void warn(const std::string& m) { write(Level::warn, m); }
inline void info(const std::string& m) { write(Level::info, m); }
inline void debug(const std::string& m) { write(Level::debug, m); }

}  // namespace log

}  // namespace lorax
