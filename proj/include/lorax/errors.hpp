// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lorax {

/// Base class of all errors thrown by the toolkit.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed tensor container (bad header, truncated or overlapping payload).
struct FormatError : Error {
    using Error::Error;
};

/// Tensor with a rank or dtype the toolkit does not handle.
struct UnsupportedTensor : Error {
    using Error::Error;
};

/// Filesystem-level read/write failure.
struct IoError : Error {
    using Error::Error;
};

/// Non-finite input, failed convergence, or broken numeric precondition.
struct NumericsError : Error {
    using Error::Error;
};

/// Requested adapter/truncation rank is invalid (zero or past the basis).
struct InvalidRank : Error {
    using Error::Error;
};

/// Operand dimensions do not conform.
struct ShapeError : Error {
    using Error::Error;
};

/// Adapter applied against a basis it was not trained on.
struct BasisMismatch : Error {
    using Error::Error;
};

/// Input where the operation's denominator vanishes (e.g. zero matrix).
struct DegenerateInput : Error {
    using Error::Error;
};

/// Similarity report does not cover every source/target pair.
struct IncompleteReport : Error {
    using Error::Error;
};

/// Brute-force transport oracle invoked outside its S = T <= 8 envelope.
struct OracleOutOfRange : Error {
    using Error::Error;
};

/// Synthetic benchmark specification violates its own invariants.
struct InvalidSpec : Error {
    using Error::Error;
};

/// Gradient descent on the toy task produced a non-finite loss.
struct TrainingDiverged : Error {
    using Error::Error;
};

}  // namespace lorax
