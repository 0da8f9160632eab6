// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lorax/matrix.hpp"

namespace lorax {

/// Thin singular value decomposition W = U diag(sigma) V^T with
/// orthonormal columns in U (m x k) and V (n x k) and sigma descending.
///
/// Sign convention: in every column of U the entry of largest magnitude
/// (lowest index on ties) is nonnegative; the matching V column carries
/// the compensating sign. This removes the per-column +- ambiguity so
/// repeated runs and transfers are reproducible.
struct SvdFactors {
    Matrix u;
    std::vector<double> sigma;
    Matrix v;
    std::pair<std::size_t, std::size_t> source_shape{0, 0};
    /// Content hash of the weights this basis came from, when known.
    /// Adapters check it to detect application against a foreign basis.
    std::string source_id;

    std::size_t rank() const { return sigma.size(); }
    /// U diag(sigma) V^T.
    Matrix reconstruct() const;
};

/// Full decomposition, k = min(m, n). Golub-Kahan bidiagonalization
/// followed by implicit-shift QR on the bidiagonal, in float64.
/// Deterministic: equal inputs give bit-equal outputs.
SvdFactors svd(const Matrix& w);

/// Top min(r, min(m, n)) triplets of svd(w). The effective rank after
/// clamping is visible as factors.rank().
SvdFactors truncated_svd(const Matrix& w, std::size_t r);

/// Truncate existing factors to their top min(r, k) triplets.
SvdFactors truncate_factors(const SvdFactors& f, std::size_t r);

/// Moore-Penrose pseudo-inverse; singular values below tol * sigma_max
/// are treated as zero. Default tol sits at the float64 SVD noise floor.
Matrix pseudo_inverse(const Matrix& m, double tol = 1e-12);

/// || u^T u - I ||_F, zero for column-orthonormal input.
double orthonormality_defect(const Matrix& u);

}  // namespace lorax
