// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lorax/matrix.hpp"
#include "lorax/tensor_store.hpp"

namespace lorax {

/// Left/right subspace similarity of a module pair, each in [0, 1].
struct SimilarityScore {
    double left = 0.0;
    double right = 0.0;
    std::size_t columns_compared = 0;
    /// Set when the score was computed through the cross-dimension basis
    /// map instead of directly comparable bases.
    bool basis_mapped = false;
};

struct SimilarityPair {
    ModuleKey source_key;
    ModuleKey target_key;
    SimilarityScore score;
    bool valid = false;
    std::string invalid_reason;
};

struct SimilarityReport {
    std::vector<SimilarityPair> pairs;

    const SimilarityPair* find(const std::string& source_raw,
                               const std::string& target_raw) const;
};

/// Psi(U_A, U_B) = ||U_A^T U_B||_F^2 / min(cols): 1 for identical
/// subspaces, 0 for orthogonal ones. Inputs must share a row count and be
/// column-orthonormal (defect <= 1e-8). Dividing by the smaller column
/// count keeps the value <= 1 when the bases differ in width.
double unweighted_similarity(const Matrix& u_a, const Matrix& u_b);

/// ||A^T B||_F^2 / (||A^T A||_F ||B^T B||_F). Weighted by the singular
/// values of A and B; symmetric and scale invariant.
double weighted_similarity(const Matrix& a, const Matrix& b);

/// Left and right scores between two weight matrices, computed on their
/// top rank_limit singular bases (full bases when unset). Shape-mismatched
/// sides go through the cross-dimension basis map and are flagged.
SimilarityScore module_similarity(const Matrix& w_s, const Matrix& w_t,
                                  std::optional<std::size_t> rank_limit = {});

struct PairingRules {
    std::optional<std::size_t> rank_limit;
    /// Score shape-mismatched pairs via the basis map instead of marking
    /// them invalid. Off by default: the transport cost matrix treats such
    /// pairs as zero-similarity.
    bool allow_basis_map = false;
    std::size_t jobs = 1;
};

/// Scores every (source module, target module) pair of rank-2 tensors.
/// Pairs with differing attention operation, differing network part, or
/// unmappable shapes are recorded as invalid with score zero rather than
/// thrown. Output ordering is canonical (target key, then source key)
/// regardless of worker scheduling.
SimilarityReport build_similarity_report(const TensorBundle& source,
                                         const TensorBundle& target,
                                         const PairingRules& rules = {});

/// Where each target module takes its adapter from. Every target key
/// lands in exactly one of assignments or filtered.
struct MatchingPlan {
    /// target raw key -> source raw key, sorted by target key.
    std::vector<std::pair<std::string, std::string>> assignments;
    std::vector<std::string> filtered;
    double threshold = 0.0;

    const std::string* source_for(const std::string& target_raw) const;
};

/// Prefer the positionally corresponding source module when
/// min(left, right) >= threshold; otherwise search source modules at the
/// same site (any transformer block) for the best score above threshold,
/// breaking ties toward the lowest block index; otherwise filter the
/// target module out of the transfer.
MatchingPlan match_modules(const SimilarityReport& report, double threshold);

nlohmann::ordered_json to_json(const SimilarityReport& report);
nlohmann::ordered_json to_json(const MatchingPlan& plan);

}  // namespace lorax
