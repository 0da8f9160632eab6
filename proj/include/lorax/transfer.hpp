// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "lorax/adapters.hpp"
#include "lorax/matrix.hpp"
#include "lorax/svd.hpp"
#include "lorax/tensor_store.hpp"

namespace lorax {

/// Images of the source bases in the target row/column spaces for the
/// cross-dimension case, with the least-squares fit residual.
struct BasisMap {
    Matrix mapped_u;  // m' x k
    Matrix mapped_v;  // n' x k
    double residual = 0.0;
    bool sigma_weighted = false;
};

/// Literal least-squares basis map:
///   mapped_u = U_t U_s^T (U_s U_s^T)^+ U_s,
///   mapped_v = V_s (V_s^T V_s)^+ V_s^T V_t,
/// with the pseudo-inverse standing in for the inverse (the products are
/// rank deficient whenever r < m). Both inputs are truncated to a common
/// k = min(rank_s, rank_t) first. For exactly column-orthonormal U_s the
/// map collapses to mapped_u = U_t; the recorded residual exposes this.
BasisMap map_basis_diff_dim(const SvdFactors& source, const SvdFactors& target);

/// Sigma-weighted variant used when the literal map collapses: the fit
/// runs over U sqrt(Sigma) factors, so the mapped basis carries the
/// relative source/target spectra instead of degenerating to U_t.
BasisMap map_basis_diff_dim_weighted(const SvdFactors& source, const SvdFactors& target);

/// Same-dimension transfer: dSigma_{t<-s} = U_t^T dW_s V_t, rotating the
/// source update into the target's top singular directions. Materializing
/// the result reproduces the double projection U_t U_t^T dW_s V_t V_t^T.
DenseLoraXAdapter transfer_same_dim(const Matrix& delta_w_s, const SvdFactors& target);

/// Baseline for plain low-rank adapters: B' = U_t U_t^T B, A' = A V_t V_t^T.
struct ProjectedLora {
    Matrix b_proj;
    Matrix a_proj;
};
ProjectedLora transfer_lora_baseline(const LoraAdapter& adapter, const SvdFactors& target);

/// Ablation baseline: place the source diagonal directly on the target
/// bases, U_t dSigma_s V_t^T, skipping the rotation.
Matrix copy_sigma_baseline(const LoraXAdapter& adapter, const SvdFactors& target);

enum class TransferMode { project, copy_sigma, lora_baseline };

std::string_view to_string(TransferMode mode);
TransferMode transfer_mode_from_string(std::string_view name);

struct TransferConfig {
    TransferMode mode = TransferMode::project;
    /// 0 means "use each source adapter's own rank".
    std::size_t rank = 0;
    double threshold = 0.4;
    /// Key prefixes excluded from transfer, unioned with the modules the
    /// matching step filters out.
    std::vector<std::string> filter_blocks;
    /// Keep the literal cross-dimension formula even when it collapses.
    bool strict_diff_dim_formula = false;
    DType output_dtype = DType::f32;
    std::size_t jobs = 1;
};

struct TransferModuleRecord {
    std::string target_key;
    std::string source_key;
    double left = 0.0;
    double right = 0.0;
    std::string action;  // transferred | remapped | filtered | degenerate
    double frobenius_ratio = 0.0;
};

struct TransferReport {
    TransferMode mode = TransferMode::project;
    double threshold = 0.0;
    std::vector<TransferModuleRecord> modules;
    bool empty_transfer = false;  // warning-level: nothing was matched
};

struct TransferOutcome {
    TensorBundle adapter;  // dense lora-x bundle (up/down pairs in lora_baseline mode)
    TransferReport report;
};

/// End-to-end bundle transfer: verify the adapter/base hash binding,
/// score module pairs, match them above the threshold, apply the
/// configured mode per module, and emit a target-bound adapter bundle
/// plus a per-module report in canonical key order.
TransferOutcome transfer_bundle(const TensorBundle& source_model,
                                const TensorBundle& source_adapter,
                                const TensorBundle& target_model,
                                const TransferConfig& config);

nlohmann::ordered_json to_json(const TransferReport& report);

}  // namespace lorax
