// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "lorax/matrix.hpp"
#include "lorax/svd.hpp"
#include "lorax/tensor_store.hpp"

namespace lorax {

/// Rank-r adapter dW = U~ dSigma V~^T with diagonal dSigma, tied to the
/// frozen truncated bases of the base weight it was trained on. Only the
/// r diagonal entries are stored; the bases are recomputed from the base
/// model on demand, which keeps serialized adapters at r numbers per
/// module and makes basis mismatch detectable.
struct LoraXAdapter {
    ModuleKey module_key;
    std::vector<double> delta_sigma;
    /// Content hash of the base weights the frozen bases come from.
    std::string frozen_basis_ref;

    std::size_t rank() const { return delta_sigma.size(); }
};

/// Transferred adapter: the rotation U_t^T U~_s dSigma_s V~_s^T V_t is
/// generally not diagonal, so the full block is kept. Re-diagonalizing
/// would change the model function.
struct DenseLoraXAdapter {
    ModuleKey module_key;
    Matrix delta_sigma_dense;
    std::string basis_ref;
};

/// Plain low-rank adapter dW = B A.
struct LoraAdapter {
    ModuleKey module_key;
    Matrix b;  // m x r
    Matrix a;  // r x n
};

/// Zero-initialized adapter over the top min(r, basis rank) directions.
LoraXAdapter init_lorax(const SvdFactors& base, std::size_t r);

/// U~ dSigma V~^T for the diagonal case, U_t D V_t^T for the dense case.
Matrix materialize_delta(const LoraXAdapter& adapter, const SvdFactors& basis);
Matrix materialize_delta(const DenseLoraXAdapter& adapter, const SvdFactors& basis);

/// W0 + dW.
Matrix merge_into_base(const Matrix& w0, const Matrix& delta);

/// Up/down interchange layout: the singular-value block is absorbed into
/// the down matrix, so up = U~ (m x r) and down = dSigma V~^T (r x n).
struct UpDown {
    Matrix up;
    Matrix down;
};
UpDown export_up_down(const LoraXAdapter& adapter, const SvdFactors& basis);

/// Diagnostic check of sigma_i + delta_sigma_i >= 0. Lists violating
/// indices (0-based); empty means valid.
struct AdapterValidation {
    std::vector<std::size_t> violations;
    bool valid() const { return violations.empty(); }
};
AdapterValidation validate_adapter(const LoraXAdapter& adapter,
                                   std::span<const double> base_sigma);

// --- adapter bundle I/O ----------------------------------------------------
//
// Adapter bundles reuse the tensor container. Diagonal adapters store one
// "<key>.lora_x.delta_sigma" vector per module; transferred dense adapters
// store "<key>.lora_x.delta_sigma_dense" matrices; up/down exports store
// "<key>_lora.up.weight" / "<key>_lora.down.weight" pairs. Metadata carries
// "rank" and "base_model_hash".

struct AdapterBundle {
    std::vector<LoraXAdapter> adapters;
    std::size_t rank = 0;
    std::string base_model_hash;
};

struct DenseAdapterBundle {
    std::vector<DenseLoraXAdapter> adapters;
    std::size_t rank = 0;
    std::string base_model_hash;
};

TensorBundle to_tensors(const AdapterBundle& bundle, DType dtype = DType::f32);
TensorBundle to_tensors(const DenseAdapterBundle& bundle, DType dtype = DType::f32);
AdapterBundle adapter_bundle_from_tensors(const TensorBundle& tensors);
DenseAdapterBundle dense_bundle_from_tensors(const TensorBundle& tensors);

/// True when the bundle holds "<key>_lora.up.weight" pairs rather than
/// lora_x delta_sigma tensors.
bool is_up_down_bundle(const TensorBundle& tensors);

/// Truncated factors of one module of a model bundle, stamped with the
/// bundle's content hash so adapters can be bound to it.
SvdFactors module_basis(const TensorBundle& model, const std::string& key,
                        std::size_t rank, const std::string& model_hash = "");

}  // namespace lorax
