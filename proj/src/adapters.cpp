// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#include "lorax/adapters.hpp"

#include <algorithm>
#include <string>

#include "lorax/errors.hpp"

namespace lorax {

namespace {

constexpr std::string_view kDeltaSigmaSuffix = ".lora_x.delta_sigma";
constexpr std::string_view kDenseSuffix = ".lora_x.delta_sigma_dense";
constexpr std::string_view kUpSuffix = "_lora.up.weight";

bool ends_with(std::string_view text, std::string_view suffix) {
    return text.size() >= suffix.size() &&
           text.compare(text.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void check_basis_binding(const std::string& adapter_ref, const SvdFactors& basis) {
    if (!adapter_ref.empty() && !basis.source_id.empty() && adapter_ref != basis.source_id) {
        throw BasisMismatch("adapter is bound to basis " + adapter_ref +
                            " but was given basis " + basis.source_id);
    }
}

}  // namespace

LoraXAdapter init_lorax(const SvdFactors& base, std::size_t r) {
    if (r == 0) throw InvalidRank("init_lorax: rank must be >= 1");
    LoraXAdapter adapter;
    adapter.delta_sigma.assign(std::min(r, base.rank()), 0.0);
    adapter.frozen_basis_ref = base.source_id;
    return adapter;
}

Matrix materialize_delta(const LoraXAdapter& adapter, const SvdFactors& basis) {
    check_basis_binding(adapter.frozen_basis_ref, basis);
    const std::size_t r = adapter.rank();
    if (r > basis.rank()) {
        throw BasisMismatch("adapter rank " + std::to_string(r) + " exceeds basis rank " +
                            std::to_string(basis.rank()));
    }
    const Matrix u = basis.u.left_columns(r);
    const Matrix v = basis.v.left_columns(r);
    return scale_columns(u, adapter.delta_sigma) * transpose(v);
}

Matrix materialize_delta(const DenseLoraXAdapter& adapter, const SvdFactors& basis) {
    if (!adapter.basis_ref.empty() && !basis.source_id.empty() &&
        adapter.basis_ref != basis.source_id) {
        throw BasisMismatch("dense adapter is bound to basis " + adapter.basis_ref +
                            " but was given basis " + basis.source_id);
    }
    const Matrix& d = adapter.delta_sigma_dense;
    if (d.rows() > basis.rank() || d.cols() > basis.rank()) {
        throw BasisMismatch("dense adapter block " + std::to_string(d.rows()) + "x" +
                            std::to_string(d.cols()) + " exceeds basis rank " +
                            std::to_string(basis.rank()));
    }
    return basis.u.left_columns(d.rows()) * d * transpose(basis.v.left_columns(d.cols()));
}

Matrix merge_into_base(const Matrix& w0, const Matrix& delta) {
    if (!same_shape(w0, delta)) {
        throw ShapeError("merge_into_base: base is " + std::to_string(w0.rows()) + "x" +
                         std::to_string(w0.cols()) + ", delta is " +
                         std::to_string(delta.rows()) + "x" + std::to_string(delta.cols()));
    }
    return w0 + delta;
}

UpDown export_up_down(const LoraXAdapter& adapter, const SvdFactors& basis) {
    check_basis_binding(adapter.frozen_basis_ref, basis);
    const std::size_t r = adapter.rank();
    if (r > basis.rank()) {
        throw BasisMismatch("adapter rank " + std::to_string(r) + " exceeds basis rank " +
                            std::to_string(basis.rank()));
    }
    UpDown out;
    out.up = basis.u.left_columns(r);
    // delta-sigma is absorbed into the down matrix
    Matrix vt = transpose(basis.v.left_columns(r));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < vt.cols(); ++j) vt(i, j) *= adapter.delta_sigma[i];
    out.down = std::move(vt);
    return out;
}

AdapterValidation validate_adapter(const LoraXAdapter& adapter,
                                   std::span<const double> base_sigma) {
    if (adapter.rank() > base_sigma.size()) {
        throw InvalidRank("validate_adapter: adapter rank exceeds sigma length");
    }
    AdapterValidation report;
    for (std::size_t i = 0; i < adapter.rank(); ++i) {
        if (base_sigma[i] + adapter.delta_sigma[i] < 0.0) report.violations.push_back(i);
    }
    return report;
}

// --- bundle I/O --------------------------------------------------------------

TensorBundle to_tensors(const AdapterBundle& bundle, DType dtype) {
    TensorBundle out;
    out.set_metadata("format", "lora-x");
    out.set_metadata("rank", std::to_string(bundle.rank));
    out.set_metadata("base_model_hash", bundle.base_model_hash);
    for (const LoraXAdapter& a : bundle.adapters) {
        out.add_vector(a.module_key.raw + std::string(kDeltaSigmaSuffix), a.delta_sigma, dtype);
    }
    return out;
}

TensorBundle to_tensors(const DenseAdapterBundle& bundle, DType dtype) {
    TensorBundle out;
    out.set_metadata("format", "lora-x-dense");
    out.set_metadata("rank", std::to_string(bundle.rank));
    out.set_metadata("base_model_hash", bundle.base_model_hash);
    for (const DenseLoraXAdapter& a : bundle.adapters) {
        out.add_matrix(a.module_key.raw + std::string(kDenseSuffix), a.delta_sigma_dense, dtype);
    }
    return out;
}

namespace {

std::string metadata_or(const TensorBundle& tensors, const std::string& key,
                        const std::string& fallback) {
    auto it = tensors.metadata().find(key);
    return it == tensors.metadata().end() ? fallback : it->second;
}

}  // namespace

AdapterBundle adapter_bundle_from_tensors(const TensorBundle& tensors) {
    AdapterBundle bundle;
    bundle.base_model_hash = metadata_or(tensors, "base_model_hash", "");
    const std::string rank_text = metadata_or(tensors, "rank", "0");
    bundle.rank = static_cast<std::size_t>(std::stoull(rank_text));
    for (const TensorEntry& e : tensors.entries()) {
        if (!ends_with(e.key, kDeltaSigmaSuffix)) continue;
        if (e.shape.size() != 1) {
            throw FormatError("adapter tensor \"" + e.key + "\" must be a vector");
        }
        LoraXAdapter adapter;
        adapter.module_key =
            parse_module_key(e.key.substr(0, e.key.size() - kDeltaSigmaSuffix.size()));
        adapter.delta_sigma = e.data;
        adapter.frozen_basis_ref = bundle.base_model_hash;
        bundle.adapters.push_back(std::move(adapter));
    }
    if (bundle.adapters.empty()) {
        throw FormatError("bundle holds no \"*.lora_x.delta_sigma\" tensors");
    }
    if (bundle.rank == 0) {
        for (const auto& a : bundle.adapters) bundle.rank = std::max(bundle.rank, a.rank());
    }
    return bundle;
}

DenseAdapterBundle dense_bundle_from_tensors(const TensorBundle& tensors) {
    DenseAdapterBundle bundle;
    bundle.base_model_hash = metadata_or(tensors, "base_model_hash", "");
    bundle.rank = static_cast<std::size_t>(std::stoull(metadata_or(tensors, "rank", "0")));
    for (const TensorEntry& e : tensors.entries()) {
        if (!ends_with(e.key, kDenseSuffix)) continue;
        DenseLoraXAdapter adapter;
        adapter.module_key =
            parse_module_key(e.key.substr(0, e.key.size() - kDenseSuffix.size()));
        adapter.delta_sigma_dense = tensors.matrix(e.key);
        adapter.basis_ref = bundle.base_model_hash;
        bundle.adapters.push_back(std::move(adapter));
    }
    if (bundle.adapters.empty()) {
        throw FormatError("bundle holds no \"*.lora_x.delta_sigma_dense\" tensors");
    }
    return bundle;
}

bool is_up_down_bundle(const TensorBundle& tensors) {
    for (const TensorEntry& e : tensors.entries()) {
        if (ends_with(e.key, kUpSuffix)) return true;
    }
    return false;
}

SvdFactors module_basis(const TensorBundle& model, const std::string& key, std::size_t rank,
                        const std::string& model_hash) {
    SvdFactors factors = truncated_svd(model.matrix(key), rank);
    factors.source_id = model_hash;
    return factors;
}

}  // namespace lorax
