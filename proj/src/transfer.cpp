// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#include "lorax/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "lorax/errors.hpp"
#include "lorax/similarity.hpp"
#include "lorax/util.hpp"

namespace lorax {

namespace {

double vector_norm(std::span<const double> v) {
    double sum = 0.0;
    for (double x : v) sum += x * x;
    return std::sqrt(sum);
}

bool starts_with_any(const std::string& key, const std::vector<std::string>& prefixes) {
    for (const std::string& p : prefixes) {
        if (!p.empty() && key.rfind(p, 0) == 0) return true;
    }
    return false;
}

}  // namespace

DenseLoraXAdapter transfer_same_dim(const Matrix& delta_w_s, const SvdFactors& target) {
    if (delta_w_s.rows() != target.source_shape.first ||
        delta_w_s.cols() != target.source_shape.second) {
        throw ShapeError("transfer_same_dim: delta is " + std::to_string(delta_w_s.rows()) +
                         "x" + std::to_string(delta_w_s.cols()) + " but target weight is " +
                         std::to_string(target.source_shape.first) + "x" +
                         std::to_string(target.source_shape.second));
    }
    DenseLoraXAdapter out;
    out.delta_sigma_dense = transpose(target.u) * delta_w_s * target.v;
    out.basis_ref = target.source_id;
    return out;
}

BasisMap map_basis_diff_dim(const SvdFactors& source, const SvdFactors& target) {
    const std::size_t k = std::min(source.rank(), target.rank());
    if (k == 0) throw InvalidRank("map_basis_diff_dim: empty bases");
    const SvdFactors s = truncate_factors(source, k);
    const SvdFactors t = truncate_factors(target, k);

    BasisMap map;
    // P^ = U_t U_s^T (U_s U_s^T)^+, mapped_u = P^ U_s
    const Matrix phat = t.u * (transpose(s.u) * pseudo_inverse(s.u * transpose(s.u)));
    map.mapped_u = phat * s.u;
    map.residual = frobenius_norm(map.mapped_u - t.u);

    if (s.source_shape.second == t.source_shape.second) {
        // literal right-side formula, valid when the row counts agree
        map.mapped_v = s.v * (pseudo_inverse(transpose(s.v) * s.v) * (transpose(s.v) * t.v));
    } else {
        // mirrored least-squares map into the target column space
        const Matrix qhat = t.v * (transpose(s.v) * pseudo_inverse(s.v * transpose(s.v)));
        map.mapped_v = qhat * s.v;
    }
    return map;
}

BasisMap map_basis_diff_dim_weighted(const SvdFactors& source, const SvdFactors& target) {
    const std::size_t k = std::min(source.rank(), target.rank());
    if (k == 0) throw InvalidRank("map_basis_diff_dim_weighted: empty bases");
    const SvdFactors s = truncate_factors(source, k);
    const SvdFactors t = truncate_factors(target, k);

    std::vector<double> ws(k), wt(k);
    for (std::size_t i = 0; i < k; ++i) {
        ws[i] = std::sqrt(std::max(s.sigma[i], 0.0));
        wt[i] = std::sqrt(std::max(t.sigma[i], 0.0));
    }
    const Matrix a_s = scale_columns(s.u, ws);
    const Matrix a_t = scale_columns(t.u, wt);
    const Matrix phat = a_t * pseudo_inverse(a_s);

    BasisMap map;
    map.sigma_weighted = true;
    map.mapped_u = phat * s.u;
    map.residual = frobenius_norm(phat * a_s - a_t);

    const Matrix b_s = scale_columns(s.v, ws);
    const Matrix b_t = scale_columns(t.v, wt);
    const Matrix qhat = b_t * pseudo_inverse(b_s);
    map.mapped_v = qhat * s.v;
    return map;
}

ProjectedLora transfer_lora_baseline(const LoraAdapter& adapter, const SvdFactors& target) {
    if (adapter.b.cols() != adapter.a.rows()) {
        throw ShapeError("lora adapter inner dimensions disagree");
    }
    if (adapter.b.rows() != target.source_shape.first ||
        adapter.a.cols() != target.source_shape.second) {
        throw ShapeError("lora adapter does not match the target weight shape");
    }
    ProjectedLora out;
    out.b_proj = target.u * (transpose(target.u) * adapter.b);
    out.a_proj = (adapter.a * target.v) * transpose(target.v);
    return out;
}

Matrix copy_sigma_baseline(const LoraXAdapter& adapter, const SvdFactors& target) {
    const std::size_t r = adapter.rank();
    if (r > target.rank()) {
        throw InvalidRank("copy_sigma_baseline: adapter rank " + std::to_string(r) +
                          " exceeds target rank " + std::to_string(target.rank()));
    }
    const Matrix u = target.u.left_columns(r);
    const Matrix v = target.v.left_columns(r);
    return scale_columns(u, adapter.delta_sigma) * transpose(v);
}

std::string_view to_string(TransferMode mode) {
    switch (mode) {
        case TransferMode::project: return "project";
        case TransferMode::copy_sigma: return "copy_sigma";
        default: return "lora_baseline";
    }
}

TransferMode transfer_mode_from_string(std::string_view name) {
    if (name == "project") return TransferMode::project;
    if (name == "copy_sigma") return TransferMode::copy_sigma;
    if (name == "lora_baseline") return TransferMode::lora_baseline;
    throw Error("unknown transfer mode \"" + std::string(name) + "\"");
}

namespace {

struct UpDownPair {
    Matrix up;
    Matrix down;
};

constexpr std::string_view kUpSuffix = "_lora.up.weight";
constexpr std::string_view kDownSuffix = "_lora.down.weight";

std::map<std::string, UpDownPair> collect_up_down(const TensorBundle& tensors) {
    std::map<std::string, UpDownPair> pairs;
    for (const TensorEntry& e : tensors.entries()) {
        if (e.key.size() <= kUpSuffix.size() ||
            e.key.compare(e.key.size() - kUpSuffix.size(), kUpSuffix.size(), kUpSuffix) != 0)
            continue;
        const std::string module = e.key.substr(0, e.key.size() - kUpSuffix.size());
        const std::string down_key = module + std::string(kDownSuffix);
        if (!tensors.contains(down_key)) {
            throw FormatError("up tensor \"" + e.key + "\" has no matching down tensor");
        }
        pairs[module] = UpDownPair{tensors.matrix(e.key), tensors.matrix(down_key)};
    }
    return pairs;
}

}  // namespace

TransferOutcome transfer_bundle(const TensorBundle& source_model,
                                const TensorBundle& source_adapter,
                                const TensorBundle& target_model,
                                const TransferConfig& config) {
    const std::string source_hash = bundle_content_hash(source_model);
    const std::string target_hash = bundle_content_hash(target_model);

    const bool up_down_input = is_up_down_bundle(source_adapter);
    AdapterBundle lorax_input;
    std::map<std::string, UpDownPair> updown_input;
    std::string adapter_hash;
    std::size_t nominal_rank = 0;
    if (up_down_input) {
        updown_input = collect_up_down(source_adapter);
        auto it = source_adapter.metadata().find("base_model_hash");
        if (it != source_adapter.metadata().end()) adapter_hash = it->second;
        for (const auto& [key, ud] : updown_input)
            nominal_rank = std::max(nominal_rank, ud.up.cols());
    } else {
        lorax_input = adapter_bundle_from_tensors(source_adapter);
        adapter_hash = lorax_input.base_model_hash;
        nominal_rank = lorax_input.rank;
    }
    if (!adapter_hash.empty() && adapter_hash != source_hash) {
        throw BasisMismatch("adapter is bound to base model " + adapter_hash +
                            " but the source model hashes to " + source_hash);
    }
    if (adapter_hash.empty()) {
        log::warn("source adapter carries no base_model_hash; skipping the binding check");
    }
    if (config.mode == TransferMode::copy_sigma && up_down_input) {
        throw FormatError("copy_sigma transfer requires a diagonal lora-x adapter bundle");
    }

    std::map<std::string, const LoraXAdapter*> adapters_by_key;
    for (const LoraXAdapter& a : lorax_input.adapters) adapters_by_key[a.module_key.raw] = &a;

    PairingRules rules;
    rules.rank_limit = config.rank != 0 ? config.rank : nominal_rank;
    rules.allow_basis_map = true;  // cross-dimension transfer goes through the basis map
    rules.jobs = config.jobs;
    const SimilarityReport report = build_similarity_report(source_model, target_model, rules);
    const MatchingPlan plan = match_modules(report, config.threshold);

    TransferReport out_report;
    out_report.mode = config.mode;
    out_report.threshold = config.threshold;

    DenseAdapterBundle dense_out;
    dense_out.base_model_hash = target_hash;
    dense_out.rank = 0;
    TensorBundle updown_out;

    std::set<std::string> used_sources;
    std::size_t transferred_count = 0;

    for (const auto& [target_key, source_key] : plan.assignments) {
        if (starts_with_any(target_key, config.filter_blocks) ||
            starts_with_any(source_key, config.filter_blocks)) {
            out_report.modules.push_back(
                TransferModuleRecord{target_key, "", 0.0, 0.0, "filtered", 0.0});
            continue;
        }

        // does the matched source module carry an adapter?
        const LoraXAdapter* lorax = nullptr;
        const UpDownPair* updown = nullptr;
        if (up_down_input) {
            auto it = updown_input.find(source_key);
            if (it == updown_input.end()) continue;
            updown = &it->second;
        } else {
            auto it = adapters_by_key.find(source_key);
            if (it == adapters_by_key.end()) continue;
            lorax = it->second;
        }
        used_sources.insert(source_key);

        const SimilarityPair* pair = report.find(source_key, target_key);
        const double left = pair != nullptr ? pair->score.left : 0.0;
        const double right = pair != nullptr ? pair->score.right : 0.0;
        std::string action = source_key == target_key ? "transferred" : "remapped";

        const std::size_t adapter_rank = lorax != nullptr ? lorax->rank() : updown->up.cols();
        const std::size_t r_eff =
            config.rank != 0 ? std::min(config.rank, adapter_rank) : adapter_rank;

        const Matrix w_s = source_model.matrix(source_key);
        const Matrix w_t = target_model.matrix(target_key);
        const bool same_dims = w_s.rows() == w_t.rows() && w_s.cols() == w_t.cols();

        if (config.mode == TransferMode::lora_baseline) {
            if (!same_dims) {
                out_report.modules.push_back(
                    TransferModuleRecord{target_key, source_key, left, right, "filtered", 0.0});
                continue;
            }
            // project up/down factors onto the full target bases
            SvdFactors target_full = svd(w_t);
            target_full.source_id = target_hash;
            LoraAdapter adapter;
            if (updown != nullptr) {
                adapter.b = updown->up;
                adapter.a = updown->down;
            } else {
                SvdFactors source_basis = module_basis(source_model, source_key, r_eff, source_hash);
                const UpDown exported = export_up_down(*lorax, source_basis);
                adapter.b = exported.up;
                adapter.a = exported.down;
            }
            const ProjectedLora projected = transfer_lora_baseline(adapter, target_full);
            const double before = frobenius_norm(adapter.b * adapter.a);
            const double after = frobenius_norm(projected.b_proj * projected.a_proj);
            updown_out.add_matrix(target_key + std::string(kUpSuffix), projected.b_proj,
                                  config.output_dtype);
            updown_out.add_matrix(target_key + std::string(kDownSuffix), projected.a_proj,
                                  config.output_dtype);
            out_report.modules.push_back(TransferModuleRecord{
                target_key, source_key, left, right, action, before > 0.0 ? after / before : 0.0});
            ++transferred_count;
            continue;
        }

        // project / copy_sigma paths emit dense delta-sigma blocks
        LoraXAdapter adapter;
        Matrix delta_w_s;
        if (lorax != nullptr) {
            adapter = *lorax;
            adapter.delta_sigma.resize(std::min(r_eff, adapter.delta_sigma.size()));
        } else {
            delta_w_s = updown->up * updown->down;
        }

        DenseLoraXAdapter dense;
        dense.module_key = parse_module_key(target_key);
        double norm_in = 0.0;

        if (config.mode == TransferMode::copy_sigma) {
            const std::size_t k_t = std::min(r_eff, std::min(w_t.rows(), w_t.cols()));
            Matrix block(k_t, k_t);
            for (std::size_t i = 0; i < std::min(k_t, adapter.delta_sigma.size()); ++i)
                block(i, i) = adapter.delta_sigma[i];
            dense.delta_sigma_dense = std::move(block);
            dense.basis_ref = target_hash;
            norm_in = vector_norm(adapter.delta_sigma);
        } else if (same_dims) {
            SvdFactors target_basis = module_basis(target_model, target_key, r_eff, target_hash);
            if (lorax != nullptr) {
                SvdFactors source_basis = module_basis(source_model, source_key, r_eff, source_hash);
                delta_w_s = materialize_delta(adapter, source_basis);
            }
            norm_in = frobenius_norm(delta_w_s);
            DenseLoraXAdapter rotated = transfer_same_dim(delta_w_s, target_basis);
            dense.delta_sigma_dense = std::move(rotated.delta_sigma_dense);
            dense.basis_ref = target_hash;
        } else {
            // cross-dimension: map the source bases into the target spaces
            SvdFactors source_basis = module_basis(source_model, source_key, r_eff, source_hash);
            SvdFactors target_basis = module_basis(target_model, target_key, r_eff, target_hash);
            BasisMap map = map_basis_diff_dim(source_basis, target_basis);
            if (map.residual < 1e-9 && !config.strict_diff_dim_formula) {
                map = map_basis_diff_dim_weighted(source_basis, target_basis);
                action = "degenerate";
            }
            if (lorax == nullptr) {
                out_report.modules.push_back(
                    TransferModuleRecord{target_key, source_key, left, right, "filtered", 0.0});
                continue;
            }
            const std::size_t k = std::min(map.mapped_u.cols(), adapter.delta_sigma.size());
            std::vector<double> ds(adapter.delta_sigma.begin(),
                                   adapter.delta_sigma.begin() + static_cast<std::ptrdiff_t>(k));
            norm_in = vector_norm(adapter.delta_sigma);
            const Matrix left_block = transpose(target_basis.u) * map.mapped_u.left_columns(k);
            const Matrix right_block = transpose(map.mapped_v.left_columns(k)) * target_basis.v;
            dense.delta_sigma_dense = scale_columns(left_block, ds) * right_block;
            dense.basis_ref = target_hash;
        }

        const double norm_out = frobenius_norm(dense.delta_sigma_dense);
        dense_out.rank = std::max(dense_out.rank,
                                  std::max(dense.delta_sigma_dense.rows(),
                                           dense.delta_sigma_dense.cols()));
        dense_out.adapters.push_back(std::move(dense));
        out_report.modules.push_back(TransferModuleRecord{
            target_key, source_key, left, right, action, norm_in > 0.0 ? norm_out / norm_in : 0.0});
        ++transferred_count;
    }

    for (const std::string& target_key : plan.filtered) {
        out_report.modules.push_back(
            TransferModuleRecord{target_key, "", 0.0, 0.0, "filtered", 0.0});
    }

    // source adapter modules that no target consumed
    std::vector<std::string> unused;
    if (up_down_input) {
        for (const auto& [key, ud] : updown_input)
            if (used_sources.count(key) == 0) unused.push_back(key);
    } else {
        for (const LoraXAdapter& a : lorax_input.adapters)
            if (used_sources.count(a.module_key.raw) == 0) unused.push_back(a.module_key.raw);
    }
    std::sort(unused.begin(), unused.end());
    for (const std::string& key : unused) {
        out_report.modules.push_back(TransferModuleRecord{"", key, 0.0, 0.0, "filtered", 0.0});
    }

    if (transferred_count == 0) {
        out_report.empty_transfer = true;
        log::warn("empty transfer: no module cleared the similarity threshold");
    }

    TransferOutcome outcome;
    outcome.report = std::move(out_report);
    if (config.mode == TransferMode::lora_baseline) {
        updown_out.set_metadata("format", "lora-updown");
        updown_out.set_metadata("rank", std::to_string(nominal_rank));
        updown_out.set_metadata("base_model_hash", target_hash);
        updown_out.set_metadata("source_model_hash", source_hash);
        outcome.adapter = std::move(updown_out);
    } else {
        if (dense_out.rank == 0) dense_out.rank = nominal_rank;
        TensorBundle tensors = to_tensors(dense_out, config.output_dtype);
        tensors.set_metadata("source_model_hash", source_hash);
        tensors.set_metadata("mode", std::string(to_string(config.mode)));
        outcome.adapter = std::move(tensors);
    }
    return outcome;
}

nlohmann::ordered_json to_json(const TransferReport& report) {
    nlohmann::ordered_json modules = nlohmann::ordered_json::array();
    for (const TransferModuleRecord& m : report.modules) {
        modules.push_back({{"target_key", m.target_key},
                           {"source_key", m.source_key},
                           {"left", m.left},
                           {"right", m.right},
                           {"action", m.action},
                           {"frobenius_ratio", m.frobenius_ratio}});
    }
    return nlohmann::ordered_json{{"mode", std::string(to_string(report.mode))},
                                  {"threshold", report.threshold},
                                  {"empty_transfer", report.empty_transfer},
                                  {"modules", std::move(modules)}};
}

}  // namespace lorax
