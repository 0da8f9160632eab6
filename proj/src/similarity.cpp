// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#include "lorax/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "lorax/errors.hpp"
#include "lorax/svd.hpp"
#include "lorax/transfer.hpp"
#include "lorax/util.hpp"

namespace lorax {

const SimilarityPair* SimilarityReport::find(const std::string& source_raw,
                                             const std::string& target_raw) const {
    for (const SimilarityPair& p : pairs) {
        if (p.source_key.raw == source_raw && p.target_key.raw == target_raw) return &p;
    }
    return nullptr;
}

double unweighted_similarity(const Matrix& u_a, const Matrix& u_b) {
    if (u_a.rows() != u_b.rows()) {
        throw ShapeError("unweighted_similarity: row counts differ (" +
                         std::to_string(u_a.rows()) + " vs " + std::to_string(u_b.rows()) +
                         ")");
    }
    if (orthonormality_defect(u_a) > 1e-8 || orthonormality_defect(u_b) > 1e-8) {
        throw NumericsError("unweighted_similarity: inputs are not column-orthonormal");
    }
    const std::size_t denom = std::min(u_a.cols(), u_b.cols());
    if (denom == 0) return 0.0;
    const Matrix g = transpose(u_a) * u_b;
    double sum = 0.0;
    for (double v : g.values()) sum += v * v;
    const double psi = sum / static_cast<double>(denom);
    return std::clamp(psi, 0.0, 1.0);
}

double weighted_similarity(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("weighted_similarity: row counts differ");
    }
    const double na = frobenius_norm(transpose(a) * a);
    const double nb = frobenius_norm(transpose(b) * b);
    if (na == 0.0 || nb == 0.0) {
        throw DegenerateInput("weighted_similarity: zero matrix input");
    }
    const Matrix g = transpose(a) * b;
    double sum = 0.0;
    for (double v : g.values()) sum += v * v;
    return std::clamp(sum / (na * nb), 0.0, 1.0);
}

namespace {

// Shared by module_similarity and the report builder so cached factors can
// be reused. Shape-mismatched sides go through the basis map; the mapped
// image is compared with the weighted formula because orthonormalizing it
// would erase the spectral information the map carries.
SimilarityScore score_from_factors(const SvdFactors& fs, const SvdFactors& ft,
                                   std::optional<std::size_t> rank_limit) {
    SimilarityScore score;
    std::size_t rl = std::min(fs.rank(), ft.rank());
    if (rank_limit) rl = std::min(rl, *rank_limit);
    score.columns_compared = rl;
    if (rl == 0) return score;

    const SvdFactors fs_r = truncate_factors(fs, rl);
    const SvdFactors ft_r = truncate_factors(ft, rl);

    const bool rows_match = fs.source_shape.first == ft.source_shape.first;
    const bool cols_match = fs.source_shape.second == ft.source_shape.second;

    if (rows_match && cols_match) {
        score.left = unweighted_similarity(fs_r.u, ft_r.u);
        score.right = unweighted_similarity(fs_r.v, ft_r.v);
        return score;
    }

    BasisMap map = map_basis_diff_dim(fs_r, ft_r);
    if (map.residual < 1e-9) map = map_basis_diff_dim_weighted(fs_r, ft_r);
    score.basis_mapped = true;
    score.left = rows_match ? unweighted_similarity(fs_r.u, ft_r.u)
                            : weighted_similarity(map.mapped_u, ft_r.u);
    score.right = cols_match ? unweighted_similarity(fs_r.v, ft_r.v)
                             : weighted_similarity(map.mapped_v, ft_r.v);
    return score;
}

}  // namespace

SimilarityScore module_similarity(const Matrix& w_s, const Matrix& w_t,
                                  std::optional<std::size_t> rank_limit) {
    return score_from_factors(svd(w_s), svd(w_t), rank_limit);
}

SimilarityReport build_similarity_report(const TensorBundle& source,
                                         const TensorBundle& target,
                                         const PairingRules& rules) {
    std::vector<std::string> source_keys;
    std::vector<std::string> target_keys;
    for (const TensorEntry& e : source.entries())
        if (e.shape.size() == 2) source_keys.push_back(e.key);
    for (const TensorEntry& e : target.entries())
        if (e.shape.size() == 2) target_keys.push_back(e.key);
    std::sort(source_keys.begin(), source_keys.end());
    std::sort(target_keys.begin(), target_keys.end());

    // one decomposition per module, shared across all pairs
    std::vector<SvdFactors> source_factors(source_keys.size());
    std::vector<SvdFactors> target_factors(target_keys.size());
    parallel_for(source_keys.size() + target_keys.size(), rules.jobs, [&](std::size_t i) {
        if (i < source_keys.size()) {
            source_factors[i] = svd(source.matrix(source_keys[i]));
        } else {
            const std::size_t j = i - source_keys.size();
            target_factors[j] = svd(target.matrix(target_keys[j]));
        }
    });

    SimilarityReport report;
    report.pairs.resize(target_keys.size() * source_keys.size());
    parallel_for(report.pairs.size(), rules.jobs, [&](std::size_t idx) {
        const std::size_t ti = idx / source_keys.size();
        const std::size_t si = idx % source_keys.size();
        SimilarityPair& pair = report.pairs[idx];
        pair.source_key = parse_module_key(source_keys[si]);
        pair.target_key = parse_module_key(target_keys[ti]);
        const SvdFactors& fs = source_factors[si];
        const SvdFactors& ft = target_factors[ti];

        if (pair.source_key.op_kind != pair.target_key.op_kind) {
            pair.invalid_reason = "op-kind mismatch";
            return;
        }
        if (pair.source_key.network_part != pair.target_key.network_part) {
            pair.invalid_reason = "network-part mismatch";
            return;
        }
        const bool shape_match = fs.source_shape == ft.source_shape;
        if (!shape_match && !rules.allow_basis_map) {
            pair.invalid_reason = "shape mismatch";
            return;
        }
        pair.score = score_from_factors(fs, ft, rules.rank_limit);
        pair.valid = true;
    });
    return report;
}

const std::string* MatchingPlan::source_for(const std::string& target_raw) const {
    for (const auto& [t, s] : assignments) {
        if (t == target_raw) return &s;
    }
    return nullptr;
}

MatchingPlan match_modules(const SimilarityReport& report, double threshold) {
    MatchingPlan plan;
    plan.threshold = threshold;

    std::map<std::string, std::vector<const SimilarityPair*>> by_target;
    for (const SimilarityPair& p : report.pairs) {
        by_target[p.target_key.raw].push_back(&p);
    }

    for (const auto& [target_raw, candidates] : by_target) {
        const ModuleKey target_key = parse_module_key(target_raw);

        const SimilarityPair* positional = nullptr;
        for (const SimilarityPair* p : candidates) {
            if (p->source_key.raw == target_raw) {
                positional = p;
                break;
            }
            if (positional == nullptr && p->source_key.same_position(target_key)) {
                positional = p;
            }
        }
        auto min_score = [](const SimilarityPair* p) {
            return std::min(p->score.left, p->score.right);
        };
        if (positional != nullptr && positional->valid && min_score(positional) >= threshold) {
            plan.assignments.emplace_back(target_raw, positional->source_key.raw);
            continue;
        }

        // alternate-block search within the same site, best score first,
        // lowest transformer block on ties
        const SimilarityPair* best = nullptr;
        for (const SimilarityPair* p : candidates) {
            if (!p->valid || !p->source_key.same_site(target_key)) continue;
            if (min_score(p) < threshold) continue;
            if (best == nullptr) {
                best = p;
                continue;
            }
            const double a = min_score(p);
            const double b = min_score(best);
            if (a > b) {
                best = p;
            } else if (a == b) {
                const std::size_t tb_a =
                    p->source_key.transformer_block.value_or(std::numeric_limits<std::size_t>::max());
                const std::size_t tb_b =
                    best->source_key.transformer_block.value_or(std::numeric_limits<std::size_t>::max());
                if (tb_a < tb_b || (tb_a == tb_b && p->source_key.raw < best->source_key.raw)) {
                    best = p;
                }
            }
        }
        if (best != nullptr) {
            plan.assignments.emplace_back(target_raw, best->source_key.raw);
        } else {
            plan.filtered.push_back(target_raw);
        }
    }
    return plan;
}

nlohmann::ordered_json to_json(const SimilarityReport& report) {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const SimilarityPair& p : report.pairs) {
        nlohmann::ordered_json row = {{"source_key", p.source_key.raw},
                                      {"target_key", p.target_key.raw},
                                      {"left", p.score.left},
                                      {"right", p.score.right},
                                      {"valid", p.valid},
                                      {"invalid_reason", p.invalid_reason}};
        if (p.score.basis_mapped) row["basis_mapped"] = true;
        out.push_back(std::move(row));
    }
    return out;
}

nlohmann::ordered_json to_json(const MatchingPlan& plan) {
    nlohmann::ordered_json assignments = nlohmann::ordered_json::object();
    for (const auto& [target, source] : plan.assignments) assignments[target] = source;
    return nlohmann::ordered_json{{"threshold", plan.threshold},
                                  {"assignments", std::move(assignments)},
                                  {"filtered", plan.filtered}};
}

}  // namespace lorax
