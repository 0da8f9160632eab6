// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "lorax/matrix.hpp"
#include "lorax/similarity.hpp"

namespace lorax {

/// S x T matrix of transfer costs C_ij = 1 - Phi(W_s^i, W_t^j); invalid
/// pairs carry cost 1.
struct CostMatrix {
    std::size_t s = 0;
    std::size_t t = 0;
    std::vector<double> costs;  // row-major
    std::vector<std::string> source_keys;
    std::vector<std::string> target_keys;

    double at(std::size_t i, std::size_t j) const { return costs[i * t + j]; }
};

/// Optimal coupling between source and target adapter locations under
/// uniform marginals (rows sum to 1/S, columns to 1/T), with the scalar
/// Adapter Transferability Cost.
struct TransportPlan {
    std::size_t s = 0;
    std::size_t t = 0;
    std::vector<double> x;  // row-major S x T
    double atc = 0.0;
    std::size_t iterations = 0;  // simplex pivots (or couplings examined)

    double at(std::size_t i, std::size_t j) const { return x[i * t + j]; }
};

/// Min-cost-flow view of the transportation problem on the bipartite
/// source->target graph: node k demand is -1/S for sources, +1/T for
/// targets; edge e = i*T + j runs from source i to target j at cost C_ij.
struct FlowProblem {
    std::size_t s = 0;
    std::size_t t = 0;
    std::vector<double> edge_costs;  // vectorized C, S*T entries
    std::vector<double> demand;      // S+T entries, sums to zero

    std::size_t edge_count() const { return s * t; }
    std::size_t edge_tail(std::size_t e) const { return e / t; }
    std::size_t edge_head(std::size_t e) const { return s + e % t; }
    /// Dense (S+T) x (S*T) node-edge incidence matrix. Materialized on
    /// demand; meant for small diagnostic instances.
    Matrix dense_incidence() const;
};

enum class CostSide { left, right };
std::string_view to_string(CostSide side);

/// Requires the report to cover all S x T pairs (valid or invalid).
CostMatrix build_cost_matrix(const SimilarityReport& report, CostSide side);

FlowProblem make_flow_problem(const CostMatrix& c);

/// Exact optimum via the network simplex on the transportation graph.
/// Initial basis from the northwest-corner rule; Bland's rule on edge
/// indices for entering and leaving arcs guards against cycling on the
/// (heavily degenerate) uniform marginals. Optimality is certified by
/// nonnegative reduced costs on all non-basic edges.
TransportPlan solve_min_cost_flow(const CostMatrix& c);

/// sum_ij C_ij X_ij; in [0, 1] for feasible plans since costs are.
double atc(const CostMatrix& c, const TransportPlan& plan);

/// Enumeration oracle over all permutation couplings, valid for
/// S = T <= 8. By Birkhoff extremality this equals the LP optimum for
/// uniform square marginals.
TransportPlan brute_force_transport(const CostMatrix& c);

nlohmann::ordered_json atc_report_json(const CostMatrix& c, const TransportPlan& plan,
                                       CostSide side, bool include_plan = false);

}  // namespace lorax
