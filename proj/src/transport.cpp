// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0
//
// Exact transportation solver on the dense bipartite source->target graph.
// Marginals are uniform (1/S, 1/T), so flows are kept as integers on the
// scaled problem (supply T per source, demand S per target): degeneracy
// tests stay exact and the simplex never chases rounding noise.

#include "lorax/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>

#include "lorax/errors.hpp"

namespace lorax {

std::string_view to_string(CostSide side) {
    return side == CostSide::left ? "left" : "right";
}

CostMatrix build_cost_matrix(const SimilarityReport& report, CostSide side) {
    std::set<std::string> source_set, target_set;
    for (const SimilarityPair& p : report.pairs) {
        source_set.insert(p.source_key.raw);
        target_set.insert(p.target_key.raw);
    }
    CostMatrix c;
    c.source_keys.assign(source_set.begin(), source_set.end());
    c.target_keys.assign(target_set.begin(), target_set.end());
    c.s = c.source_keys.size();
    c.t = c.target_keys.size();
    c.costs.assign(c.s * c.t, -1.0);

    std::map<std::string, std::size_t> si, ti;
    for (std::size_t i = 0; i < c.s; ++i) si[c.source_keys[i]] = i;
    for (std::size_t j = 0; j < c.t; ++j) ti[c.target_keys[j]] = j;
    for (const SimilarityPair& p : report.pairs) {
        const double phi =
            p.valid ? (side == CostSide::left ? p.score.left : p.score.right) : 0.0;
        c.costs[si[p.source_key.raw] * c.t + ti[p.target_key.raw]] =
            std::clamp(1.0 - phi, 0.0, 1.0);
    }
    for (double v : c.costs) {
        if (v < 0.0) {
            throw IncompleteReport("similarity report does not cover every source/target pair");
        }
    }
    return c;
}

FlowProblem make_flow_problem(const CostMatrix& c) {
    FlowProblem p;
    p.s = c.s;
    p.t = c.t;
    p.edge_costs = c.costs;
    p.demand.assign(c.s + c.t, 0.0);
    for (std::size_t i = 0; i < c.s; ++i) p.demand[i] = -1.0 / static_cast<double>(c.s);
    for (std::size_t j = 0; j < c.t; ++j)
        p.demand[c.s + j] = 1.0 / static_cast<double>(c.t);
    return p;
}

Matrix FlowProblem::dense_incidence() const {
    Matrix inc(s + t, s * t);
    for (std::size_t e = 0; e < s * t; ++e) {
        inc(edge_tail(e), e) = -1.0;
        inc(edge_head(e), e) = 1.0;
    }
    return inc;
}

TransportPlan solve_min_cost_flow(const CostMatrix& c) {
    const std::size_t s = c.s;
    const std::size_t t = c.t;
    if (s == 0 || t == 0) throw ShapeError("solve_min_cost_flow: empty cost matrix");
    for (double v : c.costs) {
        if (!std::isfinite(v)) throw NumericsError("solve_min_cost_flow: non-finite cost");
    }

    // Scaled integer masses: supply T at each source, demand S at each
    // target, total S*T. Final X divides by S*T.
    const long long total = static_cast<long long>(s) * static_cast<long long>(t);
    std::vector<long long> flow(s * t, 0);
    std::vector<char> basic(s * t, 0);

    // Northwest-corner initial basis: exactly S+T-1 basic cells, including
    // zero-flow ones on simultaneous exhaustion.
    {
        std::vector<long long> supply(s, static_cast<long long>(t));
        std::vector<long long> demand(t, static_cast<long long>(s));
        std::size_t i = 0, j = 0;
        for (;;) {
            const long long f = std::min(supply[i], demand[j]);
            flow[i * t + j] = f;
            basic[i * t + j] = 1;
            supply[i] -= f;
            demand[j] -= f;
            if (i == s - 1 && j == t - 1) break;
            if (supply[i] == 0 && i < s - 1) {
                ++i;
            } else {
                ++j;
            }
        }
    }

    std::vector<double> u(s, 0.0), v(t, 0.0);
    std::vector<char> u_set(s, 0), v_set(t, 0);
    // adjacency over basic cells, rebuilt each pivot
    std::vector<std::vector<std::size_t>> row_cells(s), col_cells(t);

    const double kReducedCostTol = -1e-12;
    std::size_t iterations = 0;
    const std::size_t max_pivots = 1000 + 200 * s * t;

    for (;;) {
        // potentials from the basis tree: u_i + v_j = c_ij on basic cells
        for (auto& r : row_cells) r.clear();
        for (auto& cc : col_cells) cc.clear();
        for (std::size_t e = 0; e < s * t; ++e) {
            if (basic[e]) {
                row_cells[e / t].push_back(e);
                col_cells[e % t].push_back(e);
            }
        }
        std::fill(u_set.begin(), u_set.end(), 0);
        std::fill(v_set.begin(), v_set.end(), 0);
        std::vector<std::size_t> stack;
        u[0] = 0.0;
        u_set[0] = 1;
        stack.push_back(0);  // node ids: rows 0..s-1, cols s..s+t-1
        while (!stack.empty()) {
            const std::size_t node = stack.back();
            stack.pop_back();
            if (node < s) {
                for (std::size_t e : row_cells[node]) {
                    const std::size_t j = e % t;
                    if (!v_set[j]) {
                        v[j] = c.costs[e] - u[node];
                        v_set[j] = 1;
                        stack.push_back(s + j);
                    }
                }
            } else {
                const std::size_t j = node - s;
                for (std::size_t e : col_cells[j]) {
                    const std::size_t i = e / t;
                    if (!u_set[i]) {
                        u[i] = c.costs[e] - v[j];
                        u_set[i] = 1;
                        stack.push_back(i);
                    }
                }
            }
        }

        // entering arc: Bland's rule, first negative reduced cost by index
        std::size_t enter = s * t;
        for (std::size_t e = 0; e < s * t; ++e) {
            if (basic[e]) continue;
            const double reduced = c.costs[e] - u[e / t] - v[e % t];
            if (reduced < kReducedCostTol) {
                enter = e;
                break;
            }
        }
        if (enter == s * t) break;  // optimal: all reduced costs nonnegative

        // unique tree path from the entering arc's column back to its row
        const std::size_t enter_i = enter / t;
        const std::size_t enter_j = enter % t;
        std::vector<std::size_t> parent_edge(s + t, s * t);
        std::vector<char> seen(s + t, 0);
        std::vector<std::size_t> queue{s + enter_j};
        seen[s + enter_j] = 1;
        for (std::size_t qi = 0; qi < queue.size() && !seen[enter_i]; ++qi) {
            const std::size_t node = queue[qi];
            if (node < s) {
                for (std::size_t e : row_cells[node]) {
                    const std::size_t other = s + e % t;
                    if (!seen[other]) {
                        seen[other] = 1;
                        parent_edge[other] = e;
                        queue.push_back(other);
                    }
                }
            } else {
                for (std::size_t e : col_cells[node - s]) {
                    const std::size_t other = e / t;
                    if (!seen[other]) {
                        seen[other] = 1;
                        parent_edge[other] = e;
                        queue.push_back(other);
                    }
                }
            }
        }
        if (!seen[enter_i]) throw NumericsError("solve_min_cost_flow: basis lost connectivity");

        // walk back: cells along the path alternate -,+,-,... after the
        // entering (+) arc
        std::vector<std::size_t> cycle;  // path cells from row side to column side
        std::size_t node = enter_i;
        while (node != s + enter_j) {
            const std::size_t e = parent_edge[node];
            cycle.push_back(e);
            node = (node < s) ? s + e % t : e / t;
        }
        // cycle[0] shares the entering row -> gets -delta; signs alternate
        long long delta = std::numeric_limits<long long>::max();
        for (std::size_t idx = 0; idx < cycle.size(); idx += 2) {
            delta = std::min(delta, flow[cycle[idx]]);
        }
        // leaving arc: lowest edge index among minus-arcs hitting delta
        std::size_t leave = s * t;
        for (std::size_t idx = 0; idx < cycle.size(); idx += 2) {
            if (flow[cycle[idx]] == delta) leave = std::min(leave, cycle[idx]);
        }
        flow[enter] += delta;
        basic[enter] = 1;
        for (std::size_t idx = 0; idx < cycle.size(); ++idx) {
            if (idx % 2 == 0) {
                flow[cycle[idx]] -= delta;
            } else {
                flow[cycle[idx]] += delta;
            }
        }
        basic[leave] = 0;
        ++iterations;
        if (iterations > max_pivots) {
            throw NumericsError("solve_min_cost_flow: pivot limit exceeded");
        }
    }

    TransportPlan plan;
    plan.s = s;
    plan.t = t;
    plan.iterations = iterations;
    plan.x.resize(s * t);
    for (std::size_t e = 0; e < s * t; ++e) {
        plan.x[e] = static_cast<double>(flow[e]) / static_cast<double>(total);
    }
    plan.atc = atc(c, plan);
    return plan;
}

double atc(const CostMatrix& c, const TransportPlan& plan) {
    if (plan.s != c.s || plan.t != c.t) {
        throw ShapeError("atc: plan shape does not match the cost matrix");
    }
    double value = 0.0;
    for (std::size_t e = 0; e < c.costs.size(); ++e) value += c.costs[e] * plan.x[e];
    return value;
}

TransportPlan brute_force_transport(const CostMatrix& c) {
    if (c.s != c.t || c.s > 8 || c.s == 0) {
        throw OracleOutOfRange("brute_force_transport handles square instances with S <= 8");
    }
    const std::size_t n = c.s;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<std::size_t> best = perm;
    double best_cost = std::numeric_limits<double>::infinity();
    std::size_t examined = 0;
    do {
        double cost = 0.0;
        for (std::size_t i = 0; i < n; ++i) cost += c.at(i, perm[i]);
        ++examined;
        if (cost < best_cost) {
            best_cost = cost;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));

    TransportPlan plan;
    plan.s = n;
    plan.t = n;
    plan.iterations = examined;
    plan.x.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) plan.x[i * n + best[i]] = 1.0 / static_cast<double>(n);
    plan.atc = best_cost / static_cast<double>(n);
    return plan;
}

nlohmann::ordered_json atc_report_json(const CostMatrix& c, const TransportPlan& plan,
                                       CostSide side, bool include_plan) {
    nlohmann::ordered_json out{{"side", std::string(to_string(side))},
                               {"S", c.s},
                               {"T", c.t},
                               {"atc", plan.atc},
                               {"iterations", plan.iterations}};
    if (include_plan) {
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < plan.s; ++i) {
            nlohmann::ordered_json row = nlohmann::ordered_json::array();
            for (std::size_t j = 0; j < plan.t; ++j) row.push_back(plan.at(i, j));
            rows.push_back(std::move(row));
        }
        out["plan"] = std::move(rows);
    }
    return out;
}

}  // namespace lorax
