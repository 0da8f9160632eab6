// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#include "lorax/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lorax/adapters.hpp"
#include "lorax/errors.hpp"
#include "lorax/similarity.hpp"
#include "lorax/synthbench.hpp"
#include "lorax/tensor_store.hpp"
#include "lorax/transfer.hpp"
#include "lorax/transport.hpp"
#include "lorax/util.hpp"

namespace fs = std::filesystem;

namespace lorax {

namespace {

constexpr double kPi = 3.14159265358979323846;

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open \"" + path.string() + "\" for writing");
    out << text;
    if (!out) throw IoError("short write to \"" + path.string() + "\"");
}

std::string shape_text(const std::vector<std::size_t>& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) out += ", ";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t default_jobs() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// --- inspect ---------------------------------------------------------------

int cmd_inspect(const std::string& model_path, bool with_svd, std::size_t top) {
    const TensorBundle bundle = read_bundle(model_path);
    std::printf("%-48s %-14s %s\n", "KEY", "SHAPE", "DTYPE");
    for (const TensorEntry& e : bundle.entries()) {
        std::printf("%-48s %-14s %s\n", e.key.c_str(), shape_text(e.shape).c_str(),
                    std::string(dtype_name(e.dtype)).c_str());
        if (with_svd && e.shape.size() == 2) {
            const SvdFactors f = svd(bundle.matrix(e.key));
            std::string line = "  top singular values:";
            char buf[32];
            for (std::size_t i = 0; i < std::min(top, f.rank()); ++i) {
                std::snprintf(buf, sizeof(buf), " %.4f", f.sigma[i]);
                line += buf;
            }
            std::printf("%s\n", line.c_str());
        }
    }
    if (!bundle.metadata().empty()) {
        std::printf("metadata:\n");
        for (const auto& [k, v] : bundle.metadata())
            std::printf("  %s = %s\n", k.c_str(), v.c_str());
    }
    std::printf("%zu tensors, content hash %s\n", bundle.size(),
                bundle_content_hash(bundle).c_str());
    return 0;
}

// --- similarity --------------------------------------------------------------

std::string pairs_csv(const SimilarityReport& report) {
    std::string out = "target_key,source_key,left,right,valid,invalid_reason\n";
    char line[512];
    for (const SimilarityPair& p : report.pairs) {
        std::snprintf(line, sizeof(line), "%s,%s,%.12g,%.12g,%d,%s\n", p.target_key.raw.c_str(),
                      p.source_key.raw.c_str(), p.score.left, p.score.right, p.valid ? 1 : 0,
                      p.invalid_reason.c_str());
        out += line;
    }
    return out;
}

int cmd_similarity(const std::string& source_path, const std::string& target_path,
                   std::optional<std::size_t> rank, const std::string& side,
                   const std::string& out_dir, bool allow_basis_map, std::size_t jobs) {
    const TensorBundle source = read_bundle(source_path);
    const TensorBundle target = read_bundle(target_path);
    PairingRules rules;
    rules.rank_limit = rank;
    rules.allow_basis_map = allow_basis_map;
    rules.jobs = jobs;
    const SimilarityReport report = build_similarity_report(source, target, rules);

    std::size_t valid = 0;
    double left_sum = 0.0, right_sum = 0.0;
    for (const SimilarityPair& p : report.pairs) {
        if (!p.valid) continue;
        ++valid;
        left_sum += p.score.left;
        right_sum += p.score.right;
    }
    if (valid == 0) {
        log::warn("pairing rules excluded every module pair; report is empty");
    }
    const double denom = valid != 0 ? static_cast<double>(valid) : 1.0;
    if (side == "left" || side == "both")
        std::printf("mean left similarity over %zu valid pairs: %.6f\n", valid, left_sum / denom);
    if (side == "right" || side == "both")
        std::printf("mean right similarity over %zu valid pairs: %.6f\n", valid,
                    right_sum / denom);
    std::printf("%zu pairs scored (%zu valid)\n", report.pairs.size(), valid);

    if (!out_dir.empty()) {
        write_text(fs::path(out_dir) / "similarity_report.json", to_json(report).dump(2) + "\n");
        write_text(fs::path(out_dir) / "similarity_pairs.csv", pairs_csv(report));
        std::printf("wrote %s and %s\n",
                    (fs::path(out_dir) / "similarity_report.json").string().c_str(),
                    (fs::path(out_dir) / "similarity_pairs.csv").string().c_str());
    }
    return 0;
}

// --- transfer ---------------------------------------------------------------

std::vector<std::string> read_filter_blocks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open filter-blocks file \"" + path + "\"");
    std::vector<std::string> prefixes;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty() && line[0] != '#') prefixes.push_back(line);
    }
    return prefixes;
}

int cmd_transfer(const std::string& source_model_path, const std::string& adapter_path,
                 const std::string& target_model_path, const std::string& out_dir,
                 const TransferConfig& config, bool verify) {
    const TensorBundle source_model = read_bundle(source_model_path);
    const TensorBundle adapter = read_bundle(adapter_path);
    const TensorBundle target_model = read_bundle(target_model_path);

    const TransferOutcome outcome = transfer_bundle(source_model, adapter, target_model, config);

    const fs::path adapter_out = fs::path(out_dir) / "transferred_adapter.safetensors";
    if (out_dir.empty()) throw IoError("--out directory is required");
    fs::create_directories(out_dir);
    write_bundle(outcome.adapter, adapter_out);
    write_text(fs::path(out_dir) / "transfer_report.json", to_json(outcome.report).dump(2) + "\n");

    std::size_t transferred = 0, filtered = 0, degenerate = 0;
    for (const TransferModuleRecord& m : outcome.report.modules) {
        if (m.action == "filtered") {
            ++filtered;
        } else {
            ++transferred;
            if (m.action == "degenerate") ++degenerate;
        }
    }
    std::printf("transferred %zu modules (%zu degenerate), filtered %zu\n", transferred,
                degenerate, filtered);
    if (outcome.report.empty_transfer) {
        std::printf("warning: empty transfer (no module above threshold %.3f)\n",
                    config.threshold);
    }
    std::printf("wrote %s\n", adapter_out.string().c_str());

    if (verify && config.mode != TransferMode::lora_baseline) {
        // materialize the output against the target and the input against
        // the source; with identical models the two must agree
        const std::string source_hash = bundle_content_hash(source_model);
        const std::string target_hash = bundle_content_hash(target_model);
        const AdapterBundle input = adapter_bundle_from_tensors(adapter);
        const DenseAdapterBundle output = dense_bundle_from_tensors(outcome.adapter);
        double max_gap = 0.0;
        for (const DenseLoraXAdapter& dense : output.adapters) {
            const LoraXAdapter* in_adapter = nullptr;
            for (const LoraXAdapter& a : input.adapters) {
                if (a.module_key.raw == dense.module_key.raw) {
                    in_adapter = &a;
                    break;
                }
            }
            if (in_adapter == nullptr) continue;
            const std::size_t r =
                std::max(dense.delta_sigma_dense.rows(), dense.delta_sigma_dense.cols());
            const SvdFactors sb =
                module_basis(source_model, in_adapter->module_key.raw, in_adapter->rank(),
                             source_hash);
            const SvdFactors tb = module_basis(target_model, dense.module_key.raw, r, target_hash);
            const Matrix gap = materialize_delta(dense, tb) - materialize_delta(*in_adapter, sb);
            max_gap = std::max(max_gap, frobenius_norm(gap));
        }
        std::printf("verify: max materialization gap %.3e\n", max_gap);
    }
    return 0;
}

// --- atc ---------------------------------------------------------------------

int cmd_atc(const std::string& source_path, const std::string& target_path,
            const std::string& side, std::optional<std::size_t> rank, const std::string& out_path,
            bool emit_plan, std::size_t jobs) {
    const TensorBundle source = read_bundle(source_path);
    const TensorBundle target = read_bundle(target_path);
    PairingRules rules;
    rules.rank_limit = rank;
    rules.jobs = jobs;
    const SimilarityReport report = build_similarity_report(source, target, rules);

    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const CostSide cost_side : {CostSide::left, CostSide::right}) {
        const std::string name(to_string(cost_side));
        if (side != "both" && side != name) continue;
        const CostMatrix c = build_cost_matrix(report, cost_side);
        const TransportPlan plan = solve_min_cost_flow(c);
        std::printf("ATC (%s): %.6f over %zux%zu locations (%zu pivots)\n", name.c_str(),
                    plan.atc, c.s, c.t, plan.iterations);
        out[name] = atc_report_json(c, plan, cost_side, emit_plan);
    }
    if (!out_path.empty()) {
        write_text(out_path, out.dump(2) + "\n");
        std::printf("wrote %s\n", out_path.c_str());
    }
    return 0;
}

// --- synth-bench ---------------------------------------------------------------

struct SynthBenchOptions {
    SweepConfig sweep;
    std::string out_dir;
    std::size_t theta_count = 9;
    std::vector<double> explicit_thetas;
    std::size_t seed_count = 20;
};

void apply_config_file(SynthBenchOptions& opt, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config \"" + path + "\"");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidSpec("config parse failed: " + std::string(e.what()));
    }
    auto& base = opt.sweep.base;
    if (j.contains("m")) base.m = j["m"].get<std::size_t>();
    if (j.contains("n")) base.n = j["n"].get<std::size_t>();
    if (j.contains("rank")) base.rank = j["rank"].get<std::size_t>();
    if (j.contains("modules")) base.modules = j["modules"].get<std::size_t>();
    if (j.contains("noise_scale")) base.noise_scale = j["noise_scale"].get<double>();
    if (j.contains("spectrum_decay")) base.spectrum_decay = j["spectrum_decay"].get<double>();
    if (j.contains("steps")) opt.sweep.fit.steps = j["steps"].get<std::size_t>();
    if (j.contains("lr")) opt.sweep.fit.lr = j["lr"].get<double>();
    if (j.contains("batch")) opt.sweep.batch = j["batch"].get<std::size_t>();
    if (j.contains("jobs")) opt.sweep.jobs = j["jobs"].get<std::size_t>();
    if (j.contains("theta_count")) opt.theta_count = j["theta_count"].get<std::size_t>();
    if (j.contains("thetas")) opt.explicit_thetas = j["thetas"].get<std::vector<double>>();
    if (j.contains("seeds")) {
        if (j["seeds"].is_array()) {
            opt.sweep.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        } else {
            opt.seed_count = j["seeds"].get<std::size_t>();
        }
    }
    if (j.contains("modes")) {
        opt.sweep.modes.clear();
        for (const auto& mode : j["modes"])
            opt.sweep.modes.push_back(transfer_mode_from_string(mode.get<std::string>()));
    }
}

int cmd_synth_bench(SynthBenchOptions opt) {
    if (opt.explicit_thetas.empty()) {
        const std::size_t count = std::max<std::size_t>(opt.theta_count, 1);
        for (std::size_t i = 0; i < count; ++i) {
            opt.sweep.thetas.push_back(
                count == 1 ? 0.0
                           : kPi / 2.0 * static_cast<double>(i) / static_cast<double>(count - 1));
        }
    } else {
        opt.sweep.thetas = opt.explicit_thetas;
    }
    if (opt.sweep.seeds.empty()) {
        for (std::size_t s = 0; s < opt.seed_count; ++s) opt.sweep.seeds.push_back(s);
    }
    opt.sweep.fit.rank = opt.sweep.base.rank;

    const std::vector<SweepCell> cells = run_sweep(opt.sweep);

    // summary statistics over the project-mode cells
    std::vector<double> thetas, degradations;
    double theta0_max = 0.0;
    std::size_t diverged = 0;
    std::size_t beats = 0, comparisons = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const SweepCell& cell = cells[i];
        if (cell.diverged) {
            ++diverged;
            continue;
        }
        if (cell.mode == TransferMode::project) {
            thetas.push_back(cell.theta);
            degradations.push_back(cell.result.degradation);
            if (cell.theta == 0.0) theta0_max = std::max(theta0_max, cell.result.degradation);
            // paired copy_sigma cell, if it ran in this sweep
            for (std::size_t j = 0; j < cells.size(); ++j) {
                const SweepCell& other = cells[j];
                if (other.mode == TransferMode::copy_sigma && !other.diverged &&
                    other.seed == cell.seed && other.theta == cell.theta &&
                    cell.theta >= kPi / 8.0 - 1e-12) {
                    ++comparisons;
                    if (cell.result.degradation <= other.result.degradation) ++beats;
                    break;
                }
            }
        }
    }
    const double rho = spearman_rho(thetas, degradations);

    std::printf("synth-bench: %zu cells (%zu diverged)\n", cells.size(), diverged);
    std::printf("Spearman rho(theta, degradation): %.4f\n", rho);
    std::printf("max degradation at theta=0: %.3e\n", theta0_max);
    if (comparisons > 0) {
        std::printf("project <= copy_sigma at theta >= pi/8: %zu/%zu\n", beats, comparisons);
    }

    if (!opt.out_dir.empty()) {
        write_text(fs::path(opt.out_dir) / "sweep.csv",
                   sweep_csv(cells, opt.sweep.base.rank));
        nlohmann::ordered_json summary{
            {"cells", cells.size()},
            {"diverged", diverged},
            {"spearman_rho", rho},
            {"theta0_max_degradation", theta0_max},
            {"project_beats_copy", comparisons > 0
                                       ? static_cast<double>(beats) /
                                             static_cast<double>(comparisons)
                                       : 1.0}};
        write_text(fs::path(opt.out_dir) / "summary.json", summary.dump(2) + "\n");
        std::printf("wrote %s and %s\n",
                    (fs::path(opt.out_dir) / "sweep.csv").string().c_str(),
                    (fs::path(opt.out_dir) / "summary.json").string().c_str());
    }
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"training-free LoRA-X adapter transfer toolkit"};
    app.require_subcommand(1);

    // inspect
    auto* inspect = app.add_subcommand("inspect", "list modules of a tensor bundle");
    std::string inspect_model;
    bool inspect_svd = false;
    std::size_t inspect_top = 5;
    inspect->add_option("model", inspect_model, "bundle path")->required();
    inspect->add_flag("--svd", inspect_svd, "print top singular values per module");
    inspect->add_option("--top", inspect_top, "singular values to print");

    // similarity
    auto* similarity = app.add_subcommand("similarity", "score module pairs of two models");
    std::string sim_source, sim_target, sim_side = "both", sim_out;
    std::size_t sim_rank = 0, sim_jobs = default_jobs();
    bool sim_basis_map = false;
    similarity->add_option("source", sim_source, "source model bundle")->required();
    similarity->add_option("target", sim_target, "target model bundle")->required();
    similarity->add_option("--rank", sim_rank, "similarity rank limit (0 = full bases)");
    similarity->add_option("--side", sim_side, "left|right|both")
        ->check(CLI::IsMember({"left", "right", "both"}));
    similarity->add_option("--out", sim_out, "output directory for report + CSV");
    similarity->add_flag("--allow-basis-map", sim_basis_map,
                         "score shape-mismatched pairs through the basis map");
    similarity->add_option("--jobs", sim_jobs, "worker threads");

    // transfer
    auto* transfer = app.add_subcommand("transfer", "transfer an adapter between models");
    std::string tr_source, tr_adapter, tr_target, tr_out, tr_mode = "project", tr_filter,
                tr_dtype = "f32";
    double tr_threshold = 0.4;
    std::size_t tr_rank = 0, tr_jobs = default_jobs();
    bool tr_strict = false, tr_verify = false;
    transfer->add_option("source_model", tr_source, "source model bundle")->required();
    transfer->add_option("adapter", tr_adapter, "source adapter bundle")->required();
    transfer->add_option("target_model", tr_target, "target model bundle")->required();
    transfer->add_option("--out", tr_out, "output directory")->required();
    transfer->add_option("--mode", tr_mode, "project|copy_sigma|lora_baseline")
        ->check(CLI::IsMember({"project", "copy_sigma", "lora_baseline"}));
    transfer->add_option("--threshold", tr_threshold, "similarity threshold (default 0.4)");
    transfer->add_option("--filter-blocks", tr_filter, "file of key prefixes to exclude");
    transfer->add_option("--rank", tr_rank, "transfer rank (0 = adapter rank)");
    transfer->add_option("--dtype", tr_dtype, "output dtype f16|f32")
        ->check(CLI::IsMember({"f16", "f32"}));
    transfer->add_flag("--strict-diff-dim", tr_strict,
                       "keep the literal cross-dimension formula even when it collapses");
    transfer->add_flag("--verify", tr_verify, "compare materializations after transfer");
    transfer->add_option("--jobs", tr_jobs, "worker threads");

    // atc
    auto* atc_cmd = app.add_subcommand("atc", "adapter transferability cost between models");
    std::string atc_source, atc_target, atc_side = "both", atc_out;
    std::size_t atc_rank = 0, atc_jobs = default_jobs();
    bool atc_plan = false;
    atc_cmd->add_option("source", atc_source, "source model bundle")->required();
    atc_cmd->add_option("target", atc_target, "target model bundle")->required();
    atc_cmd->add_option("--side", atc_side, "left|right|both")
        ->check(CLI::IsMember({"left", "right", "both"}));
    atc_cmd->add_option("--rank", atc_rank, "similarity rank limit (0 = full bases)");
    atc_cmd->add_option("--out", atc_out, "output report path");
    atc_cmd->add_flag("--emit-plan", atc_plan, "include the dense coupling in the report");
    atc_cmd->add_option("--jobs", atc_jobs, "worker threads");

    // synth-bench
    auto* bench = app.add_subcommand("synth-bench", "synthetic transfer degradation sweep");
    SynthBenchOptions bench_opt;
    bench_opt.sweep.jobs = default_jobs();
    std::string bench_config;
    std::string bench_modes = "project,copy_sigma";
    bench->add_option("--spec,--config", bench_config,
                      "JSON config; overrides the flags below");
    bench->add_option("--out", bench_opt.out_dir, "output directory");
    bench->add_option("--theta-grid", bench_opt.theta_count, "grid points on [0, pi/2]");
    bench->add_option("--thetas", bench_opt.explicit_thetas, "explicit theta values");
    bench->add_option("--seeds", bench_opt.seed_count, "number of seeds");
    bench->add_option("--modes", bench_modes, "comma-separated transfer modes");
    bench->add_option("--m", bench_opt.sweep.base.m, "rows per module");
    bench->add_option("--n", bench_opt.sweep.base.n, "columns per module");
    bench->add_option("--rank", bench_opt.sweep.base.rank, "adapter rank");
    bench->add_option("--modules", bench_opt.sweep.base.modules, "modules per model");
    bench->add_option("--noise", bench_opt.sweep.base.noise_scale, "target perturbation scale");
    bench->add_option("--steps", bench_opt.sweep.fit.steps, "gradient steps");
    bench->add_option("--lr", bench_opt.sweep.fit.lr, "learning rate");
    bench->add_option("--batch", bench_opt.sweep.batch, "task batch size");
    bench->add_option("--jobs", bench_opt.sweep.jobs, "worker threads");

    std::vector<std::string> full_args;
    full_args.push_back("lorax");
    full_args.insert(full_args.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full_args.size());
    for (const std::string& s : full_args) argv.push_back(s.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());

        if (inspect->parsed()) return cmd_inspect(inspect_model, inspect_svd, inspect_top);
        if (similarity->parsed()) {
            return cmd_similarity(sim_source, sim_target,
                                  sim_rank != 0 ? std::optional<std::size_t>(sim_rank)
                                                : std::nullopt,
                                  sim_side, sim_out, sim_basis_map, sim_jobs);
        }
        if (transfer->parsed()) {
            TransferConfig config;
            config.mode = transfer_mode_from_string(tr_mode);
            config.rank = tr_rank;
            config.threshold = tr_threshold;
            config.strict_diff_dim_formula = tr_strict;
            config.output_dtype = tr_dtype == "f16" ? DType::f16 : DType::f32;
            config.jobs = tr_jobs;
            if (!tr_filter.empty()) config.filter_blocks = read_filter_blocks(tr_filter);
            return cmd_transfer(tr_source, tr_adapter, tr_target, tr_out, config, tr_verify);
        }
        if (atc_cmd->parsed()) {
            return cmd_atc(atc_source, atc_target, atc_side,
                           atc_rank != 0 ? std::optional<std::size_t>(atc_rank) : std::nullopt,
                           atc_out, atc_plan, atc_jobs);
        }
        if (bench->parsed()) {
            if (!bench_modes.empty()) {
                bench_opt.sweep.modes.clear();
                std::stringstream ss(bench_modes);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    if (!item.empty())
                        bench_opt.sweep.modes.push_back(transfer_mode_from_string(item));
                }
            }
            if (!bench_config.empty()) apply_config_file(bench_opt, bench_config);
            return cmd_synth_bench(std::move(bench_opt));
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
}

}  // namespace lorax
