// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#include "lorax/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "lorax/errors.hpp"
#include "lorax/util.hpp"

namespace lorax {

namespace {

constexpr double kPi = 3.14159265358979323846;

Matrix random_gaussian(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = rng.gaussian();
    return m;
}

// Modified Gram-Schmidt with a second pass; good to ~1e-14 defect.
Matrix random_orthonormal(Rng& rng, std::size_t n, std::size_t k) {
    Matrix q(n, k);
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<double> col(n);
        for (;;) {
            for (double& v : col) v = rng.gaussian();
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t p = 0; p < j; ++p) {
                    double dot = 0.0;
                    for (std::size_t i = 0; i < n; ++i) dot += q(i, p) * col[i];
                    for (std::size_t i = 0; i < n; ++i) col[i] -= dot * q(i, p);
                }
            }
            double norm = 0.0;
            for (double v : col) norm += v * v;
            norm = std::sqrt(norm);
            if (norm > 1e-8) {
                for (double& v : col) v /= norm;
                break;
            }
        }
        q.set_column(j, col);
    }
    return q;
}

// Rotation by `angle` in the (i, r+i) planes of the given full basis:
// mixes the top-r directions with their orthogonal complement.
Matrix tilt_rotation(const Matrix& basis_full, std::size_t r, double angle) {
    const std::size_t n = basis_full.rows();
    Matrix g = Matrix::identity(n);
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    for (std::size_t i = 0; i < r; ++i) {
        g(i, i) = c;
        g(i, r + i) = -s;
        g(r + i, i) = s;
        g(r + i, r + i) = c;
    }
    return basis_full * g * transpose(basis_full);
}

// Rotation by `angle` in fixed random disjoint planes of R^r.
Matrix mix_rotation(const std::vector<std::pair<std::size_t, std::size_t>>& planes,
                    std::size_t r, double angle) {
    Matrix q = Matrix::identity(r);
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    for (const auto& [a, b] : planes) {
        // right-multiply q by the Givens rotation in plane (a, b)
        for (std::size_t i = 0; i < r; ++i) {
            const double qa = q(i, a);
            const double qb = q(i, b);
            q(i, a) = c * qa + s * qb;
            q(i, b) = -s * qa + c * qb;
        }
    }
    return q;
}

struct ModuleAnchor {
    std::string key;
    Matrix u_full;  // m x m
    Matrix v_full;  // n x n
    std::vector<double> sigma;
    Matrix top;   // U_r Sigma_r V_r^T
    Matrix rest;  // remaining spectrum
    std::vector<std::pair<std::size_t, std::size_t>> mix_planes_u;
    std::vector<std::pair<std::size_t, std::size_t>> mix_planes_v;
};

std::vector<std::pair<std::size_t, std::size_t>> draw_planes(Rng& rng, std::size_t r) {
    std::vector<std::size_t> order(r);
    for (std::size_t i = 0; i < r; ++i) order[i] = i;
    for (std::size_t i = r; i > 1; --i) {
        std::swap(order[i - 1], order[rng.index(i)]);
    }
    std::vector<std::pair<std::size_t, std::size_t>> planes;
    for (std::size_t i = 0; i + 1 < r; i += 2) planes.emplace_back(order[i], order[i + 1]);
    return planes;
}

std::vector<ModuleAnchor> build_anchors(const SynthSpec& spec) {
    std::vector<ModuleAnchor> anchors;
    Rng base(spec.seed);
    const std::size_t k = std::min(spec.m, spec.n);
    for (std::size_t idx = 0; idx < spec.modules; ++idx) {
        Rng rng = base.fork(idx);
        ModuleAnchor a;
        char key[64];
        std::snprintf(key, sizeof(key), "db.%zu.attentions.0.tb.0.to_q", idx);
        a.key = key;
        a.u_full = random_orthonormal(rng, spec.m, spec.m);
        a.v_full = random_orthonormal(rng, spec.n, spec.n);
        a.sigma.resize(k);
        for (std::size_t i = 0; i < k; ++i) a.sigma[i] = std::pow(spec.spectrum_decay, i);
        std::vector<double> sig_top(a.sigma.begin(),
                                    a.sigma.begin() + static_cast<std::ptrdiff_t>(spec.rank));
        a.top = scale_columns(a.u_full.left_columns(spec.rank), sig_top) *
                transpose(a.v_full.left_columns(spec.rank));
        Matrix full = scale_columns(a.u_full.left_columns(k), a.sigma) *
                      transpose(a.v_full.left_columns(k));
        a.rest = full - a.top;
        a.mix_planes_u = draw_planes(rng, spec.rank);
        a.mix_planes_v = draw_planes(rng, spec.rank);
        anchors.push_back(std::move(a));
    }
    return anchors;
}

struct MemberModule {
    Matrix weight;
    Matrix rot_left;
    Matrix rot_right;
};

// Tilt by `angle` into the complement and remix inside the top-r block by
// the same angle. The remix models the index misalignment real model pairs
// show; a pure rigid rotation would keep the singular triplets index-aligned
// and make diagonal copying exactly optimal.
MemberModule build_member(const ModuleAnchor& a, const SynthSpec& spec, double angle,
                          Rng* noise_rng) {
    MemberModule mod;
    mod.rot_left = tilt_rotation(a.u_full, spec.rank, angle);
    mod.rot_right = tilt_rotation(a.v_full, spec.rank, angle);

    const Matrix q_u = mix_rotation(a.mix_planes_u, spec.rank, angle);
    const Matrix q_v = mix_rotation(a.mix_planes_v, spec.rank, angle);
    std::vector<double> sig_top(a.sigma.begin(),
                                a.sigma.begin() + static_cast<std::ptrdiff_t>(spec.rank));
    const Matrix mixed_u = a.u_full.left_columns(spec.rank) * q_u;
    const Matrix mixed_v = a.v_full.left_columns(spec.rank) * q_v;
    const Matrix top = scale_columns(mixed_u, sig_top) * transpose(mixed_v);

    mod.weight = mod.rot_left * (top + a.rest) * transpose(mod.rot_right);
    if (noise_rng != nullptr && spec.noise_scale > 0.0) {
        for (double& v : mod.weight.values()) v += spec.noise_scale * noise_rng->gaussian();
    }
    return mod;
}

}  // namespace

void SynthSpec::validate() const {
    if (m == 0 || n == 0 || modules == 0) throw InvalidSpec("dimensions must be positive");
    if (rank == 0 || rank > std::min(m, n)) throw InvalidSpec("rank must be in [1, min(m, n)]");
    if (2 * rank > std::min(m, n)) {
        throw InvalidSpec("alignment rotation needs 2*rank <= min(m, n)");
    }
    if (alignment_angle < 0.0 || alignment_angle > kPi / 2 + 1e-12) {
        throw InvalidSpec("alignment_angle must lie in [0, pi/2]");
    }
    if (spectrum_decay <= 0.0 || spectrum_decay > 1.0) {
        throw InvalidSpec("spectrum_decay must lie in (0, 1]");
    }
    if (noise_scale < 0.0) throw InvalidSpec("noise_scale must be nonnegative");
}

ModelPair gen_model_pair(const SynthSpec& spec) {
    spec.validate();
    ModelPair pair;
    pair.spec = spec;
    Rng noise(spec.seed ^ 0x5deece66dULL);
    for (const ModuleAnchor& anchor : build_anchors(spec)) {
        MemberModule source = build_member(anchor, spec, 0.0, nullptr);
        MemberModule target = build_member(anchor, spec, spec.alignment_angle, &noise);
        pair.source.add_matrix(anchor.key, source.weight);
        pair.target.add_matrix(anchor.key, target.weight);
        pair.rotations.push_back(
            SynthModuleRotation{anchor.key, target.rot_left, target.rot_right});
    }
    return pair;
}

std::vector<TensorBundle> gen_model_family(const SynthSpec& spec,
                                           std::span<const double> member_angles) {
    spec.validate();
    const auto anchors = build_anchors(spec);
    std::vector<TensorBundle> members;
    Rng noise(spec.seed ^ 0x5deece66dULL);
    for (double angle : member_angles) {
        TensorBundle bundle;
        for (const ModuleAnchor& anchor : anchors) {
            bundle.add_matrix(anchor.key, build_member(anchor, spec, angle, &noise).weight);
        }
        members.push_back(std::move(bundle));
    }
    return members;
}

std::vector<ToyTask> make_toy_tasks(const TensorBundle& model, std::size_t rank,
                                    std::size_t batch, std::uint64_t seed,
                                    double delta_scale) {
    std::vector<ToyTask> tasks;
    Rng base(seed);
    std::size_t idx = 0;
    for (const TensorEntry& e : model.entries()) {
        if (e.shape.size() != 2) continue;
        Rng rng = base.fork(idx++);
        const Matrix w0 = model.matrix(e.key);
        const SvdFactors basis = truncated_svd(w0, rank);

        ToyTask task;
        task.module_key = e.key;
        task.planted_delta_sigma.resize(basis.rank());
        for (std::size_t i = 0; i < basis.rank(); ++i) {
            task.planted_delta_sigma[i] =
                basis.sigma[i] * rng.uniform(-delta_scale, delta_scale);
        }
        task.hidden_delta = scale_columns(basis.u, task.planted_delta_sigma) * transpose(basis.v);
        task.inputs = random_gaussian(rng, w0.cols(), batch);
        task.targets = (w0 + task.hidden_delta) * task.inputs;
        tasks.push_back(std::move(task));
    }
    return tasks;
}

LoraxFitProblem::LoraxFitProblem(const Matrix& w0, const SvdFactors& basis,
                                 const Matrix& inputs, const Matrix& targets) {
    if (inputs.rows() != w0.cols() || targets.rows() != w0.rows() ||
        inputs.cols() != targets.cols()) {
        throw ShapeError("toy task shapes do not match the module weight");
    }
    sigma_ = basis.sigma;
    batch_ = inputs.cols();
    const Matrix r0 = w0 * inputs - targets;
    alpha_ = transpose(basis.v) * inputs;
    beta0_ = transpose(basis.u) * r0;
    base_sq_ = 0.0;
    for (double v : r0.values()) base_sq_ += v * v;
}

double LoraxFitProblem::loss(std::span<const double> delta_sigma) const {
    double acc = base_sq_;
    for (std::size_t i = 0; i < delta_sigma.size(); ++i) {
        const double d = delta_sigma[i];
        for (std::size_t b = 0; b < batch_; ++b) {
            const double a = alpha_(i, b);
            acc += 2.0 * d * a * beta0_(i, b) + d * d * a * a;
        }
    }
    return acc / static_cast<double>(batch_);
}

std::vector<double> LoraxFitProblem::gradient(std::span<const double> delta_sigma) const {
    std::vector<double> g(delta_sigma.size(), 0.0);
    for (std::size_t i = 0; i < delta_sigma.size(); ++i) {
        double acc = 0.0;
        for (std::size_t b = 0; b < batch_; ++b) {
            const double a = alpha_(i, b);
            acc += a * (beta0_(i, b) + delta_sigma[i] * a);
        }
        g[i] = 2.0 * acc / static_cast<double>(batch_);
    }
    return g;
}

std::vector<double> LoraxFitProblem::fit(std::size_t steps, double lr) const {
    std::vector<double> delta(sigma_.size(), 0.0);
    for (std::size_t step = 0; step < steps; ++step) {
        const std::vector<double> g = gradient(delta);
        for (std::size_t i = 0; i < delta.size(); ++i) {
            delta[i] -= lr * g[i];
            // keep sigma_i + delta_sigma_i >= 0
            if (delta[i] < -sigma_[i]) delta[i] = -sigma_[i];
            if (!std::isfinite(delta[i])) {
                throw TrainingDiverged("delta_sigma became non-finite at step " +
                                       std::to_string(step));
            }
        }
    }
    if (!std::isfinite(loss(delta))) throw TrainingDiverged("final loss is non-finite");
    return delta;
}

FitOutcome fit_lorax(const TensorBundle& source, const std::vector<ToyTask>& tasks,
                     const FitOptions& options) {
    FitOutcome out;
    const std::string source_hash = bundle_content_hash(source);
    for (const ToyTask& task : tasks) {
        const Matrix w0 = source.matrix(task.module_key);
        const SvdFactors basis = truncated_svd(w0, options.rank);
        LoraxFitProblem problem(w0, basis, task.inputs, task.targets);
        LoraXAdapter adapter;
        adapter.module_key = parse_module_key(task.module_key);
        adapter.delta_sigma = problem.fit(options.steps, options.lr);
        adapter.frozen_basis_ref = source_hash;
        out.module_losses.push_back(problem.loss(adapter.delta_sigma));
        out.adapters.push_back(std::move(adapter));
    }
    for (double l : out.module_losses) out.mean_loss += l;
    if (!out.module_losses.empty())
        out.mean_loss /= static_cast<double>(out.module_losses.size());
    return out;
}

namespace {

double batch_loss(const Matrix& prediction_err, std::size_t batch) {
    double acc = 0.0;
    for (double v : prediction_err.values()) acc += v * v;
    return acc / static_cast<double>(batch);
}

}  // namespace

TransferResult eval_transfer(const ModelPair& pair,
                             const std::vector<LoraXAdapter>& adapters,
                             const std::vector<ToyTask>& tasks,
                             const TransferConfig& config) {
    if (adapters.size() != tasks.size()) {
        throw ShapeError("eval_transfer: adapter and task counts differ");
    }
    TransferResult result;
    double left_sum = 0.0, right_sum = 0.0;
    std::size_t columns = 0;

    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const ToyTask& task = tasks[i];
        const LoraXAdapter& adapter = adapters[i];
        if (adapter.module_key.raw != task.module_key) {
            throw ShapeError("eval_transfer: adapter/task module keys disagree");
        }
        const Matrix w_s = pair.source.matrix(task.module_key);
        const Matrix w_t = pair.target.matrix(task.module_key);
        const std::size_t r = adapter.rank();

        SvdFactors source_basis = truncated_svd(w_s, r);
        const Matrix delta_fit = materialize_delta(
            LoraXAdapter{adapter.module_key, adapter.delta_sigma, ""}, source_basis);

        result.trained_loss +=
            batch_loss((w_s * task.inputs + delta_fit * task.inputs) - task.targets,
                       task.inputs.cols());

        const SynthModuleRotation& rot = pair.rotations[i];
        const Matrix planted_target = rot.rot_left * task.hidden_delta * transpose(rot.rot_right);

        Matrix delta_transferred;
        if (config.mode == TransferMode::copy_sigma) {
            SvdFactors target_basis = truncated_svd(w_t, r);
            delta_transferred = copy_sigma_baseline(
                LoraXAdapter{adapter.module_key, adapter.delta_sigma, ""}, target_basis);
        } else if (config.mode == TransferMode::lora_baseline) {
            SvdFactors target_full = svd(w_t);
            const UpDown ud = export_up_down(
                LoraXAdapter{adapter.module_key, adapter.delta_sigma, ""}, source_basis);
            const ProjectedLora proj =
                transfer_lora_baseline(LoraAdapter{adapter.module_key, ud.up, ud.down}, target_full);
            delta_transferred = proj.b_proj * proj.a_proj;
        } else {
            SvdFactors target_basis = truncated_svd(w_t, r);
            const DenseLoraXAdapter dense = transfer_same_dim(delta_fit, target_basis);
            delta_transferred = materialize_delta(dense, target_basis);
        }

        result.transferred_loss +=
            batch_loss((delta_transferred - planted_target) * task.inputs, task.inputs.cols());

        const SimilarityScore score = module_similarity(w_s, w_t, r);
        left_sum += score.left;
        right_sum += score.right;
        columns = std::max(columns, score.columns_compared);
    }

    const double count = static_cast<double>(tasks.size());
    result.trained_loss /= count;
    result.transferred_loss /= count;
    result.degradation = (result.transferred_loss - result.trained_loss) /
                         std::max(1e-12, result.trained_loss);
    result.similarity_at_r.left = left_sum / count;
    result.similarity_at_r.right = right_sum / count;
    result.similarity_at_r.columns_compared = columns;
    return result;
}

std::vector<SweepCell> run_sweep(const SweepConfig& config) {
    struct Group {
        std::uint64_t seed;
        double theta;
    };
    std::vector<Group> groups;
    for (std::uint64_t seed : config.seeds)
        for (double theta : config.thetas) groups.push_back(Group{seed, theta});

    const std::size_t modes = config.modes.size();
    std::vector<SweepCell> cells(groups.size() * modes);

    parallel_for(groups.size(), config.jobs, [&](std::size_t gi) {
        const Group& g = groups[gi];
        SynthSpec spec = config.base;
        spec.seed = g.seed;
        spec.alignment_angle = g.theta;

        for (std::size_t mi = 0; mi < modes; ++mi) {
            SweepCell& cell = cells[gi * modes + mi];
            cell.seed = g.seed;
            cell.theta = g.theta;
            cell.mode = config.modes[mi];
        }
        try {
            const ModelPair pair = gen_model_pair(spec);
            const std::vector<ToyTask> tasks = make_toy_tasks(
                pair.source, config.fit.rank, config.batch, g.seed + 1000003ULL);
            FitOptions fit = config.fit;
            const FitOutcome fitted = fit_lorax(pair.source, tasks, fit);
            for (std::size_t mi = 0; mi < modes; ++mi) {
                TransferConfig tconfig;
                tconfig.mode = config.modes[mi];
                tconfig.rank = config.fit.rank;
                cells[gi * modes + mi].result =
                    eval_transfer(pair, fitted.adapters, tasks, tconfig);
            }
        } catch (const TrainingDiverged&) {
            for (std::size_t mi = 0; mi < modes; ++mi) cells[gi * modes + mi].diverged = true;
        }
    });
    return cells;
}

std::string sweep_csv(const std::vector<SweepCell>& cells, std::size_t rank) {
    std::string out =
        "seed,theta,rank,mode,trained_loss,transferred_loss,degradation,psi_left,psi_right\n";
    char line[320];
    for (const SweepCell& cell : cells) {
        if (cell.diverged) {
            std::snprintf(line, sizeof(line), "%llu,%.10g,%zu,%s,diverged,diverged,diverged,,\n",
                          static_cast<unsigned long long>(cell.seed), cell.theta, rank,
                          std::string(to_string(cell.mode)).c_str());
        } else {
            std::snprintf(line, sizeof(line), "%llu,%.10g,%zu,%s,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                          static_cast<unsigned long long>(cell.seed), cell.theta, rank,
                          std::string(to_string(cell.mode)).c_str(), cell.result.trained_loss,
                          cell.result.transferred_loss, cell.result.degradation,
                          cell.result.similarity_at_r.left, cell.result.similarity_at_r.right);
        }
        out += line;
    }
    return out;
}

}  // namespace lorax
