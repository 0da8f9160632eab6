// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lorax/adapters.hpp"
#include "lorax/matrix.hpp"
#include "lorax/similarity.hpp"
#include "lorax/tensor_store.hpp"
#include "lorax/transfer.hpp"

namespace lorax {

/// Recipe for a source/target model pair with controlled subspace
/// alignment. theta = 0 gives identical models; theta = pi/2 swaps the
/// top-r subspaces into their orthogonal complement.
struct SynthSpec {
    std::size_t m = 64;
    std::size_t n = 64;
    std::size_t rank = 8;
    std::size_t modules = 4;
    double alignment_angle = 0.0;  // theta in [0, pi/2]
    std::uint64_t seed = 0;
    /// Additive elementwise gaussian perturbation of the target weights.
    double noise_scale = 0.0;
    /// Geometric spectrum sigma_i = decay^i; keeps singular values
    /// separated so the subspaces stay well defined.
    double spectrum_decay = 0.9;

    void validate() const;  // throws InvalidSpec
};

/// Per-module rotations used to build the target, kept so evaluation can
/// carry the planted task delta into the target subspace.
struct SynthModuleRotation {
    std::string key;
    Matrix rot_left;   // R_u, m x m
    Matrix rot_right;  // R_v, n x n
};

struct ModelPair {
    TensorBundle source;
    TensorBundle target;
    std::vector<SynthModuleRotation> rotations;
    SynthSpec spec;
};

/// Source weights get a prescribed geometric spectrum over random
/// orthonormal bases. The target tilts each module's top-r subspace into
/// its complement by theta and remixes directions inside the subspace by
/// an angle that also scales with theta, so index alignment between the
/// models degrades continuously with theta: under a pure rigid rotation
/// the target's singular triplets stay index-aligned with the source and
/// copying dSigma would be exactly optimal, which no cross-model pair
/// exhibits. Rank-r similarity equals cos^2(theta) by construction.
ModelPair gen_model_pair(const SynthSpec& spec);

/// Models sharing one anchor, tilted by the given angles in common
/// rotation planes, so the pairwise alignment angle between members i and
/// j is |angle_i - angle_j|. Used to build families with controlled
/// intra/inter-family transfer cost.
std::vector<TensorBundle> gen_model_family(const SynthSpec& spec,
                                           std::span<const double> member_angles);

/// Linear regression through one weight matrix per module: targets are
/// produced by W0 + dW* exactly, with the planted dW* inside the source
/// top-r subspace.
struct ToyTask {
    std::string module_key;
    Matrix inputs;        // n x batch
    Matrix targets;       // m x batch
    Matrix hidden_delta;  // planted dW*, m x n
    std::vector<double> planted_delta_sigma;  // coefficients of dW* in the source basis
};

std::vector<ToyTask> make_toy_tasks(const TensorBundle& model, std::size_t rank,
                                    std::size_t batch, std::uint64_t seed,
                                    double delta_scale = 0.5);

/// Quadratic fit of delta_sigma for one module with the bases frozen.
/// Loss is mean squared prediction error over the batch; the residual
/// decomposes over the orthonormal basis, so loss and gradient are exact
/// closed forms in the projected coordinates.
class LoraxFitProblem {
public:
    LoraxFitProblem(const Matrix& w0, const SvdFactors& basis,
                    const Matrix& inputs, const Matrix& targets);

    double loss(std::span<const double> delta_sigma) const;
    std::vector<double> gradient(std::span<const double> delta_sigma) const;

    /// Plain gradient descent; after each step delta_sigma is clipped so
    /// sigma_i + delta_sigma_i >= 0. Throws TrainingDiverged on a
    /// non-finite loss.
    std::vector<double> fit(std::size_t steps, double lr) const;

    std::size_t rank() const { return sigma_.size(); }
    const std::vector<double>& base_sigma() const { return sigma_; }

private:
    std::vector<double> sigma_;
    Matrix alpha_;  // r x batch, V~^T X
    Matrix beta0_;  // r x batch, U~^T (W0 X - Y)
    double base_sq_ = 0.0;
    std::size_t batch_ = 0;
};

struct FitOptions {
    std::size_t steps = 500;
    double lr = 0.1;
    std::size_t rank = 8;
};

struct FitOutcome {
    std::vector<LoraXAdapter> adapters;
    std::vector<double> module_losses;
    double mean_loss = 0.0;
};

FitOutcome fit_lorax(const TensorBundle& source, const std::vector<ToyTask>& tasks,
                     const FitOptions& options);

struct TransferResult {
    double trained_loss = 0.0;
    double transferred_loss = 0.0;
    double degradation = 0.0;  // (transferred - trained) / max(eps, trained)
    SimilarityScore similarity_at_r;
};

/// Evaluate a fitted adapter on the source task and its transfer on the
/// target-referenced task (targets regenerated from the planted delta
/// rotated into the target subspace).
TransferResult eval_transfer(const ModelPair& pair,
                             const std::vector<LoraXAdapter>& adapters,
                             const std::vector<ToyTask>& tasks,
                             const TransferConfig& config);

// --- sweep driver ----------------------------------------------------------

struct SweepCell {
    std::uint64_t seed = 0;
    double theta = 0.0;
    TransferMode mode = TransferMode::project;
    TransferResult result;
    bool diverged = false;
};

struct SweepConfig {
    SynthSpec base;
    std::vector<double> thetas;
    std::vector<std::uint64_t> seeds;
    std::vector<TransferMode> modes{TransferMode::project, TransferMode::copy_sigma};
    FitOptions fit;
    std::size_t batch = 128;
    std::size_t jobs = 1;
};

/// Cells run independently (parallel across (seed, theta, mode)); the
/// returned order is canonical regardless of scheduling.
std::vector<SweepCell> run_sweep(const SweepConfig& config);

std::string sweep_csv(const std::vector<SweepCell>& cells, std::size_t rank);

}  // namespace lorax
