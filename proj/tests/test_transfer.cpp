// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <set>

#include "doctest.h"
#include "lorax/adapters.hpp"
#include "lorax/errors.hpp"
#include "lorax/transfer.hpp"
#include "lorax/util.hpp"

using namespace lorax;

namespace {

Matrix random_matrix(Rng& rng, std::size_t m, std::size_t n) {
    Matrix w(m, n);
    for (double& v : w.values()) v = rng.gaussian();
    return w;
}

Matrix random_orthonormal(Rng& rng, std::size_t n, std::size_t k) {
    return truncate_factors(svd(random_matrix(rng, n, k)), k).u;
}

Matrix projector(const Matrix& u) { return u * transpose(u); }

}  // namespace

TEST_CASE("transfer_same_dim with target = source reproduces the update") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix w = random_matrix(rng, 10, 8);
        const SvdFactors base = truncated_svd(w, 4);
        LoraXAdapter a = init_lorax(base, 4);
        for (double& d : a.delta_sigma) d = rng.uniform(-1.0, 1.0);
        const Matrix delta = materialize_delta(a, base);

        const DenseLoraXAdapter dense = transfer_same_dim(delta, base);
        const Matrix back = materialize_delta(dense, base);
        CHECK(frobenius_norm(back - delta) <= 1e-10 * std::max(1.0, frobenius_norm(delta)));
    }
}

TEST_CASE("transfer_same_dim projects away orthogonal-subspace updates") {
    Rng rng(5);
    // split an orthonormal 12x8 frame: target uses the first 4 directions,
    // the update lives in the last 4
    const Matrix frame_u = random_orthonormal(rng, 12, 8);
    const Matrix frame_v = random_orthonormal(rng, 12, 8);
    SvdFactors target;
    target.u = frame_u.left_columns(4);
    target.v = frame_v.left_columns(4);
    target.sigma = {4, 3, 2, 1};
    target.source_shape = {12, 12};

    Matrix delta(12, 12);
    for (std::size_t c = 4; c < 8; ++c) {
        for (std::size_t i = 0; i < 12; ++i)
            for (std::size_t j = 0; j < 12; ++j)
                delta(i, j) += frame_u(i, c) * frame_v(j, c);
    }
    const DenseLoraXAdapter dense = transfer_same_dim(delta, target);
    CHECK(frobenius_norm(dense.delta_sigma_dense) < 1e-12);
}

TEST_CASE("transfer_same_dim matches the dense double-projection oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix w_s = random_matrix(rng, 8, 8);
        const Matrix w_t = random_matrix(rng, 8, 8);
        const SvdFactors source = truncated_svd(w_s, 3);
        const SvdFactors target = truncated_svd(w_t, 3);

        LoraXAdapter a = init_lorax(source, 3);
        for (double& d : a.delta_sigma) d = rng.uniform(-1.0, 1.0);
        const Matrix delta = materialize_delta(a, source);

        const Matrix transferred =
            materialize_delta(transfer_same_dim(delta, target), target);
        const Matrix oracle = projector(target.u) * delta * projector(target.v);
        CHECK(frobenius_norm(transferred - oracle) <= 1e-10);
    }
}

TEST_CASE("projection is idempotent and contractive") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix w_t = random_matrix(rng, 9, 7);
        const SvdFactors target = truncated_svd(w_t, 3);
        const Matrix delta = random_matrix(rng, 9, 7);

        const Matrix once = materialize_delta(transfer_same_dim(delta, target), target);
        const Matrix twice = materialize_delta(transfer_same_dim(once, target), target);
        CHECK(frobenius_norm(twice - once) <= 1e-10 * std::max(1.0, frobenius_norm(once)));
        CHECK(frobenius_norm(once) <= frobenius_norm(delta) + 1e-12);
    }
}

TEST_CASE("map_basis_diff_dim collapses to the target basis for orthonormal sources") {
    Rng rng(11);
    // DERIVED check: (U_s U_s^T)^+ = U_s U_s^T for a projector, hence
    // U_s^T (U_s U_s^T)^+ U_s = I_k and mapped_u = U_t.
    const Matrix u_s = random_orthonormal(rng, 6, 3);
    const Matrix proj = projector(u_s);
    CHECK(frobenius_norm(pseudo_inverse(proj) - proj) < 1e-10);
    const Matrix inner = transpose(u_s) * pseudo_inverse(proj) * u_s;
    CHECK(frobenius_norm(inner - Matrix::identity(3)) < 1e-10);

    SvdFactors source;
    source.u = u_s;
    source.v = random_orthonormal(rng, 5, 3);
    source.sigma = {3, 2, 1};
    source.source_shape = {6, 5};
    SvdFactors target;
    target.u = random_orthonormal(rng, 9, 3);
    target.v = random_orthonormal(rng, 5, 3);
    target.sigma = {2, 1, 0.5};
    target.source_shape = {9, 5};

    const BasisMap map = map_basis_diff_dim(source, target);
    CHECK(frobenius_norm(map.mapped_u - target.u) < 1e-9);
    CHECK(map.residual < 1e-9);
}

TEST_CASE("map_basis_diff_dim same-dimension degeneracy: mapped_u = U_t, residual 0") {
    Rng rng(13);
    const Matrix w = random_matrix(rng, 7, 7);
    const SvdFactors f = truncated_svd(w, 3);
    const BasisMap map = map_basis_diff_dim(f, f);
    CHECK(frobenius_norm(map.mapped_u - f.u) < 1e-9);
    CHECK(map.residual < 1e-9);
}

TEST_CASE("map_basis_diff_dim right side matches the pseudo-inverse oracle") {
    Rng rng(17);
    // V_s has full column rank, so (V_s^T V_s)^{-1} = I and
    // mapped_v = V_s V_s^T V_t.
    SvdFactors source, target;
    source.u = random_orthonormal(rng, 6, 3);
    source.v = random_orthonormal(rng, 8, 3);
    source.sigma = {3, 2, 1};
    source.source_shape = {6, 8};
    target.u = random_orthonormal(rng, 10, 3);
    target.v = random_orthonormal(rng, 8, 3);
    target.sigma = {1, 0.5, 0.25};
    target.source_shape = {10, 8};

    const Matrix gram = transpose(source.v) * source.v;
    CHECK(frobenius_norm(pseudo_inverse(gram) - Matrix::identity(3)) < 1e-10);

    const BasisMap map = map_basis_diff_dim(source, target);
    const Matrix oracle = source.v * transpose(source.v) * target.v;
    CHECK(frobenius_norm(map.mapped_v - oracle) < 1e-10);
}

TEST_CASE("sigma-weighted map carries the spectral ratio instead of collapsing") {
    Rng rng(19);
    SvdFactors source, target;
    source.u = random_orthonormal(rng, 6, 3);
    source.v = random_orthonormal(rng, 6, 3);
    source.sigma = {4.0, 1.0, 0.25};
    source.source_shape = {6, 6};
    target.u = random_orthonormal(rng, 9, 3);
    target.v = random_orthonormal(rng, 9, 3);
    target.sigma = {1.0, 1.0, 1.0};
    target.source_shape = {9, 9};

    const BasisMap map = map_basis_diff_dim_weighted(source, target);
    CHECK(map.sigma_weighted);
    // mapped_u = U_t diag(sqrt(sigma_t / sigma_s))
    for (std::size_t j = 0; j < 3; ++j) {
        const double ratio = std::sqrt(target.sigma[j] / source.sigma[j]);
        for (std::size_t i = 0; i < 9; ++i) {
            CHECK(map.mapped_u(i, j) == doctest::Approx(target.u(i, j) * ratio).epsilon(1e-8));
        }
    }
}

TEST_CASE("lora baseline: in-subspace adapters pass through unchanged") {
    Rng rng(23);
    const Matrix w_t = random_matrix(rng, 10, 9);
    const SvdFactors target = svd(w_t);

    LoraAdapter adapter;
    adapter.b = target.u.left_columns(4);
    adapter.a = transpose(target.v.left_columns(4));
    const ProjectedLora out = transfer_lora_baseline(adapter, target);
    CHECK(frobenius_norm(out.b_proj - adapter.b) < 1e-12);
    CHECK(frobenius_norm(out.a_proj - adapter.a) < 1e-12);
}

TEST_CASE("lora baseline: out-of-subspace directions vanish") {
    Rng rng(29);
    const Matrix frame = random_orthonormal(rng, 10, 6);
    SvdFactors target;
    target.u = frame.left_columns(3);
    target.v = random_orthonormal(rng, 8, 3);
    target.sigma = {3, 2, 1};
    target.source_shape = {10, 8};

    LoraAdapter adapter;
    adapter.b = frame.left_columns(6);  // columns 3..5 are orthogonal to target.u
    Matrix b_perp(10, 1);
    for (std::size_t i = 0; i < 10; ++i) b_perp(i, 0) = frame(i, 5);
    adapter.b = b_perp;
    adapter.a = random_matrix(rng, 1, 8);
    const ProjectedLora out = transfer_lora_baseline(adapter, target);
    CHECK(frobenius_norm(out.b_proj) < 1e-12);
}

TEST_CASE("lora baseline matches the brute-force double projection") {
    Rng rng(31);
    const Matrix w_t = random_matrix(rng, 16, 16);
    const SvdFactors target = svd(w_t);
    LoraAdapter adapter;
    adapter.b = random_matrix(rng, 16, 4);
    adapter.a = random_matrix(rng, 4, 16);
    const ProjectedLora out = transfer_lora_baseline(adapter, target);
    const Matrix oracle =
        projector(target.u) * adapter.b * adapter.a * projector(target.v);
    CHECK(frobenius_norm(out.b_proj * out.a_proj - oracle) <= 1e-10);
}

TEST_CASE("copy_sigma equals projection when source and target bases coincide") {
    Rng rng(37);
    const Matrix w = random_matrix(rng, 9, 9);
    const SvdFactors base = truncated_svd(w, 4);
    LoraXAdapter a = init_lorax(base, 4);
    for (double& d : a.delta_sigma) d = rng.uniform(-0.5, 0.5);

    const Matrix copied = copy_sigma_baseline(a, base);
    const Matrix projected =
        materialize_delta(transfer_same_dim(materialize_delta(a, base), base), base);
    CHECK(frobenius_norm(copied - projected) < 1e-10);

    LoraXAdapter zero = init_lorax(base, 4);
    CHECK(frobenius_norm(copy_sigma_baseline(zero, base)) == 0.0);

    LoraXAdapter wide = a;
    wide.delta_sigma.resize(7, 0.0);
    CHECK_THROWS_AS(copy_sigma_baseline(wide, base), InvalidRank);
}

// --- end-to-end bundle transfer ------------------------------------------------

namespace {

struct Fixture {
    TensorBundle model;
    TensorBundle adapter;
    std::vector<std::string> keys;
};

Fixture make_fixture(Rng& rng, std::size_t modules, std::size_t dim, std::size_t rank) {
    Fixture fx;
    AdapterBundle adapters;
    adapters.rank = rank;
    for (std::size_t i = 0; i < modules; ++i) {
        const std::string key = "db." + std::to_string(i) + ".attentions.0.tb.0.to_q";
        fx.keys.push_back(key);
        fx.model.add_matrix(key, random_matrix(rng, dim, dim));
    }
    adapters.base_model_hash = bundle_content_hash(fx.model);
    for (const std::string& key : fx.keys) {
        LoraXAdapter a;
        a.module_key = parse_module_key(key);
        a.frozen_basis_ref = adapters.base_model_hash;
        for (std::size_t r = 0; r < rank; ++r)
            a.delta_sigma.push_back(rng.uniform(-0.3, 0.3));
        adapters.adapters.push_back(a);
    }
    fx.adapter = to_tensors(adapters, DType::f32);
    return fx;
}

}  // namespace

TEST_CASE("transfer_bundle onto the same model reproduces every module update") {
    Rng rng(41);
    const Fixture fx = make_fixture(rng, 3, 8, 3);
    TransferConfig config;
    config.threshold = 0.4;
    const TransferOutcome outcome = transfer_bundle(fx.model, fx.adapter, fx.model, config);

    const std::string hash = bundle_content_hash(fx.model);
    const AdapterBundle input = adapter_bundle_from_tensors(fx.adapter);
    const DenseAdapterBundle output = dense_bundle_from_tensors(outcome.adapter);
    REQUIRE(output.adapters.size() == 3);
    CHECK(output.base_model_hash == hash);

    for (const DenseLoraXAdapter& dense : output.adapters) {
        const LoraXAdapter* in = nullptr;
        for (const LoraXAdapter& a : input.adapters)
            if (a.module_key.raw == dense.module_key.raw) in = &a;
        REQUIRE(in != nullptr);
        const SvdFactors basis = module_basis(fx.model, dense.module_key.raw, 3, hash);
        const Matrix got = materialize_delta(dense, basis);
        const Matrix want = materialize_delta(*in, basis);
        CHECK(frobenius_norm(got - want) <= 1e-10 * std::max(1.0, frobenius_norm(want)));
    }
    for (const TransferModuleRecord& m : outcome.report.modules) {
        CHECK(m.action == "transferred");
        CHECK(m.frobenius_ratio == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("transfer_bundle rejects a foreign adapter hash") {
    Rng rng(43);
    const Fixture fx = make_fixture(rng, 2, 6, 2);
    TensorBundle other_model;
    other_model.add_matrix(fx.keys[0], random_matrix(rng, 6, 6));
    other_model.add_matrix(fx.keys[1], random_matrix(rng, 6, 6));
    TransferConfig config;
    CHECK_THROWS_AS(transfer_bundle(other_model, fx.adapter, fx.model, config), BasisMismatch);
}

TEST_CASE("transfer_bundle honors filter blocks") {
    Rng rng(47);
    const Fixture fx = make_fixture(rng, 3, 8, 3);
    TransferConfig config;
    config.filter_blocks = {"db.1."};
    const TransferOutcome outcome = transfer_bundle(fx.model, fx.adapter, fx.model, config);
    const DenseAdapterBundle output = dense_bundle_from_tensors(outcome.adapter);
    CHECK(output.adapters.size() == 2);
    for (const DenseLoraXAdapter& a : output.adapters)
        CHECK(a.module_key.raw.rfind("db.1.", 0) != 0);

    bool filtered_row = false;
    for (const TransferModuleRecord& m : outcome.report.modules) {
        if (m.target_key.rfind("db.1.", 0) == 0) {
            CHECK(m.action == "filtered");
            filtered_row = true;
        }
    }
    CHECK(filtered_row);
}

TEST_CASE("transfer report covers every source adapter key exactly once") {
    Rng rng(53);
    const Fixture fx = make_fixture(rng, 4, 8, 3);
    TransferConfig config;
    config.threshold = 0.4;
    const TransferOutcome outcome = transfer_bundle(fx.model, fx.adapter, fx.model, config);
    std::multiset<std::string> seen;
    for (const TransferModuleRecord& m : outcome.report.modules) {
        if (!m.source_key.empty()) seen.insert(m.source_key);
    }
    for (const std::string& key : fx.keys) CHECK(seen.count(key) == 1);
}

TEST_CASE("transfer_bundle with an impossible threshold reports an empty transfer") {
    Rng rng(59);
    Fixture fx = make_fixture(rng, 2, 8, 3);
    TensorBundle target;
    for (const std::string& key : fx.keys) target.add_matrix(key, random_matrix(rng, 8, 8));
    TransferConfig config;
    config.threshold = 0.999;  // random pairs cannot clear this
    const TransferOutcome outcome = transfer_bundle(fx.model, fx.adapter, target, config);
    CHECK(outcome.report.empty_transfer);
    for (const TransferModuleRecord& m : outcome.report.modules)
        CHECK(m.action == "filtered");
}

TEST_CASE("cross-dimension transfer flags degenerate modules") {
    Rng rng(61);
    Fixture fx = make_fixture(rng, 1, 8, 3);
    TensorBundle target;
    target.add_matrix(fx.keys[0], random_matrix(rng, 12, 10));
    TransferConfig config;
    config.threshold = 0.0;
    const TransferOutcome outcome = transfer_bundle(fx.model, fx.adapter, target, config);
    REQUIRE(outcome.report.modules.size() >= 1);
    bool saw_degenerate = false;
    for (const TransferModuleRecord& m : outcome.report.modules) {
        if (m.action == "degenerate") saw_degenerate = true;
    }
    CHECK(saw_degenerate);
    const DenseAdapterBundle output = dense_bundle_from_tensors(outcome.adapter);
    CHECK(output.adapters.size() == 1);
    CHECK(output.adapters[0].delta_sigma_dense.rows() == 3);
}

TEST_CASE("lora_baseline mode emits projected up/down pairs") {
    Rng rng(67);
    const Fixture fx = make_fixture(rng, 2, 8, 3);
    TransferConfig config;
    config.mode = TransferMode::lora_baseline;
    const TransferOutcome outcome = transfer_bundle(fx.model, fx.adapter, fx.model, config);
    std::size_t ups = 0, downs = 0;
    for (const TensorEntry& e : outcome.adapter.entries()) {
        if (e.key.find("_lora.up.weight") != std::string::npos) ++ups;
        if (e.key.find("_lora.down.weight") != std::string::npos) ++downs;
    }
    CHECK(ups == 2);
    CHECK(downs == 2);
}
