// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>

#include "doctest.h"
#include "lorax/errors.hpp"
#include "lorax/matrix.hpp"
#include "lorax/svd.hpp"
#include "lorax/util.hpp"

using namespace lorax;

namespace {

Matrix random_matrix(Rng& rng, std::size_t m, std::size_t n, double scale = 1.0) {
    Matrix w(m, n);
    for (double& v : w.values()) v = scale * rng.gaussian();
    return w;
}

double reconstruction_error(const Matrix& w, const SvdFactors& f) {
    const double num = frobenius_norm(w - f.reconstruct());
    return num / std::max(1.0, frobenius_norm(w));
}

}  // namespace

TEST_CASE("svd of the identity is the identity under the sign convention") {
    const SvdFactors f = svd(Matrix::identity(3));
    REQUIRE(f.rank() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(f.sigma[i] == doctest::Approx(1.0).epsilon(1e-14));
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(f.u(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-14));
            CHECK(f.v(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-14));
        }
    }
}

TEST_CASE("textbook singular values of [[3,0],[4,5]]") {
    // W^T W = [[25, 20], [20, 25]], eigenvalues 45 and 5 from the
    // characteristic polynomial, so sigma = (3 sqrt 5, sqrt 5).
    const Matrix w(2, 2, {3, 0, 4, 5});
    const SvdFactors f = svd(w);
    CHECK(std::abs(f.sigma[0] - 3.0 * std::sqrt(5.0)) < 1e-12);
    CHECK(std::abs(f.sigma[1] - std::sqrt(5.0)) < 1e-12);
    CHECK(reconstruction_error(w, f) < 1e-12);
}

TEST_CASE("svd of a zero matrix has zero spectrum and orthonormal bases") {
    const SvdFactors f = svd(Matrix(4, 2));
    REQUIRE(f.rank() == 2);
    CHECK(f.sigma[0] == 0.0);
    CHECK(f.sigma[1] == 0.0);
    CHECK(orthonormality_defect(f.u) < 1e-14);
    CHECK(orthonormality_defect(f.v) < 1e-14);
}

TEST_CASE("svd rejects non-finite input") {
    Matrix w(2, 2, {1.0, 2.0, 3.0, std::nan("")});
    CHECK_THROWS_AS(svd(w), NumericsError);
}

TEST_CASE("svd contract on random matrices") {
    Rng rng(7);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t m = 1 + rng.index(40);
        const std::size_t n = 1 + rng.index(40);
        const Matrix w = random_matrix(rng, m, n);
        const SvdFactors f = svd(w);
        REQUIRE(f.rank() == std::min(m, n));
        CHECK(reconstruction_error(w, f) < 1e-10);
        CHECK(orthonormality_defect(f.u) < 1e-10);
        CHECK(orthonormality_defect(f.v) < 1e-10);
        for (std::size_t i = 0; i + 1 < f.rank(); ++i) CHECK(f.sigma[i] >= f.sigma[i + 1]);
        CHECK(f.sigma.back() >= 0.0);
    }
}

TEST_CASE("svd is low-rank exact on rank-deficient input") {
    Rng rng(11);
    const Matrix a = random_matrix(rng, 12, 3);
    const Matrix b = random_matrix(rng, 3, 9);
    const Matrix w = a * b;  // rank <= 3
    const SvdFactors f = svd(w);
    CHECK(reconstruction_error(w, f) < 1e-10);
    for (std::size_t i = 3; i < f.rank(); ++i) CHECK(f.sigma[i] < 1e-10 * f.sigma[0]);
}

TEST_CASE("svd is deterministic: equal inputs give bit-equal factors") {
    Rng rng(13);
    const Matrix w = random_matrix(rng, 17, 23);
    const SvdFactors a = svd(w);
    const SvdFactors b = svd(w);
    CHECK(std::memcmp(a.u.values().data(), b.u.values().data(),
                      a.u.values().size() * sizeof(double)) == 0);
    CHECK(std::memcmp(a.v.values().data(), b.v.values().data(),
                      a.v.values().size() * sizeof(double)) == 0);
    CHECK(std::memcmp(a.sigma.data(), b.sigma.data(), a.sigma.size() * sizeof(double)) == 0);
}

TEST_CASE("sign convention: dominant entry of every left column is nonnegative") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const SvdFactors f = svd(random_matrix(rng, 9, 6));
        for (std::size_t j = 0; j < f.u.cols(); ++j) {
            std::size_t imax = 0;
            for (std::size_t i = 1; i < f.u.rows(); ++i)
                if (std::abs(f.u(i, j)) > std::abs(f.u(imax, j))) imax = i;
            CHECK(f.u(imax, j) >= 0.0);
        }
    }
}

TEST_CASE("truncated_svd returns the leading pair") {
    const Matrix w(2, 2, {3, 0, 4, 5});
    const SvdFactors top = truncated_svd(w, 1);
    REQUIRE(top.rank() == 1);
    CHECK(std::abs(top.sigma[0] - 3.0 * std::sqrt(5.0)) < 1e-12);
    const SvdFactors full = svd(w);
    CHECK(std::abs(top.u(0, 0) - full.u(0, 0)) < 1e-14);
    CHECK(std::abs(top.v(1, 0) - full.v(1, 0)) < 1e-14);
}

TEST_CASE("truncated_svd clamps to min(m, n)") {
    Rng rng(19);
    const Matrix w = random_matrix(rng, 8, 5);
    const SvdFactors clamped = truncated_svd(w, 320);
    CHECK(clamped.rank() == 5);
    CHECK_THROWS_AS(truncated_svd(w, 0), InvalidRank);
    // r >= min(m, n) is identical to the full decomposition
    const SvdFactors full = svd(w);
    CHECK(frobenius_norm(clamped.u - full.u) == 0.0);
}

TEST_CASE("Eckart-Young: truncation error matches the discarded spectrum") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix w = random_matrix(rng, 20, 14);
        const SvdFactors full = svd(w);
        const std::size_t r = 1 + rng.index(10);
        const SvdFactors trunc = truncate_factors(full, r);
        const double err = frobenius_norm(w - trunc.reconstruct());
        double tail = 0.0;
        for (std::size_t i = r; i < full.rank(); ++i) tail += full.sigma[i] * full.sigma[i];
        CHECK(err * err == doctest::Approx(tail).epsilon(1e-8));
    }
}

TEST_CASE("pseudo_inverse of a diagonal matrix") {
    const Matrix d(2, 2, {2, 0, 0, 0});
    const Matrix p = pseudo_inverse(d);
    CHECK(p(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(std::abs(p(0, 1)) < 1e-14);
    CHECK(std::abs(p(1, 0)) < 1e-14);
    CHECK(std::abs(p(1, 1)) < 1e-14);
}

TEST_CASE("an orthogonal projector is its own pseudo-inverse") {
    Rng rng(29);
    const SvdFactors f = svd(random_matrix(rng, 6, 3));
    const Matrix p = f.u * transpose(f.u);
    const Matrix pinv = pseudo_inverse(p);
    CHECK(frobenius_norm(pinv - p) < 1e-10);
}

TEST_CASE("pseudo_inverse satisfies the Penrose identities") {
    Rng rng(31);
    const Matrix a = random_matrix(rng, 5, 3);
    const Matrix ap = pseudo_inverse(a);
    CHECK(frobenius_norm(a * ap * a - a) < 1e-10 * std::max(1.0, frobenius_norm(a)));
    CHECK(frobenius_norm(ap * a * ap - ap) < 1e-10 * std::max(1.0, frobenius_norm(ap)));
    CHECK(frobenius_norm(transpose(a * ap) - a * ap) < 1e-10);
    CHECK(frobenius_norm(transpose(ap * a) - ap * a) < 1e-10);
    // full column rank: A+ A = I
    CHECK(frobenius_norm(ap * a - Matrix::identity(3)) < 1e-10);
}

TEST_CASE("orthonormality defect") {
    CHECK(orthonormality_defect(Matrix::identity(4)) == 0.0);
    // u^T u = [[1,1],[1,1]]; subtracting I leaves [[0,1],[1,0]], whose
    // Frobenius norm is sqrt(2)
    const Matrix u(2, 2, {1, 1, 0, 0});
    CHECK(orthonormality_defect(u) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
    Rng rng(37);
    const SvdFactors f = svd(random_matrix(rng, 10, 7));
    CHECK(orthonormality_defect(f.u) <= 1e-10);
}

TEST_CASE("matrix plumbing: shape errors") {
    CHECK_THROWS_AS(Matrix(2, 2, {1.0, 2.0, 3.0}), ShapeError);
    CHECK_THROWS_AS(Matrix(2, 2) * Matrix(3, 2), ShapeError);
    CHECK_THROWS_AS(Matrix(2, 2) + Matrix(2, 3), ShapeError);
}
