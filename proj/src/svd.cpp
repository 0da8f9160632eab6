// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense SVD via Householder bidiagonalization and implicit-shift QR on the
// bidiagonal, following the classic JAMA/EISPACK formulation. Kept
// self-contained and purely sequential so equal inputs give bit-equal
// factors across runs.

#include "lorax/svd.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lorax/errors.hpp"

namespace lorax {

namespace {

struct ThinSvd {
    Matrix u;               // m x n
    std::vector<double> s;  // n
    Matrix v;               // n x n
};

// Requires rows >= cols.
ThinSvd jama_svd(Matrix a) {
    const int m = static_cast<int>(a.rows());
    const int n = static_cast<int>(a.cols());
    const int nu = n;

    std::vector<double> s(static_cast<std::size_t>(n), 0.0);
    Matrix u(static_cast<std::size_t>(m), static_cast<std::size_t>(nu));
    Matrix v(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
    std::vector<double> e(static_cast<std::size_t>(n), 0.0);
    std::vector<double> work(static_cast<std::size_t>(m), 0.0);

    // Reduce to bidiagonal form, diagonal in s, superdiagonal in e.
    const int nct = std::min(m - 1, n);
    const int nrt = std::max(0, std::min(n - 2, m));
    for (int k = 0; k < std::max(nct, nrt); ++k) {
        if (k < nct) {
            s[k] = 0.0;
            for (int i = k; i < m; ++i) s[k] = std::hypot(s[k], a(i, k));
            if (s[k] != 0.0) {
                if (a(k, k) < 0.0) s[k] = -s[k];
                for (int i = k; i < m; ++i) a(i, k) /= s[k];
                a(k, k) += 1.0;
            }
            s[k] = -s[k];
        }
        for (int j = k + 1; j < n; ++j) {
            if (k < nct && s[k] != 0.0) {
                double t = 0.0;
                for (int i = k; i < m; ++i) t += a(i, k) * a(i, j);
                t = -t / a(k, k);
                for (int i = k; i < m; ++i) a(i, j) += t * a(i, k);
            }
            e[j] = a(k, j);
        }
        if (k < nct) {
            for (int i = k; i < m; ++i) u(i, k) = a(i, k);
        }
        if (k < nrt) {
            e[k] = 0.0;
            for (int i = k + 1; i < n; ++i) e[k] = std::hypot(e[k], e[i]);
            if (e[k] != 0.0) {
                if (e[k + 1] < 0.0) e[k] = -e[k];
                for (int i = k + 1; i < n; ++i) e[i] /= e[k];
                e[k + 1] += 1.0;
            }
            e[k] = -e[k];
            if (k + 1 < m && e[k] != 0.0) {
                for (int i = k + 1; i < m; ++i) work[i] = 0.0;
                for (int j = k + 1; j < n; ++j)
                    for (int i = k + 1; i < m; ++i) work[i] += e[j] * a(i, j);
                for (int j = k + 1; j < n; ++j) {
                    const double t = -e[j] / e[k + 1];
                    for (int i = k + 1; i < m; ++i) a(i, j) += t * work[i];
                }
            }
            for (int i = k + 1; i < n; ++i) v(i, k) = e[i];
        }
    }

    // Final bidiagonal matrix of order p.
    int p = std::min(n, m + 1);
    if (nct < n) s[nct] = a(nct, nct);
    if (m < p) s[p - 1] = 0.0;
    if (nrt + 1 < p) e[nrt] = a(nrt, p - 1);
    e[p - 1] = 0.0;

    // Accumulate U.
    for (int j = nct; j < nu; ++j) {
        for (int i = 0; i < m; ++i) u(i, j) = 0.0;
        u(j, j) = 1.0;
    }
    for (int k = nct - 1; k >= 0; --k) {
        if (s[k] != 0.0) {
            for (int j = k + 1; j < nu; ++j) {
                double t = 0.0;
                for (int i = k; i < m; ++i) t += u(i, k) * u(i, j);
                t = -t / u(k, k);
                for (int i = k; i < m; ++i) u(i, j) += t * u(i, k);
            }
            for (int i = k; i < m; ++i) u(i, k) = -u(i, k);
            u(k, k) = 1.0 + u(k, k);
            for (int i = 0; i < k - 1; ++i) u(i, k) = 0.0;
        } else {
            for (int i = 0; i < m; ++i) u(i, k) = 0.0;
            u(k, k) = 1.0;
        }
    }

    // Accumulate V.
    for (int k = n - 1; k >= 0; --k) {
        if (k < nrt && e[k] != 0.0) {
            for (int j = k + 1; j < nu; ++j) {
                double t = 0.0;
                for (int i = k + 1; i < n; ++i) t += v(i, k) * v(i, j);
                t = -t / v(k + 1, k);
                for (int i = k + 1; i < n; ++i) v(i, j) += t * v(i, k);
            }
        }
        for (int i = 0; i < n; ++i) v(i, k) = 0.0;
        v(k, k) = 1.0;
    }

    // Implicit-shift QR iteration on the bidiagonal.
    const int pp = p - 1;
    int iter = 0;
    const double eps = std::pow(2.0, -52.0);
    const double tiny = std::pow(2.0, -966.0);
    while (p > 0) {
        if (iter > 500) throw NumericsError("svd: QR iteration failed to converge");
        int k, kase;

        for (k = p - 2; k >= -1; --k) {
            if (k == -1) break;
            if (std::abs(e[k]) <= tiny + eps * (std::abs(s[k]) + std::abs(s[k + 1]))) {
                e[k] = 0.0;
                break;
            }
        }
        if (k == p - 2) {
            kase = 4;
        } else {
            int ks;
            for (ks = p - 1; ks >= k; --ks) {
                if (ks == k) break;
                const double t = (ks != p ? std::abs(e[ks]) : 0.0) +
                                 (ks != k + 1 ? std::abs(e[ks - 1]) : 0.0);
                if (std::abs(s[ks]) <= tiny + eps * t) {
                    s[ks] = 0.0;
                    break;
                }
            }
            if (ks == k) {
                kase = 3;
            } else if (ks == p - 1) {
                kase = 1;
            } else {
                kase = 2;
                k = ks;
            }
        }
        ++k;

        switch (kase) {
            case 1: {  // deflate negligible s(p)
                double f = e[p - 2];
                e[p - 2] = 0.0;
                for (int j = p - 2; j >= k; --j) {
                    double t = std::hypot(s[j], f);
                    const double cs = s[j] / t;
                    const double sn = f / t;
                    s[j] = t;
                    if (j != k) {
                        f = -sn * e[j - 1];
                        e[j - 1] = cs * e[j - 1];
                    }
                    for (int i = 0; i < n; ++i) {
                        t = cs * v(i, j) + sn * v(i, p - 1);
                        v(i, p - 1) = -sn * v(i, j) + cs * v(i, p - 1);
                        v(i, j) = t;
                    }
                }
                break;
            }
            case 2: {  // split at negligible s(k)
                double f = e[k - 1];
                e[k - 1] = 0.0;
                for (int j = k; j < p; ++j) {
                    double t = std::hypot(s[j], f);
                    const double cs = s[j] / t;
                    const double sn = f / t;
                    s[j] = t;
                    f = -sn * e[j];
                    e[j] = cs * e[j];
                    for (int i = 0; i < m; ++i) {
                        t = cs * u(i, j) + sn * u(i, k - 1);
                        u(i, k - 1) = -sn * u(i, j) + cs * u(i, k - 1);
                        u(i, j) = t;
                    }
                }
                break;
            }
            case 3: {  // one QR step
                const double scale = std::max(
                    std::max(std::max(std::max(std::abs(s[p - 1]), std::abs(s[p - 2])),
                                      std::abs(e[p - 2])),
                             std::abs(s[k])),
                    std::abs(e[k]));
                const double sp = s[p - 1] / scale;
                const double spm1 = s[p - 2] / scale;
                const double epm1 = e[p - 2] / scale;
                const double sk = s[k] / scale;
                const double ek = e[k] / scale;
                const double b = ((spm1 + sp) * (spm1 - sp) + epm1 * epm1) / 2.0;
                const double c = (sp * epm1) * (sp * epm1);
                double shift = 0.0;
                if (b != 0.0 || c != 0.0) {
                    shift = std::sqrt(b * b + c);
                    if (b < 0.0) shift = -shift;
                    shift = c / (b + shift);
                }
                double f = (sk + sp) * (sk - sp) + shift;
                double g = sk * ek;

                for (int j = k; j < p - 1; ++j) {
                    double t = std::hypot(f, g);
                    double cs = f / t;
                    double sn = g / t;
                    if (j != k) e[j - 1] = t;
                    f = cs * s[j] + sn * e[j];
                    e[j] = cs * e[j] - sn * s[j];
                    g = sn * s[j + 1];
                    s[j + 1] = cs * s[j + 1];
                    for (int i = 0; i < n; ++i) {
                        t = cs * v(i, j) + sn * v(i, j + 1);
                        v(i, j + 1) = -sn * v(i, j) + cs * v(i, j + 1);
                        v(i, j) = t;
                    }
                    t = std::hypot(f, g);
                    cs = f / t;
                    sn = g / t;
                    s[j] = t;
                    f = cs * e[j] + sn * s[j + 1];
                    s[j + 1] = -sn * e[j] + cs * s[j + 1];
                    g = sn * e[j + 1];
                    e[j + 1] = cs * e[j + 1];
                    if (j < m - 1) {
                        for (int i = 0; i < m; ++i) {
                            t = cs * u(i, j) + sn * u(i, j + 1);
                            u(i, j + 1) = -sn * u(i, j) + cs * u(i, j + 1);
                            u(i, j) = t;
                        }
                    }
                }
                e[p - 2] = f;
                ++iter;
                break;
            }
            case 4: {  // convergence
                if (s[k] <= 0.0) {
                    s[k] = (s[k] < 0.0 ? -s[k] : 0.0);
                    for (int i = 0; i <= pp; ++i) v(i, k) = -v(i, k);
                }
                while (k < pp) {
                    if (s[k] >= s[k + 1]) break;
                    std::swap(s[k], s[k + 1]);
                    if (k < n - 1) {
                        for (int i = 0; i < n; ++i) std::swap(v(i, k), v(i, k + 1));
                    }
                    if (k < m - 1) {
                        for (int i = 0; i < m; ++i) std::swap(u(i, k), u(i, k + 1));
                    }
                    ++k;
                }
                iter = 0;
                --p;
                break;
            }
        }
    }

    return ThinSvd{std::move(u), std::move(s), std::move(v)};
}

// Makes the largest-magnitude entry of each U column nonnegative (lowest
// index wins ties); the matching V column carries the compensating sign.
void apply_sign_convention(Matrix& u, Matrix& v) {
    for (std::size_t j = 0; j < u.cols(); ++j) {
        std::size_t imax = 0;
        for (std::size_t i = 1; i < u.rows(); ++i) {
            if (std::abs(u(i, j)) > std::abs(u(imax, j))) imax = i;
        }
        if (u.rows() > 0 && u(imax, j) < 0.0) {
            for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
            for (std::size_t i = 0; i < v.rows(); ++i) v(i, j) = -v(i, j);
        }
    }
}

}  // namespace

Matrix SvdFactors::reconstruct() const {
    return scale_columns(u, sigma) * transpose(v);
}

SvdFactors svd(const Matrix& w) {
    if (!w.all_finite()) throw NumericsError("svd: input contains non-finite values");
    const std::size_t m = w.rows();
    const std::size_t n = w.cols();
    const std::size_t k = std::min(m, n);

    SvdFactors f;
    f.source_shape = {m, n};
    if (k == 0) {
        f.u = Matrix(m, 0);
        f.v = Matrix(n, 0);
        return f;
    }

    if (m >= n) {
        ThinSvd r = jama_svd(w);
        f.u = std::move(r.u);
        f.sigma = std::move(r.s);
        f.v = std::move(r.v);
    } else {
        ThinSvd r = jama_svd(transpose(w));
        f.u = std::move(r.v);  // m x m
        f.sigma = std::move(r.s);
        f.v = std::move(r.u);  // n x m
    }
    apply_sign_convention(f.u, f.v);
    return f;
}

SvdFactors truncated_svd(const Matrix& w, std::size_t r) {
    if (r == 0) throw InvalidRank("truncated_svd: rank must be >= 1");
    return truncate_factors(svd(w), r);
}

SvdFactors truncate_factors(const SvdFactors& f, std::size_t r) {
    const std::size_t k = std::min(r, f.rank());
    SvdFactors out;
    out.u = f.u.left_columns(k);
    out.v = f.v.left_columns(k);
    out.sigma.assign(f.sigma.begin(), f.sigma.begin() + static_cast<std::ptrdiff_t>(k));
    out.source_shape = f.source_shape;
    out.source_id = f.source_id;
    return out;
}

Matrix pseudo_inverse(const Matrix& m, double tol) {
    if (!m.all_finite()) throw NumericsError("pseudo_inverse: non-finite input");
    SvdFactors f = svd(m);
    const double cutoff = f.sigma.empty() ? 0.0 : tol * f.sigma.front();
    std::vector<double> inv(f.sigma.size(), 0.0);
    for (std::size_t i = 0; i < f.sigma.size(); ++i) {
        if (f.sigma[i] > cutoff && f.sigma[i] > 0.0) inv[i] = 1.0 / f.sigma[i];
    }
    return scale_columns(f.v, inv) * transpose(f.u);
}

double orthonormality_defect(const Matrix& u) {
    const Matrix g = transpose(u) * u;
    double sum = 0.0;
    for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) {
            const double d = g(i, j) - (i == j ? 1.0 : 0.0);
            sum += d * d;
        }
    }
    return std::sqrt(sum);
}

}  // namespace lorax
