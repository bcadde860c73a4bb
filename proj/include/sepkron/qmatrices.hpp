#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "sepkron/common.hpp"
#include "sepkron/linalg.hpp"

namespace sepkron {

// Deterministic combinatorial matrices encoding covariances of quadratic
// forms in a K x I matrix E of standard normals:
//   Cov(vec(E E^T))                    = 2I  * Q_K
//   Cov(vec(E E^T), vec(E^T E))        = 2sqrt(IK) * Q_{K,I}
//   Cov(vec(e e^T), vec(E E^T))        = 2sqrt(I)  * Qtilde_{R,K},  e = vec(E)
//   Cov(vec(e e^T), vec(E^T E))        = 2sqrt(K)  * Qbreve_{R,I},  R = KI

/// K^2 x K^2 symmetrizer-type matrix with entries in {0, 1/2, 1}. Equals
/// (identity + commutation_matrix(K,K)) / 2.
inline Eigen::MatrixXd build_q_sym(int k_dim) {
    if (k_dim < 1) throw ValidationError("build_q_sym: K must be >= 1");
    const Eigen::Index n = static_cast<Eigen::Index>(k_dim) * k_dim;
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 1; i <= n; ++i) {
        // i enumerates vec positions of a K x K matrix, 1-based.
        const Eigen::Index rem = (i - 1) % k_dim;
        const bool on_main_diag = (i - 1) / k_dim == rem;  // position (k,k)
        q(i - 1, i - 1) = on_main_diag ? 1.0 : 0.5;
        const Eigen::Index j = 1 + (i - 1 - rem) / k_dim + rem * k_dim;  // transposed position
        if (j != i) q(i - 1, j - 1) = 0.5;
    }
    return q;
}

/// K^2 x I^2 matrix whose nonzero entries, all equal to (KI)^{-1/2}, sit at
/// (diagonal position of K x K, diagonal position of I x I).
inline Eigen::MatrixXd build_q_cross(int k_dim, int i_dim) {
    if (k_dim < 1 || i_dim < 1)
        throw ValidationError("build_q_cross: K and I must be >= 1");
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(k_dim) * k_dim,
        static_cast<Eigen::Index>(i_dim) * i_dim);
    const double value = 1.0 / std::sqrt(static_cast<double>(k_dim) * i_dim);
    for (int k1 = 1; k1 <= k_dim; ++k1)
        for (int k2 = 1; k2 <= i_dim; ++k2)
            q(k1 + k_dim * (k1 - 1) - 1, k2 + i_dim * (k2 - 1) - 1) = value;
    return q;
}

namespace detail {

// Recovers (l, k, p, m) from the 1-based row index i of vec(e e^T), where
// e = vec(E): row a = m + (p-1)K pairs with column b = k + (l-1)K of e e^T,
// so i - 1 = (m-1) + (p-1)K + (k-1)KI + (l-1)K^2 I.
struct VecPairIndex {
    int l, k, p, m;
};

inline VecPairIndex split_quad_index(long long i, int k_dim, int i_dim) {
    const long long kk = static_cast<long long>(k_dim);
    const long long k2i = kk * kk * i_dim;
    const long long ki = kk * i_dim;
    VecPairIndex out;
    out.l = static_cast<int>(1 + (i - 1) / k2i);
    out.k = static_cast<int>(1 + (i - 1 - (out.l - 1) * k2i) / ki);
    out.p = static_cast<int>(1 + (i - 1 - (out.l - 1) * k2i - (out.k - 1) * ki) / kk);
    out.m = static_cast<int>(i - (out.l - 1) * k2i - (out.k - 1) * ki -
                             (out.p - 1) * kk);
    return out;
}

}  // namespace detail

/// (KI)^2 x K^2 matrix with nonzero values 1/(2 sqrt(I)) and 1/sqrt(I).
inline Eigen::MatrixXd build_q_tilde(int k_dim, int i_dim) {
    if (k_dim < 1 || i_dim < 1)
        throw ValidationError("build_q_tilde: K and I must be >= 1");
    const long long r = static_cast<long long>(k_dim) * i_dim;
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(r * r), static_cast<Eigen::Index>(k_dim) * k_dim);
    const double half = 1.0 / (2.0 * std::sqrt(static_cast<double>(i_dim)));
    const double full = 1.0 / std::sqrt(static_cast<double>(i_dim));
    for (long long i = 1; i <= r * r; ++i) {
        const auto ix = detail::split_quad_index(i, k_dim, i_dim);
        if (ix.p != ix.l) continue;
        if (ix.m != ix.k) {
            q(i - 1, ix.m + (ix.k - 1) * k_dim - 1) = half;
            q(i - 1, ix.k + (ix.m - 1) * k_dim - 1) = half;
        } else {
            q(i - 1, ix.m + (ix.m - 1) * k_dim - 1) = full;
        }
    }
    return q;
}

/// (KI)^2 x I^2 mirror of build_q_tilde with the roles of (m,k) and (p,l)
/// exchanged; nonzero values 1/(2 sqrt(K)) and 1/sqrt(K).
inline Eigen::MatrixXd build_q_breve(int k_dim, int i_dim) {
    if (k_dim < 1 || i_dim < 1)
        throw ValidationError("build_q_breve: K and I must be >= 1");
    const long long r = static_cast<long long>(k_dim) * i_dim;
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(r * r), static_cast<Eigen::Index>(i_dim) * i_dim);
    const double half = 1.0 / (2.0 * std::sqrt(static_cast<double>(k_dim)));
    const double full = 1.0 / std::sqrt(static_cast<double>(k_dim));
    for (long long i = 1; i <= r * r; ++i) {
        const auto ix = detail::split_quad_index(i, k_dim, i_dim);
        if (ix.m != ix.k) continue;
        if (ix.p != ix.l) {
            q(i - 1, ix.p + (ix.l - 1) * i_dim - 1) = half;
            q(i - 1, ix.l + (ix.p - 1) * i_dim - 1) = half;
        } else {
            q(i - 1, ix.l + (ix.l - 1) * i_dim - 1) = full;
        }
    }
    return q;
}

/// Default cap on K*I when materializing the full set (Qtilde alone has
/// (KI)^2 * K^2 entries).
inline constexpr int kDefaultMaxKronDim = 40;

struct QMatrixSet {
    int K = 0;
    int I = 0;
    int R = 0;
    Eigen::MatrixXd q_K;      // K^2 x K^2
    Eigen::MatrixXd q_I;      // I^2 x I^2
    Eigen::MatrixXd q_cross;  // K^2 x I^2
    Eigen::MatrixXd q_tilde;  // R^2 x K^2
    Eigen::MatrixXd q_breve;  // R^2 x I^2
    Eigen::MatrixXd q_R;      // R^2 x R^2
};

inline QMatrixSet build_q_set(int k_dim, int i_dim,
                              int max_kron_dim = kDefaultMaxKronDim) {
    if (k_dim < 1 || i_dim < 1)
        throw ValidationError("build_q_set: K and I must be >= 1");
    if (static_cast<long long>(k_dim) * i_dim > max_kron_dim)
        throw ValidationError(
            "build_q_set: K*I = " + std::to_string(k_dim * i_dim) +
            " exceeds the dense materialization guard (" +
            std::to_string(max_kron_dim) +
            "); raise max_kron_dim explicitly if this is intended");
    QMatrixSet set;
    set.K = k_dim;
    set.I = i_dim;
    set.R = k_dim * i_dim;
    set.q_K = build_q_sym(k_dim);
    set.q_I = build_q_sym(i_dim);
    set.q_cross = build_q_cross(k_dim, i_dim);
    set.q_tilde = build_q_tilde(k_dim, i_dim);
    set.q_breve = build_q_breve(k_dim, i_dim);
    set.q_R = build_q_sym(set.R);
    return set;
}

}  // namespace sepkron
