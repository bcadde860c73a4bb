#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "sepkron/common.hpp"

namespace sepkron {

/// Dense real symmetric matrix. Construction enforces exact (bitwise) entry
/// symmetry by averaging mirrored pairs once.
class SymMatrix {
  public:
    SymMatrix() = default;

    explicit SymMatrix(Eigen::MatrixXd a) : m_(std::move(a)) {
        if (m_.rows() != m_.cols())
            throw ValidationError("SymMatrix: matrix must be square, got " +
                                  std::to_string(m_.rows()) + "x" +
                                  std::to_string(m_.cols()));
        for (Eigen::Index j = 0; j < m_.cols(); ++j) {
            for (Eigen::Index i = 0; i < j; ++i) {
                const double v = 0.5 * (m_(i, j) + m_(j, i));
                m_(i, j) = v;
                m_(j, i) = v;
            }
        }
    }

    Eigen::Index dim() const { return m_.rows(); }
    const Eigen::MatrixXd& mat() const { return m_; }
    double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

  private:
    Eigen::MatrixXd m_;
};

/// Column-stacking of a K x I matrix into a length-KI vector (space-fastest
/// ordering; fixed project-wide).
inline Eigen::VectorXd vec(const Eigen::MatrixXd& a) {
    if (a.rows() < 1 || a.cols() < 1)
        throw ValidationError("vec: matrix must have positive dimensions");
    return Eigen::Map<const Eigen::VectorXd>(a.data(), a.size());
}

/// Inverse of vec: reshapes a length rows*cols vector into a matrix column by
/// column.
inline Eigen::MatrixXd unvec(const Eigen::VectorXd& v, Eigen::Index rows,
                             Eigen::Index cols) {
    if (rows < 1 || cols < 1 || v.size() != rows * cols)
        throw ValidationError("unvec: vector length " + std::to_string(v.size()) +
                              " does not match " + std::to_string(rows) + "x" +
                              std::to_string(cols));
    return Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, cols);
}

/// Kronecker product: block (i,j) of the result is a(i,j) * b.
inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.size() == 0 || b.size() == 0)
        throw ValidationError("kron: matrices must have positive dimensions");
    Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

inline Eigen::MatrixXd kron(const SymMatrix& a, const SymMatrix& b) {
    return kron(a.mat(), b.mat());
}

/// Permutation matrix C with C * vec(A) = vec(A^T) for every m x n matrix A.
inline Eigen::MatrixXd commutation_matrix(int m, int n) {
    if (m < 1 || n < 1)
        throw ValidationError("commutation_matrix: dimensions must be >= 1");
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m) * n,
                                              static_cast<Eigen::Index>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            c(j + i * n, i + j * m) = 1.0;
    return c;
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending. Each
/// eigenvector is signed so its entry of largest magnitude is positive (ties
/// broken by lowest index), making results deterministic across runs.
struct SymEig {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
};

inline SymEig sym_eig(const SymMatrix& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a.mat());
    if (solver.info() != Eigen::Success)
        throw NumericalError("sym_eig: eigendecomposition failed");
    SymEig out{solver.eigenvalues(), solver.eigenvectors()};
    for (Eigen::Index j = 0; j < out.vectors.cols(); ++j) {
        Eigen::Index arg = 0;
        double best = std::abs(out.vectors(0, j));
        for (Eigen::Index i = 1; i < out.vectors.rows(); ++i) {
            const double v = std::abs(out.vectors(i, j));
            if (v > best) {
                best = v;
                arg = i;
            }
        }
        if (out.vectors(arg, j) < 0.0) out.vectors.col(j) = -out.vectors.col(j);
    }
    return out;
}

struct PinvResult {
    SymMatrix pseudo_inverse;
    int rank = 0;
    std::vector<double> eigenvalues_kept;
    double cutoff_used = 0.0;
};

/// Eigendecomposition-based Moore-Penrose inverse. Eigenvalues with
/// |lambda| > rtol * max|lambda| are inverted, the rest are zeroed.
inline PinvResult sym_pinv(const SymMatrix& a, double rtol = kDefaultRtol) {
    if (!(rtol > 0.0 && rtol < 1.0))
        throw ValidationError("sym_pinv: rtol must lie in (0, 1)");
    if (!a.mat().allFinite())
        throw ValidationError("sym_pinv: matrix has non-finite entries");
    const SymEig eig = sym_eig(a);
    const double amax = eig.values.size() ? eig.values.cwiseAbs().maxCoeff() : 0.0;
    const double cutoff = rtol * amax;
    PinvResult out;
    out.cutoff_used = cutoff;
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(eig.values.size());
    for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
        if (std::abs(eig.values[i]) > cutoff) {
            inv[i] = 1.0 / eig.values[i];
            out.eigenvalues_kept.push_back(eig.values[i]);
            ++out.rank;
        }
    }
    out.pseudo_inverse =
        SymMatrix(eig.vectors * inv.asDiagonal() * eig.vectors.transpose());
    return out;
}

/// Symmetric inverse square root via eigendecomposition; acts as a
/// pseudo-inverse root on the numerical range of A. Rejects matrices with a
/// kept negative eigenvalue (not PSD up to rtol).
inline SymMatrix inv_sqrt(const SymMatrix& a, double rtol = kDefaultRtol) {
    if (!(rtol > 0.0 && rtol < 1.0))
        throw ValidationError("inv_sqrt: rtol must lie in (0, 1)");
    if (!a.mat().allFinite())
        throw ValidationError("inv_sqrt: matrix has non-finite entries");
    const SymEig eig = sym_eig(a);
    const double amax = eig.values.size() ? eig.values.cwiseAbs().maxCoeff() : 0.0;
    const double cutoff = rtol * amax;
    Eigen::VectorXd root = Eigen::VectorXd::Zero(eig.values.size());
    for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
        const double lam = eig.values[i];
        if (std::abs(lam) > cutoff) {
            if (lam < 0.0)
                throw NumericalError(
                    "inv_sqrt: matrix has negative eigenvalue " +
                    std::to_string(lam) + " beyond tolerance (not PSD)");
            root[i] = 1.0 / std::sqrt(lam);
        }
    }
    return SymMatrix(eig.vectors * root.asDiagonal() * eig.vectors.transpose());
}

/// log(det A) for symmetric positive definite A via Cholesky. `what` names the
/// matrix in the failure diagnostic.
inline double logdet_spd(const Eigen::MatrixXd& a, const std::string& what) {
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
        throw NumericalError("logdet: " + what + " is not positive definite");
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// Inverse of a symmetric matrix with an explicit conditioning guard.
/// Throws NumericalError when the smallest eigenvalue is non-positive or the
/// condition number exceeds `cond_limit`.
inline Eigen::MatrixXd sym_inverse_checked(const SymMatrix& a, double cond_limit,
                                           const std::string& what) {
    const SymEig eig = sym_eig(a);
    const double lam_min = eig.values.minCoeff();
    const double lam_max = eig.values.maxCoeff();
    if (!(lam_min > 0.0) || lam_max / lam_min > cond_limit)
        throw NumericalError(what + " is singular or ill-conditioned (eigenvalue range [" +
                             std::to_string(lam_min) + ", " + std::to_string(lam_max) +
                             "])");
    return eig.vectors * eig.values.cwiseInverse().asDiagonal() *
           eig.vectors.transpose();
}

}  // namespace sepkron
