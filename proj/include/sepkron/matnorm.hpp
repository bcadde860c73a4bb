#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sepkron/common.hpp"
#include "sepkron/linalg.hpp"

namespace sepkron {

/// N replicates of a K x I real matrix; rows index space, columns index time
/// (or a transformed time index after dimension reduction).
class ReplicatedMatrixSample {
  public:
    explicit ReplicatedMatrixSample(std::vector<Eigen::MatrixXd> data)
        : data_(std::move(data)) {
        if (data_.size() < 2)
            throw ValidationError("ReplicatedMatrixSample: need N >= 2 replicates");
        const Eigen::Index rows = data_.front().rows();
        const Eigen::Index cols = data_.front().cols();
        if (rows < 1 || cols < 1)
            throw ValidationError("ReplicatedMatrixSample: replicate dimensions must be positive");
        for (const auto& x : data_) {
            if (x.rows() != rows || x.cols() != cols)
                throw ValidationError("ReplicatedMatrixSample: inconsistent replicate dimensions");
            if (!x.allFinite())
                throw ValidationError("ReplicatedMatrixSample: non-finite entry in data");
        }
    }

    int n_replicates() const { return static_cast<int>(data_.size()); }
    int rows() const { return static_cast<int>(data_.front().rows()); }
    int cols() const { return static_cast<int>(data_.front().cols()); }
    const std::vector<Eigen::MatrixXd>& data() const { return data_; }
    const Eigen::MatrixXd& replicate(int n) const { return data_[static_cast<std::size_t>(n)]; }

  private:
    std::vector<Eigen::MatrixXd> data_;
};

struct FullCovEstimate {
    SymMatrix sigma_hat;    // (KI) x (KI), divisor N
    Eigen::MatrixXd m_hat;  // K x I sample mean
};

/// Sample mean and the unrestricted MLE covariance of vec(X_n - M_hat)
/// (divisor N, not N-1).
inline FullCovEstimate estimate_mean_and_sigma(const ReplicatedMatrixSample& sample) {
    const int n = sample.n_replicates();
    const Eigen::Index dim =
        static_cast<Eigen::Index>(sample.rows()) * sample.cols();
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(sample.rows(), sample.cols());
    for (const auto& x : sample.data()) mean += x;
    mean /= static_cast<double>(n);

    Eigen::MatrixXd centered(dim, n);
    for (int i = 0; i < n; ++i)
        centered.col(i) = vec(sample.replicate(i) - mean);
    Eigen::MatrixXd sigma = (centered * centered.transpose()) / static_cast<double>(n);
    return FullCovEstimate{SymMatrix(std::move(sigma)), std::move(mean)};
}

struct SeparableCovEstimate {
    SymMatrix u_hat;  // K x K, trace normalized to K
    SymMatrix v_hat;  // I x I
    int iterations = 0;
    bool converged = false;
    double final_rel_change = 0.0;
};

/// Observer invoked after each outer flip-flop iteration with the current
/// normalized (U, V) pair; used for likelihood-monotonicity diagnostics.
using FlipFlopObserver =
    std::function<void(int iteration, const SymMatrix& u, const SymMatrix& v)>;

namespace detail {

inline double rel_frobenius_change(const Eigen::MatrixXd& current,
                                   const Eigen::MatrixXd& previous) {
    const double denom = previous.norm();
    return (current - previous).norm() / (denom > 0.0 ? denom : 1.0);
}

}  // namespace detail

/// Alternating maximum-likelihood updates for the separable covariance:
/// starting from U_0 = I_K, iterate
///   V_i      = (NK)^{-1} sum_n (X_n - M)^T U_i^{-1} (X_n - M)
///   Utilde   = (NI)^{-1} sum_n (X_n - M) V_i^{-1} (X_n - M)^T
///   U_{i+1}  = K * Utilde / tr(Utilde)
/// until the relative Frobenius change of both factors drops below tol.
/// Non-convergence returns the last iterate with converged=false; a singular
/// intermediate factor raises NumericalError naming the iteration.
inline SeparableCovEstimate flip_flop(const ReplicatedMatrixSample& sample,
                                      double tol = 1e-8, int max_iter = 200,
                                      const FlipFlopObserver& observer = {}) {
    if (max_iter < 1) throw ValidationError("flip_flop: max_iter must be >= 1");
    const int n = sample.n_replicates();
    const int k_dim = sample.rows();
    const int i_dim = sample.cols();
    if (static_cast<long long>(n) * i_dim <= k_dim ||
        static_cast<long long>(n) * k_dim <= i_dim)
        throw ValidationError(
            "flip_flop: requires N*I > K and N*K > I (got N=" + std::to_string(n) +
            ", K=" + std::to_string(k_dim) + ", I=" + std::to_string(i_dim) + ")");

    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(k_dim, i_dim);
    for (const auto& x : sample.data()) mean += x;
    mean /= static_cast<double>(n);
    std::vector<Eigen::MatrixXd> centered;
    centered.reserve(static_cast<std::size_t>(n));
    for (const auto& x : sample.data()) centered.push_back(x - mean);

    constexpr double kCondLimit = 1e12;
    SymMatrix u_cur(Eigen::MatrixXd::Identity(k_dim, k_dim));
    Eigen::MatrixXd v_prev;
    SeparableCovEstimate est;
    for (int iter = 1; iter <= max_iter; ++iter) {
        Eigen::MatrixXd u_inv;
        try {
            u_inv = sym_inverse_checked(u_cur, kCondLimit, "flip_flop: spatial factor");
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " at iteration " +
                                 std::to_string(iter));
        }
        Eigen::MatrixXd v_new = Eigen::MatrixXd::Zero(i_dim, i_dim);
        for (const auto& x : centered) v_new.noalias() += x.transpose() * u_inv * x;
        v_new /= static_cast<double>(n) * k_dim;
        const SymMatrix v_sym(v_new);

        Eigen::MatrixXd v_inv;
        try {
            v_inv = sym_inverse_checked(v_sym, kCondLimit, "flip_flop: temporal factor");
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " at iteration " +
                                 std::to_string(iter));
        }
        Eigen::MatrixXd u_new = Eigen::MatrixXd::Zero(k_dim, k_dim);
        for (const auto& x : centered) u_new.noalias() += x * v_inv * x.transpose();
        u_new /= static_cast<double>(n) * i_dim;
        u_new *= static_cast<double>(k_dim) / u_new.trace();
        const SymMatrix u_sym(u_new);

        double rel = detail::rel_frobenius_change(u_sym.mat(), u_cur.mat());
        if (iter > 1)
            rel = std::max(rel, detail::rel_frobenius_change(v_sym.mat(), v_prev));

        u_cur = u_sym;
        v_prev = v_sym.mat();
        est.u_hat = u_sym;
        est.v_hat = v_sym;
        est.iterations = iter;
        est.final_rel_change = rel;
        if (observer) observer(iter, est.u_hat, est.v_hat);
        if (iter > 1 && rel < tol) {
            est.converged = true;
            break;
        }
    }
    return est;
}

/// Matrix-normal log-likelihood at (M_hat, u, v); diagnostics only.
inline double gaussian_loglik(const ReplicatedMatrixSample& sample,
                              const SymMatrix& u, const SymMatrix& v) {
    const int n = sample.n_replicates();
    const int k_dim = sample.rows();
    const int i_dim = sample.cols();
    if (u.dim() != k_dim || v.dim() != i_dim)
        throw ValidationError("gaussian_loglik: factor dimensions do not match sample");
    Eigen::LLT<Eigen::MatrixXd> u_llt(u.mat());
    Eigen::LLT<Eigen::MatrixXd> v_llt(v.mat());
    if (u_llt.info() != Eigen::Success || v_llt.info() != Eigen::Success)
        throw ValidationError("gaussian_loglik: factors must be positive definite");
    const double logdet_u =
        2.0 * u_llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double logdet_v =
        2.0 * v_llt.matrixL().toDenseMatrix().diagonal().array().log().sum();

    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(k_dim, i_dim);
    for (const auto& x : sample.data()) mean += x;
    mean /= static_cast<double>(n);

    double quad = 0.0;
    for (const auto& x : sample.data()) {
        const Eigen::MatrixXd c = x - mean;
        quad += (u_llt.solve(c) * v_llt.solve(c.transpose())).trace();
    }
    const double dpi = std::log(2.0 * M_PI);
    return -0.5 * (static_cast<double>(n) * k_dim * i_dim * dpi +
                   static_cast<double>(n) * i_dim * logdet_u +
                   static_cast<double>(n) * k_dim * logdet_v + quad);
}

}  // namespace sepkron
