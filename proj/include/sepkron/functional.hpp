#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sepkron/common.hpp"
#include "sepkron/linalg.hpp"
#include "sepkron/matnorm.hpp"

namespace sepkron {

/// N replicates of curves at K spatial locations observed on a common time
/// grid. values[n] is K x T_grid; coords holds one (x, y) row per location.
class CurvePanel {
  public:
    CurvePanel(std::vector<Eigen::MatrixXd> values, Eigen::VectorXd grid,
               Eigen::MatrixXd coords)
        : values_(std::move(values)), grid_(std::move(grid)), coords_(std::move(coords)) {
        if (values_.empty()) throw ValidationError("CurvePanel: need at least one replicate");
        const Eigen::Index k = values_.front().rows();
        const Eigen::Index t = values_.front().cols();
        if (k < 1) throw ValidationError("CurvePanel: need at least one location");
        if (t < 2 || grid_.size() != t)
            throw ValidationError("CurvePanel: grid must match the time dimension (>= 2 points)");
        for (Eigen::Index i = 1; i < grid_.size(); ++i)
            if (!(grid_[i] > grid_[i - 1]))
                throw ValidationError("CurvePanel: grid must be strictly increasing");
        if (coords_.rows() != k || coords_.cols() != 2)
            throw ValidationError("CurvePanel: coords must be K x 2");
        for (const auto& v : values_) {
            if (v.rows() != k || v.cols() != t)
                throw ValidationError("CurvePanel: inconsistent replicate dimensions");
            if (!v.allFinite())
                throw ValidationError("CurvePanel: non-finite curve value");
        }
    }

    int n_replicates() const { return static_cast<int>(values_.size()); }
    int n_locations() const { return static_cast<int>(values_.front().rows()); }
    int n_grid() const { return static_cast<int>(grid_.size()); }
    const std::vector<Eigen::MatrixXd>& values() const { return values_; }
    const Eigen::MatrixXd& replicate(int n) const { return values_[static_cast<std::size_t>(n)]; }
    const Eigen::VectorXd& grid() const { return grid_; }
    const Eigen::MatrixXd& coords() const { return coords_; }

    /// Pointwise sample mean curve, K x T_grid.
    Eigen::MatrixXd mean_curve() const {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(values_.front().rows(),
                                                  values_.front().cols());
        for (const auto& v : values_) m += v;
        return m / static_cast<double>(values_.size());
    }

  private:
    std::vector<Eigen::MatrixXd> values_;
    Eigen::VectorXd grid_;
    Eigen::MatrixXd coords_;
};

/// Trapezoidal quadrature weights on an arbitrary strictly increasing grid.
inline Eigen::VectorXd trapezoid_weights(const Eigen::VectorXd& grid) {
    const Eigen::Index t = grid.size();
    if (t < 2) throw ValidationError("trapezoid_weights: need at least two grid points");
    Eigen::VectorXd w = Eigen::VectorXd::Zero(t);
    for (Eigen::Index i = 0; i + 1 < t; ++i) {
        const double h = 0.5 * (grid[i + 1] - grid[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    return w;
}

enum class BasisKind { fourier, data_driven };

/// Orthonormal (under the panel's quadrature rule) basis functions evaluated
/// on the grid, one row per function.
struct BasisSpec {
    BasisKind kind = BasisKind::fourier;
    int J = 0;
    std::optional<double> threshold;
    Eigen::MatrixXd functions;  // J x T_grid
};

struct ReductionResult {
    ReplicatedMatrixSample scores;  // K x J, or L x J for space+time reduction
    BasisSpec basis;
    std::optional<Eigen::MatrixXd> spatial_modes;  // L x K, rows orthonormal
    int J = 0;
    std::optional<int> L;
    double variance_explained_time = 0.0;
    std::optional<double> variance_explained_space;
    std::vector<std::string> warnings;
};

namespace detail {

/// Gram-Schmidt against the quadrature inner product, with one
/// reorthogonalization pass. Returns however many functions stayed
/// independent (rows of the result).
inline Eigen::MatrixXd quadrature_orthonormalize(const Eigen::MatrixXd& raw,
                                                 const Eigen::VectorXd& w) {
    Eigen::MatrixXd basis(raw.rows(), raw.cols());
    Eigen::Index kept = 0;
    for (Eigen::Index j = 0; j < raw.rows(); ++j) {
        Eigen::VectorXd u = raw.row(j).transpose();
        const double raw_norm = std::sqrt(u.dot(w.cwiseProduct(u)));
        for (int pass = 0; pass < 2; ++pass)
            for (Eigen::Index i = 0; i < kept; ++i) {
                const Eigen::VectorXd b = basis.row(i).transpose();
                u -= b.dot(w.cwiseProduct(u)) * b;
            }
        const double norm = std::sqrt(u.dot(w.cwiseProduct(u)));
        if (!(norm > 1e-10 * (raw_norm > 0.0 ? raw_norm : 1.0))) continue;
        basis.row(kept++) = (u / norm).transpose();
    }
    return basis.topRows(kept);
}

/// First J trigonometric functions (constant + sine/cosine pairs) on the grid
/// rescaled to [0, 1], orthonormalized under the quadrature rule.
inline Eigen::MatrixXd fourier_basis(const Eigen::VectorXd& grid, int count) {
    const Eigen::Index t = grid.size();
    const double lo = grid[0];
    const double span = grid[t - 1] - grid[0];
    Eigen::MatrixXd raw(count, t);
    for (Eigen::Index i = 0; i < t; ++i) {
        const double x = (grid[i] - lo) / span;
        for (int j = 0; j < count; ++j) {
            if (j == 0)
                raw(j, i) = 1.0;
            else if (j % 2 == 1)
                raw(j, i) = std::sqrt(2.0) * std::sin(2.0 * M_PI * ((j + 1) / 2) * x);
            else
                raw(j, i) = std::sqrt(2.0) * std::cos(2.0 * M_PI * (j / 2) * x);
        }
    }
    return quadrature_orthonormalize(raw, trapezoid_weights(grid));
}

/// Eigenpairs of the covariance operator with kernel matrix `cov` on the grid,
/// solved in the quadrature geometry: W^{1/2} C W^{1/2} y = lambda y, basis
/// rows v = W^{-1/2} y are quadrature-orthonormal. Returned in descending
/// eigenvalue order with the deterministic sign convention.
struct QuadEig {
    Eigen::VectorXd values;     // descending
    Eigen::MatrixXd functions;  // one row per eigenfunction
};

inline QuadEig quadrature_eig(const SymMatrix& cov, const Eigen::VectorXd& w) {
    const Eigen::VectorXd ws = w.cwiseSqrt();
    const SymMatrix a(ws.asDiagonal() * cov.mat() * ws.asDiagonal());
    const SymEig eig = sym_eig(a);
    QuadEig out;
    out.values = eig.values.reverse();
    out.functions.resize(eig.vectors.cols(), eig.vectors.rows());
    for (Eigen::Index j = 0; j < eig.vectors.cols(); ++j)
        out.functions.row(j) =
            (eig.vectors.col(eig.vectors.cols() - 1 - j).cwiseQuotient(ws)).transpose();
    return out;
}

inline std::vector<Eigen::MatrixXd> centered_curves(const CurvePanel& panel) {
    const Eigen::MatrixXd mean = panel.mean_curve();
    std::vector<Eigen::MatrixXd> out;
    out.reserve(static_cast<std::size_t>(panel.n_replicates()));
    for (const auto& v : panel.values()) out.push_back(v - mean);
    return out;
}

/// Minimal count whose leading eigenvalue mass reaches the threshold.
inline int count_for_fraction(const Eigen::VectorXd& values, double threshold) {
    const Eigen::VectorXd pos = values.cwiseMax(0.0);
    const double total = pos.sum();
    if (!(total > 0.0)) return 1;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < pos.size(); ++j) {
        acc += pos[j];
        if (acc / total >= threshold) return static_cast<int>(j) + 1;
    }
    return static_cast<int>(pos.size());
}

inline double fraction_for_count(const Eigen::VectorXd& values, int count) {
    const Eigen::VectorXd pos = values.cwiseMax(0.0);
    const double total = pos.sum();
    if (!(total > 0.0)) return 1.0;
    return pos.head(count).sum() / total;
}

/// Attaches a warning when eigenvalues adjacent to the retained block are
/// numerically tied; only the spanned subspace is then identified.
inline void warn_on_ties(const Eigen::VectorXd& values, int count,
                         std::vector<std::string>& warnings, const char* what) {
    const double scale = values.size() ? std::abs(values[0]) : 0.0;
    for (int j = 0; j + 1 < count && j + 1 < values.size(); ++j) {
        if (std::abs(values[j] - values[j + 1]) <= 1e-10 * scale) {
            warnings.push_back(std::string(what) +
                               ": repeated eigenvalues within tolerance; individual "
                               "components are identified only up to rotation");
            return;
        }
    }
}

}  // namespace detail

/// Projects each centered curve on a fixed trigonometric basis and keeps the
/// minimal J whose retained quadrature variance reaches `threshold` at every
/// location. A pinned J bypasses the threshold rule.
inline ReductionResult project_fixed_basis(const CurvePanel& panel, double threshold,
                                           std::optional<int> pinned_j = std::nullopt) {
    if (!pinned_j && !(threshold > 0.0 && threshold < 1.0))
        throw ValidationError("project_fixed_basis: threshold must lie in (0, 1)");
    const int n = panel.n_replicates();
    const int k = panel.n_locations();
    const int t = panel.n_grid();
    const Eigen::VectorXd w = trapezoid_weights(panel.grid());
    const Eigen::MatrixXd basis = detail::fourier_basis(panel.grid(), t);
    const int j_max = static_cast<int>(basis.rows());
    if (pinned_j && (*pinned_j < 1 || *pinned_j > j_max))
        throw ValidationError("project_fixed_basis: pinned J must lie in [1, " +
                              std::to_string(j_max) + "]");

    const auto centered = detail::centered_curves(panel);
    const Eigen::MatrixXd proj = w.asDiagonal() * basis.transpose();  // T x Jmax
    std::vector<Eigen::MatrixXd> all_scores;
    all_scores.reserve(static_cast<std::size_t>(n));
    for (const auto& c : centered) all_scores.push_back(c * proj);

    Eigen::VectorXd total = Eigen::VectorXd::Zero(k);
    for (const auto& c : centered)
        total += (c.array().square().matrix() * w) / static_cast<double>(n);
    Eigen::MatrixXd retained = Eigen::MatrixXd::Zero(k, j_max);  // cumulative in J
    for (const auto& s : all_scores)
        retained += s.array().square().matrix() / static_cast<double>(n);
    for (int j = 1; j < j_max; ++j) retained.col(j) += retained.col(j - 1);

    auto min_fraction = [&](int j_count) {
        double worst = 1.0;
        for (int loc = 0; loc < k; ++loc) {
            if (!(total[loc] > 0.0)) continue;  // flat location: fully explained
            worst = std::min(worst, retained(loc, j_count - 1) / total[loc]);
        }
        return worst;
    };

    int j_sel = 0;
    if (pinned_j) {
        j_sel = *pinned_j;
    } else {
        for (int j = 1; j <= j_max; ++j) {
            if (min_fraction(j) >= threshold) {
                j_sel = j;
                break;
            }
        }
        if (j_sel == 0)
            throw ValidationError(
                "project_fixed_basis: threshold " + std::to_string(threshold) +
                " unattainable with J <= " + std::to_string(j_max) +
                " (max attainable fraction " + std::to_string(min_fraction(j_max)) + ")");
    }

    std::vector<Eigen::MatrixXd> scores;
    scores.reserve(static_cast<std::size_t>(n));
    for (const auto& s : all_scores) scores.push_back(s.leftCols(j_sel));

    ReductionResult out{ReplicatedMatrixSample(std::move(scores)),
                        BasisSpec{BasisKind::fourier, j_sel,
                                  pinned_j ? std::optional<double>() : threshold,
                                  basis.topRows(j_sel)},
                        std::nullopt,
                        j_sel,
                        std::nullopt,
                        min_fraction(j_sel),
                        std::nullopt,
                        {}};
    return out;
}

/// Observer invoked once per iteration with the U-weighted temporal
/// covariance (on the grid) and the updated spatial factor.
using BasisIterationObserver =
    std::function<void(int iteration, const Eigen::MatrixXd& temporal_cov,
                       const SymMatrix& u)>;

/// Alternating estimation of a data-driven temporal basis: the pooled
/// U-weighted temporal covariance is eigendecomposed by quadrature, scores are
/// eigenvalue-standardized to update the spatial factor (trace K), and the
/// loop runs until U stabilizes. The final scores feed the multivariate tests.
inline ReductionResult data_driven_basis(const CurvePanel& panel,
                                         double threshold = 0.85, double tol = 1e-6,
                                         int max_iter = 50,
                                         std::optional<int> pinned_j = std::nullopt,
                                         const BasisIterationObserver& observer = {}) {
    if (!pinned_j && !(threshold > 0.0 && threshold < 1.0))
        throw ValidationError("data_driven_basis: threshold must lie in (0, 1)");
    if (max_iter < 1) throw ValidationError("data_driven_basis: max_iter must be >= 1");
    const int n = panel.n_replicates();
    const int k = panel.n_locations();
    const Eigen::VectorXd w = trapezoid_weights(panel.grid());
    const auto centered = detail::centered_curves(panel);

    constexpr double kCondLimit = 1e12;
    SymMatrix u_cur(Eigen::MatrixXd::Identity(k, k));
    detail::QuadEig eig;
    int j_sel = 0;
    std::vector<Eigen::MatrixXd> scores;
    bool converged = false;
    std::vector<std::string> warnings;

    for (int iter = 1; iter <= max_iter; ++iter) {
        Eigen::MatrixXd u_inv;
        try {
            u_inv = sym_inverse_checked(u_cur, kCondLimit, "data_driven_basis: spatial factor");
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " at iteration " +
                                 std::to_string(iter));
        }
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(panel.n_grid(), panel.n_grid());
        for (const auto& c : centered) cov.noalias() += c.transpose() * u_inv * c;
        cov /= static_cast<double>(n) * k;
        if (observer) observer(iter, cov, u_cur);
        eig = detail::quadrature_eig(SymMatrix(std::move(cov)), w);

        int j_lim = 0;  // positive, numerically meaningful eigenvalues
        const double lead = eig.values.size() ? std::max(eig.values[0], 0.0) : 0.0;
        while (j_lim < eig.values.size() && eig.values[j_lim] > 1e-12 * lead) ++j_lim;
        if (j_lim == 0)
            throw NumericalError("data_driven_basis: temporal covariance is numerically zero");
        if (pinned_j && *pinned_j > j_lim)
            throw ValidationError("data_driven_basis: pinned J exceeds the " +
                                  std::to_string(j_lim) + " meaningful components");
        j_sel = pinned_j ? *pinned_j
                         : std::min(detail::count_for_fraction(eig.values, threshold), j_lim);

        const Eigen::MatrixXd proj =
            w.asDiagonal() * eig.functions.topRows(j_sel).transpose();  // T x J
        scores.clear();
        scores.reserve(static_cast<std::size_t>(n));
        for (const auto& c : centered) scores.push_back(c * proj);

        const Eigen::VectorXd inv_lambda = eig.values.head(j_sel).cwiseInverse();
        Eigen::MatrixXd u_new = Eigen::MatrixXd::Zero(k, k);
        for (const auto& s : scores)
            u_new.noalias() += s * inv_lambda.asDiagonal() * s.transpose();
        u_new /= static_cast<double>(n) * j_sel;
        u_new *= static_cast<double>(k) / u_new.trace();
        const SymMatrix u_sym(u_new);

        const double rel = detail::rel_frobenius_change(u_sym.mat(), u_cur.mat());
        u_cur = u_sym;
        if (rel < tol) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw NumericalError("data_driven_basis: spatial factor did not converge within " +
                             std::to_string(max_iter) + " iterations");

    detail::warn_on_ties(eig.values, j_sel, warnings, "temporal eigenvalues");
    ReductionResult out{ReplicatedMatrixSample(std::move(scores)),
                        BasisSpec{BasisKind::data_driven, j_sel,
                                  pinned_j ? std::optional<double>() : threshold,
                                  eig.functions.topRows(j_sel)},
                        std::nullopt,
                        j_sel,
                        std::nullopt,
                        detail::fraction_for_count(eig.values, j_sel),
                        std::nullopt,
                        std::move(warnings)};
    return out;
}

/// Dimension reduction in both time and space: pooled FPCA for the temporal
/// basis, then multivariate PCA of the eigenvalue-standardized score vectors
/// for the spatial modes. Output scores are L x J and feed the multivariate
/// tests with (L, J) in place of (K, I).
inline ReductionResult reduce_space_time(const CurvePanel& panel, double tau_time = 0.8,
                                         double tau_space = 0.8,
                                         std::optional<int> pinned_j = std::nullopt,
                                         std::optional<int> pinned_l = std::nullopt) {
    if (!pinned_j && !(tau_time > 0.0 && tau_time < 1.0))
        throw ValidationError("reduce_space_time: tau_time must lie in (0, 1)");
    if (!pinned_l && !(tau_space > 0.0 && tau_space < 1.0))
        throw ValidationError("reduce_space_time: tau_space must lie in (0, 1)");
    const int n = panel.n_replicates();
    const int k = panel.n_locations();
    const Eigen::VectorXd w = trapezoid_weights(panel.grid());
    const auto centered = detail::centered_curves(panel);

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(panel.n_grid(), panel.n_grid());
    for (const auto& c : centered) cov.noalias() += c.transpose() * c;
    cov /= static_cast<double>(n) * k;
    const detail::QuadEig eig = detail::quadrature_eig(SymMatrix(std::move(cov)), w);

    int j_lim = 0;
    const double lead = eig.values.size() ? std::max(eig.values[0], 0.0) : 0.0;
    while (j_lim < eig.values.size() && eig.values[j_lim] > 1e-12 * lead) ++j_lim;
    if (j_lim == 0)
        throw NumericalError("reduce_space_time: pooled temporal covariance is numerically zero");
    if (pinned_j && (*pinned_j < 1 || *pinned_j > j_lim))
        throw ValidationError("reduce_space_time: pinned J must lie in [1, " +
                              std::to_string(j_lim) + "]");
    const int j_sel = pinned_j ? *pinned_j
                               : std::min(detail::count_for_fraction(eig.values, tau_time), j_lim);

    const Eigen::MatrixXd proj = w.asDiagonal() * eig.functions.topRows(j_sel).transpose();
    std::vector<Eigen::MatrixXd> xi;
    xi.reserve(static_cast<std::size_t>(n));
    for (const auto& c : centered) xi.push_back(c * proj);  // K x J

    const Eigen::VectorXd inv_lambda = eig.values.head(j_sel).cwiseInverse();
    Eigen::MatrixXd u_tilde = Eigen::MatrixXd::Zero(k, k);
    for (const auto& s : xi)
        u_tilde.noalias() += s * inv_lambda.asDiagonal() * s.transpose();
    u_tilde /= static_cast<double>(n) * j_sel;
    const SymEig spatial = sym_eig(SymMatrix(std::move(u_tilde)));
    const Eigen::VectorXd eta = spatial.values.reverse();  // descending

    if (pinned_l && (*pinned_l < 1 || *pinned_l > k))
        throw ValidationError("reduce_space_time: pinned L must lie in [1, " +
                              std::to_string(k) + "]");
    const int l_sel = pinned_l ? *pinned_l : detail::count_for_fraction(eta, tau_space);

    Eigen::MatrixXd modes(l_sel, k);  // rows are the leading eigenvectors u_l
    for (int l = 0; l < l_sel; ++l)
        modes.row(l) = spatial.vectors.col(k - 1 - l).transpose();

    std::vector<Eigen::MatrixXd> z;
    z.reserve(static_cast<std::size_t>(n));
    for (const auto& s : xi) z.push_back(modes * s);  // L x J

    std::vector<std::string> warnings;
    detail::warn_on_ties(eig.values, j_sel, warnings, "temporal eigenvalues");
    detail::warn_on_ties(eta, l_sel, warnings, "spatial eigenvalues");

    ReductionResult out{ReplicatedMatrixSample(std::move(z)),
                        BasisSpec{BasisKind::data_driven, j_sel,
                                  pinned_j ? std::optional<double>() : tau_time,
                                  eig.functions.topRows(j_sel)},
                        std::move(modes),
                        j_sel,
                        l_sel,
                        detail::fraction_for_count(eig.values, j_sel),
                        detail::fraction_for_count(eta, l_sel),
                        std::move(warnings)};
    return out;
}

}  // namespace sepkron
