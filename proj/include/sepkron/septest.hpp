#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sepkron/asymptotics.hpp"
#include "sepkron/common.hpp"
#include "sepkron/linalg.hpp"
#include "sepkron/matnorm.hpp"
#include "sepkron/qmatrices.hpp"

namespace sepkron {

enum class TestKind { lrt_asymptotic, lrt_monte_carlo, frobenius, wald };

inline std::string to_string(TestKind kind) {
    switch (kind) {
        case TestKind::lrt_asymptotic: return "LRT_asymptotic";
        case TestKind::lrt_monte_carlo: return "LRT_monte_carlo";
        case TestKind::frobenius: return "Frobenius";
        case TestKind::wald: return "Wald";
    }
    throw ValidationError("unknown test kind");
}

inline TestKind test_kind_from_string(const std::string& name) {
    if (name == "LRT_asymptotic") return TestKind::lrt_asymptotic;
    if (name == "LRT_monte_carlo") return TestKind::lrt_monte_carlo;
    if (name == "Frobenius") return TestKind::frobenius;
    if (name == "Wald") return TestKind::wald;
    throw ValidationError("unknown test kind: " + name);
}

struct TestReport {
    TestKind kind = TestKind::lrt_asymptotic;
    double statistic = 0.0;
    std::optional<int> df;
    std::optional<std::vector<double>> weights;
    double p_value = 1.0;
    int k_eff = 0;
    int i_eff = 0;
    std::optional<int> mc_replicates;
    bool converged = false;
    int iterations = 0;
};

inline void to_json(nlohmann::json& j, const TestReport& r) {
    j = nlohmann::json{{"kind", to_string(r.kind)},
                       {"statistic", r.statistic},
                       {"df", r.df ? nlohmann::json(*r.df) : nlohmann::json()},
                       {"weights", r.weights ? nlohmann::json(*r.weights) : nlohmann::json()},
                       {"p_value", r.p_value},
                       {"K_eff", r.k_eff},
                       {"I_eff", r.i_eff},
                       {"mc_replicates",
                        r.mc_replicates ? nlohmann::json(*r.mc_replicates) : nlohmann::json()},
                       {"converged", r.converged},
                       {"iterations", r.iterations}};
}

inline void from_json(const nlohmann::json& j, TestReport& r) {
    r.kind = test_kind_from_string(j.at("kind").get<std::string>());
    r.statistic = j.at("statistic").get<double>();
    r.df = j.at("df").is_null() ? std::nullopt
                                : std::optional<int>(j.at("df").get<int>());
    r.weights = j.at("weights").is_null()
                    ? std::nullopt
                    : std::optional<std::vector<double>>(
                          j.at("weights").get<std::vector<double>>());
    r.p_value = j.at("p_value").get<double>();
    r.k_eff = j.at("K_eff").get<int>();
    r.i_eff = j.at("I_eff").get<int>();
    r.mc_replicates = j.at("mc_replicates").is_null()
                          ? std::nullopt
                          : std::optional<int>(j.at("mc_replicates").get<int>());
    r.converged = j.at("converged").get<bool>();
    r.iterations = j.at("iterations").get<int>();
}

inline std::string test_report_csv_header() {
    return "kind,statistic,df,weights,p_value,K_eff,I_eff,mc_replicates,converged,iterations";
}

inline std::string test_report_csv_row(const TestReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << to_string(r.kind) << ',' << r.statistic << ',';
    if (r.df) os << *r.df;
    os << ',';
    if (r.weights) {
        for (std::size_t i = 0; i < r.weights->size(); ++i) {
            if (i) os << ';';
            os << (*r.weights)[i];
        }
    }
    os << ',' << r.p_value << ',' << r.k_eff << ',' << r.i_eff << ',';
    if (r.mc_replicates) os << *r.mc_replicates;
    os << ',' << (r.converged ? "true" : "false") << ',' << r.iterations;
    return os.str();
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Likelihood-ratio statistic N (I logdet U-hat + K logdet V-hat - logdet
/// Sigma-hat), computed through Cholesky log-determinants. Vanishes exactly
/// when Sigma-hat equals the fitted Kronecker product.
inline double stat_lrt(const SeparableCovEstimate& sep, const FullCovEstimate& full,
                       int n) {
    const int k_dim = static_cast<int>(sep.u_hat.dim());
    const int i_dim = static_cast<int>(sep.v_hat.dim());
    if (n <= k_dim * i_dim)
        throw NumericalError(
            "stat_lrt: unrestricted covariance estimate is singular; the statistic "
            "requires N > K*I (got N=" + std::to_string(n) +
            ", K*I=" + std::to_string(k_dim * i_dim) + ")");
    double logdet_sigma;
    try {
        logdet_sigma = logdet_spd(full.sigma_hat.mat(), "unrestricted covariance");
    } catch (const NumericalError&) {
        throw NumericalError(
            "stat_lrt: unrestricted covariance estimate is singular; the statistic "
            "requires N > K*I (got N=" + std::to_string(n) +
            ", K*I=" + std::to_string(k_dim * i_dim) + ")");
    }
    const double logdet_u = logdet_spd(sep.u_hat.mat(), "spatial factor");
    const double logdet_v = logdet_spd(sep.v_hat.mat(), "temporal factor");
    return n * (i_dim * logdet_u + k_dim * logdet_v - logdet_sigma);
}

/// N times the squared Frobenius norm of V-hat (x) U-hat - Sigma-hat.
inline double stat_frobenius(const SeparableCovEstimate& sep,
                             const FullCovEstimate& full, int n) {
    const Eigen::MatrixXd diff = kron(sep.v_hat, sep.u_hat) - full.sigma_hat.mat();
    return n * diff.squaredNorm();
}

/// Wald-type quadratic form N d^T W^+ d with d = vec(V-hat (x) U-hat - Sigma-hat).
inline double stat_wald(const SeparableCovEstimate& sep, const FullCovEstimate& full,
                        const WMatrix& w, int n) {
    const Eigen::VectorXd d = vec(kron(sep.v_hat, sep.u_hat) - full.sigma_hat.mat());
    if (d.size() != w.w_pinv.dim())
        throw ValidationError("stat_wald: W dimension does not match the estimates");
    return n * d.dot(w.w_pinv.mat() * d);
}

// ---------------------------------------------------------------------------
// P-values
// ---------------------------------------------------------------------------

/// Upper-tail probability of the chi-square law with df degrees of freedom.
inline double pvalue_chisq(double stat, int df) {
    if (df < 0) throw ValidationError("pvalue_chisq: df must be >= 0");
    if (!std::isfinite(stat)) throw ValidationError("pvalue_chisq: statistic not finite");
    if (df == 0) return stat <= 1e-8 ? 1.0 : 0.0;
    if (stat <= 0.0) return 1.0;
    return boost::math::gamma_q(0.5 * df, 0.5 * stat);
}

enum class WeightedChisqMethod { imhof, monte_carlo };

namespace detail {

/// Imhof inversion for P(sum_r w_r Z_r^2 > x) with Z_r iid standard normal:
///   P = 1/2 + (1/pi) int_0^inf sin(theta(u)) / (u rho(u)) du,
///   theta(u) = (1/2) sum_r atan(w_r u) - x u / 2,
///   rho(u)   = prod_r (1 + w_r^2 u^2)^{1/4}.
/// The range [0, U*] comes from Imhof's truncation bound; each chunk covers a
/// few oscillations and is integrated with a 30-point Gauss-Legendre rule.
inline double imhof_tail(double stat, const std::vector<double>& weights) {
    const int r = static_cast<int>(weights.size());
    double sum_w = 0.0;
    double log_prod_w = 0.0;
    for (double w : weights) {
        sum_w += w;
        log_prod_w += std::log(w);
    }

    auto integrand = [&](double u) {
        if (u <= 0.0) return 0.5 * (sum_w - stat);  // removable 0/0 limit at u = 0
        double theta = -0.5 * stat * u;
        double log_rho = 0.0;
        for (double w : weights) {
            theta += 0.5 * std::atan(w * u);
            log_rho += 0.25 * std::log1p(w * w * u * u);
        }
        return std::sin(theta) / (u * std::exp(log_rho));
    };

    // Truncation point: (1/pi) * int_U^inf du / (u rho(u)) <= tail_tol using
    // (1 + w^2 u^2)^{1/4} >= sqrt(w u). Relax the target when the implied
    // range would make the oscillatory integral excessively long.
    const double max_freq = 0.5 * (std::abs(stat) + sum_w) + 1e-3;
    const double chunk_len = 8.0 * M_PI / max_freq;  // ~4 oscillations per chunk
    double upper = 0.0;
    for (double tail_tol : {1e-8, 1e-7, 1e-6}) {
        const double log_u = (2.0 / r) * (std::log(2.0 / (M_PI * r * tail_tol)) -
                                          0.5 * log_prod_w);
        upper = std::exp(log_u);
        if (upper / chunk_len < 4e5) break;
    }
    const long long n_chunks =
        std::max<long long>(1, static_cast<long long>(std::ceil(upper / chunk_len)));

    double integral = 0.0;
    for (long long c = 0; c < n_chunks; ++c) {
        const double a = c * chunk_len;
        const double b = std::min(upper, a + chunk_len);
        integral += boost::math::quadrature::gauss<double, 30>::integrate(integrand, a, b);
        if (b >= upper) break;
    }
    return std::clamp(0.5 + integral / M_PI, 0.0, 1.0);
}

}  // namespace detail

/// Tail probability P(sum_r gamma_r Z_r^2 > stat). Weights within
/// -rtol * max of zero are treated as zero; more negative ones are dropped
/// with a warning. Equal active weights reduce exactly to a chi-square tail.
/// Weights spanning more than 8 orders of magnitude fall back to Monte Carlo.
inline double pvalue_weighted_chisq(double stat, const std::vector<double>& weights,
                                    WeightedChisqMethod method = WeightedChisqMethod::imhof,
                                    int mc_draws = 200000,
                                    std::uint64_t seed = 0x5ec1a5ULL) {
    if (!std::isfinite(stat))
        throw ValidationError("pvalue_weighted_chisq: statistic not finite");
    double wabs_max = 0.0;
    for (double w : weights) wabs_max = std::max(wabs_max, std::abs(w));
    std::vector<double> active;
    active.reserve(weights.size());
    for (double w : weights) {
        if (w < -kDefaultRtol * wabs_max) {
            std::cerr << "pvalue_weighted_chisq: dropping negative weight " << w
                      << "\n";
            continue;
        }
        if (w > kDefaultRtol * wabs_max && w > 0.0) active.push_back(w);
    }
    if (active.empty()) return stat <= 1e-12 * (1.0 + std::abs(stat)) ? 1.0 : 0.0;
    if (stat <= 0.0) return 1.0;

    const auto [wmin, wmax] = std::minmax_element(active.begin(), active.end());
    if (*wmax - *wmin <= 1e-12 * *wmax)
        return pvalue_chisq(stat / *wmax, static_cast<int>(active.size()));
    if (*wmax / *wmin > 1e8) method = WeightedChisqMethod::monte_carlo;

    if (method == WeightedChisqMethod::imhof) return detail::imhof_tail(stat, active);

    if (mc_draws < 1)
        throw ValidationError("pvalue_weighted_chisq: mc_draws must be >= 1");
    auto rng = make_rng(seed, 0x77e16d);
    std::normal_distribution<double> gauss(0.0, 1.0);
    long long count = 0;
    for (int d = 0; d < mc_draws; ++d) {
        double q = 0.0;
        for (double w : active) {
            const double z = gauss(rng);
            q += w * z * z;
        }
        if (q > stat) ++count;
    }
    return static_cast<double>(count) / static_cast<double>(mc_draws);
}

// ---------------------------------------------------------------------------
// Test orchestration
// ---------------------------------------------------------------------------

struct TestConfig {
    double flipflop_tol = 1e-8;
    int flipflop_max_iter = 200;
    double rtol = kDefaultRtol;
    int max_kron_dim = kDefaultMaxGammaDim;  // guard on K*I for Gamma/W assembly
    WeightedChisqMethod weighted_method = WeightedChisqMethod::imhof;
    int weighted_mc_draws = 200000;
    int mc_reps = 999;  // Monte Carlo LRT replicates
    std::uint64_t seed = 0;
    int threads = 0;  // 0 = hardware concurrency
};

namespace detail {

inline double lrt_statistic_of(const ReplicatedMatrixSample& sample,
                               const TestConfig& cfg,
                               SeparableCovEstimate* fit_out = nullptr) {
    const SeparableCovEstimate fit =
        flip_flop(sample, cfg.flipflop_tol, cfg.flipflop_max_iter);
    const FullCovEstimate full = estimate_mean_and_sigma(sample);
    if (fit_out) *fit_out = fit;
    return stat_lrt(fit, full, sample.n_replicates());
}

}  // namespace detail

/// Monte Carlo reference test for the likelihood-ratio statistic: under the
/// separable Gaussian null its distribution does not depend on (mean, U, V),
/// so the reference sample is drawn with mean 0 and identity factors and run
/// through the same estimation pipeline. p = (1 + #{T* >= T}) / (reps + 1).
inline TestReport monte_carlo_lrt(const ReplicatedMatrixSample& sample, int reps,
                                  std::uint64_t seed, const TestConfig& cfg = {}) {
    if (reps < 500) throw ValidationError("monte_carlo_lrt: reps must be >= 500");
    const int n = sample.n_replicates();
    const int k_dim = sample.rows();
    const int i_dim = sample.cols();
    if (n <= k_dim * i_dim)
        throw ValidationError(
            "monte_carlo_lrt: requires N > K*I for a nonsingular unrestricted "
            "covariance (got N=" + std::to_string(n) + ", K*I=" +
            std::to_string(k_dim * i_dim) + ")");

    SeparableCovEstimate fit;
    const double observed = detail::lrt_statistic_of(sample, cfg, &fit);

    std::vector<double> reference(static_cast<std::size_t>(reps));
    parallel_for(reps, cfg.threads, [&](int r) {
        auto rng = make_rng(seed, 0x6d634c72, static_cast<std::uint64_t>(r));
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<Eigen::MatrixXd> draws;
        draws.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            Eigen::MatrixXd x(k_dim, i_dim);
            for (Eigen::Index c = 0; c < x.cols(); ++c)
                for (Eigen::Index rr = 0; rr < x.rows(); ++rr) x(rr, c) = gauss(rng);
            draws.push_back(std::move(x));
        }
        const ReplicatedMatrixSample null_sample(std::move(draws));
        reference[static_cast<std::size_t>(r)] = detail::lrt_statistic_of(null_sample, cfg);
    });

    long long count = 0;
    for (double t : reference)
        if (t >= observed) ++count;

    TestReport report;
    report.kind = TestKind::lrt_monte_carlo;
    report.statistic = observed;
    report.p_value = static_cast<double>(1 + count) / static_cast<double>(reps + 1);
    report.k_eff = k_dim;
    report.i_eff = i_dim;
    report.mc_replicates = reps;
    report.converged = fit.converged;
    report.iterations = fit.iterations;
    return report;
}

/// Runs the requested separability tests on one replicated sample and returns
/// one report per kind.
inline std::vector<TestReport> run_separability_test(
    const ReplicatedMatrixSample& sample, const std::vector<TestKind>& kinds,
    const TestConfig& cfg = {}) {
    const int n = sample.n_replicates();
    const int k_dim = sample.rows();
    const int i_dim = sample.cols();

    const SeparableCovEstimate fit =
        flip_flop(sample, cfg.flipflop_tol, cfg.flipflop_max_iter);
    const FullCovEstimate full = estimate_mean_and_sigma(sample);

    // W-hat plugs the estimates straight into the asymptotic covariance
    // formula: the unrestricted Sigma-hat together with (U-hat, V-hat). Under
    // the null all three converge to the same point; under the alternative the
    // unrestricted estimate keeps W-hat honest about the sampling variance.
    const bool needs_w =
        std::any_of(kinds.begin(), kinds.end(), [](TestKind k) {
            return k == TestKind::frobenius || k == TestKind::wald;
        });
    std::optional<WMatrix> w;
    if (needs_w) {
        const QMatrixSet q = build_q_set(k_dim, i_dim,
                                         std::max(cfg.max_kron_dim, kDefaultMaxKronDim));
        const JointAsymptoticCov gamma = joint_gamma(
            fit.u_hat, fit.v_hat, full.sigma_hat, q, cfg.rtol, cfg.max_kron_dim);
        w = w_matrix(fit.u_hat, fit.v_hat, gamma, cfg.rtol);
    }

    std::vector<TestReport> reports;
    reports.reserve(kinds.size());
    for (TestKind kind : kinds) {
        if (kind == TestKind::lrt_monte_carlo) {
            reports.push_back(monte_carlo_lrt(sample, cfg.mc_reps, cfg.seed, cfg));
            continue;
        }
        TestReport r;
        r.kind = kind;
        r.k_eff = k_dim;
        r.i_eff = i_dim;
        r.converged = fit.converged;
        r.iterations = fit.iterations;
        switch (kind) {
            case TestKind::lrt_asymptotic:
                r.statistic = stat_lrt(fit, full, n);
                r.df = degrees_of_freedom(k_dim, i_dim);
                r.p_value = pvalue_chisq(r.statistic, *r.df);
                break;
            case TestKind::frobenius: {
                r.statistic = stat_frobenius(fit, full, n);
                const Eigen::VectorXd& ev = w->eigenvalues;
                r.weights = std::vector<double>(ev.data(), ev.data() + ev.size());
                r.p_value = pvalue_weighted_chisq(r.statistic, *r.weights,
                                                  cfg.weighted_method,
                                                  cfg.weighted_mc_draws, cfg.seed);
                break;
            }
            case TestKind::wald:
                r.statistic = stat_wald(fit, full, *w, n);
                r.df = degrees_of_freedom(k_dim, i_dim);
                r.p_value = pvalue_chisq(r.statistic, *r.df);
                break;
            default:
                break;
        }
        reports.push_back(std::move(r));
    }
    return reports;
}

}  // namespace sepkron
