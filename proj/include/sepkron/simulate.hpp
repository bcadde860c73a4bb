#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sepkron/common.hpp"
#include "sepkron/functional.hpp"
#include "sepkron/septest.hpp"

namespace sepkron {

/// Parameters of the Gneiting space-time covariance family
///   sigma2 / (a|t-t'|^{2 alpha} + 1)^tau
///     * exp(-c ||s-s'||^{2 gamma} / (a|t-t'|^{2 alpha} + 1)^{beta gamma}).
/// beta in [0, 1] controls the space-time interaction; beta = 0 is separable.
struct GneitingParams {
    double a = 1.0;
    double c = 1.0;
    double alpha = 0.5;
    double gamma = 1.0;
    double beta = 0.0;
    double sigma2 = 1.0;
    double tau = 1.0;
    int spatial_dim = 2;

    void validate() const {
        if (!(a >= 0.0) || !(c >= 0.0))
            throw ValidationError("GneitingParams: scales a, c must be >= 0");
        if (!(alpha > 0.0 && alpha <= 1.0) || !(gamma > 0.0 && gamma <= 1.0))
            throw ValidationError("GneitingParams: smoothness alpha, gamma must lie in (0, 1]");
        if (!(beta >= 0.0 && beta <= 1.0))
            throw ValidationError("GneitingParams: beta must lie in [0, 1]");
        if (!(sigma2 > 0.0))
            throw ValidationError("GneitingParams: sigma2 must be > 0");
        if (!(tau >= beta * spatial_dim / 2.0))
            throw ValidationError("GneitingParams: tau must be >= beta * d / 2");
    }
};

inline double gneiting_cov(const GneitingParams& p, const Eigen::Vector2d& s,
                           const Eigen::Vector2d& s_prime, double t, double t_prime) {
    p.validate();
    const double psi = p.a * std::pow(std::abs(t - t_prime), 2.0 * p.alpha) + 1.0;
    const double dist = (s - s_prime).norm();
    return p.sigma2 / std::pow(psi, p.tau) *
           std::exp(-p.c * std::pow(dist, 2.0 * p.gamma) / std::pow(psi, p.beta * p.gamma));
}

/// The 11-point layout used by the simulation study: the 4 x 3 grid on
/// {0, 1/3, 2/3, 1} x {0, 1/2, 1} with the corner (1, 1) dropped.
inline Eigen::MatrixXd default_space_layout() {
    Eigen::MatrixXd coords(11, 2);
    int row = 0;
    for (double x : {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0})
        for (double y : {0.0, 0.5, 1.0})
            if (row < 11) coords.row(row++) << x, y;
    return coords;
}

/// Deterministic layout for an arbitrary location count: the first k points
/// of the smallest square grid covering [0, 1]^2 (the study layout for k=11).
inline Eigen::MatrixXd space_layout(int k) {
    if (k < 1) throw ValidationError("space_layout: need at least one location");
    if (k == 11) return default_space_layout();
    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(k))));
    Eigen::MatrixXd coords(k, 2);
    for (int i = 0; i < k; ++i)
        coords.row(i) << (side == 1 ? 0.0 : (i % side) / static_cast<double>(side - 1)),
            (side == 1 ? 0.0 : (i / side) / static_cast<double>(side - 1));
    return coords;
}

/// Dense covariance of the vectorized K x I panel, entry ((k,i),(l,j)) in the
/// project-wide space-fastest vec ordering.
inline SymMatrix build_cov_matrix(const GneitingParams& p, const Eigen::MatrixXd& coords,
                                  const Eigen::VectorXd& times) {
    p.validate();
    const Eigen::Index k = coords.rows();
    const Eigen::Index t = times.size();
    if (k < 1 || t < 1 || coords.cols() != 2)
        throw ValidationError("build_cov_matrix: need K x 2 coords and a nonempty time grid");
    const Eigen::Index dim = k * t;
    if (dim > 4000)
        throw ValidationError("build_cov_matrix: K*I = " + std::to_string(dim) +
                              " exceeds the dense covariance guard (4000)");
    Eigen::MatrixXd cov(dim, dim);
    for (Eigen::Index i = 0; i < t; ++i)
        for (Eigen::Index kk = 0; kk < k; ++kk) {
            const Eigen::Index row = kk + i * k;
            for (Eigen::Index j = 0; j < t; ++j)
                for (Eigen::Index ll = 0; ll < k; ++ll) {
                    const Eigen::Index col = ll + j * k;
                    if (col < row) continue;
                    cov(row, col) = gneiting_cov(p, coords.row(kk), coords.row(ll),
                                                 times[i], times[j]);
                    cov(col, row) = cov(row, col);
                }
        }
    return SymMatrix(std::move(cov));
}

namespace detail {

/// Cholesky factor with one shot of diagonal jitter (1e-10 * trace/dim);
/// failure after jitter indicates a broken covariance, not roundoff.
inline Eigen::MatrixXd chol_with_jitter(const SymMatrix& cov) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov.mat());
    if (llt.info() == Eigen::Success) return llt.matrixL();
    const double jitter = 1e-10 * cov.mat().trace() / static_cast<double>(cov.dim());
    Eigen::MatrixXd bumped = cov.mat();
    bumped.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> retry(bumped);
    if (retry.info() != Eigen::Success)
        throw NumericalError("sample_panel: covariance is not positive semidefinite "
                             "within the jitter budget");
    return retry.matrixL();
}

inline Eigen::MatrixXd draw_panel_matrix(const Eigen::MatrixXd& chol, int k_dim,
                                         int t_dim, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd z(chol.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = gauss(rng);
    return unvec(chol * z, k_dim, t_dim);
}

}  // namespace detail

/// N independent zero-mean Gaussian replicates with the given covariance of
/// the vectorized K x I panel. Identical seeds give identical panels.
inline CurvePanel sample_panel(const SymMatrix& cov, const Eigen::MatrixXd& coords,
                               const Eigen::VectorXd& times, int n_replicates,
                               std::uint64_t seed) {
    const int k = static_cast<int>(coords.rows());
    const int t = static_cast<int>(times.size());
    if (cov.dim() != static_cast<Eigen::Index>(k) * t)
        throw ValidationError("sample_panel: covariance dimension must equal K*I");
    if (n_replicates < 1) throw ValidationError("sample_panel: need N >= 1");
    const Eigen::MatrixXd chol = detail::chol_with_jitter(cov);
    std::vector<Eigen::MatrixXd> values;
    values.reserve(static_cast<std::size_t>(n_replicates));
    for (int n = 0; n < n_replicates; ++n) {
        auto rng = make_rng(seed, 0x70616e65, static_cast<std::uint64_t>(n));
        values.push_back(detail::draw_panel_matrix(chol, k, t, rng));
    }
    return CurvePanel(std::move(values), times, coords);
}

// ---------------------------------------------------------------------------
// Scenario runner
// ---------------------------------------------------------------------------

struct ScenarioSpec {
    std::string id = "scenario";
    std::vector<double> betas;
    std::vector<int> sample_sizes;
    std::vector<std::pair<int, int>> lj_pairs;  // (L, J)
    int reps = 1000;
    double level = 0.05;
    std::vector<TestKind> tests;
    int mc_reps = 999;
    int n_locations = 11;          // K
    int n_times = 100;             // I
    std::optional<Eigen::MatrixXd> coords;
    std::optional<std::string> locations_csv;  // resolved into coords by the CLI
    std::uint64_t seed = 1;
    int threads = 0;
};

struct ScenarioRow {
    double beta = 0.0;
    int sample_size = 0;
    int l_dim = 0;
    int j_dim = 0;
    TestKind test = TestKind::frobenius;
    int rejections = 0;
    int completed = 0;
    int failures = 0;

    double rate_pct() const {
        return completed > 0 ? 100.0 * rejections / completed : 0.0;
    }
};

struct ScenarioResult {
    std::string id;
    std::uint64_t seed = 0;
    int reps = 0;
    std::vector<ScenarioRow> rows;
    double runtime_sec = 0.0;
};

inline std::string cli_test_name(TestKind kind) {
    switch (kind) {
        case TestKind::lrt_asymptotic: return "lrt";
        case TestKind::lrt_monte_carlo: return "lrt-mc";
        case TestKind::frobenius: return "frob";
        case TestKind::wald: return "wald";
    }
    throw ValidationError("unknown test kind");
}

inline TestKind test_kind_from_cli_name(const std::string& name) {
    if (name == "lrt") return TestKind::lrt_asymptotic;
    if (name == "lrt-mc") return TestKind::lrt_monte_carlo;
    if (name == "frob") return TestKind::frobenius;
    if (name == "wald") return TestKind::wald;
    throw ValidationError("unknown test name '" + name +
                          "' (expected lrt, lrt-mc, frob or wald)");
}

inline void from_json(const nlohmann::json& j, ScenarioSpec& s) {
    s.id = j.value("scenario", std::string("scenario"));
    s.betas = j.at("beta").get<std::vector<double>>();
    s.sample_sizes = j.at("N").get<std::vector<int>>();
    s.lj_pairs.clear();
    for (const auto& lj : j.at("LJ")) {
        if (!lj.is_array() || lj.size() != 2)
            throw ValidationError("scenario spec: LJ entries must be [L, J] pairs");
        s.lj_pairs.emplace_back(lj[0].get<int>(), lj[1].get<int>());
    }
    s.reps = j.value("reps", 1000);
    s.level = j.value("level", 0.05);
    s.tests.clear();
    for (const auto& name : j.value("tests", std::vector<std::string>{"lrt-mc", "lrt", "frob", "wald"}))
        s.tests.push_back(test_kind_from_cli_name(name));
    s.mc_reps = j.value("mc_reps", 999);
    s.n_locations = j.value("K", 11);
    s.n_times = j.value("I", 100);
    if (j.contains("locations_csv"))
        s.locations_csv = j.at("locations_csv").get<std::string>();
    s.seed = j.value("seed", 1ULL);
    s.threads = j.value("threads", 0);
}

/// Full pipeline for one replicate: sample a Gneiting panel, reduce it in
/// space and time with pinned (L, J), and run the requested tests.
inline std::vector<TestReport> scenario_replicate(const Eigen::MatrixXd& chol,
                                                  const Eigen::MatrixXd& coords,
                                                  const Eigen::VectorXd& times,
                                                  int sample_size, int l_dim, int j_dim,
                                                  const std::vector<TestKind>& tests,
                                                  const TestConfig& cfg,
                                                  std::uint64_t seed,
                                                  std::uint64_t replicate_id) {
    const int k = static_cast<int>(coords.rows());
    const int t = static_cast<int>(times.size());
    std::vector<Eigen::MatrixXd> values;
    values.reserve(static_cast<std::size_t>(sample_size));
    for (int n = 0; n < sample_size; ++n) {
        auto rng = make_rng(seed, replicate_id,
                            0x647261ULL * 1024 + static_cast<std::uint64_t>(n));
        values.push_back(detail::draw_panel_matrix(chol, k, t, rng));
    }
    const CurvePanel panel(std::move(values), times, coords);
    const ReductionResult reduced = reduce_space_time(panel, 0.8, 0.8, j_dim, l_dim);
    TestConfig rep_cfg = cfg;
    rep_cfg.seed = seed ^ (0x9e3779b97f4a7c15ULL * (replicate_id + 1));
    rep_cfg.threads = 1;  // parallelism lives across replicates
    return run_separability_test(reduced.scores, tests, rep_cfg);
}

/// Runs every (beta, N, (L,J)) combination of the spec for `reps` replicates
/// and tabulates rejection counts at the requested level. Per-replicate
/// failures are counted per row and reported on stderr, never dropped
/// silently. Identical seeds give identical tables for any thread count.
inline ScenarioResult run_scenario(const ScenarioSpec& spec, std::uint64_t seed) {
    if (spec.reps < 100) throw ValidationError("run_scenario: reps must be >= 100");
    if (spec.tests.empty()) throw ValidationError("run_scenario: no tests requested");
    if (spec.betas.empty() || spec.sample_sizes.empty() || spec.lj_pairs.empty())
        throw ValidationError("run_scenario: beta, N and LJ lists must be nonempty");
    const auto t_start = std::chrono::steady_clock::now();

    const Eigen::MatrixXd coords =
        spec.coords ? *spec.coords : space_layout(spec.n_locations);
    if (coords.rows() != spec.n_locations)
        throw ValidationError("run_scenario: coords rows must equal K");
    Eigen::VectorXd times(spec.n_times);
    for (int i = 0; i < spec.n_times; ++i)
        times[i] = spec.n_times == 1 ? 0.0
                                     : static_cast<double>(i) / (spec.n_times - 1);

    TestConfig cfg;
    cfg.mc_reps = spec.mc_reps;

    ScenarioResult result;
    result.id = spec.id;
    result.seed = seed;
    result.reps = spec.reps;

    std::uint64_t config_index = 0;
    for (double beta : spec.betas) {
        GneitingParams params;
        params.beta = beta;
        const Eigen::MatrixXd chol =
            detail::chol_with_jitter(build_cov_matrix(params, coords, times));
        for (int sample_size : spec.sample_sizes) {
            for (const auto& [l_dim, j_dim] : spec.lj_pairs) {
                ++config_index;
                const std::size_t n_tests = spec.tests.size();
                // slot r*n_tests+j: 1 = reject, 0 = accept, -1 = failed replicate
                std::vector<int> outcome(static_cast<std::size_t>(spec.reps) * n_tests, 0);
                parallel_for(spec.reps, spec.threads, [&](int r) {
                    try {
                        const auto reports = scenario_replicate(
                            chol, coords, times, sample_size, l_dim, j_dim, spec.tests,
                            cfg, seed, config_index * 1000003ULL + static_cast<std::uint64_t>(r));
                        for (std::size_t j = 0; j < n_tests; ++j)
                            outcome[static_cast<std::size_t>(r) * n_tests + j] =
                                reports[j].p_value <= spec.level ? 1 : 0;
                    } catch (const std::exception& e) {
                        for (std::size_t j = 0; j < n_tests; ++j)
                            outcome[static_cast<std::size_t>(r) * n_tests + j] = -1;
                        std::cerr << "run_scenario: replicate " << r << " of (beta=" << beta
                                  << ", N=" << sample_size << ", L=" << l_dim
                                  << ", J=" << j_dim << ") failed: " << e.what() << "\n";
                    }
                });
                for (std::size_t j = 0; j < n_tests; ++j) {
                    ScenarioRow row;
                    row.beta = beta;
                    row.sample_size = sample_size;
                    row.l_dim = l_dim;
                    row.j_dim = j_dim;
                    row.test = spec.tests[j];
                    for (int r = 0; r < spec.reps; ++r) {
                        const int o = outcome[static_cast<std::size_t>(r) * n_tests + j];
                        if (o < 0)
                            ++row.failures;
                        else {
                            ++row.completed;
                            row.rejections += o;
                        }
                    }
                    result.rows.push_back(row);
                }
            }
        }
    }
    result.runtime_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

inline std::string scenario_csv_header() {
    return "scenario,beta,N,L,J,test,rejections,reps,rate_pct";
}

inline void write_scenario_csv(const ScenarioResult& result, std::ostream& os) {
    os << scenario_csv_header() << "\n";
    os.precision(10);
    for (const auto& row : result.rows) {
        os << result.id << ',' << row.beta << ',' << row.sample_size << ',' << row.l_dim
           << ',' << row.j_dim << ',' << cli_test_name(row.test) << ',' << row.rejections
           << ',' << row.completed << ',' << row.rate_pct() << "\n";
        if (row.failures > 0)
            std::cerr << "run_scenario: " << row.failures << " failed replicates in (beta="
                      << row.beta << ", N=" << row.sample_size << ", L=" << row.l_dim
                      << ", J=" << row.j_dim << ", test=" << cli_test_name(row.test) << ")\n";
    }
}

}  // namespace sepkron
