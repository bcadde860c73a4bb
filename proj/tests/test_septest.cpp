#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include <json.hpp>

#include "sepkron/septest.hpp"
#include "support/test_helpers.hpp"

using namespace sepkron;
using test_support::random_matrix;
using test_support::random_spd;
using test_support::sample_matrix_normal;

namespace {

ReplicatedMatrixSample null_sample(int n, int k, int i, std::uint64_t seed,
                                   bool random_factors = false) {
    auto rng = make_rng(seed);
    SymMatrix u(Eigen::MatrixXd::Identity(k, k));
    SymMatrix v(Eigen::MatrixXd::Identity(i, i));
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(k, i);
    if (random_factors) {
        u = random_spd(k, rng, true);
        v = random_spd(i, rng);
        mean = random_matrix(k, i, rng);
    }
    return sample_matrix_normal(u, v, mean, n, rng);
}

}  // namespace

TEST_CASE("statistics vanish when Sigma-hat is the fitted Kronecker product",
          "[septest]") {
    for (int seed = 0; seed < 10; ++seed) {
        const ReplicatedMatrixSample sample = null_sample(60, 2, 3, 100 + seed, true);
        const SeparableCovEstimate fit = flip_flop(sample);
        FullCovEstimate full = estimate_mean_and_sigma(sample);
        full.sigma_hat = SymMatrix(kron(fit.v_hat, fit.u_hat));

        const double scale = full.sigma_hat.mat().cwiseAbs().maxCoeff();
        CHECK(std::abs(stat_lrt(fit, full, 60)) < 1e-8 * 60 * scale);
        CHECK(std::abs(stat_frobenius(fit, full, 60)) < 1e-8 * 60 * scale);

        const QMatrixSet q = build_q_set(2, 3);
        const JointAsymptoticCov gamma =
            joint_gamma(fit.u_hat, fit.v_hat, full.sigma_hat, q);
        const WMatrix w = w_matrix(fit.u_hat, fit.v_hat, gamma);
        CHECK(std::abs(stat_wald(fit, full, w, 60)) < 1e-8 * 60 * scale);
    }
}

TEST_CASE("stat_lrt value is invariant to data scaling", "[septest]") {
    const ReplicatedMatrixSample sample = null_sample(50, 2, 2, 7, true);
    std::vector<Eigen::MatrixXd> scaled;
    for (const auto& x : sample.data()) scaled.push_back(3.2 * x);
    const ReplicatedMatrixSample sample2(scaled);

    const SeparableCovEstimate f1 = flip_flop(sample);
    const SeparableCovEstimate f2 = flip_flop(sample2);
    const double t1 = stat_lrt(f1, estimate_mean_and_sigma(sample), 50);
    const double t2 = stat_lrt(f2, estimate_mean_and_sigma(sample2), 50);
    REQUIRE(std::abs(t1 - t2) < 1e-7 * std::abs(t1));
}

TEST_CASE("stat_lrt reports the N > K*I requirement", "[septest]") {
    const ReplicatedMatrixSample sample = null_sample(4, 2, 2, 8);
    const SeparableCovEstimate fit = flip_flop(sample);
    const FullCovEstimate full = estimate_mean_and_sigma(sample);
    REQUIRE_THROWS_WITH(stat_lrt(fit, full, 4),
                        Catch::Matchers::ContainsSubstring("N > K*I"));
}

TEST_CASE("stat_frobenius scalar case", "[septest]") {
    const ReplicatedMatrixSample sample = null_sample(30, 1, 1, 9, true);
    const SeparableCovEstimate fit = flip_flop(sample);
    const FullCovEstimate full = estimate_mean_and_sigma(sample);
    const double expected = 30.0 * std::pow(fit.u_hat(0, 0) * fit.v_hat(0, 0) -
                                            full.sigma_hat(0, 0), 2);
    REQUIRE(std::abs(stat_frobenius(fit, full, 30) - expected) < 1e-12);
}

TEST_CASE("stat_wald is stable across rtol choices", "[septest]") {
    const ReplicatedMatrixSample sample = null_sample(400, 2, 2, 10, true);
    const SeparableCovEstimate fit = flip_flop(sample);
    const FullCovEstimate full = estimate_mean_and_sigma(sample);
    const QMatrixSet q = build_q_set(2, 2);

    double reference = 0.0;
    for (double rtol : {1e-12, 1e-10, 1e-8}) {
        const JointAsymptoticCov gamma =
            joint_gamma(fit.u_hat, fit.v_hat, full.sigma_hat, q, rtol);
        const WMatrix w = w_matrix(fit.u_hat, fit.v_hat, gamma, rtol);
        REQUIRE(w.rank == 5);  // rank plateau at d
        const double t = stat_wald(fit, full, w, 400);
        if (reference == 0.0)
            reference = t;
        else
            REQUIRE(std::abs(t - reference) < 1e-6 * std::abs(reference));
    }
}

TEST_CASE("pvalue_chisq closed forms", "[septest]") {
    CHECK(pvalue_chisq(0.0, 5) == 1.0);
    CHECK(std::abs(pvalue_chisq(2.0 * std::log(20.0), 2) - 0.05) < 1e-12);
    CHECK(std::abs(pvalue_chisq(11.0705, 5) - 0.05) < 1e-4);
    CHECK(pvalue_chisq(1e-9, 0) == 1.0);
    CHECK(pvalue_chisq(3.0, 0) == 0.0);
    REQUIRE_THROWS_AS(pvalue_chisq(1.0, -1), ValidationError);
}

TEST_CASE("pvalue_weighted_chisq reductions and degenerate cases", "[septest]") {
    // single unit weight and equal weights reduce to plain chi-square tails
    for (double stat : {0.5, 2.0, 7.3}) {
        CHECK(pvalue_weighted_chisq(stat, {1.0}) == pvalue_chisq(stat, 1));
        CHECK(pvalue_weighted_chisq(stat, {1.0, 1.0, 1.0}) == pvalue_chisq(stat, 3));
        CHECK(pvalue_weighted_chisq(stat, {2.5, 2.5}) == pvalue_chisq(stat / 2.5, 2));
    }
    // all-zero weights are a point mass at zero
    CHECK(pvalue_weighted_chisq(0.0, {0.0, 0.0}) == 1.0);
    CHECK(pvalue_weighted_chisq(0.5, {0.0, 0.0}) == 0.0);
    // nonpositive statistic
    CHECK(pvalue_weighted_chisq(-0.3, {2.0, 1.0}) == 1.0);
}

TEST_CASE("imhof and Monte Carlo agree", "[septest]") {
    const double p_imhof = pvalue_weighted_chisq(5.0, {2.0, 1.0},
                                                 WeightedChisqMethod::imhof);
    const double p_mc = pvalue_weighted_chisq(5.0, {2.0, 1.0},
                                              WeightedChisqMethod::monte_carlo, 200000, 99);
    REQUIRE(std::abs(p_imhof - p_mc) < 0.005);

    // independent closed form for weights (2, 1): conditioning on the first
    // variable, P(2X + Y > 5) evaluates to 0.186425 by 1D quadrature
    REQUIRE(std::abs(p_imhof - 0.186425) < 5e-4);
}

TEST_CASE("imhof handles many weights and wide tails", "[septest]") {
    // five-weight case representative of the Wald/Frobenius pipelines
    const std::vector<double> w = {3.0, 1.4, 0.9, 0.35, 0.1};
    const double p1 = pvalue_weighted_chisq(9.0, w, WeightedChisqMethod::imhof);
    const double p2 = pvalue_weighted_chisq(9.0, w, WeightedChisqMethod::monte_carlo,
                                            400000, 1234);
    REQUIRE(std::abs(p1 - p2) < 0.005);
    // far tail stays within [0, 1] and is tiny
    const double tail = pvalue_weighted_chisq(500.0, w, WeightedChisqMethod::imhof);
    REQUIRE(tail >= 0.0);
    REQUIRE(tail < 1e-6);
}

TEST_CASE("monte_carlo_lrt basic contracts", "[septest]") {
    const ReplicatedMatrixSample sample = null_sample(40, 2, 2, 21, true);
    const TestReport report = monte_carlo_lrt(sample, 500, 77);
    REQUIRE(report.kind == TestKind::lrt_monte_carlo);
    REQUIRE(report.mc_replicates == 500);
    REQUIRE(report.p_value >= 1.0 / 501.0);
    REQUIRE(report.p_value <= 1.0);

    // reproducible and thread-count independent
    TestConfig cfg;
    cfg.threads = 2;
    const TestReport again = monte_carlo_lrt(sample, 500, 77, cfg);
    REQUIRE(again.p_value == report.p_value);
    REQUIRE(again.statistic == report.statistic);

    REQUIRE_THROWS_AS(monte_carlo_lrt(sample, 100, 77), ValidationError);
    const ReplicatedMatrixSample tiny = null_sample(4, 2, 2, 22);
    REQUIRE_THROWS_WITH(monte_carlo_lrt(tiny, 500, 77),
                        Catch::Matchers::ContainsSubstring("N > K*I"));
}

TEST_CASE("run_separability_test fills report metadata", "[septest]") {
    const ReplicatedMatrixSample sample = null_sample(300, 2, 2, 23, true);
    TestConfig cfg;
    cfg.mc_reps = 999;
    cfg.seed = 5;
    const auto reports = run_separability_test(
        sample,
        {TestKind::lrt_asymptotic, TestKind::lrt_monte_carlo, TestKind::frobenius,
         TestKind::wald},
        cfg);
    REQUIRE(reports.size() == 4);
    for (const auto& r : reports) {
        CHECK(r.k_eff == 2);
        CHECK(r.i_eff == 2);
        CHECK(r.p_value >= 0.0);
        CHECK(r.p_value <= 1.0);
        CHECK(r.statistic >= -1e-8);
        CHECK(r.converged);
    }
    CHECK(reports[0].df == 5);
    CHECK(reports[3].df == 5);
    CHECK(reports[1].mc_replicates == 999);
    REQUIRE(reports[2].weights.has_value());
    CHECK(reports[2].weights->size() == 16);
}

TEST_CASE("TestReport round-trips through its JSON schema", "[septest]") {
    TestReport r;
    r.kind = TestKind::frobenius;
    r.statistic = 3.25;
    r.weights = std::vector<double>{2.0, 1.0, 0.0};
    r.p_value = 0.123;
    r.k_eff = 2;
    r.i_eff = 3;
    r.converged = true;
    r.iterations = 12;

    nlohmann::json j = r;
    CHECK(j.at("kind") == "Frobenius");
    CHECK(j.at("df").is_null());
    CHECK(j.at("mc_replicates").is_null());
    CHECK(j.at("K_eff") == 2);

    const TestReport back = j.get<TestReport>();
    CHECK(back.kind == r.kind);
    CHECK(back.statistic == r.statistic);
    CHECK(back.weights == r.weights);
    CHECK(back.df == r.df);
    CHECK(back.p_value == r.p_value);
    CHECK(back.iterations == r.iterations);

    const std::string row = test_report_csv_row(r);
    CHECK(row.find("Frobenius") == 0);
    CHECK(row.find("2;1;0") != std::string::npos);
}

TEST_CASE("p-values are invariant to data scaling", "[septest]") {
    const ReplicatedMatrixSample sample = null_sample(200, 2, 2, 24, true);
    std::vector<Eigen::MatrixXd> scaled;
    for (const auto& x : sample.data()) scaled.push_back(0.37 * x);
    const ReplicatedMatrixSample sample2(scaled);

    TestConfig cfg;
    cfg.mc_reps = 600;
    cfg.seed = 9;
    const std::vector<TestKind> kinds = {TestKind::lrt_asymptotic,
                                         TestKind::lrt_monte_carlo,
                                         TestKind::frobenius, TestKind::wald};
    const auto r1 = run_separability_test(sample, kinds, cfg);
    const auto r2 = run_separability_test(sample2, kinds, cfg);
    for (std::size_t i = 0; i < kinds.size(); ++i)
        REQUIRE(std::abs(r1[i].p_value - r2[i].p_value) < 1e-7);
}

TEST_CASE("p-values are invariant to a spatial relabeling", "[septest]") {
    const ReplicatedMatrixSample sample = null_sample(150, 3, 2, 25, true);
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(3);
    perm.setIdentity();
    perm.indices()[0] = 2;
    perm.indices()[2] = 0;
    std::vector<Eigen::MatrixXd> permuted;
    for (const auto& x : sample.data()) permuted.push_back(perm * x);
    const ReplicatedMatrixSample sample2(permuted);

    TestConfig cfg;
    cfg.mc_reps = 600;
    cfg.seed = 10;
    const std::vector<TestKind> kinds = {TestKind::lrt_asymptotic,
                                         TestKind::lrt_monte_carlo,
                                         TestKind::frobenius, TestKind::wald};
    const auto r1 = run_separability_test(sample, kinds, cfg);
    const auto r2 = run_separability_test(sample2, kinds, cfg);
    for (std::size_t i = 0; i < kinds.size(); ++i)
        REQUIRE(std::abs(r1[i].p_value - r2[i].p_value) < 1e-7);
}

TEST_CASE("separable data give unsuspicious p-values", "[septest]") {
    const ReplicatedMatrixSample sample = null_sample(2000, 2, 2, 26, true);
    TestConfig cfg;
    cfg.mc_reps = 999;
    cfg.seed = 11;
    const auto reports = run_separability_test(
        sample,
        {TestKind::lrt_asymptotic, TestKind::lrt_monte_carlo, TestKind::frobenius,
         TestKind::wald},
        cfg);
    for (const auto& r : reports) REQUIRE(r.p_value > 0.001);
}
