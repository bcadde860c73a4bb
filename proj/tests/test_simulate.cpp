#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "sepkron/simulate.hpp"

using namespace sepkron;

namespace {

GneitingParams paper_params(double beta) {
    GneitingParams p;
    p.beta = beta;
    return p;  // a = c = 1, alpha = 1/2, gamma = 1, sigma2 = 1, tau = 1
}

}  // namespace

TEST_CASE("gneiting_cov closed forms", "[simulate]") {
    const Eigen::Vector2d s0(0.2, 0.4), s1(0.7, 0.4);

    SECTION("zero lags give the pointwise variance") {
        REQUIRE(gneiting_cov(paper_params(0.7), s0, s0, 0.3, 0.3) == 1.0);
    }
    SECTION("unit lags at beta = 1") {
        const Eigen::Vector2d a(0.0, 0.0), b(1.0, 0.0);
        const double v = gneiting_cov(paper_params(1.0), a, b, 0.0, 1.0);
        REQUIRE(std::abs(v - 0.5 * std::exp(-0.5)) < 1e-14);
    }
    SECTION("beta = 0 factorizes exactly") {
        const GneitingParams p = paper_params(0.0);
        for (double dt : {0.0, 0.17, 0.5, 1.0})
            for (double dx : {0.0, 0.3, 0.9}) {
                const Eigen::Vector2d sa(0.0, 0.0), sb(dx, 0.0);
                const double lhs = gneiting_cov(p, sa, sb, 0.0, dt) *
                                   gneiting_cov(p, sa, sa, 0.0, 0.0);
                const double rhs = gneiting_cov(p, sa, sb, 0.0, 0.0) *
                                   gneiting_cov(p, sa, sa, 0.0, dt);
                REQUIRE(std::abs(lhs - rhs) < 1e-12);
            }
    }
    SECTION("parameter validation") {
        GneitingParams p = paper_params(0.0);
        p.alpha = 1.5;
        REQUIRE_THROWS_AS(p.validate(), ValidationError);
        p = paper_params(0.0);
        p.beta = 1.2;
        REQUIRE_THROWS_AS(p.validate(), ValidationError);
        p = paper_params(1.0);
        p.tau = 0.4;  // < beta * d / 2 = 1
        REQUIRE_THROWS_AS(p.validate(), ValidationError);
    }
}

TEST_CASE("build_cov_matrix structure", "[simulate]") {
    Eigen::MatrixXd coords(2, 2);
    coords << 0.0, 0.0, 0.6, 0.0;
    Eigen::VectorXd times(2);
    times << 0.0, 1.0;

    SECTION("beta = 0 equals the Kronecker product of the marginals") {
        const SymMatrix cov = build_cov_matrix(paper_params(0.0), coords, times);
        Eigen::MatrixXd u(2, 2), v(2, 2);
        const GneitingParams p = paper_params(0.0);
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                u(a, b) = gneiting_cov(p, coords.row(a), coords.row(b), 0.0, 0.0);
                v(a, b) = gneiting_cov(p, coords.row(0), coords.row(0), times[a], times[b]);
            }
        REQUIRE((cov.mat() - kron(v, u)).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("diagonal is the pointwise variance") {
        const SymMatrix cov = build_cov_matrix(paper_params(0.8), coords, times);
        REQUIRE((cov.mat().diagonal().array() - 1.0).abs().maxCoeff() < 1e-14);
    }
    SECTION("all 16 entries match the scalar formula") {
        const GneitingParams p = paper_params(0.5);
        const SymMatrix cov = build_cov_matrix(p, coords, times);
        for (int i = 0; i < 2; ++i)
            for (int k = 0; k < 2; ++k)
                for (int j = 0; j < 2; ++j)
                    for (int l = 0; l < 2; ++l) {
                        const double expected =
                            p.sigma2 / (std::abs(times[i] - times[j]) + 1.0) *
                            std::exp(-(coords.row(k) - coords.row(l)).norm() *
                                     (coords.row(k) - coords.row(l)).norm() /
                                     std::pow(std::abs(times[i] - times[j]) + 1.0, p.beta));
                        REQUIRE(std::abs(cov(k + i * 2, l + j * 2) - expected) < 1e-14);
                    }
    }
}

TEST_CASE("sample_panel determinism and moments", "[simulate]") {
    Eigen::MatrixXd coords(2, 2);
    coords << 0.0, 0.0, 0.5, 0.5;
    Eigen::VectorXd times(2);
    times << 0.0, 1.0;
    const SymMatrix cov(Eigen::MatrixXd::Identity(4, 4));

    SECTION("identical seeds give bitwise-identical panels") {
        const CurvePanel p1 = sample_panel(cov, coords, times, 5, 321);
        const CurvePanel p2 = sample_panel(cov, coords, times, 5, 321);
        for (int n = 0; n < 5; ++n) REQUIRE(p1.replicate(n) == p2.replicate(n));
        const CurvePanel p3 = sample_panel(cov, coords, times, 5, 322);
        REQUIRE(p1.replicate(0) != p3.replicate(0));
    }
    SECTION("law of large numbers at the identity covariance") {
        const int n = 10000;
        const CurvePanel panel = sample_panel(cov, coords, times, n, 99);
        Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(2, 2);
        for (const auto& x : panel.values()) mean += x / n;
        REQUIRE(mean.cwiseAbs().maxCoeff() < 0.05);
        Eigen::MatrixXd second = Eigen::MatrixXd::Zero(4, 4);
        for (const auto& x : panel.values()) {
            const Eigen::VectorXd v = vec(x);
            second += v * v.transpose() / n;
        }
        REQUIRE((second - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 0.1);
    }
}

TEST_CASE("scenario spec parses from JSON", "[simulate]") {
    const nlohmann::json j = nlohmann::json::parse(R"({
        "scenario": "smoke",
        "beta": [0.0, 1.0],
        "N": [40],
        "LJ": [[2, 2]],
        "reps": 120,
        "level": 0.05,
        "tests": ["frob", "lrt"],
        "mc_reps": 600,
        "K": 4,
        "I": 12,
        "seed": 7
    })");
    const ScenarioSpec spec = j.get<ScenarioSpec>();
    CHECK(spec.id == "smoke");
    CHECK(spec.betas == std::vector<double>{0.0, 1.0});
    CHECK(spec.sample_sizes == std::vector<int>{40});
    CHECK(spec.lj_pairs.size() == 1);
    CHECK(spec.tests.size() == 2);
    CHECK(spec.tests[0] == TestKind::frobenius);
    CHECK(spec.n_locations == 4);
    CHECK(spec.seed == 7);
    REQUIRE_THROWS_AS(test_kind_from_cli_name("bogus"), ValidationError);
}

TEST_CASE("run_scenario smoke run is deterministic across thread counts",
          "[simulate]") {
    ScenarioSpec spec;
    spec.id = "smoke";
    spec.betas = {0.0};
    spec.sample_sizes = {40};
    spec.lj_pairs = {{2, 2}};
    spec.reps = 120;
    spec.tests = {TestKind::frobenius, TestKind::lrt_asymptotic};
    spec.n_locations = 4;
    spec.n_times = 12;
    Eigen::MatrixXd coords(4, 2);
    coords << 0, 0, 1, 0, 0, 1, 1, 1;
    spec.coords = coords;

    spec.threads = 1;
    const ScenarioResult r1 = run_scenario(spec, 42);
    spec.threads = 2;
    const ScenarioResult r2 = run_scenario(spec, 42);
    REQUIRE(r1.rows.size() == 2);
    for (std::size_t i = 0; i < r1.rows.size(); ++i) {
        CHECK(r1.rows[i].rejections == r2.rows[i].rejections);
        CHECK(r1.rows[i].completed == 120);
        CHECK(r1.rows[i].failures == 0);
        CHECK(r1.rows[i].rate_pct() >= 0.0);
        CHECK(r1.rows[i].rate_pct() <= 100.0);
    }

    std::ostringstream os;
    write_scenario_csv(r1, os);
    const std::string csv = os.str();
    CHECK(csv.find("scenario,beta,N,L,J,test,rejections,reps,rate_pct") == 0);
    CHECK(csv.find("smoke,0,40,2,2,frob,") != std::string::npos);
}

TEST_CASE("run_scenario counts per-replicate failures", "[simulate]") {
    // N = L*J makes the unrestricted covariance singular, so the LRT fails in
    // every replicate; failures must be counted, not silently dropped.
    ScenarioSpec spec;
    spec.betas = {0.0};
    spec.sample_sizes = {4};
    spec.lj_pairs = {{2, 2}};
    spec.reps = 100;
    spec.tests = {TestKind::lrt_asymptotic};
    spec.n_locations = 4;
    spec.n_times = 12;
    Eigen::MatrixXd coords(4, 2);
    coords << 0, 0, 1, 0, 0, 1, 1, 1;
    spec.coords = coords;
    spec.threads = 1;

    std::ostringstream captured;
    auto* old = std::cerr.rdbuf(captured.rdbuf());
    const ScenarioResult r = run_scenario(spec, 5);
    std::cerr.rdbuf(old);
    REQUIRE(r.rows.size() == 1);
    CHECK(r.rows[0].failures == 100);
    CHECK(r.rows[0].completed == 0);
    CHECK(captured.str().find("failed") != std::string::npos);
}

TEST_CASE("default space layout has eleven distinct points in the unit square",
          "[simulate]") {
    const Eigen::MatrixXd coords = default_space_layout();
    REQUIRE(coords.rows() == 11);
    REQUIRE(coords.minCoeff() >= 0.0);
    REQUIRE(coords.maxCoeff() <= 1.0);
    for (int a = 0; a < 11; ++a)
        for (int b = a + 1; b < 11; ++b)
            REQUIRE((coords.row(a) - coords.row(b)).norm() > 1e-12);
}
