#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "sepkron/io.hpp"
#include "sepkron/qmatrices.hpp"
#include "sepkron/simulate.hpp"

using namespace sepkron;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code;
    std::string stdout_text;
};

const char* cli_binary() {
    const char* bin = std::getenv("SEPKRON_BIN");
    return bin && *bin ? bin : nullptr;
}

CliResult run_cli(const std::string& args, const fs::path& dir) {
    const fs::path out = dir / "stdout.txt";
    const std::string cmd = std::string(cli_binary()) + " " + args + " > " +
                            out.string() + " 2> " + (dir / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    std::ifstream in(out);
    std::ostringstream text;
    text << in.rdbuf();
    return CliResult{WEXITSTATUS(status), text.str()};
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream text;
    text << in.rdbuf();
    return text.str();
}

fs::path make_temp_dir() {
    const fs::path dir =
        fs::temp_directory_path() / ("sepkron_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    return dir;
}

/// Seeded separable fixture written in the long CSV format.
fs::path write_separable_fixture(const fs::path& dir, int n, int k, int t) {
    Eigen::MatrixXd coords(k, 2);
    for (int i = 0; i < k; ++i)
        coords.row(i) << (i % 3) / 2.0, (i / 3) / 2.0;
    Eigen::VectorXd times(t);
    for (int i = 0; i < t; ++i) times[i] = static_cast<double>(i) / (t - 1);
    GneitingParams params;
    params.beta = 0.0;
    const CurvePanel panel =
        sample_panel(build_cov_matrix(params, coords, times), coords, times, n, 2024);

    IngestedPanel ingested{panel, {}, {}};
    for (int i = 0; i < k; ++i) ingested.location_ids.push_back("s" + std::to_string(i));
    for (int i = 0; i < n; ++i) ingested.replicate_ids.push_back(i + 1);
    const fs::path path = dir / "separable.csv";
    std::ofstream os(path);
    export_long_csv(ingested, os);
    return path;
}

}  // namespace

TEST_CASE("cli end-to-end on a separable fixture", "[cli]") {
    if (!cli_binary()) {
        SKIP("SEPKRON_BIN not set");
    }
    const fs::path dir = make_temp_dir();
    const fs::path fixture = write_separable_fixture(dir, 150, 6, 24);

    const fs::path out_json = dir / "reports.json";
    const CliResult r = run_cli("test --data " + fixture.string() +
                                    " --procedure 3 --L 2 --J 2"
                                    " --tests lrt,lrt-mc,frob,wald --mc-reps 999"
                                    " --seed 7 --format json --out " + out_json.string(),
                                dir);
    REQUIRE(r.exit_code == 0);
    const nlohmann::json reports = nlohmann::json::parse(read_file(out_json));
    REQUIRE(reports.is_array());
    REQUIRE(reports.size() == 4);
    for (const auto& rep : reports) {
        CHECK(rep.at("K_eff") == 2);
        CHECK(rep.at("I_eff") == 2);
        CHECK(rep.at("p_value").get<double>() > 0.01);  // separable, seeded
        CHECK(rep.at("converged") == true);
    }

    // determinism: the same seed reproduces the same reports
    const fs::path out2 = dir / "reports2.json";
    run_cli("test --data " + fixture.string() +
                " --procedure 3 --L 2 --J 2 --tests lrt,lrt-mc,frob,wald"
                " --mc-reps 999 --seed 7 --format json --out " + out2.string(),
            dir);
    REQUIRE(read_file(out_json) == read_file(out2));

    fs::remove_all(dir);
}

TEST_CASE("cli csv output has one row per test", "[cli]") {
    if (!cli_binary()) {
        SKIP("SEPKRON_BIN not set");
    }
    const fs::path dir = make_temp_dir();
    const fs::path fixture = write_separable_fixture(dir, 80, 4, 16);
    const CliResult r = run_cli("test --data " + fixture.string() +
                                    " --procedure 1 --J 2 --tests lrt,frob --seed 3"
                                    " --format csv",
                                dir);
    REQUIRE(r.exit_code == 0);
    std::istringstream lines(r.stdout_text);
    std::string line;
    std::getline(lines, line);
    REQUIRE(line == test_report_csv_header());
    int rows = 0;
    while (std::getline(lines, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == 2);
    fs::remove_all(dir);
}

TEST_CASE("cli surfaces the N > L*J requirement as a validation error", "[cli]") {
    if (!cli_binary()) {
        SKIP("SEPKRON_BIN not set");
    }
    const fs::path dir = make_temp_dir();
    const fs::path fixture = write_separable_fixture(dir, 9, 5, 16);
    const CliResult r = run_cli("test --data " + fixture.string() +
                                    " --procedure 3 --L 3 --J 3 --tests lrt-mc"
                                    " --mc-reps 999",
                                dir);
    REQUIRE(r.exit_code == 2);
    const std::string err = read_file(dir / "stderr.txt");
    REQUIRE(err.find("N > L*J") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli exit codes distinguish parse and numerical failures", "[cli]") {
    if (!cli_binary()) {
        SKIP("SEPKRON_BIN not set");
    }
    const fs::path dir = make_temp_dir();
    CHECK(run_cli("test --procedure 9", dir).exit_code == 2);   // missing input
    CHECK(run_cli("bogus-subcommand", dir).exit_code == 2);     // parse error
    CHECK(run_cli("qmatrix --which nope --K 2", dir).exit_code == 2);

    // numerical failure: lrt on N = K*I data (singular unrestricted estimate)
    const fs::path fixture = write_separable_fixture(dir, 9, 3, 12);
    const CliResult r = run_cli("test --data " + fixture.string() +
                                    " --procedure 3 --L 3 --J 3 --tests lrt",
                                dir);
    REQUIRE(r.exit_code == 3);
    fs::remove_all(dir);
}

TEST_CASE("cli qmatrix output matches the library", "[cli]") {
    if (!cli_binary()) {
        SKIP("SEPKRON_BIN not set");
    }
    const fs::path dir = make_temp_dir();
    const CliResult r = run_cli("qmatrix --which tilde --K 2 --I 2", dir);
    REQUIRE(r.exit_code == 0);
    const Eigen::MatrixXd expected = build_q_tilde(2, 2);
    std::istringstream lines(r.stdout_text);
    std::string line;
    int row = 0;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string field;
        int col = 0;
        while (std::getline(fields, field, ',')) {
            REQUIRE(std::abs(std::stod(field) - expected(row, col)) < 1e-15);
            ++col;
        }
        REQUIRE(col == 4);
        ++row;
    }
    REQUIRE(row == 16);
    fs::remove_all(dir);
}

TEST_CASE("cli scenario runner writes the results csv", "[cli]") {
    if (!cli_binary()) {
        SKIP("SEPKRON_BIN not set");
    }
    const fs::path dir = make_temp_dir();
    const fs::path spec = dir / "spec.json";
    {
        std::ofstream os(spec);
        os << R"({"scenario":"smoke","beta":[0.0],"N":[40],"LJ":[[2,2]],
                  "reps":100,"tests":["frob"],"K":4,"I":12,"seed":11})";
    }
    const fs::path out = dir / "results.csv";
    const CliResult r = run_cli("scenario --spec " + spec.string() + " --out " +
                                    out.string(),
                                dir);
    REQUIRE(r.exit_code == 0);
    const std::string csv = read_file(out);
    REQUIRE(csv.find("scenario,beta,N,L,J,test,rejections,reps,rate_pct") == 0);
    REQUIRE(csv.find("smoke,0,40,2,2,frob,") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli ingest round-trips a long csv", "[cli]") {
    if (!cli_binary()) {
        SKIP("SEPKRON_BIN not set");
    }
    const fs::path dir = make_temp_dir();
    const fs::path fixture = write_separable_fixture(dir, 5, 3, 8);
    const fs::path out = dir / "echo.csv";
    const CliResult r =
        run_cli("ingest --data " + fixture.string() + " --out " + out.string(), dir);
    REQUIRE(r.exit_code == 0);
    REQUIRE(read_file(fixture) == read_file(out));
    fs::remove_all(dir);
}
