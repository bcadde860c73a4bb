// sep-kron: separability tests for replicated space-time data.
//
// Subcommands:
//   test      run separability tests on a long-format CSV or the raw wind file
//   scenario  Monte Carlo rejection-rate study driven by a JSON spec
//   qmatrix   print one of the combinatorial Q matrices as CSV
//   ingest    normalize an input file to the long CSV format

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sepkron/io.hpp"
#include "sepkron/qmatrices.hpp"
#include "sepkron/septest.hpp"
#include "sepkron/simulate.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct InputOptions {
    std::string data_path;
    std::string locations_path;
    std::string wind_path;
    std::vector<std::string> stations;
    int day_grid = 28;
    bool deseasonalize = false;
    int period = 12;
};

void add_input_options(CLI::App* cmd, InputOptions& opts) {
    auto* data = cmd->add_option("--data", opts.data_path,
                                 "long-format CSV (header replicate,location,time,value)");
    auto* wind = cmd->add_option("--wind", opts.wind_path,
                                 "raw StatLib daily wind-speed file");
    data->excludes(wind);
    cmd->add_option("--locations", opts.locations_path,
                    "locations CSV (header location,x,y) for --data");
    cmd->add_option("--stations", opts.stations,
                    "station subset for --wind (default: the 11 classic stations, ROS excluded)")
        ->delimiter(',');
    cmd->add_option("--day-grid", opts.day_grid,
                    "points of the common within-month grid for --wind");
    cmd->add_flag("--deseasonalize", opts.deseasonalize,
                  "subtract per-calendar-month mean curves");
    cmd->add_option("--period", opts.period, "deseasonalization period");
}

sepkron::IngestedPanel load_panel(const InputOptions& opts) {
    if (opts.data_path.empty() == opts.wind_path.empty())
        throw sepkron::ValidationError("exactly one of --data or --wind is required");
    sepkron::IngestedPanel ingested = [&]() {
        if (!opts.data_path.empty()) {
            std::optional<std::string> loc;
            if (!opts.locations_path.empty()) loc = opts.locations_path;
            return sepkron::ingest_long_csv_file(opts.data_path, loc);
        }
        sepkron::WindConfig cfg;
        cfg.path = opts.wind_path;
        if (!opts.stations.empty()) cfg.stations = opts.stations;
        cfg.day_grid = opts.day_grid;
        return sepkron::ingest_wind_file(cfg);
    }();
    if (opts.deseasonalize)
        ingested.panel = sepkron::deseasonalize(ingested.panel, opts.period);
    return ingested;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw sepkron::ValidationError("cannot open output file '" + path + "'");
    return os;
}

int run_test_command(const InputOptions& input, int procedure,
                     const std::vector<std::string>& test_names,
                     std::optional<int> j_pin, std::optional<int> l_pin,
                     std::optional<double> tau_time, std::optional<double> tau_space,
                     int mc_reps, int mc_draws, std::uint64_t seed, int threads,
                     const std::string& out_path, const std::string& format) {
    std::vector<sepkron::TestKind> kinds;
    for (const auto& name : test_names)
        kinds.push_back(sepkron::test_kind_from_cli_name(name));
    if (kinds.empty())
        throw sepkron::ValidationError("no tests requested");

    const sepkron::IngestedPanel ingested = load_panel(input);
    const sepkron::CurvePanel& panel = ingested.panel;

    const double tau_t = tau_time.value_or(procedure == 2 ? 0.85 : 0.8);
    const double tau_s = tau_space.value_or(0.8);
    sepkron::ReductionResult reduced = [&]() {
        switch (procedure) {
            case 1: return sepkron::project_fixed_basis(panel, tau_t, j_pin);
            case 2: return sepkron::data_driven_basis(panel, tau_t, 1e-6, 50, j_pin);
            case 3: return sepkron::reduce_space_time(panel, tau_t, tau_s, j_pin, l_pin);
            default:
                throw sepkron::ValidationError("--procedure must be 1, 2 or 3");
        }
    }();
    for (const auto& w : reduced.warnings) std::cerr << "warning: " << w << "\n";

    const bool wants_mc = std::any_of(kinds.begin(), kinds.end(), [](sepkron::TestKind k) {
        return k == sepkron::TestKind::lrt_monte_carlo;
    });
    const int n = reduced.scores.n_replicates();
    const int rows = reduced.scores.rows();
    const int cols = reduced.scores.cols();
    if (wants_mc && n <= rows * cols)
        throw sepkron::ValidationError(
            "Monte Carlo likelihood-ratio test requires N > L*J (got N=" +
            std::to_string(n) + ", L*J=" + std::to_string(rows * cols) + ")");

    sepkron::TestConfig cfg;
    cfg.mc_reps = mc_reps;
    cfg.weighted_mc_draws = mc_draws;
    cfg.seed = seed;
    cfg.threads = threads;
    const std::vector<sepkron::TestReport> reports =
        sepkron::run_separability_test(reduced.scores, kinds, cfg);

    std::ostringstream body;
    if (format == "json") {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : reports) j.push_back(r);
        body << j.dump(2) << "\n";
    } else if (format == "csv") {
        body << sepkron::test_report_csv_header() << "\n";
        for (const auto& r : reports) body << sepkron::test_report_csv_row(r) << "\n";
    } else {
        throw sepkron::ValidationError("--format must be json or csv");
    }
    if (out_path.empty()) {
        std::cout << body.str();
    } else {
        open_output(out_path) << body.str();
    }
    return 0;
}

int run_scenario_command(const std::string& spec_path, const std::string& out_path,
                         std::optional<std::uint64_t> seed_override,
                         std::optional<int> threads_override) {
    std::ifstream in(spec_path);
    if (!in) throw sepkron::ValidationError("cannot open scenario spec '" + spec_path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw sepkron::ValidationError("scenario spec is not valid JSON: " +
                                       std::string(e.what()));
    }
    sepkron::ScenarioSpec spec = j.get<sepkron::ScenarioSpec>();
    if (spec.locations_csv) {
        std::ifstream loc_in(*spec.locations_csv);
        if (!loc_in)
            throw sepkron::ValidationError("cannot open locations file '" +
                                           *spec.locations_csv + "'");
        const auto rows = sepkron::read_locations_csv_ordered(loc_in);
        Eigen::MatrixXd coords(static_cast<Eigen::Index>(rows.size()), 2);
        for (std::size_t i = 0; i < rows.size(); ++i)
            coords.row(static_cast<Eigen::Index>(i)) = rows[i].second.transpose();
        spec.coords = std::move(coords);
    }
    if (threads_override) spec.threads = *threads_override;
    const std::uint64_t seed = seed_override.value_or(spec.seed);
    const sepkron::ScenarioResult result = sepkron::run_scenario(spec, seed);
    if (out_path.empty()) {
        sepkron::write_scenario_csv(result, std::cout);
    } else {
        auto os = open_output(out_path);
        sepkron::write_scenario_csv(result, os);
    }
    std::cerr << "scenario '" << result.id << "' finished in " << result.runtime_sec
              << " s\n";
    return 0;
}

int run_qmatrix_command(const std::string& which, int k_dim, int i_dim, int max_dim,
                        const std::string& out_path) {
    Eigen::MatrixXd q;
    if (which == "sym") {
        if (static_cast<long long>(k_dim) * k_dim > static_cast<long long>(max_dim) * max_dim)
            throw sepkron::ValidationError("qmatrix: K exceeds the dimension guard");
        q = sepkron::build_q_sym(k_dim);
    } else if (which == "cross") {
        q = sepkron::build_q_cross(k_dim, i_dim);
    } else if (which == "tilde" || which == "breve") {
        if (static_cast<long long>(k_dim) * i_dim > max_dim)
            throw sepkron::ValidationError("qmatrix: K*I exceeds the dimension guard (" +
                                           std::to_string(max_dim) + ")");
        q = which == "tilde" ? sepkron::build_q_tilde(k_dim, i_dim)
                             : sepkron::build_q_breve(k_dim, i_dim);
    } else {
        throw sepkron::ValidationError("--which must be one of sym, cross, tilde, breve");
    }
    std::ostringstream body;
    body.precision(17);
    for (Eigen::Index r = 0; r < q.rows(); ++r) {
        for (Eigen::Index c = 0; c < q.cols(); ++c) {
            if (c) body << ',';
            body << q(r, c);
        }
        body << "\n";
    }
    if (out_path.empty()) {
        std::cout << body.str();
    } else {
        open_output(out_path) << body.str();
    }
    return 0;
}

int run_ingest_command(const InputOptions& input, const std::string& out_path) {
    const sepkron::IngestedPanel ingested = load_panel(input);
    if (out_path.empty()) {
        sepkron::export_long_csv(ingested, std::cout);
    } else {
        auto os = open_output(out_path);
        sepkron::export_long_csv(ingested, os);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"separability tests for replicated space-time data"};
    app.require_subcommand(1);

    // test
    auto* test_cmd = app.add_subcommand("test", "run separability tests on a data set");
    InputOptions test_input;
    add_input_options(test_cmd, test_input);
    int procedure = 3;
    std::vector<std::string> test_names = {"lrt-mc", "lrt", "frob", "wald"};
    std::optional<int> j_pin, l_pin;
    std::optional<double> tau_time, tau_space;
    int mc_reps = 999;
    int mc_draws = 200000;
    std::uint64_t seed = 1;
    int threads = 0;
    std::string out_path, format = "json";
    test_cmd->add_option("--procedure", procedure,
                         "1 = fixed basis, 2 = data-driven basis, 3 = space+time reduction");
    test_cmd->add_option("--tests", test_names, "subset of lrt,lrt-mc,frob,wald")
        ->delimiter(',');
    test_cmd->add_option("--J", j_pin, "pin the number of temporal components");
    test_cmd->add_option("--L", l_pin, "pin the number of spatial components (procedure 3)");
    test_cmd->add_option("--tau-time", tau_time,
                         "temporal variance threshold (default 0.8; 0.85 for procedure 2)");
    test_cmd->add_option("--tau-space", tau_space, "spatial variance threshold (default 0.8)");
    test_cmd->add_option("--mc-reps", mc_reps, "Monte Carlo LRT replicates");
    test_cmd->add_option("--mc-draws", mc_draws, "weighted chi-square Monte Carlo draws");
    test_cmd->add_option("--seed", seed, "RNG seed");
    test_cmd->add_option("--threads", threads, "worker threads (0 = hardware)");
    test_cmd->add_option("--out", out_path, "output file (default stdout)");
    test_cmd->add_option("--format", format, "json or csv");

    // scenario
    auto* scen_cmd = app.add_subcommand("scenario", "run a simulation scenario");
    std::string spec_path, scen_out;
    std::optional<std::uint64_t> scen_seed;
    std::optional<int> scen_threads;
    scen_cmd->add_option("--spec", spec_path, "scenario spec JSON")->required();
    scen_cmd->add_option("--out", scen_out, "results CSV (default stdout)");
    scen_cmd->add_option("--seed", scen_seed, "override the spec's seed");
    scen_cmd->add_option("--threads", scen_threads, "override the spec's thread count");

    // qmatrix
    auto* q_cmd = app.add_subcommand("qmatrix", "print a Q matrix as CSV");
    std::string which;
    int q_k = 2, q_i = 2, q_max = sepkron::kDefaultMaxKronDim;
    std::string q_out;
    q_cmd->add_option("--which", which, "sym, cross, tilde or breve")->required();
    q_cmd->add_option("--K", q_k, "row-factor dimension")->required();
    q_cmd->add_option("--I", q_i, "column-factor dimension (ignored for sym)");
    q_cmd->add_option("--max-dim", q_max, "dense materialization guard on K*I");
    q_cmd->add_option("--out", q_out, "output file (default stdout)");

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "normalize input to long CSV");
    InputOptions ingest_input;
    add_input_options(ingest_cmd, ingest_input);
    std::string ingest_out;
    ingest_cmd->add_option("--out", ingest_out, "output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    try {
        if (*test_cmd)
            return run_test_command(test_input, procedure, test_names, j_pin, l_pin,
                                    tau_time, tau_space, mc_reps, mc_draws, seed,
                                    threads, out_path, format);
        if (*scen_cmd)
            return run_scenario_command(spec_path, scen_out, scen_seed, scen_threads);
        if (*q_cmd) return run_qmatrix_command(which, q_k, q_i, q_max, q_out);
        if (*ingest_cmd) return run_ingest_command(ingest_input, ingest_out);
    } catch (const sepkron::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const sepkron::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return 0;
}
