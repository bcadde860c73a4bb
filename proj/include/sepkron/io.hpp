#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sepkron/common.hpp"
#include "sepkron/functional.hpp"

namespace sepkron {

/// Panel plus the identifiers needed to reproduce the source file exactly.
struct IngestedPanel {
    CurvePanel panel;
    std::vector<std::string> location_ids;  // ordered by first appearance
    std::vector<long long> replicate_ids;   // ascending
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

inline std::string strip(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

inline double parse_double(const std::string& token, const std::string& context) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(token, &pos);
        if (pos != token.size()) throw std::invalid_argument(token);
        return v;
    } catch (const std::exception&) {
        throw ValidationError(context + ": non-numeric value '" + token + "'");
    }
}

inline long long parse_int(const std::string& token, const std::string& context) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(token, &pos);
        if (pos != token.size()) throw std::invalid_argument(token);
        return v;
    } catch (const std::exception&) {
        throw ValidationError(context + ": non-integer value '" + token + "'");
    }
}

}  // namespace detail

/// Locations file: header `location,x,y`, one row per location id, in file
/// order.
inline std::vector<std::pair<std::string, Eigen::Vector2d>> read_locations_csv_ordered(
    std::istream& in) {
    std::string line;
    if (!std::getline(in, line))
        throw ValidationError("locations file: empty input");
    if (detail::strip(line) != "location,x,y")
        throw ValidationError("locations file: expected header 'location,x,y'");
    std::vector<std::pair<std::string, Eigen::Vector2d>> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::strip(line).empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 3)
            throw ValidationError("locations file line " + std::to_string(line_no) +
                                  ": expected 3 fields");
        const std::string id = detail::strip(fields[0]);
        const double x = detail::parse_double(detail::strip(fields[1]), "locations file");
        const double y = detail::parse_double(detail::strip(fields[2]), "locations file");
        for (const auto& [seen, unused] : out)
            if (seen == id)
                throw ValidationError("locations file: duplicate location '" + id + "'");
        out.emplace_back(id, Eigen::Vector2d(x, y));
    }
    return out;
}

inline std::map<std::string, Eigen::Vector2d> read_locations_csv(std::istream& in) {
    std::map<std::string, Eigen::Vector2d> out;
    for (auto& [id, xy] : read_locations_csv_ordered(in)) out.emplace(id, xy);
    return out;
}

/// Long-format ingestion: header `replicate,location,time,value`. Every
/// replicate must cover the same (location x time) set; locations keep their
/// first-appearance order and the grid is sorted ascending. Coordinates come
/// from the optional locations map, else (index, 0).
inline IngestedPanel ingest_long_csv(std::istream& in,
                                     const std::map<std::string, Eigen::Vector2d>* locations = nullptr) {
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("long CSV: empty input");
    if (detail::strip(line) != "replicate,location,time,value")
        throw ValidationError("long CSV: expected header 'replicate,location,time,value'");

    struct Record {
        long long replicate;
        int location;
        double time;
        double value;
    };
    std::vector<Record> records;
    std::vector<std::string> location_ids;
    std::unordered_map<std::string, int> location_index;
    std::vector<long long> replicate_ids;
    std::unordered_map<long long, int> replicate_index;
    std::vector<double> times;

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::strip(line).empty()) continue;
        const auto fields = detail::split_csv_line(line);
        const std::string context = "long CSV line " + std::to_string(line_no);
        if (fields.size() != 4)
            throw ValidationError(context + ": expected 4 fields, got " +
                                  std::to_string(fields.size()));
        Record rec;
        rec.replicate = detail::parse_int(detail::strip(fields[0]), context);
        const std::string loc = detail::strip(fields[1]);
        rec.time = detail::parse_double(detail::strip(fields[2]), context);
        rec.value = detail::parse_double(detail::strip(fields[3]), context);
        if (!std::isfinite(rec.value))
            throw ValidationError(context + ": non-finite value");
        auto [it, inserted] = location_index.emplace(loc, static_cast<int>(location_ids.size()));
        if (inserted) location_ids.push_back(loc);
        rec.location = it->second;
        if (replicate_index.emplace(rec.replicate, 0).second)
            replicate_ids.push_back(rec.replicate);
        if (std::find(times.begin(), times.end(), rec.time) == times.end())
            times.push_back(rec.time);
        records.push_back(rec);
    }
    if (records.empty()) throw ValidationError("long CSV: no data rows");

    std::sort(replicate_ids.begin(), replicate_ids.end());
    for (std::size_t i = 0; i < replicate_ids.size(); ++i)
        replicate_index[replicate_ids[i]] = static_cast<int>(i);
    std::sort(times.begin(), times.end());
    std::unordered_map<double, int> time_index;
    for (std::size_t i = 0; i < times.size(); ++i) time_index[times[i]] = static_cast<int>(i);

    const int n = static_cast<int>(replicate_ids.size());
    const int k = static_cast<int>(location_ids.size());
    const int t = static_cast<int>(times.size());
    std::vector<Eigen::MatrixXd> values(
        static_cast<std::size_t>(n),
        Eigen::MatrixXd::Constant(k, t, std::numeric_limits<double>::quiet_NaN()));
    for (const auto& rec : records) {
        auto& slot = values[static_cast<std::size_t>(replicate_index[rec.replicate])](
            rec.location, time_index[rec.time]);
        if (!std::isnan(slot))
            throw ValidationError("long CSV: duplicate triple (replicate=" +
                                  std::to_string(rec.replicate) + ", location=" +
                                  location_ids[static_cast<std::size_t>(rec.location)] +
                                  ", time=" + std::to_string(rec.time) + ")");
        slot = rec.value;
    }

    std::vector<std::string> missing;
    for (int rep = 0; rep < n && missing.size() < 10; ++rep)
        for (int loc = 0; loc < k && missing.size() < 10; ++loc)
            for (int ti = 0; ti < t && missing.size() < 10; ++ti)
                if (std::isnan(values[static_cast<std::size_t>(rep)](loc, ti)))
                    missing.push_back("(replicate=" + std::to_string(replicate_ids[static_cast<std::size_t>(rep)]) +
                                      ", location=" + location_ids[static_cast<std::size_t>(loc)] +
                                      ", time=" + std::to_string(times[static_cast<std::size_t>(ti)]) + ")");
    if (!missing.empty()) {
        std::string msg = "long CSV: missing cells, first offenders:";
        for (const auto& m : missing) msg += " " + m;
        throw ValidationError(msg);
    }

    Eigen::MatrixXd coords(k, 2);
    for (int loc = 0; loc < k; ++loc) {
        if (locations) {
            const auto it = locations->find(location_ids[static_cast<std::size_t>(loc)]);
            if (it == locations->end())
                throw ValidationError("long CSV: location '" +
                                      location_ids[static_cast<std::size_t>(loc)] +
                                      "' missing from the locations file");
            coords.row(loc) = it->second.transpose();
        } else {
            coords.row(loc) << static_cast<double>(loc), 0.0;
        }
    }
    Eigen::VectorXd grid = Eigen::Map<Eigen::VectorXd>(times.data(), t);
    return IngestedPanel{CurvePanel(std::move(values), std::move(grid), std::move(coords)),
                         std::move(location_ids), std::move(replicate_ids)};
}

inline IngestedPanel ingest_long_csv_file(const std::string& path,
                                          const std::optional<std::string>& locations_path = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open data file '" + path + "'");
    if (locations_path) {
        std::ifstream loc_in(*locations_path);
        if (!loc_in) throw ValidationError("cannot open locations file '" + *locations_path + "'");
        const auto locations = read_locations_csv(loc_in);
        return ingest_long_csv(in, &locations);
    }
    return ingest_long_csv(in);
}

/// Writes the panel back in long format; ingest(export(panel)) reproduces the
/// panel exactly.
inline void export_long_csv(const IngestedPanel& ingested, std::ostream& os) {
    const CurvePanel& panel = ingested.panel;
    os << "replicate,location,time,value\n";
    os.precision(17);
    for (int rep = 0; rep < panel.n_replicates(); ++rep)
        for (int loc = 0; loc < panel.n_locations(); ++loc)
            for (int ti = 0; ti < panel.n_grid(); ++ti)
                os << ingested.replicate_ids[static_cast<std::size_t>(rep)] << ','
                   << ingested.location_ids[static_cast<std::size_t>(loc)] << ','
                   << panel.grid()[ti] << ',' << panel.replicate(rep)(loc, ti) << "\n";
}

// ---------------------------------------------------------------------------
// Irish wind raw file
// ---------------------------------------------------------------------------

/// Column order of the StatLib daily wind-speed file (no header): year (two
/// digits), month, day, then one speed per station.
inline const std::vector<std::string>& wind_station_columns() {
    static const std::vector<std::string> cols = {"RPT", "VAL", "ROS", "KIL",
                                                  "SHA", "BIR", "DUB", "CLA",
                                                  "MUL", "CLO", "BEL", "MAL"};
    return cols;
}

/// Default 11-station subset (drops ROS, matching the classic 11-station
/// analyses of this data set).
inline std::vector<std::string> default_wind_stations() {
    std::vector<std::string> out;
    for (const auto& s : wind_station_columns())
        if (s != "ROS") out.push_back(s);
    return out;
}

struct WindConfig {
    std::string path;
    std::vector<std::string> stations = default_wind_stations();
    int day_grid = 28;          // common grid size per month
    bool deseasonalize = false;  // applied by the caller via sepkron::deseasonalize
};

/// One replicate per calendar month: the month's daily series is mapped onto
/// a common `day_grid`-point grid on [0, 1] by linear interpolation of the
/// rescaled day index. Months shorter than 28 observed days are an error.
inline IngestedPanel ingest_wind(const WindConfig& cfg, std::istream& in) {
    if (cfg.day_grid < 2) throw ValidationError("ingest_wind: day_grid must be >= 2");
    if (cfg.stations.empty())
        throw ValidationError("ingest_wind: station subset must be nonempty");
    const auto& columns = wind_station_columns();
    std::vector<int> station_cols;
    for (const auto& s : cfg.stations) {
        const auto it = std::find(columns.begin(), columns.end(), s);
        if (it == columns.end())
            throw ValidationError("ingest_wind: unknown station '" + s + "'");
        station_cols.push_back(static_cast<int>(it - columns.begin()));
    }

    struct DayRow {
        int day;
        std::vector<double> speeds;  // one per requested station
    };
    std::map<std::pair<int, int>, std::vector<DayRow>> months;  // (year, month)

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::strip(line).empty()) continue;
        std::istringstream is(line);
        std::vector<std::string> tokens;
        std::string tok;
        while (is >> tok) tokens.push_back(tok);
        const std::string context = "wind file line " + std::to_string(line_no);
        if (tokens.size() != 3 + columns.size())
            throw ValidationError(context + ": expected " +
                                  std::to_string(3 + columns.size()) + " fields, got " +
                                  std::to_string(tokens.size()));
        const int year = static_cast<int>(detail::parse_int(tokens[0], context));
        const int month = static_cast<int>(detail::parse_int(tokens[1], context));
        const int day = static_cast<int>(detail::parse_int(tokens[2], context));
        if (month < 1 || month > 12 || day < 1 || day > 31)
            throw ValidationError(context + ": invalid date " + tokens[0] + "-" +
                                  tokens[1] + "-" + tokens[2]);
        DayRow row;
        row.day = day;
        for (int col : station_cols)
            row.speeds.push_back(
                detail::parse_double(tokens[static_cast<std::size_t>(3 + col)], context));
        months[{year, month}].push_back(std::move(row));
    }
    if (months.empty()) throw ValidationError("ingest_wind: no data rows");

    const int k = static_cast<int>(cfg.stations.size());
    const int t = cfg.day_grid;
    std::vector<Eigen::MatrixXd> values;
    std::vector<long long> replicate_ids;
    for (auto& [key, rows] : months) {
        std::sort(rows.begin(), rows.end(),
                  [](const DayRow& a, const DayRow& b) { return a.day < b.day; });
        for (std::size_t i = 1; i < rows.size(); ++i)
            if (rows[i].day == rows[i - 1].day)
                throw ValidationError("ingest_wind: duplicate day " +
                                      std::to_string(rows[i].day) + " in month " +
                                      std::to_string(key.first) + "-" +
                                      std::to_string(key.second));
        const int n_days = static_cast<int>(rows.size());
        if (n_days < 28)
            throw ValidationError("ingest_wind: month " + std::to_string(key.first) + "-" +
                                  std::to_string(key.second) + " has only " +
                                  std::to_string(n_days) + " days of data (need >= 28)");
        Eigen::MatrixXd curve(k, t);
        for (int g = 0; g < t; ++g) {
            // position on the month's own day axis, rescaled to [0, 1]
            const double pos = static_cast<double>(g) / (t - 1) * (n_days - 1);
            const int lo = std::min(static_cast<int>(std::floor(pos)), n_days - 2);
            const double frac = pos - lo;
            for (int s = 0; s < k; ++s)
                curve(s, g) = (1.0 - frac) * rows[static_cast<std::size_t>(lo)].speeds[static_cast<std::size_t>(s)] +
                              frac * rows[static_cast<std::size_t>(lo + 1)].speeds[static_cast<std::size_t>(s)];
        }
        values.push_back(std::move(curve));
        replicate_ids.push_back(key.first * 100LL + key.second);
    }

    Eigen::VectorXd grid(t);
    for (int g = 0; g < t; ++g) grid[g] = static_cast<double>(g) / (t - 1);
    Eigen::MatrixXd coords(k, 2);
    for (int s = 0; s < k; ++s) coords.row(s) << static_cast<double>(s), 0.0;
    return IngestedPanel{CurvePanel(std::move(values), std::move(grid), std::move(coords)),
                         cfg.stations, std::move(replicate_ids)};
}

inline IngestedPanel ingest_wind_file(const WindConfig& cfg) {
    std::ifstream in(cfg.path);
    if (!in) throw ValidationError("cannot open wind file '" + cfg.path + "'");
    return ingest_wind(cfg, in);
}

/// Subtracts, from each replicate, the mean curve of its index-mod-period
/// group (calendar-month centering for monthly replicates with period 12).
inline CurvePanel deseasonalize(const CurvePanel& panel, int period = 12) {
    if (period < 1) throw ValidationError("deseasonalize: period must be >= 1");
    const int n = panel.n_replicates();
    std::vector<int> group_size(static_cast<std::size_t>(period), 0);
    std::vector<Eigen::MatrixXd> group_mean(
        static_cast<std::size_t>(period),
        Eigen::MatrixXd::Zero(panel.n_locations(), panel.n_grid()));
    for (int i = 0; i < n; ++i) {
        group_mean[static_cast<std::size_t>(i % period)] += panel.replicate(i);
        ++group_size[static_cast<std::size_t>(i % period)];
    }
    for (int g = 0; g < period; ++g) {
        if (group_size[static_cast<std::size_t>(g)] == 0) continue;
        if (group_size[static_cast<std::size_t>(g)] < 2)
            throw ValidationError("deseasonalize: group " + std::to_string(g) +
                                  " has fewer than 2 members");
        group_mean[static_cast<std::size_t>(g)] /= group_size[static_cast<std::size_t>(g)];
    }
    std::vector<Eigen::MatrixXd> values;
    values.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        values.push_back(panel.replicate(i) - group_mean[static_cast<std::size_t>(i % period)]);
    return CurvePanel(std::move(values), panel.grid(), panel.coords());
}

}  // namespace sepkron
