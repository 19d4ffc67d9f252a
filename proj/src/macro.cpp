#include "qpc/macro.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qpc/errors.hpp"

namespace qpc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

bool all_digits(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    return true;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            cells.push_back(line.substr(start));
            return cells;
        }
        cells.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

bool is_missing(const std::string& cell) {
    const std::string s = trim(cell);
    return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == ".";
}

double parse_number(const std::string& cell, int line, int column) {
    const std::string s = trim(cell);
    const char* begin = s.c_str();
    char* end = nullptr;
    const double value = std::strtod(begin, &end);
    if (end != begin + s.size() || s.empty())
        throw ParseError("line " + std::to_string(line) + ", column " + std::to_string(column) +
                         ": cannot parse numeric cell '" + s + "'");
    return value;
}

// Rows lost at the front of a series for each transform code.
int differencing_loss(int code) {
    switch (code) {
        case 1:
        case 4: return 0;
        case 2:
        case 5: return 1;
        case 3:
        case 6:
        case 7: return 2;
        default: throw UnknownTcode("transform code " + std::to_string(code) + " is not in 1..7");
    }
}

Eigen::VectorXd first_difference(const Eigen::VectorXd& v) {
    Eigen::VectorXd out = Eigen::VectorXd::Constant(v.size(), kNaN);
    for (Eigen::Index i = 1; i < v.size(); ++i) out(i) = v(i) - v(i - 1);
    return out;
}

Eigen::VectorXd log_of(const Eigen::VectorXd& v, const std::string& name) {
    Eigen::VectorXd out = Eigen::VectorXd::Constant(v.size(), kNaN);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::isnan(v(i))) continue;
        if (!(v(i) > 0.0))
            throw NonPositiveForLog("series '" + name +
                                    "' has a non-positive value under a log transform");
        out(i) = std::log(v(i));
    }
    return out;
}

Eigen::VectorXd transform_series(const Eigen::VectorXd& v, int code, const std::string& name) {
    switch (code) {
        case 1: return v;
        case 2: return first_difference(v);
        case 3: return first_difference(first_difference(v));
        case 4: return log_of(v, name);
        case 5: return first_difference(log_of(v, name));
        case 6: return first_difference(first_difference(log_of(v, name)));
        case 7: {
            Eigen::VectorXd growth = Eigen::VectorXd::Constant(v.size(), kNaN);
            for (Eigen::Index i = 1; i < v.size(); ++i) growth(i) = v(i) / v(i - 1) - 1.0;
            return first_difference(growth);
        }
        default:
            throw UnknownTcode("transform code " + std::to_string(code) + " is not in 1..7");
    }
}

}  // namespace

Quarter Quarter::parse(const std::string& text) {
    const std::string s = trim(text);
    const std::size_t qpos = s.find_first_of("Qq");
    if (qpos != std::string::npos) {
        const std::string year = s.substr(0, qpos);
        const std::string quarter = s.substr(qpos + 1);
        if (!all_digits(year) || !all_digits(quarter) || year.size() > 6 || quarter.size() != 1)
            throw ParseError("unrecognized quarterly date '" + s + "'");
        Quarter out{std::stoi(year), std::stoi(quarter)};
        if (out.q < 1 || out.q > 4) throw ParseError("quarter out of range in '" + s + "'");
        return out;
    }
    if (s.find('/') != std::string::npos) {
        const std::vector<std::string> parts = split_csv(
            [&s] {
                std::string t = s;
                std::replace(t.begin(), t.end(), '/', ',');
                return t;
            }());
        if (parts.size() != 3 || !all_digits(parts[0]) || !all_digits(parts[1]) ||
            !all_digits(parts[2]) || parts[2].size() > 6)
            throw ParseError("unrecognized quarterly date '" + s + "'");
        const int month = std::stoi(parts[0]);
        if (month < 1 || month > 12) throw ParseError("month out of range in '" + s + "'");
        return Quarter{std::stoi(parts[2]), (month - 1) / 3 + 1};
    }
    throw ParseError("unrecognized quarterly date '" + s + "'");
}

std::string Quarter::str() const { return std::to_string(year) + "Q" + std::to_string(q); }

MacroPanel load_panel(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open panel file '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    if (lines.size() < 3)
        throw ParseError("panel file needs a name row, a transform row, and data rows");

    const std::vector<std::string> header = split_csv(lines[0]);
    if (header.size() < 2) throw ParseError("line 1: no series columns");
    MacroPanel panel;
    for (std::size_t j = 1; j < header.size(); ++j) {
        const std::string name = trim(header[j]);
        if (name.empty())
            throw ParseError("line 1, column " + std::to_string(j + 1) + ": empty series name");
        if (std::find(panel.names.begin(), panel.names.end(), name) != panel.names.end())
            throw ParseError("duplicate series name '" + name + "'");
        panel.names.push_back(name);
    }
    const std::size_t k = panel.names.size();

    const std::vector<std::string> tcode_row = split_csv(lines[1]);
    if (tcode_row.size() != k + 1)
        throw ParseError("line 2 has " + std::to_string(tcode_row.size()) + " cells, expected " +
                         std::to_string(k + 1));
    for (std::size_t j = 1; j <= k; ++j) {
        const double raw = parse_number(tcode_row[j], 2, static_cast<int>(j + 1));
        const int code = static_cast<int>(raw);
        if (raw != code || code < 1 || code > 7)
            throw UnknownTcode("series '" + panel.names[j - 1] + "' has transform code " +
                               trim(tcode_row[j]));
        panel.tcodes.push_back(code);
    }

    const std::size_t rows = lines.size() - 2;
    panel.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
    for (std::size_t r = 0; r < rows; ++r) {
        const int file_line = static_cast<int>(r) + 3;
        const std::vector<std::string> cells = split_csv(lines[r + 2]);
        if (cells.size() != k + 1)
            throw ParseError("line " + std::to_string(file_line) + " has " +
                             std::to_string(cells.size()) + " cells, expected " +
                             std::to_string(k + 1));
        Quarter date{};
        try {
            date = Quarter::parse(cells[0]);
        } catch (const ParseError& e) {
            throw ParseError("line " + std::to_string(file_line) + ": " + e.what());
        }
        if (!panel.dates.empty() && !(panel.dates.back() < date))
            throw ParseError("line " + std::to_string(file_line) +
                             ": dates must be strictly increasing");
        panel.dates.push_back(date);
        for (std::size_t j = 1; j <= k; ++j)
            panel.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j - 1)) =
                is_missing(cells[j]) ? kNaN
                                     : parse_number(cells[j], file_line, static_cast<int>(j + 1));
    }
    return panel;
}

TransformedPanel apply_tcodes(const MacroPanel& panel) {
    const auto k = static_cast<Eigen::Index>(panel.names.size());
    if (static_cast<Eigen::Index>(panel.tcodes.size()) != k || panel.values.cols() != k)
        throw ConfigError("panel names, tcodes, and value columns must align");
    if (static_cast<Eigen::Index>(panel.dates.size()) != panel.values.rows())
        throw ConfigError("panel dates must match the value rows");

    int trim_rows = 0;
    for (int code : panel.tcodes) trim_rows = std::max(trim_rows, differencing_loss(code));
    const Eigen::Index kept = panel.values.rows() - trim_rows;
    if (kept < 1) throw ConfigError("panel too short for its transform codes");

    TransformedPanel out;
    out.names = panel.names;
    out.dates.assign(panel.dates.begin() + trim_rows, panel.dates.end());
    out.values.resize(kept, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::VectorXd t = transform_series(
            panel.values.col(j), panel.tcodes[static_cast<std::size_t>(j)],
            panel.names[static_cast<std::size_t>(j)]);
        for (Eigen::Index i = 0; i < t.size(); ++i)
            if (!std::isfinite(t(i))) t(i) = kNaN;
        out.values.col(j) = t.tail(kept);
    }
    return out;
}

ForecastRun rolling_forecast(const MacroPanel& panel, const std::string& target, int window,
                             const ForecastOptions& opts) {
    const QuantileLevel tau(opts.tau);
    const TransformedPanel tp = apply_tcodes(panel);
    const auto T = static_cast<int>(tp.dates.size());
    const auto k = static_cast<int>(tp.names.size());

    int target_col = -1;
    for (int j = 0; j < k; ++j)
        if (tp.names[static_cast<std::size_t>(j)] == target) target_col = j;
    if (target_col < 0) throw UnknownSeries("target series '" + target + "' is not in the panel");
    if (window < 4) throw ConfigError("window must be at least 4");
    if (window > T - 1) throw ConfigError("window must leave at least one forecast origin");

    ForecastRun run;
    run.target = target;
    run.tau = opts.tau;
    run.window = window;
    run.method = opts.method;
    for (int j = 0; j < k; ++j)
        if (j != target_col) run.universe.push_back(tp.names[static_cast<std::size_t>(j)]);

    const int n_train = window - 1;  // one-step-ahead pairs inside the window
    for (int o = window - 1; o + 1 < T; ++o) {
        ForecastRecord rec;
        rec.origin = tp.dates[static_cast<std::size_t>(o)];
        rec.target = tp.dates[static_cast<std::size_t>(o + 1)];
        const int first = o - window + 1;  // first predictor row used

        bool y_complete = true;
        for (int t = first + 1; t <= o + 1; ++t)
            if (std::isnan(tp.values(t, target_col))) y_complete = false;
        if (!y_complete) {
            rec.error = "target series has missing values in the window";
            run.records.push_back(std::move(rec));
            continue;
        }

        // Candidates: complete and non-constant over the window's predictor
        // rows, the forecast row included.
        std::vector<int> cands;
        for (int j = 0; j < k; ++j) {
            if (j == target_col) continue;
            bool usable = true;
            for (int t = first; t <= o && usable; ++t)
                if (std::isnan(tp.values(t, j))) usable = false;
            if (usable) cands.push_back(j);
        }
        if (cands.empty()) {
            rec.error = "no complete candidate series in the window";
            run.records.push_back(std::move(rec));
            continue;
        }

        Dataset data;
        data.x.resize(n_train, static_cast<Eigen::Index>(cands.size()));
        data.y.resize(n_train);
        Eigen::VectorXd forecast_row(static_cast<Eigen::Index>(cands.size()));
        for (std::size_t c = 0; c < cands.size(); ++c) {
            for (int t = 0; t < n_train; ++t)
                data.x(t, static_cast<Eigen::Index>(c)) = tp.values(first + t, cands[c]);
            forecast_row(static_cast<Eigen::Index>(c)) = tp.values(o, cands[c]);
            data.names.push_back(tp.names[static_cast<std::size_t>(cands[c])]);
        }
        for (int t = 0; t < n_train; ++t) data.y(t) = tp.values(first + 1 + t, target_col);

        if (opts.standardize) {
            std::vector<std::size_t> keep;
            for (std::size_t c = 0; c < data.names.size(); ++c) {
                const auto col = data.x.col(static_cast<Eigen::Index>(c)).array();
                const double mean = col.mean();
                const double sd = std::sqrt((col - mean).square().sum() / n_train);
                if (sd <= 1e-14) continue;  // constant in the window, drop
                data.x.col(static_cast<Eigen::Index>(c)) = (col - mean) / sd;
                forecast_row(static_cast<Eigen::Index>(c)) =
                    (forecast_row(static_cast<Eigen::Index>(c)) - mean) / sd;
                keep.push_back(c);
            }
            if (keep.size() != data.names.size()) {
                Dataset pruned;
                pruned.y = data.y;
                pruned.x.resize(n_train, static_cast<Eigen::Index>(keep.size()));
                Eigen::VectorXd pruned_row(static_cast<Eigen::Index>(keep.size()));
                for (std::size_t c = 0; c < keep.size(); ++c) {
                    pruned.x.col(static_cast<Eigen::Index>(c)) =
                        data.x.col(static_cast<Eigen::Index>(keep[c]));
                    pruned_row(static_cast<Eigen::Index>(c)) =
                        forecast_row(static_cast<Eigen::Index>(keep[c]));
                    pruned.names.push_back(data.names[keep[c]]);
                }
                data = std::move(pruned);
                forecast_row = std::move(pruned_row);
            }
            if (data.names.empty()) {
                rec.error = "no usable candidate series in the window";
                run.records.push_back(std::move(rec));
                continue;
            }
        }

        try {
            double pred = 0.0;
            std::vector<int> local;
            if (opts.method == Algorithm::L1QR) {
                const std::vector<QrFit> path =
                    lambda_path(data.y, data.x, tau, opts.lambda_grid);
                const QrFit& fit = path[ebic_lambda_index(path, data.n(), tau)];
                local = active_slopes(fit);
                pred = fit.beta(0) + forecast_row.dot(fit.beta.tail(data.p()));
            } else {
                ScreenConfig sc = ScreenConfig::defaults_for(data.n(), opts.tau);
                const SelectionTrace trace = opts.method == Algorithm::QPCS
                                                 ? qpcs_run(data, sc)
                                                 : qpcfr_run(data, sc);
                local = trace.chosen();
                pred = trace.final_fit.beta(0);
                for (std::size_t c = 0; c < local.size(); ++c)
                    pred += trace.final_fit.beta(static_cast<Eigen::Index>(c) + 1) *
                            forecast_row(local[c]);
            }
            for (int c : local) rec.selected.push_back(data.names[static_cast<std::size_t>(c)]);
            rec.prediction = pred;
            rec.realized = tp.values(o + 1, target_col);
            rec.loss = check_loss(rec.realized - rec.prediction, opts.tau);
            rec.ok = true;
        } catch (const Error& e) {
            rec.ok = false;
            rec.error = e.what();
        }
        run.records.push_back(std::move(rec));
    }
    return run;
}

std::vector<FrequencyEntry> frequency_table(
    const ForecastRun& run, int top_k,
    const std::optional<std::pair<Quarter, Quarter>>& filter) {
    if (top_k < 0) throw ConfigError("top_k must be nonnegative");
    int total = 0;
    std::map<std::string, int> counts;
    for (const ForecastRecord& rec : run.records) {
        if (filter && (rec.target < filter->first || filter->second < rec.target)) continue;
        ++total;
        for (const std::string& name : rec.selected) ++counts[name];
    }
    if (total == 0) throw EmptyFilter("no forecast records inside the date filter");
    std::vector<FrequencyEntry> entries;
    entries.reserve(counts.size());
    for (const auto& [name, count] : counts) entries.push_back({name, count, total});
    std::sort(entries.begin(), entries.end(), [](const FrequencyEntry& a, const FrequencyEntry& b) {
        if (a.count != b.count) return a.count > b.count;
        return a.name < b.name;
    });
    if (static_cast<int>(entries.size()) > top_k) entries.resize(static_cast<std::size_t>(top_k));
    return entries;
}

std::pair<int, int> inclusion_check(const ForecastRun& run, const std::string& name) {
    if (std::find(run.universe.begin(), run.universe.end(), name) == run.universe.end())
        throw UnknownSeries("series '" + name + "' is not in the candidate universe");
    int times = 0;
    for (const ForecastRecord& rec : run.records)
        if (std::find(rec.selected.begin(), rec.selected.end(), name) != rec.selected.end())
            ++times;
    return {times, static_cast<int>(run.records.size())};
}

}  // namespace qpc
