#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qpc/screening.hpp"

namespace qpc {

// Quarterly date; accepts "1987Q3" or the m/d/yyyy spelling used by the raw files.
struct Quarter {
    int year = 0;
    int q = 0;

    static Quarter parse(const std::string& text);
    std::string str() const;
    friend auto operator<=>(const Quarter&, const Quarter&) = default;
};

struct MacroPanel {
    std::vector<Quarter> dates;       // strictly increasing
    std::vector<std::string> names;   // unique series names
    std::vector<int> tcodes;          // one of 1..7 per series
    Eigen::MatrixXd values;           // T x k, NaN marks a missing cell
};

// Header row of names, second row of transform codes, date-indexed data rows.
MacroPanel load_panel(const std::string& path);

struct TransformedPanel {
    std::vector<Quarter> dates;
    std::vector<std::string> names;
    Eigen::MatrixXd values;  // rows trimmed uniformly by the worst differencing loss
};

// Codes: 1 level, 2 first difference, 3 second difference, 4 log, 5 dlog,
// 6 d2log, 7 first difference of the period growth rate. Log transforms throw
// NonPositiveForLog when they hit a non-positive observed value.
TransformedPanel apply_tcodes(const MacroPanel& panel);

struct ForecastRecord {
    Quarter origin;  // last period whose predictors are used
    Quarter target;  // forecasted period (origin + 1)
    bool ok = false;
    std::string error;
    std::vector<std::string> selected;
    double prediction = 0.0;
    double realized = 0.0;
    double loss = 0.0;  // check loss of the forecast error
};

struct ForecastRun {
    std::string target;
    double tau = 0.05;
    int window = 0;  // l
    Algorithm method = Algorithm::QPCS;
    std::vector<std::string> universe;  // every candidate series name
    std::vector<ForecastRecord> records;
};

struct ForecastOptions {
    double tau = 0.05;
    Algorithm method = Algorithm::QPCS;
    int lambda_grid = 100;
    bool standardize = false;
};

// Fixed-length sliding windows: for each origin o = l .. T-1 (1-based periods),
// fit on the window's one-step-ahead pairs and forecast the target at o + 1.
// Predictors with any missing value inside the window drop out of that origin's
// candidate set; per-origin failures are recorded and skipped.
ForecastRun rolling_forecast(const MacroPanel& panel, const std::string& target, int window,
                             const ForecastOptions& opts);

struct FrequencyEntry {
    std::string name;
    int count = 0;
    int total = 0;  // records in the filtered range
};

// Selection frequencies over records whose target quarter falls inside the
// filter (whole run when absent), sorted by descending count then name.
// Throws EmptyFilter when no record matches.
std::vector<FrequencyEntry> frequency_table(const ForecastRun& run, int top_k,
                                            const std::optional<std::pair<Quarter, Quarter>>& filter);

// (times selected, total origins) for one series; UnknownSeries if the name is
// not in the run's candidate universe.
std::pair<int, int> inclusion_check(const ForecastRun& run, const std::string& name);

}  // namespace qpc
