#include "qpc/screening.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "qpc/errors.hpp"
#include "qpc/kernels.hpp"

namespace qpc {

namespace {

constexpr double kVarFloor = 1e-14;  // same degeneracy floor as pearson_corr
constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> column_variances(const Dataset& data) {
    std::vector<double> var(static_cast<std::size_t>(data.p()));
    for (Eigen::Index k = 0; k < data.p(); ++k) {
        const auto col = data.x.col(k).array();
        const double mean = col.mean();
        var[static_cast<std::size_t>(k)] =
            (col - mean).square().sum() / static_cast<double>(data.n());
    }
    return var;
}

// Absolute correlations against every other usable column, plus (optionally)
// a per-column candidate order: |corr| descending, ties toward the smaller
// index. Degenerate columns contribute zero rows/columns and never appear in
// an order list.
struct NeighborTable {
    Eigen::MatrixXd abs_corr;
    std::vector<std::vector<int>> order;
};

NeighborTable build_neighbors(const Dataset& data, const std::vector<char>& degenerate,
                              const std::vector<double>& var, bool want_order) {
    const Eigen::Index n = data.n();
    const Eigen::Index p = data.p();
    Eigen::MatrixXd z(n, p);
    for (Eigen::Index k = 0; k < p; ++k) {
        if (degenerate[static_cast<std::size_t>(k)]) {
            z.col(k).setZero();
            continue;
        }
        const double mean = data.x.col(k).mean();
        const double scale = std::sqrt(var[static_cast<std::size_t>(k)] * static_cast<double>(n));
        z.col(k) = (data.x.col(k).array() - mean) / scale;
    }
    NeighborTable table;
    table.abs_corr.noalias() = z.transpose() * z;
    table.abs_corr = table.abs_corr.cwiseAbs();
    if (!want_order) return table;

    std::vector<int> pool;
    pool.reserve(static_cast<std::size_t>(p));
    for (int k = 0; k < p; ++k)
        if (!degenerate[static_cast<std::size_t>(k)]) pool.push_back(k);
    table.order.resize(static_cast<std::size_t>(p));
    for (int j : pool) {
        auto& list = table.order[static_cast<std::size_t>(j)];
        list.reserve(pool.size() - 1);
        for (int k : pool)
            if (k != j) list.push_back(k);
        const auto col = table.abs_corr.col(j);
        std::sort(list.begin(), list.end(), [&col](int a, int b) {
            const double ca = col(a);
            const double cb = col(b);
            if (ca != cb) return ca > cb;
            return a < b;
        });
    }
    return table;
}

// First m usable neighbors of j not yet selected, reported in index order.
std::vector<int> ordered_confounders(const NeighborTable& table, int j,
                                     const std::vector<char>& in_selected, int m) {
    std::vector<int> out;
    if (m <= 0) return out;
    out.reserve(static_cast<std::size_t>(m));
    for (int k : table.order[static_cast<std::size_t>(j)]) {
        if (in_selected[static_cast<std::size_t>(k)]) continue;
        out.push_back(k);
        if (static_cast<int>(out.size()) == m) break;
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Degenerate manuscript reading: the pool is the already-selected set itself.
std::vector<int> selected_pool_confounders(const NeighborTable& table, int j,
                                           const std::vector<int>& selected, int m) {
    std::vector<int> out;
    if (m <= 0 || selected.empty()) return out;
    std::vector<int> pool = selected;
    const auto col = table.abs_corr.col(j);
    std::sort(pool.begin(), pool.end(), [&col](int a, int b) {
        const double ca = col(a);
        const double cb = col(b);
        if (ca != cb) return ca > cb;
        return a < b;
    });
    if (static_cast<int>(pool.size()) > m) pool.resize(static_cast<std::size_t>(m));
    std::sort(pool.begin(), pool.end());
    return pool;
}

struct StepOutcome {
    int index = -1;
    double abs_qpc = -1.0;
    std::vector<int> confounders;
    int skipped = 0;
    bool ok = false;
};

StepOutcome qpcs_step(const Dataset& data, const ScreenConfig& cfg, const NeighborTable& table,
                      const std::vector<int>& selected, const std::vector<char>& in_selected,
                      const std::vector<char>& degenerate, int d, QuantileLevel tau) {
    // The augmentation base stops growing after step d*: every later step
    // conditions on the same first d*-1 selections the step-d* scores used.
    const int base_len = std::min(d, cfg.d_star) - 1;
    const std::vector<int> base(selected.begin(), selected.begin() + base_len);
    const int m_eff =
        std::max(0, std::min(cfg.m_cap, static_cast<int>(data.n()) - 2 - base_len));

    StepOutcome out;
    const int p = static_cast<int>(data.p());
    std::vector<int> cond;
    for (int j = 0; j < p; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (in_selected[uj] || degenerate[uj]) continue;
        std::vector<int> conf = cfg.literal_confounding
                                    ? selected_pool_confounders(table, j, selected, m_eff)
                                    : ordered_confounders(table, j, in_selected, m_eff);
        cond = base;
        for (int k : conf)
            if (std::find(base.begin(), base.end(), k) == base.end()) cond.push_back(k);
        double score = 0.0;
        try {
            score = std::abs(sample_qpc(data, j, cond, tau).value);
        } catch (const DegeneratePredictor&) {
            ++out.skipped;
            continue;
        } catch (const RankDeficient&) {
            ++out.skipped;
            continue;
        } catch (const NotConverged&) {
            ++out.skipped;
            continue;
        } catch (const DegenerateColumn&) {
            ++out.skipped;
            continue;
        }
        if (!std::isfinite(score)) {
            ++out.skipped;
            continue;
        }
        if (!out.ok || score > out.abs_qpc) {
            out.ok = true;
            out.index = j;
            out.abs_qpc = score;
            out.confounders = std::move(conf);
        }
    }
    return out;
}

StepOutcome qpcfr_step(const Dataset& data, const std::vector<int>& selected,
                       const std::vector<char>& in_selected, const std::vector<char>& degenerate,
                       QuantileLevel tau) {
    const int p = static_cast<int>(data.p());
    std::vector<int> candidates;
    for (int j = 0; j < p; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (!in_selected[uj] && !degenerate[uj]) candidates.push_back(j);
    }
    StepOutcome out;
    if (candidates.empty()) return out;
    std::vector<CandidateScore> scores;
    try {
        scores = qpc_screen_scores(data, candidates, selected, tau);
    } catch (const RankDeficient&) {
        out.skipped = static_cast<int>(candidates.size());
        return out;
    } catch (const NotConverged&) {
        out.skipped = static_cast<int>(candidates.size());
        return out;
    }
    for (const CandidateScore& s : scores) {
        if (!s.ok || !std::isfinite(s.abs_value)) {
            ++out.skipped;
            continue;
        }
        if (!out.ok || s.abs_value > out.abs_qpc) {
            out.ok = true;
            out.index = s.index;
            out.abs_qpc = s.abs_value;
        }
    }
    return out;
}

struct PrefixChoice {
    std::vector<double> ebic;
    int chosen_d = 0;
    QrFit fit;
};

// Refit every prefix, score it, keep the EBIC argmin (ties to the smaller
// prefix). Failed refits and underflowing losses carry a +inf sentinel so
// they order last; if nothing scores finitely the shortest refittable prefix
// wins.
PrefixChoice choose_prefix(const Dataset& data, const std::vector<int>& selected,
                           QuantileLevel tau) {
    const int len = static_cast<int>(selected.size());
    PrefixChoice out;
    out.ebic.assign(static_cast<std::size_t>(len), kInf);
    std::vector<QrFit> fits(static_cast<std::size_t>(len));
    std::vector<char> fit_ok(static_cast<std::size_t>(len), 0);
    for (int d = 1; d <= len; ++d) {
        const std::vector<int> cols(selected.begin(), selected.begin() + d);
        const auto ud = static_cast<std::size_t>(d - 1);
        try {
            fits[ud] = qr_fit(data.y, data.x, cols, tau);
            fit_ok[ud] = 1;
            out.ebic[ud] = ebic(fits[ud].objective, d, data.n());
        } catch (const NonPositiveLoss&) {
        } catch (const RankDeficient&) {
        } catch (const NotConverged&) {
        }
    }
    int best = -1;
    for (int d = 1; d <= len; ++d) {
        const double value = out.ebic[static_cast<std::size_t>(d - 1)];
        if (!std::isfinite(value)) continue;
        if (best < 0 || value < out.ebic[static_cast<std::size_t>(best - 1)]) best = d;
    }
    if (best < 0) {
        for (int d = 1; d <= len && best < 0; ++d)
            if (fit_ok[static_cast<std::size_t>(d - 1)]) best = d;
    }
    if (best < 0) throw StalledSelection("no prefix refit succeeded");
    out.chosen_d = best;
    out.fit = std::move(fits[static_cast<std::size_t>(best - 1)]);
    return out;
}

SelectionTrace run_impl(const Dataset& data, const ScreenConfig& cfg, bool confound) {
    data.validate();
    cfg.validate(data.n());
    const QuantileLevel tau(cfg.tau);
    const int p = static_cast<int>(data.p());

    std::vector<double> var = column_variances(data);
    std::vector<char> degenerate(static_cast<std::size_t>(p), 0);
    SelectionTrace trace;
    int usable = 0;
    for (int k = 0; k < p; ++k) {
        if (var[static_cast<std::size_t>(k)] <= kVarFloor) {
            degenerate[static_cast<std::size_t>(k)] = 1;
            trace.degenerate_candidates.push_back(k);
        } else {
            ++usable;
        }
    }
    if (usable == 0) throw DegenerateColumn("every candidate column is constant");

    Dataset work;
    const Dataset* active = &data;
    if (cfg.standardize) {
        work = data;
        for (int k = 0; k < p; ++k) {
            const auto uk = static_cast<std::size_t>(k);
            if (degenerate[uk]) continue;
            const double mean = work.x.col(k).mean();
            work.x.col(k) = (work.x.col(k).array() - mean) / std::sqrt(var[uk]);
        }
        var = column_variances(work);
        active = &work;
    }

    NeighborTable table;
    if (confound) table = build_neighbors(*active, degenerate, var, !cfg.literal_confounding);

    std::vector<int> selected;
    std::vector<char> in_selected(static_cast<std::size_t>(p), 0);
    for (int d = 1; d <= cfg.d_max; ++d) {
        if (static_cast<int>(selected.size()) == usable) break;  // pool exhausted, not a stall
        StepOutcome step =
            confound ? qpcs_step(*active, cfg, table, selected, in_selected, degenerate, d, tau)
                     : qpcfr_step(*active, selected, in_selected, degenerate, tau);
        if (!step.ok) {
            if (selected.empty()) throw StalledSelection("every candidate failed at the first step");
            trace.stalled = true;
            break;
        }
        selected.push_back(step.index);
        in_selected[static_cast<std::size_t>(step.index)] = 1;
        trace.steps.push_back(
            {step.index, step.abs_qpc, std::move(step.confounders), step.skipped});
    }

    PrefixChoice choice = choose_prefix(*active, selected, tau);
    trace.ebic = std::move(choice.ebic);
    trace.chosen_d = choice.chosen_d;
    trace.final_fit = std::move(choice.fit);
    return trace;
}

}  // namespace

Algorithm algorithm_from_string(const std::string& name) {
    std::string lower;
    lower.reserve(name.size());
    for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (lower == "qpcs") return Algorithm::QPCS;
    if (lower == "qpcfr") return Algorithm::QPCFR;
    if (lower == "l1qr") return Algorithm::L1QR;
    throw ConfigError("unknown algorithm '" + name + "' (expected qpcs, qpcfr, or l1qr)");
}

std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::QPCS: return "qpcs";
        case Algorithm::QPCFR: return "qpcfr";
        case Algorithm::L1QR: return "l1qr";
    }
    throw ConfigError("unknown algorithm value");
}

ScreenConfig ScreenConfig::defaults_for(Eigen::Index n, double tau) {
    if (n < 3) throw ConfigError("screening defaults need at least 3 observations");
    ScreenConfig cfg;
    cfg.tau = tau;
    const double ratio = static_cast<double>(n) / std::log(static_cast<double>(n));
    cfg.d_max = std::max(1, std::min(static_cast<int>(std::floor(ratio)), static_cast<int>(n) - 2));
    cfg.d_star = std::max(1, std::min(static_cast<int>(std::floor(std::sqrt(ratio))), cfg.d_max));
    cfg.m_cap = cfg.d_star;
    return cfg;
}

void ScreenConfig::validate(Eigen::Index n) const {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie strictly inside (0, 1)");
    if (d_star < 1) throw ConfigError("d_star must be at least 1");
    if (m_cap < 0) throw ConfigError("m_cap must be nonnegative");
    if (d_max < d_star) throw ConfigError("d_max must be at least d_star");
    if (d_max + 1 >= n) throw ConfigError("d_max + 1 must stay below the sample size");
}

std::vector<int> SelectionTrace::selected() const {
    std::vector<int> out;
    out.reserve(steps.size());
    for (const SelectionStep& s : steps) out.push_back(s.index);
    return out;
}

std::vector<int> SelectionTrace::chosen() const {
    std::vector<int> out = selected();
    if (chosen_d >= 0 && chosen_d < static_cast<int>(out.size()))
        out.resize(static_cast<std::size_t>(chosen_d));
    return out;
}

std::vector<int> confounding_set(const Dataset& data, int j, const std::vector<int>& excluded,
                                 int m) {
    data.validate();
    const int p = static_cast<int>(data.p());
    if (j < 0 || j >= p) throw ConfigError("confounding candidate index out of range");
    if (m < 0) throw ConfigError("confounding set cap must be nonnegative");
    std::vector<char> skip(static_cast<std::size_t>(p), 0);
    for (int k : excluded) {
        if (k < 0 || k >= p) throw ConfigError("excluded index out of range");
        skip[static_cast<std::size_t>(k)] = 1;
    }
    skip[static_cast<std::size_t>(j)] = 1;

    const std::vector<double> var = column_variances(data);
    if (var[static_cast<std::size_t>(j)] <= kVarFloor)
        throw DegenerateColumn("confounding candidate column is constant");

    std::vector<std::pair<double, int>> scored;
    for (int k = 0; k < p; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        if (skip[uk] || var[uk] <= kVarFloor) continue;
        scored.emplace_back(std::abs(pearson_corr(data.x.col(j), data.x.col(k))), k);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    if (static_cast<int>(scored.size()) > m) scored.resize(static_cast<std::size_t>(m));
    std::vector<int> out;
    out.reserve(scored.size());
    for (const auto& [corr, k] : scored) out.push_back(k);
    std::sort(out.begin(), out.end());
    return out;
}

double ebic(double loss, int d, Eigen::Index n) {
    if (d < 1) throw ConfigError("prefix size must be at least 1");
    if (n < 2) throw ConfigError("EBIC needs at least 2 observations");
    if (!(loss > 1e-300)) throw NonPositiveLoss("check loss is too small to log");
    const double nn = static_cast<double>(n);
    return std::log(loss) +
           static_cast<double>(d) * (std::log(nn) / (2.0 * nn)) * std::log(static_cast<double>(d));
}

SelectionTrace qpcs_run(const Dataset& data, const ScreenConfig& cfg) {
    return run_impl(data, cfg, true);
}

SelectionTrace qpcfr_run(const Dataset& data, const ScreenConfig& cfg) {
    return run_impl(data, cfg, false);
}

TwoStepFit select_two_step(const Dataset& data, const SelectionTrace& trace, QuantileLevel tau) {
    data.validate();
    const std::vector<int> all = trace.selected();
    PrefixChoice choice = choose_prefix(data, all, tau);
    TwoStepFit out;
    out.selected.assign(all.begin(), all.begin() + choice.chosen_d);
    out.fit = std::move(choice.fit);
    return out;
}

}  // namespace qpc
