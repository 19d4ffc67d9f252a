// Command-line surface: simulate | screen | forecast | bench. JSON config plus
// flag overrides (flags win); outputs go to --out atomically, or stdout.
#include <unistd.h>

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "qpc/macro.hpp"
#include "qpc/screening.hpp"
#include "qpc/simulation.hpp"

namespace {

using nlohmann::json;

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

struct Flags {
    std::string config_path;
    std::string out;
    std::string format = "csv";
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
};

// ---------------------------------------------------------------- output --

void write_file_atomic(const std::filesystem::path& target, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path tmp = target;
    tmp += ".tmp" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw qpc::Error("cannot open '" + tmp.string() + "' for writing");
        out << content;
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw qpc::Error("failed while writing '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        std::error_code ec2;
        fs::remove(tmp, ec2);
        throw qpc::Error("cannot move output into '" + target.string() + "': " + ec.message());
    }
}

void emit(const std::string& out_path, const std::string& content) {
    if (out_path.empty())
        std::cout << content;
    else
        write_file_atomic(out_path, content);
}

// ---------------------------------------------------------------- config --

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw qpc::ConfigError("cannot open config file '" + path + "'");
    json cfg;
    try {
        cfg = json::parse(in);
    } catch (const json::exception& e) {
        throw qpc::ParseError(std::string("config file: ") + e.what());
    }
    if (!cfg.is_object()) throw qpc::ConfigError("config file must hold a JSON object");
    return cfg;
}

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw qpc::ConfigError("unknown config key '" + it.key() + "' in " + where);
}

double get_num(const json& cfg, const char* key, double fallback) {
    if (!cfg.contains(key)) return fallback;
    if (!cfg.at(key).is_number()) throw qpc::ConfigError(std::string("config key '") + key + "' must be a number");
    return cfg.at(key).get<double>();
}

int get_int(const json& cfg, const char* key, int fallback) {
    if (!cfg.contains(key)) return fallback;
    if (!cfg.at(key).is_number_integer() && !cfg.at(key).is_number_unsigned())
        throw qpc::ConfigError(std::string("config key '") + key + "' must be an integer");
    return cfg.at(key).get<int>();
}

bool get_bool(const json& cfg, const char* key, bool fallback) {
    if (!cfg.contains(key)) return fallback;
    if (!cfg.at(key).is_boolean())
        throw qpc::ConfigError(std::string("config key '") + key + "' must be a boolean");
    return cfg.at(key).get<bool>();
}

std::string get_str(const json& cfg, const char* key, const std::string& fallback) {
    if (!cfg.contains(key)) return fallback;
    if (!cfg.at(key).is_string())
        throw qpc::ConfigError(std::string("config key '") + key + "' must be a string");
    return cfg.at(key).get<std::string>();
}

std::string require_str(const json& cfg, const char* key, const std::string& where) {
    if (!cfg.contains(key))
        throw qpc::ConfigError("config key '" + std::string(key) + "' is required for " + where);
    return get_str(cfg, key, "");
}

// Scalar-or-array convenience for grid keys.
std::vector<double> get_num_list(const json& cfg, const char* key,
                                 const std::vector<double>& fallback) {
    if (!cfg.contains(key)) return fallback;
    const json& v = cfg.at(key);
    if (v.is_number()) return {v.get<double>()};
    if (v.is_array()) {
        std::vector<double> out;
        for (const json& item : v) {
            if (!item.is_number())
                throw qpc::ConfigError(std::string("config key '") + key + "' must hold numbers");
            out.push_back(item.get<double>());
        }
        return out;
    }
    throw qpc::ConfigError(std::string("config key '") + key + "' must be a number or an array");
}

std::vector<int> get_int_list(const json& cfg, const char* key, const std::vector<int>& fallback) {
    if (!cfg.contains(key)) return fallback;
    const json& v = cfg.at(key);
    if (v.is_number_integer() || v.is_number_unsigned()) return {v.get<int>()};
    if (v.is_array()) {
        std::vector<int> out;
        for (const json& item : v) {
            if (!item.is_number_integer() && !item.is_number_unsigned())
                throw qpc::ConfigError(std::string("config key '") + key + "' must hold integers");
            out.push_back(item.get<int>());
        }
        return out;
    }
    throw qpc::ConfigError(std::string("config key '") + key + "' must be an integer or an array");
}

std::vector<qpc::Algorithm> get_methods(const json& cfg, const std::vector<std::string>& fallback) {
    std::vector<std::string> names = fallback;
    if (cfg.contains("methods")) {
        const json& v = cfg.at("methods");
        names.clear();
        if (v.is_string()) {
            names.push_back(v.get<std::string>());
        } else if (v.is_array()) {
            for (const json& item : v) {
                if (!item.is_string())
                    throw qpc::ConfigError("config key 'methods' must hold strings");
                names.push_back(item.get<std::string>());
            }
        } else {
            throw qpc::ConfigError("config key 'methods' must be a string or an array");
        }
    }
    std::vector<qpc::Algorithm> out;
    for (const std::string& name : names) out.push_back(qpc::algorithm_from_string(name));
    if (out.empty()) throw qpc::ConfigError("config key 'methods' must not be empty");
    return out;
}

std::uint64_t require_seed(const json& cfg, const Flags& flags, const std::string& where) {
    if (flags.seed) return *flags.seed;
    if (cfg.contains("seed")) {
        const json& v = cfg.at("seed");
        if (!v.is_number_integer() && !v.is_number_unsigned())
            throw qpc::ConfigError("config key 'seed' must be an integer");
        if (v.is_number_integer() && v.get<std::int64_t>() < 0)
            throw qpc::ConfigError("config key 'seed' must be nonnegative");
        return v.get<std::uint64_t>();
    }
    throw qpc::ConfigError("a seed is required for " + where + " (config key 'seed' or --seed)");
}

int resolve_jobs(const json& cfg, const Flags& flags) {
    int jobs = 0;
    if (flags.jobs) {
        jobs = *flags.jobs;
    } else if (const char* env = std::getenv("QPC_SCREEN_JOBS")) {
        char* end = nullptr;
        const long parsed = std::strtol(env, &end, 10);
        if (end == env || *end != '\0')
            throw qpc::ConfigError("QPC_SCREEN_JOBS must be an integer, got '" + std::string(env) +
                                   "'");
        jobs = static_cast<int>(parsed);
    } else if (cfg.contains("jobs")) {
        jobs = get_int(cfg, "jobs", 1);
    } else {
        const unsigned hw = std::thread::hardware_concurrency();
        jobs = hw == 0 ? 1 : static_cast<int>(hw);
    }
    if (jobs < 1) throw qpc::ConfigError("jobs must be at least 1");
    return jobs;
}

qpc::DgpFamily parse_family(const std::string& name) {
    if (name == "A" || name == "a") return qpc::DgpFamily::A;
    if (name == "B" || name == "b") return qpc::DgpFamily::B;
    throw qpc::ConfigError("config key 'family' must be \"A\" or \"B\"");
}

const std::set<std::string> kStudyKeys = {
    "family", "n", "p", "tau", "phi", "rho", "sigma", "burn_in", "holdout",
    "replications", "methods", "lambda_grid", "seed", "jobs"};

qpc::StudyConfig study_from_config(const json& cfg, const Flags& flags, const std::string& where) {
    reject_unknown_keys(cfg, kStudyKeys, where);
    qpc::StudyConfig sc;
    sc.family = parse_family(get_str(cfg, "family", "A"));
    sc.n = get_int(cfg, "n", 200);
    sc.p = get_int(cfg, "p", 1000);
    sc.tau = get_num_list(cfg, "tau", {0.5});
    sc.phi = get_num_list(cfg, "phi", {0.2});
    sc.rho = get_num_list(cfg, "rho", {0.5});
    sc.sigma = get_num(cfg, "sigma", 1.0);
    sc.burn_in = get_int(cfg, "burn_in", 200);
    sc.holdout = get_int(cfg, "holdout", 10);
    sc.replications = get_int(cfg, "replications", 50);
    sc.methods = get_methods(cfg, {"qpcs"});
    sc.lambda_grid = get_int(cfg, "lambda_grid", 100);
    sc.seed = require_seed(cfg, flags, where);
    sc.jobs = resolve_jobs(cfg, flags);
    return sc;
}

// -------------------------------------------------------------- simulate --

std::string rank_cell(const qpc::MethodSummary& ms, std::size_t i) {
    if (ms.rank.empty()) return "-";
    return ms.rank[i] ? fmt6(*ms.rank[i]) : "NA";
}

std::string simulate_csv(const qpc::SimulationReport& rep) {
    std::ostringstream out;
    out << "family,n,p,tau,phi,rho,method,replications,failures,mqe,crate,tp,fp,r1,r2,r3,r4\n";
    for (const qpc::StudySetting& setting : rep.settings) {
        for (const qpc::MethodSummary& ms : setting.methods) {
            out << (setting.dgp.family == qpc::DgpFamily::A ? 'A' : 'B') << ','
                << setting.dgp.n << ',' << setting.dgp.p << ',' << fmt6(setting.dgp.tau) << ','
                << fmt6(setting.dgp.phi) << ',' << fmt6(setting.dgp.rho) << ','
                << qpc::to_string(ms.method) << ',' << ms.replications << ',' << ms.failures
                << ',' << fmt6(ms.mqe) << ',' << ms.crate << ',' << fmt6(ms.tp) << ','
                << fmt6(ms.fp);
            for (std::size_t i = 0; i < 4; ++i) out << ',' << rank_cell(ms, i);
            out << '\n';
        }
    }
    return out.str();
}

json record_json(const qpc::ReplicationRecord& rec) {
    json j;
    j["replication"] = rec.replication;
    j["ok"] = rec.ok;
    j["error"] = rec.error;
    j["selected"] = rec.selected;
    j["mqe"] = rec.mqe;
    j["tp"] = rec.tp;
    j["fp"] = rec.fp;
    j["exact"] = rec.exact;
    j["ranks"] = rec.ranks;
    return j;
}

std::string simulate_json(const qpc::SimulationReport& rep) {
    json root;
    json& cfg = root["config"];
    cfg["family"] = rep.config.family == qpc::DgpFamily::A ? "A" : "B";
    cfg["n"] = rep.config.n;
    cfg["p"] = rep.config.p;
    cfg["tau"] = rep.config.tau;
    cfg["phi"] = rep.config.phi;
    cfg["rho"] = rep.config.rho;
    cfg["sigma"] = rep.config.sigma;
    cfg["burn_in"] = rep.config.burn_in;
    cfg["holdout"] = rep.config.holdout;
    cfg["replications"] = rep.config.replications;
    json methods = json::array();
    for (qpc::Algorithm a : rep.config.methods) methods.push_back(qpc::to_string(a));
    cfg["methods"] = methods;
    cfg["lambda_grid"] = rep.config.lambda_grid;
    cfg["seed"] = rep.config.seed;
    root["settings"] = json::array();
    for (const qpc::StudySetting& setting : rep.settings) {
        json s;
        s["tau"] = setting.dgp.tau;
        s["phi"] = setting.dgp.phi;
        s["rho"] = setting.dgp.rho;
        s["methods"] = json::array();
        for (const qpc::MethodSummary& ms : setting.methods) {
            json m;
            m["method"] = qpc::to_string(ms.method);
            m["replications"] = ms.replications;
            m["failures"] = ms.failures;
            m["mqe"] = ms.mqe;
            m["crate"] = ms.crate;
            m["tp"] = ms.tp;
            m["fp"] = ms.fp;
            json ranks = json::array();
            for (const auto& r : ms.rank) {
                if (r)
                    ranks.push_back(*r);
                else
                    ranks.push_back(nullptr);
            }
            m["rank"] = ranks;
            m["records"] = json::array();
            for (const qpc::ReplicationRecord& rec : ms.records)
                m["records"].push_back(record_json(rec));
            s["methods"].push_back(std::move(m));
        }
        root["settings"].push_back(std::move(s));
    }
    return root.dump(2) + "\n";
}

void cmd_simulate(const json& cfg, const Flags& flags) {
    const qpc::StudyConfig sc = study_from_config(cfg, flags, "simulate");
    const qpc::SimulationReport rep = qpc::run_study(sc);
    emit(flags.out, flags.format == "csv" ? simulate_csv(rep) : simulate_json(rep));
}

// ---------------------------------------------------------------- screen --

std::string trim_ws(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_csv_line(const std::string& line) {
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

// Plain numeric table: header of unique names, one response column, no gaps.
qpc::Dataset load_dataset_csv(const std::string& path, const std::string& target) {
    std::ifstream in(path);
    if (!in) throw qpc::ParseError("cannot open data file '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!trim_ws(line).empty()) lines.push_back(line);
    }
    if (lines.size() < 2) throw qpc::ParseError("data file needs a header and at least one row");

    std::vector<std::string> names;
    for (const std::string& cell : split_csv_line(lines[0])) {
        const std::string name = trim_ws(cell);
        if (name.empty()) throw qpc::ParseError("line 1: empty column name");
        names.push_back(name);
    }
    int target_col = -1;
    for (std::size_t j = 0; j < names.size(); ++j)
        if (names[j] == target) target_col = static_cast<int>(j);
    if (target_col < 0)
        throw qpc::UnknownSeries("target column '" + target + "' is not in the data file");

    const std::size_t rows = lines.size() - 1;
    const std::size_t k = names.size();
    Eigen::MatrixXd values(rows, k);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::vector<std::string> cells = split_csv_line(lines[r + 1]);
        if (cells.size() != k)
            throw qpc::ParseError("line " + std::to_string(r + 2) + " has " +
                                  std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(k));
        for (std::size_t j = 0; j < k; ++j) {
            const std::string cell = trim_ws(cells[j]);
            const char* begin = cell.c_str();
            char* end = nullptr;
            const double value = std::strtod(begin, &end);
            if (cell.empty() || end != begin + cell.size())
                throw qpc::ParseError("line " + std::to_string(r + 2) + ", column " +
                                      std::to_string(j + 1) + ": cannot parse numeric cell '" +
                                      cell + "'");
            values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = value;
        }
    }

    qpc::Dataset data;
    data.y = values.col(target_col);
    data.x.resize(values.rows(), values.cols() - 1);
    Eigen::Index out_col = 0;
    for (std::size_t j = 0; j < k; ++j) {
        if (static_cast<int>(j) == target_col) continue;
        data.x.col(out_col++) = values.col(static_cast<Eigen::Index>(j));
        data.names.push_back(names[j]);
    }
    data.validate();
    return data;
}

const std::set<std::string> kScreenKeys = {"data",        "target",      "tau",
                                           "algorithm",   "d_star",      "m_cap",
                                           "d_max",       "standardize", "literal_confounding",
                                           "lambda_grid"};

std::string trace_csv(const qpc::SelectionTrace& trace, const qpc::Dataset& data) {
    std::ostringstream out;
    out << "step,index,name,abs_qpc,confounders,skipped,ebic,chosen\n";
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const qpc::SelectionStep& s = trace.steps[i];
        out << i + 1 << ',' << s.index << ',' << data.names[static_cast<std::size_t>(s.index)]
            << ',' << fmt6(s.abs_qpc) << ',';
        for (std::size_t c = 0; c < s.confounders.size(); ++c)
            out << (c ? ";" : "") << s.confounders[c];
        out << ',' << s.skipped << ',' << fmt6(trace.ebic[i]) << ','
            << (static_cast<int>(i) < trace.chosen_d ? 1 : 0) << '\n';
    }
    return out.str();
}

json fit_json(const qpc::QrFit& fit, const std::vector<int>& cols, const qpc::Dataset& data) {
    json j;
    j["intercept"] = fit.beta(0);
    j["coefficients"] = json::array();
    for (std::size_t c = 0; c < cols.size(); ++c) {
        json entry;
        entry["index"] = cols[c];
        entry["name"] = data.names[static_cast<std::size_t>(cols[c])];
        entry["beta"] = fit.beta(static_cast<Eigen::Index>(c) + 1);
        j["coefficients"].push_back(std::move(entry));
    }
    j["objective"] = fit.objective;
    j["iterations"] = fit.iterations;
    j["converged"] = fit.converged;
    return j;
}

std::string trace_json(const qpc::SelectionTrace& trace, const qpc::Dataset& data,
                       qpc::Algorithm alg, const qpc::ScreenConfig& sc) {
    json root;
    root["algorithm"] = qpc::to_string(alg);
    root["tau"] = sc.tau;
    root["n"] = data.n();
    root["p"] = data.p();
    json cfg;
    cfg["d_max"] = sc.d_max;
    cfg["standardize"] = sc.standardize;
    if (alg == qpc::Algorithm::QPCS) {
        cfg["d_star"] = sc.d_star;
        cfg["m_cap"] = sc.m_cap;
        cfg["literal_confounding"] = sc.literal_confounding;
    }
    root["config"] = cfg;
    root["degenerate"] = json::array();
    for (int k : trace.degenerate_candidates) {
        json d;
        d["index"] = k;
        d["name"] = data.names[static_cast<std::size_t>(k)];
        root["degenerate"].push_back(std::move(d));
    }
    root["stalled"] = trace.stalled;
    root["steps"] = json::array();
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const qpc::SelectionStep& s = trace.steps[i];
        json step;
        step["step"] = i + 1;
        step["index"] = s.index;
        step["name"] = data.names[static_cast<std::size_t>(s.index)];
        step["abs_qpc"] = s.abs_qpc;
        step["confounders"] = s.confounders;
        step["skipped"] = s.skipped;
        root["steps"].push_back(std::move(step));
    }
    root["ebic"] = json::array();
    for (double e : trace.ebic) root["ebic"].push_back(std::isfinite(e) ? json(e) : json());
    root["chosen_d"] = trace.chosen_d;
    json selected = json::array();
    for (int k : trace.chosen()) selected.push_back(data.names[static_cast<std::size_t>(k)]);
    root["selected"] = selected;
    root["final_fit"] = fit_json(trace.final_fit, trace.chosen(), data);
    return root.dump(2) + "\n";
}

void cmd_screen(const json& cfg, const Flags& flags) {
    reject_unknown_keys(cfg, kScreenKeys, "screen");
    const std::string data_path = require_str(cfg, "data", "screen");
    const std::string target = require_str(cfg, "target", "screen");
    const qpc::Dataset data = load_dataset_csv(data_path, target);
    const double tau = get_num(cfg, "tau", 0.5);
    const qpc::Algorithm alg = qpc::algorithm_from_string(get_str(cfg, "algorithm", "qpcs"));

    if (alg == qpc::Algorithm::L1QR) {
        const qpc::QuantileLevel level(tau);
        const int grid = get_int(cfg, "lambda_grid", 100);
        const std::vector<qpc::QrFit> path = qpc::lambda_path(data.y, data.x, level, grid);
        const std::size_t chosen = qpc::ebic_lambda_index(path, data.n(), level);
        const double nn = static_cast<double>(data.n());
        std::vector<double> losses(path.size()), scores(path.size());
        std::vector<int> active(path.size());
        for (std::size_t i = 0; i < path.size(); ++i) {
            double loss = 0.0;
            for (Eigen::Index r = 0; r < path[i].residuals.size(); ++r)
                loss += qpc::check_loss(path[i].residuals(r), tau);
            losses[i] = loss / nn;
            active[i] = static_cast<int>(qpc::active_slopes(path[i]).size());
            scores[i] = losses[i] > 1e-300
                            ? std::log(losses[i]) +
                                  (active[i] > 0 ? active[i] * (std::log(nn) / (2.0 * nn)) *
                                                       std::log(static_cast<double>(active[i]))
                                                 : 0.0)
                            : std::numeric_limits<double>::infinity();
        }
        if (flags.format == "csv") {
            std::ostringstream out;
            out << "lambda,active,loss,ebic,chosen\n";
            for (std::size_t i = 0; i < path.size(); ++i)
                out << fmt6(path[i].lambda) << ',' << active[i] << ',' << fmt6(losses[i]) << ','
                    << fmt6(scores[i]) << ',' << (i == chosen ? 1 : 0) << '\n';
            emit(flags.out, out.str());
        } else {
            json root;
            root["algorithm"] = "l1qr";
            root["tau"] = tau;
            root["lambda_grid"] = grid;
            root["path"] = json::array();
            for (std::size_t i = 0; i < path.size(); ++i) {
                json row;
                row["lambda"] = path[i].lambda;
                row["active"] = active[i];
                row["loss"] = losses[i];
                row["ebic"] = std::isfinite(scores[i]) ? json(scores[i]) : json();
                root["path"].push_back(std::move(row));
            }
            root["chosen_index"] = chosen;
            const qpc::QrFit& fit = path[chosen];
            root["intercept"] = fit.beta(0);
            root["selected"] = json::array();
            for (int k : qpc::active_slopes(fit)) {
                json entry;
                entry["index"] = k;
                entry["name"] = data.names[static_cast<std::size_t>(k)];
                entry["beta"] = fit.beta(k + 1);
                root["selected"].push_back(std::move(entry));
            }
            root["objective"] = fit.objective;
            emit(flags.out, root.dump(2) + "\n");
        }
        return;
    }

    qpc::ScreenConfig sc = qpc::ScreenConfig::defaults_for(data.n(), tau);
    sc.d_star = get_int(cfg, "d_star", sc.d_star);
    sc.m_cap = get_int(cfg, "m_cap", sc.m_cap);
    sc.d_max = get_int(cfg, "d_max", sc.d_max);
    sc.standardize = get_bool(cfg, "standardize", false);
    sc.literal_confounding = get_bool(cfg, "literal_confounding", false);
    const qpc::SelectionTrace trace =
        alg == qpc::Algorithm::QPCS ? qpc::qpcs_run(data, sc) : qpc::qpcfr_run(data, sc);
    emit(flags.out,
         flags.format == "csv" ? trace_csv(trace, data) : trace_json(trace, data, alg, sc));
}

// -------------------------------------------------------------- forecast --

const std::set<std::string> kForecastKeys = {"panel",       "target", "windows",
                                             "methods",     "tau",    "lambda_grid",
                                             "standardize", "top_k",  "filters"};

struct FilterSpec {
    std::string label;
    qpc::Quarter from;
    qpc::Quarter to;
};

std::vector<FilterSpec> parse_filters(const json& cfg) {
    std::vector<FilterSpec> filters;
    if (!cfg.contains("filters")) return filters;
    const json& v = cfg.at("filters");
    if (!v.is_array()) throw qpc::ConfigError("config key 'filters' must be an array");
    int counter = 0;
    for (const json& item : v) {
        ++counter;
        if (!item.is_object()) throw qpc::ConfigError("each filter must be an object");
        reject_unknown_keys(item, {"label", "from", "to"}, "a filter");
        FilterSpec f;
        f.label = get_str(item, "label", "f" + std::to_string(counter));
        for (char c : f.label)
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
                throw qpc::ConfigError("filter label '" + f.label +
                                       "' may only use letters, digits, '_' and '-'");
        f.from = qpc::Quarter::parse(require_str(item, "from", "a filter"));
        f.to = qpc::Quarter::parse(require_str(item, "to", "a filter"));
        filters.push_back(std::move(f));
    }
    return filters;
}

json forecast_run_json(const qpc::ForecastRun& run) {
    json root;
    root["target"] = run.target;
    root["tau"] = run.tau;
    root["window"] = run.window;
    root["method"] = qpc::to_string(run.method);
    root["universe"] = run.universe;
    root["records"] = json::array();
    for (const qpc::ForecastRecord& rec : run.records) {
        json r;
        r["origin"] = rec.origin.str();
        r["target"] = rec.target.str();
        r["ok"] = rec.ok;
        r["error"] = rec.error;
        r["selected"] = rec.selected;
        r["prediction"] = rec.prediction;
        r["realized"] = rec.realized;
        r["loss"] = rec.loss;
        root["records"].push_back(std::move(r));
    }
    return root;
}

std::string frequency_csv(const std::vector<qpc::FrequencyEntry>& entries) {
    std::ostringstream out;
    out << "rank,name,freq\n";
    for (std::size_t i = 0; i < entries.size(); ++i)
        out << i + 1 << ',' << entries[i].name << ','
            << fmt6(static_cast<double>(entries[i].count) / entries[i].total) << '\n';
    return out.str();
}

void cmd_forecast(const json& cfg, const Flags& flags) {
    reject_unknown_keys(cfg, kForecastKeys, "forecast");
    if (flags.out.empty())
        throw qpc::ConfigError("forecast writes several files; --out must name a directory");
    const std::string panel_path = require_str(cfg, "panel", "forecast");
    const std::string target = require_str(cfg, "target", "forecast");
    const std::vector<int> windows = get_int_list(cfg, "windows", {80});
    const std::vector<qpc::Algorithm> methods = get_methods(cfg, {"qpcs"});
    const int top_k = get_int(cfg, "top_k", 5);
    const std::vector<FilterSpec> filters = parse_filters(cfg);

    qpc::ForecastOptions opts;
    opts.tau = get_num(cfg, "tau", 0.05);
    opts.lambda_grid = get_int(cfg, "lambda_grid", 100);
    opts.standardize = get_bool(cfg, "standardize", false);

    const qpc::MacroPanel panel = qpc::load_panel(panel_path);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(flags.out, ec);
    if (ec) throw qpc::ConfigError("cannot create output directory '" + flags.out + "'");

    for (qpc::Algorithm method : methods) {
        opts.method = method;
        for (int window : windows) {
            const qpc::ForecastRun run = qpc::rolling_forecast(panel, target, window, opts);
            const std::string stem = qpc::to_string(method) + "_l" + std::to_string(window);
            write_file_atomic(fs::path(flags.out) / ("run_" + stem + ".json"),
                              forecast_run_json(run).dump(2) + "\n");
            write_file_atomic(fs::path(flags.out) / ("freq_" + stem + ".csv"),
                              frequency_csv(qpc::frequency_table(run, top_k, std::nullopt)));
            for (const FilterSpec& f : filters) {
                const auto table =
                    qpc::frequency_table(run, top_k, std::make_pair(f.from, f.to));
                write_file_atomic(fs::path(flags.out) / ("freq_" + stem + "_" + f.label + ".csv"),
                                  frequency_csv(table));
            }
        }
    }
}

// ------------------------------------------------------------------ bench --

void cmd_bench(const json& cfg, const Flags& flags) {
    const qpc::StudyConfig sc = study_from_config(cfg, flags, "bench");
    const std::vector<qpc::BenchResult> results = qpc::bench_runtime(sc);
    if (flags.format == "csv") {
        std::ostringstream out;
        out << "method,mean_seconds,replications\n";
        for (const qpc::BenchResult& res : results)
            out << qpc::to_string(res.method) << ',' << fmt6(res.mean_seconds) << ','
                << res.seconds.size() << '\n';
        emit(flags.out, out.str());
    } else {
        json root;
        root["results"] = json::array();
        for (const qpc::BenchResult& res : results) {
            json r;
            r["method"] = qpc::to_string(res.method);
            r["mean_seconds"] = res.mean_seconds;
            r["seconds"] = res.seconds;
            root["results"].push_back(std::move(r));
        }
        emit(flags.out, root.dump(2) + "\n");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantile partial correlation screening toolkit"};
    app.require_subcommand(1);
    Flags flags;
    auto add_common = [&flags](CLI::App* sub) {
        sub->add_option("--config", flags.config_path, "JSON config file");
        sub->add_option("--seed", flags.seed, "RNG seed (overrides the config)");
        sub->add_option("--out", flags.out,
                        "output file (a directory for forecast); stdout when omitted");
        sub->add_option("--format", flags.format, "output format: csv or json")
            ->check(CLI::IsMember({"csv", "json"}));
        sub->add_option("--jobs", flags.jobs,
                        "worker count; falls back to QPC_SCREEN_JOBS, the config, then all cores");
    };
    CLI::App* sim = app.add_subcommand("simulate", "Replicated screening studies on synthetic DGPs");
    CLI::App* screen = app.add_subcommand("screen", "One screening run on a CSV dataset");
    CLI::App* forecast = app.add_subcommand("forecast", "Rolling one-step-ahead quantile forecasts");
    CLI::App* bench = app.add_subcommand("bench", "Per-method selection runtimes");
    for (CLI::App* sub : {sim, screen, forecast, bench}) add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const json cfg = load_config(flags.config_path);
        if (sim->parsed())
            cmd_simulate(cfg, flags);
        else if (screen->parsed())
            cmd_screen(cfg, flags);
        else if (forecast->parsed())
            cmd_forecast(cfg, flags);
        else
            cmd_bench(cfg, flags);
        return 0;
    } catch (const qpc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const qpc::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}
