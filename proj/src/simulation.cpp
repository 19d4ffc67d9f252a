#include "qpc/simulation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "qpc/errors.hpp"
#include "qpc/parallel.hpp"
#include "qpc/rng.hpp"

namespace qpc {

namespace {

Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& sigma) {
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success)
        throw CovarianceNotPD("innovation covariance is not positive definite");
    return llt.matrixL();
}

// Response coefficients on the contemporaneous predictor row. The family-A
// coefficient on column 3 cancels the marginal covariance between x4 and y
// that the three sqrt(rho)-correlated signal columns would otherwise induce.
Eigen::VectorXd response_coefficients(const DgpSpec& spec) {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(spec.p);
    if (spec.family == DgpFamily::A) {
        const double b = spec.beta();
        c(0) = c(1) = c(2) = b;
        c(3) = -3.0 * std::sqrt(spec.rho) * b;
    } else {
        c.head(4).setOnes();
    }
    return c;
}

std::vector<std::string> column_names(Eigen::Index p) {
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(p));
    for (Eigen::Index k = 0; k < p; ++k) names.push_back("x" + std::to_string(k + 1));
    return names;
}

// One VAR(1) path from X_0 = 0 with a pre-factorized innovation covariance.
// Draw order is fixed (p innovations then one response shock per period), so
// the stream layout is identical for every caller.
DgpDraw generate_with_factor(const DgpSpec& spec, const Eigen::MatrixXd& lower) {
    const Eigen::Index p = spec.p;
    const Eigen::Index kept_rows = spec.n + spec.holdout;
    const Eigen::Index total = spec.burn_in + kept_rows;
    const Eigen::VectorXd coef = response_coefficients(spec);
    const double shift = spec.sigma * standard_normal_quantile(spec.tau);

    RandomStream rng(spec.seed, spec.replication);
    Eigen::VectorXd state = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd eta(p);
    Eigen::MatrixXd x(kept_rows, p);
    Eigen::VectorXd y(kept_rows);
    for (Eigen::Index t = 0; t < total; ++t) {
        for (Eigen::Index k = 0; k < p; ++k) eta(k) = rng.normal();
        state = spec.phi * state + lower.triangularView<Eigen::Lower>() * eta;
        const double z = rng.normal();
        if (t < spec.burn_in) continue;
        const Eigen::Index row = t - spec.burn_in;
        x.row(row) = state.transpose();
        y(row) = coef.dot(state) + spec.sigma * z - shift;
    }

    DgpDraw draw;
    draw.train.x = x.topRows(spec.n);
    draw.train.y = y.head(spec.n);
    draw.train.names = column_names(p);
    draw.holdout.x = x.bottomRows(spec.holdout);
    draw.holdout.y = y.tail(spec.holdout);
    draw.holdout.names = draw.train.names;
    return draw;
}

double holdout_mqe(const Dataset& holdout, const Eigen::VectorXd& pred, QuantileLevel tau) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < holdout.n(); ++i)
        total += check_loss(holdout.y(i) - pred(i), tau.tau);
    return total / static_cast<double>(holdout.n());
}

Eigen::VectorXd predict_subset(const Dataset& data, const std::vector<int>& cols,
                               const Eigen::VectorXd& beta) {
    Eigen::VectorXd pred = Eigen::VectorXd::Constant(data.n(), beta(0));
    for (std::size_t k = 0; k < cols.size(); ++k)
        pred += beta(static_cast<Eigen::Index>(k) + 1) * data.x.col(cols[k]);
    return pred;
}

ReplicationRecord run_one(const DgpDraw& draw, Algorithm method, const DgpSpec& spec,
                          int lambda_grid) {
    ReplicationRecord rec;
    rec.replication = spec.replication;
    const QuantileLevel tau(spec.tau);
    const std::vector<int> support = spec.true_support();
    try {
        Eigen::VectorXd pred;
        if (method == Algorithm::L1QR) {
            const std::vector<QrFit> path =
                lambda_path(draw.train.y, draw.train.x, tau, lambda_grid);
            const QrFit& fit = path[ebic_lambda_index(path, draw.train.n(), tau)];
            rec.selected = active_slopes(fit);
            pred = Eigen::VectorXd::Constant(draw.holdout.n(), fit.beta(0));
            pred += draw.holdout.x * fit.beta.tail(spec.p);
        } else {
            const ScreenConfig sc = ScreenConfig::defaults_for(draw.train.n(), spec.tau);
            const SelectionTrace trace =
                method == Algorithm::QPCS ? qpcs_run(draw.train, sc) : qpcfr_run(draw.train, sc);
            rec.selected = trace.chosen();
            pred = predict_subset(draw.holdout, rec.selected, trace.final_fit.beta);
            for (int target : support) {
                const auto it = std::find(rec.selected.begin(), rec.selected.end(), target);
                rec.ranks.push_back(
                    it == rec.selected.end()
                        ? 0
                        : static_cast<int>(it - rec.selected.begin()) + 1);
            }
        }
        rec.mqe = holdout_mqe(draw.holdout, pred, tau);
        for (int s : rec.selected)
            if (std::find(support.begin(), support.end(), s) != support.end()) ++rec.tp;
        rec.fp = static_cast<int>(rec.selected.size()) - rec.tp;
        rec.exact = rec.tp == static_cast<int>(support.size()) && rec.fp == 0;
        rec.ok = true;
    } catch (const Error& e) {
        rec.ok = false;
        rec.error = e.what();
    }
    return rec;
}

MethodSummary summarize(Algorithm method, std::vector<ReplicationRecord> records) {
    MethodSummary s;
    s.method = method;
    double mqe = 0.0, tp = 0.0, fp = 0.0;
    for (const ReplicationRecord& rec : records) {
        if (!rec.ok) {
            ++s.failures;
            continue;
        }
        ++s.replications;
        mqe += rec.mqe;
        tp += rec.tp;
        fp += rec.fp;
        if (rec.exact) ++s.crate;
    }
    if (s.replications > 0) {
        mqe /= s.replications;
        tp /= s.replications;
        fp /= s.replications;
    }
    s.mqe = mqe;
    s.tp = tp;
    s.fp = fp;
    if (method != Algorithm::L1QR) {
        for (std::size_t i = 0; i < 4; ++i) {
            double total = 0.0;
            bool always = s.replications > 0;
            for (const ReplicationRecord& rec : records) {
                if (!rec.ok) continue;
                if (rec.ranks[i] == 0) {
                    always = false;
                    break;
                }
                total += rec.ranks[i];
            }
            s.rank.push_back(always ? std::optional<double>(total / s.replications)
                                    : std::nullopt);
        }
    }
    s.records = std::move(records);
    return s;
}

void validate_study(const StudyConfig& cfg) {
    if (cfg.replications < 1) throw ConfigError("replications must be at least 1");
    if (cfg.methods.empty()) throw ConfigError("at least one method is required");
    if (cfg.tau.empty() || cfg.phi.empty() || cfg.rho.empty())
        throw ConfigError("tau, phi, and rho grids must be nonempty");
    if (cfg.lambda_grid < 2) throw ConfigError("lambda grid needs at least 2 points");
    if (cfg.holdout < 1) throw ConfigError("holdout must be at least 1");
    if (cfg.jobs < 1) throw ConfigError("jobs must be at least 1");
}

DgpSpec setting_spec(const StudyConfig& cfg, double tau, double phi, double rho) {
    DgpSpec spec;
    spec.family = cfg.family;
    spec.n = cfg.n;
    spec.p = cfg.p;
    spec.tau = tau;
    spec.phi = phi;
    spec.rho = rho;
    spec.sigma = cfg.sigma;
    spec.burn_in = cfg.burn_in;
    spec.holdout = cfg.holdout;
    spec.seed = cfg.seed;
    spec.replication = 0;
    spec.validate();
    return spec;
}

}  // namespace

void DgpSpec::validate() const {
    if (n < 2) throw ConfigError("DGP needs at least 2 training rows");
    if (family == DgpFamily::A && p < 5) throw ConfigError("family A needs at least 5 predictors");
    if (family == DgpFamily::B && p < 4) throw ConfigError("family B needs at least 4 predictors");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie strictly inside (0, 1)");
    if (!(std::abs(phi) < 1.0)) throw ConfigError("|phi| must be below 1 for stationarity");
    if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must lie in [0, 1)");
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (burn_in < 0) throw ConfigError("burn_in must be nonnegative");
    if (holdout < 0) throw ConfigError("holdout must be nonnegative");
}

std::vector<int> DgpSpec::true_support() const { return {0, 1, 2, 3}; }

Eigen::MatrixXd innovation_covariance(const DgpSpec& spec) {
    spec.validate();
    Eigen::MatrixXd sigma(spec.p, spec.p);
    if (spec.family == DgpFamily::A) {
        const double off = spec.rho * (1.0 - spec.phi * spec.phi);
        const double cross = std::sqrt(spec.rho) * (1.0 - spec.phi * spec.phi);
        sigma.setConstant(off);
        sigma.row(3).setConstant(cross);
        sigma.col(3).setConstant(cross);
        sigma.diagonal().setOnes();
    } else {
        for (Eigen::Index i = 0; i < spec.p; ++i)
            for (Eigen::Index j = 0; j < spec.p; ++j)
                sigma(i, j) = std::pow(spec.rho, std::abs(static_cast<double>(i - j)));
    }
    return sigma;
}

DgpDraw gen_dgp_a(const DgpSpec& spec) {
    if (spec.family != DgpFamily::A) throw ConfigError("spec is not a family-A spec");
    return generate_with_factor(spec, cholesky_lower(innovation_covariance(spec)));
}

DgpDraw gen_dgp_b(const DgpSpec& spec) {
    if (spec.family != DgpFamily::B) throw ConfigError("spec is not a family-B spec");
    return generate_with_factor(spec, cholesky_lower(innovation_covariance(spec)));
}

DgpDraw gen_dgp(const DgpSpec& spec) {
    return spec.family == DgpFamily::A ? gen_dgp_a(spec) : gen_dgp_b(spec);
}

SimulationReport run_study(const StudyConfig& cfg) {
    validate_study(cfg);
    SimulationReport report;
    report.config = cfg;
    for (double tau : cfg.tau) {
        for (double phi : cfg.phi) {
            for (double rho : cfg.rho) {
                const DgpSpec base = setting_spec(cfg, tau, phi, rho);
                const Eigen::MatrixXd lower = cholesky_lower(innovation_covariance(base));
                const auto method_count = cfg.methods.size();
                std::vector<std::vector<ReplicationRecord>> records(
                    method_count, std::vector<ReplicationRecord>(
                                      static_cast<std::size_t>(cfg.replications)));
                parallel_for(cfg.replications, cfg.jobs, [&](int r) {
                    DgpSpec spec = base;
                    spec.replication = static_cast<std::uint64_t>(r);
                    const DgpDraw draw = generate_with_factor(spec, lower);
                    for (std::size_t mi = 0; mi < method_count; ++mi)
                        records[mi][static_cast<std::size_t>(r)] =
                            run_one(draw, cfg.methods[mi], spec, cfg.lambda_grid);
                });
                StudySetting setting;
                setting.dgp = base;
                for (std::size_t mi = 0; mi < method_count; ++mi)
                    setting.methods.push_back(
                        summarize(cfg.methods[mi], std::move(records[mi])));
                report.settings.push_back(std::move(setting));
            }
        }
    }
    return report;
}

std::vector<BenchResult> bench_runtime(const StudyConfig& cfg) {
    validate_study(cfg);
    std::vector<BenchResult> results;
    for (Algorithm m : cfg.methods) results.push_back({m, 0.0, {}});
    // Timings cover selection plus the final fit on shared pre-generated
    // draws; generation and metric bookkeeping stay outside the clock.
    for (double tau : cfg.tau) {
        for (double phi : cfg.phi) {
            for (double rho : cfg.rho) {
                const DgpSpec base = setting_spec(cfg, tau, phi, rho);
                const Eigen::MatrixXd lower = cholesky_lower(innovation_covariance(base));
                for (int r = 0; r < cfg.replications; ++r) {
                    DgpSpec spec = base;
                    spec.replication = static_cast<std::uint64_t>(r);
                    const DgpDraw draw = generate_with_factor(spec, lower);
                    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
                        const auto start = std::chrono::steady_clock::now();
                        if (cfg.methods[mi] == Algorithm::L1QR) {
                            const std::vector<QrFit> path = lambda_path(
                                draw.train.y, draw.train.x, QuantileLevel(tau), cfg.lambda_grid);
                            (void)ebic_lambda_index(path, draw.train.n(), QuantileLevel(tau));
                        } else if (cfg.methods[mi] == Algorithm::QPCS) {
                            (void)qpcs_run(draw.train, ScreenConfig::defaults_for(draw.train.n(), tau));
                        } else {
                            (void)qpcfr_run(draw.train, ScreenConfig::defaults_for(draw.train.n(), tau));
                        }
                        const auto stop = std::chrono::steady_clock::now();
                        results[mi].seconds.push_back(
                            std::chrono::duration<double>(stop - start).count());
                    }
                }
            }
        }
    }
    for (BenchResult& res : results) {
        double total = 0.0;
        for (double s : res.seconds) total += s;
        res.mean_seconds = res.seconds.empty() ? 0.0 : total / res.seconds.size();
    }
    return results;
}

}  // namespace qpc
