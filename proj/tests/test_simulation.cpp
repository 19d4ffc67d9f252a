#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "qpc/errors.hpp"
#include "qpc/rng.hpp"
#include "qpc/simulation.hpp"

using qpc::Algorithm;
using qpc::ConfigError;
using qpc::DgpDraw;
using qpc::DgpFamily;
using qpc::DgpSpec;
using qpc::RandomStream;
using qpc::StudyConfig;

namespace {

DgpSpec small_spec(DgpFamily family) {
    DgpSpec spec;
    spec.family = family;
    spec.n = 40;
    spec.p = 6;
    spec.tau = 0.5;
    spec.phi = 0.4;
    spec.rho = 0.3;
    spec.burn_in = 30;
    spec.holdout = 5;
    spec.seed = 9;
    spec.replication = 2;
    return spec;
}

double sample_cov(const Eigen::MatrixXd& x, Eigen::Index a, Eigen::Index b) {
    const double ma = x.col(a).mean();
    const double mb = x.col(b).mean();
    return ((x.col(a).array() - ma) * (x.col(b).array() - mb)).mean();
}

}  // namespace

TEST_CASE("spec validation rejects out-of-range fields") {
    DgpSpec ok = small_spec(DgpFamily::A);
    CHECK_NOTHROW(ok.validate());

    auto broken = [&](auto&& tweak) {
        DgpSpec s = ok;
        tweak(s);
        CHECK_THROWS_AS(s.validate(), ConfigError);
    };
    broken([](DgpSpec& s) { s.n = 1; });
    broken([](DgpSpec& s) { s.p = 4; });  // family A needs the x4 column plus one
    broken([](DgpSpec& s) { s.family = DgpFamily::B; s.p = 3; });
    broken([](DgpSpec& s) { s.tau = 0.0; });
    broken([](DgpSpec& s) { s.tau = 1.0; });
    broken([](DgpSpec& s) { s.phi = 1.0; });
    broken([](DgpSpec& s) { s.phi = -1.2; });
    broken([](DgpSpec& s) { s.rho = -0.1; });
    broken([](DgpSpec& s) { s.rho = 1.0; });
    broken([](DgpSpec& s) { s.sigma = 0.0; });
    broken([](DgpSpec& s) { s.burn_in = -1; });
    broken([](DgpSpec& s) { s.holdout = -1; });

    DgpSpec b = ok;
    b.family = DgpFamily::B;
    b.p = 4;
    CHECK_NOTHROW(b.validate());
}

TEST_CASE("response scale and support") {
    DgpSpec spec = small_spec(DgpFamily::A);
    spec.tau = 0.2;
    CHECK(spec.beta() == doctest::Approx(3.25).epsilon(1e-15));
    spec.tau = 0.5;
    CHECK(spec.beta() == doctest::Approx(2.5).epsilon(1e-15));
    spec.tau = 0.9;
    CHECK(spec.beta() == doctest::Approx(3.5).epsilon(1e-15));
    CHECK(spec.true_support() == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("innovation covariance entries") {
    DgpSpec spec = small_spec(DgpFamily::A);

    SUBCASE("family A with rho = 0 is the identity") {
        spec.rho = 0.0;
        const Eigen::MatrixXd sigma = qpc::innovation_covariance(spec);
        CHECK((sigma - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("family A off-diagonals and the x4 row") {
        spec.rho = 0.5;
        spec.phi = 0.5;
        const Eigen::MatrixXd sigma = qpc::innovation_covariance(spec);
        const double off = 0.5 * 0.75;
        const double cross = std::sqrt(0.5) * 0.75;
        CHECK(sigma(0, 1) == doctest::Approx(off).epsilon(1e-15));
        CHECK(sigma(4, 2) == doctest::Approx(off).epsilon(1e-15));
        CHECK(sigma(0, 3) == doctest::Approx(cross).epsilon(1e-15));
        CHECK(sigma(3, 5) == doctest::Approx(cross).epsilon(1e-15));
        for (Eigen::Index i = 0; i < 6; ++i) CHECK(sigma(i, i) == 1.0);
        CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("family B is exponentially decaying and ignores phi") {
        spec.family = DgpFamily::B;
        spec.rho = 0.6;
        spec.p = 5;
        const Eigen::MatrixXd sigma = qpc::innovation_covariance(spec);
        CHECK(sigma(1, 3) == doctest::Approx(0.36).epsilon(1e-15));
        CHECK(sigma(0, 4) == doctest::Approx(0.1296).epsilon(1e-15));
        CHECK(sigma(2, 2) == 1.0);
        spec.phi = 0.0;
        CHECK((qpc::innovation_covariance(spec) - sigma).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("invalid spec is rejected before factoring") {
        spec.rho = 1.0;
        CHECK_THROWS_AS(qpc::innovation_covariance(spec), ConfigError);
    }
}

TEST_CASE("random stream produces frozen values") {
    RandomStream s(7, 3);
    CHECK(s.uniform() == 0.12378288865847981);
    CHECK(s.uniform() == 0.59978139776799666);
    CHECK(s.uniform() == 0.45987247503069101);
    CHECK(s.uniform() == 0.52219652479311751);

    RandomStream other(7, 4);
    CHECK(other.uniform() == 0.6944120120489039);

    RandomStream n(11, 0);
    CHECK(n.normal() == doctest::Approx(1.7367767793997666).epsilon(1e-13));
    CHECK(n.normal() == doctest::Approx(-0.42683108287081567).epsilon(1e-13));
    CHECK(n.normal() == doctest::Approx(0.5055242377197865).epsilon(1e-13));

    CHECK(qpc::standard_normal_quantile(0.975) ==
          doctest::Approx(1.959963984540054).epsilon(1e-13));
    CHECK(qpc::standard_normal_quantile(0.5) == 0.0);
}

TEST_CASE("random stream draws stay strictly inside the unit interval") {
    RandomStream s(123, 45);
    RandomStream twin(123, 45);
    for (int i = 0; i < 2000; ++i) {
        const double u = s.uniform();
        CHECK(u > 0.0);
        CHECK(u < 1.0);
        CHECK(twin.uniform() == u);
    }
}

TEST_CASE("draws are reproducible, per-replication distinct, and shaped") {
    const DgpSpec spec = small_spec(DgpFamily::A);
    const DgpDraw a = qpc::gen_dgp(spec);
    const DgpDraw b = qpc::gen_dgp(spec);

    CHECK(a.train.n() == 40);
    CHECK(a.train.p() == 6);
    CHECK(a.holdout.n() == 5);
    CHECK(a.holdout.p() == 6);
    CHECK(a.train.names == std::vector<std::string>{"x1", "x2", "x3", "x4", "x5", "x6"});
    CHECK(a.holdout.names == a.train.names);

    CHECK((a.train.x - b.train.x).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.train.y - b.train.y).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.holdout.x - b.holdout.x).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.holdout.y - b.holdout.y).cwiseAbs().maxCoeff() == 0.0);

    DgpSpec next = spec;
    next.replication = 3;
    const DgpDraw c = qpc::gen_dgp(next);
    CHECK((a.train.x - c.train.x).cwiseAbs().maxCoeff() > 1e-8);

    CHECK_THROWS_AS(qpc::gen_dgp_b(spec), ConfigError);
    DgpSpec bspec = spec;
    bspec.family = DgpFamily::B;
    CHECK_THROWS_AS(qpc::gen_dgp_a(bspec), ConfigError);
}

TEST_CASE("extending the holdout leaves the training block untouched") {
    DgpSpec spec = small_spec(DgpFamily::B);
    spec.p = 4;
    spec.holdout = 2;
    const DgpDraw shorter = qpc::gen_dgp(spec);
    spec.holdout = 7;
    const DgpDraw longer = qpc::gen_dgp(spec);

    CHECK((shorter.train.x - longer.train.x).cwiseAbs().maxCoeff() == 0.0);
    CHECK((shorter.train.y - longer.train.y).cwiseAbs().maxCoeff() == 0.0);
    CHECK((shorter.holdout.x - longer.holdout.x.topRows(2)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((shorter.holdout.y - longer.holdout.y.head(2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("draw order replays from the raw stream") {
    DgpSpec spec;
    spec.family = DgpFamily::B;
    spec.n = 3;
    spec.p = 4;
    spec.tau = 0.7;
    spec.phi = 0.5;
    spec.rho = 0.3;
    spec.sigma = 1.5;
    spec.burn_in = 0;
    spec.holdout = 0;
    spec.seed = 21;
    spec.replication = 6;
    const DgpDraw draw = qpc::gen_dgp(spec);

    Eigen::MatrixXd sigma(4, 4);
    for (Eigen::Index i = 0; i < 4; ++i)
        for (Eigen::Index j = 0; j < 4; ++j)
            sigma(i, j) = std::pow(0.3, std::abs(static_cast<double>(i - j)));
    const Eigen::MatrixXd lower = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();
    const double shift = 1.5 * qpc::standard_normal_quantile(0.7);

    RandomStream rng(21, 6);
    Eigen::VectorXd state = Eigen::VectorXd::Zero(4);
    for (Eigen::Index t = 0; t < 3; ++t) {
        Eigen::VectorXd eta(4);
        for (Eigen::Index k = 0; k < 4; ++k) eta(k) = rng.normal();
        state = 0.5 * state + lower * eta;
        const double z = rng.normal();
        for (Eigen::Index k = 0; k < 4; ++k)
            CHECK(draw.train.x(t, k) == doctest::Approx(state(k)).epsilon(1e-12));
        const double y = state.sum() + 1.5 * z - shift;
        CHECK(draw.train.y(t) == doctest::Approx(y).epsilon(1e-12));
    }
}

TEST_CASE("noise quantile calibration" * doctest::timeout(60)) {
    DgpSpec spec;
    spec.family = DgpFamily::A;
    spec.n = 50000;
    spec.p = 5;
    spec.phi = 0.3;
    spec.rho = 0.4;
    spec.sigma = 0.8;
    spec.burn_in = 50;
    spec.holdout = 0;
    spec.seed = 31;

    for (double tau : {0.3, 0.8}) {
        spec.tau = tau;
        const DgpDraw draw = qpc::gen_dgp(spec);
        const double b = spec.beta();
        Eigen::VectorXd coef = Eigen::VectorXd::Zero(5);
        coef(0) = coef(1) = coef(2) = b;
        coef(3) = -3.0 * std::sqrt(0.4) * b;
        const Eigen::VectorXd resid = draw.train.y - draw.train.x * coef;
        const double below = (resid.array() < 0.0).cast<double>().mean();
        CHECK(std::abs(below - tau) < 0.01);
        // the tau-quantile of the shifted noise sits at zero
        std::vector<double> sorted(resid.data(), resid.data() + resid.size());
        std::sort(sorted.begin(), sorted.end());
        const double q = sorted[static_cast<std::size_t>(
            std::ceil(50000 * tau - 1e-9)) - 1];
        CHECK(std::abs(q) < 0.02);
    }
}

TEST_CASE("long paths reach the stationary covariance" * doctest::timeout(60)) {
    DgpSpec spec;
    spec.n = 30000;
    spec.p = 5;
    spec.tau = 0.5;
    spec.burn_in = 300;
    spec.holdout = 0;
    spec.seed = 17;

    SUBCASE("family A") {
        spec.family = DgpFamily::A;
        spec.phi = 0.6;
        spec.rho = 0.4;
        const Eigen::MatrixXd target =
            qpc::innovation_covariance(spec) / (1.0 - 0.36);
        const DgpDraw draw = qpc::gen_dgp(spec);
        for (Eigen::Index i = 0; i < 5; ++i) {
            CHECK(std::abs(draw.train.x.col(i).mean()) < 0.05);
            for (Eigen::Index j = i; j < 5; ++j)
                CHECK(std::abs(sample_cov(draw.train.x, i, j) - target(i, j)) < 0.05);
        }
    }

    SUBCASE("family B") {
        spec.family = DgpFamily::B;
        spec.phi = 0.5;
        spec.rho = 0.7;
        const DgpDraw draw = qpc::gen_dgp(spec);
        for (Eigen::Index i = 0; i < 5; ++i)
            for (Eigen::Index j = i; j < 5; ++j) {
                const double target =
                    std::pow(0.7, std::abs(static_cast<double>(i - j))) / 0.75;
                CHECK(std::abs(sample_cov(draw.train.x, i, j) - target) < 0.05);
            }
    }
}

TEST_CASE("study config validation") {
    StudyConfig cfg;
    cfg.n = 40;
    cfg.p = 8;
    cfg.replications = 2;
    cfg.burn_in = 20;
    cfg.holdout = 3;
    cfg.lambda_grid = 10;

    auto broken = [&](auto&& tweak) {
        StudyConfig c = cfg;
        tweak(c);
        CHECK_THROWS_AS(qpc::run_study(c), ConfigError);
    };
    broken([](StudyConfig& c) { c.replications = 0; });
    broken([](StudyConfig& c) { c.methods.clear(); });
    broken([](StudyConfig& c) { c.tau.clear(); });
    broken([](StudyConfig& c) { c.phi.clear(); });
    broken([](StudyConfig& c) { c.rho.clear(); });
    broken([](StudyConfig& c) { c.lambda_grid = 1; });
    broken([](StudyConfig& c) { c.holdout = 0; });
    broken([](StudyConfig& c) { c.jobs = 0; });
    broken([](StudyConfig& c) { c.tau = {1.0}; });  // caught by the per-setting spec
}

TEST_CASE("a small study is internally consistent" * doctest::timeout(120)) {
    StudyConfig cfg;
    cfg.family = DgpFamily::A;
    cfg.n = 60;
    cfg.p = 8;
    cfg.tau = {0.5};
    cfg.phi = {0.2};
    cfg.rho = {0.3};
    cfg.burn_in = 40;
    cfg.holdout = 5;
    cfg.replications = 3;
    cfg.methods = {Algorithm::QPCS, Algorithm::L1QR};
    cfg.lambda_grid = 25;
    cfg.seed = 4;

    const qpc::SimulationReport report = qpc::run_study(cfg);
    REQUIRE(report.settings.size() == 1);
    const qpc::StudySetting& setting = report.settings.front();
    REQUIRE(setting.methods.size() == 2);
    CHECK(setting.methods[0].method == Algorithm::QPCS);
    CHECK(setting.methods[1].method == Algorithm::L1QR);

    const std::vector<int> support{0, 1, 2, 3};
    for (const qpc::MethodSummary& ms : setting.methods) {
        CHECK(ms.replications + ms.failures == 3);
        REQUIRE(ms.records.size() == 3);
        double mqe = 0.0, tp = 0.0, fp = 0.0;
        int crate = 0;
        for (std::size_t r = 0; r < 3; ++r) {
            const qpc::ReplicationRecord& rec = ms.records[r];
            CHECK(rec.replication == r);
            REQUIRE(rec.ok);
            CHECK(rec.tp + rec.fp == static_cast<int>(rec.selected.size()));
            int tp_check = 0;
            for (int s : rec.selected) {
                CHECK(s >= 0);
                CHECK(s < 8);
                if (std::find(support.begin(), support.end(), s) != support.end())
                    ++tp_check;
            }
            CHECK(rec.tp == tp_check);
            std::vector<int> sorted = rec.selected;
            std::sort(sorted.begin(), sorted.end());
            CHECK(rec.exact == (sorted == support));
            if (ms.method == Algorithm::L1QR) {
                CHECK(rec.ranks.empty());
                CHECK(std::is_sorted(rec.selected.begin(), rec.selected.end()));
            } else {
                REQUIRE(rec.ranks.size() == 4);
                for (std::size_t i = 0; i < 4; ++i) {
                    const auto it =
                        std::find(rec.selected.begin(), rec.selected.end(), support[i]);
                    const int want = it == rec.selected.end()
                                         ? 0
                                         : static_cast<int>(it - rec.selected.begin()) + 1;
                    CHECK(rec.ranks[i] == want);
                }
            }
            mqe += rec.mqe;
            tp += rec.tp;
            fp += rec.fp;
            if (rec.exact) ++crate;
        }
        CHECK(ms.mqe == doctest::Approx(mqe / 3).epsilon(1e-15));
        CHECK(ms.tp == doctest::Approx(tp / 3).epsilon(1e-15));
        CHECK(ms.fp == doctest::Approx(fp / 3).epsilon(1e-15));
        CHECK(ms.crate == crate);
        if (ms.method == Algorithm::L1QR) {
            CHECK(ms.rank.empty());
        } else {
            REQUIRE(ms.rank.size() == 4);
            for (std::size_t i = 0; i < 4; ++i) {
                bool always = true;
                double total = 0.0;
                for (const auto& rec : ms.records) {
                    if (rec.ranks[i] == 0) always = false;
                    total += rec.ranks[i];
                }
                if (always)
                    CHECK(*ms.rank[i] == doctest::Approx(total / 3).epsilon(1e-15));
                else
                    CHECK_FALSE(ms.rank[i].has_value());
            }
        }
    }

    SUBCASE("worker count does not change the report") {
        StudyConfig two = cfg;
        two.jobs = 2;
        const qpc::SimulationReport rerun = qpc::run_study(two);
        REQUIRE(rerun.settings.size() == 1);
        for (std::size_t mi = 0; mi < 2; ++mi) {
            const auto& a = setting.methods[mi];
            const auto& b = rerun.settings[0].methods[mi];
            CHECK(a.mqe == b.mqe);
            CHECK(a.tp == b.tp);
            CHECK(a.fp == b.fp);
            CHECK(a.crate == b.crate);
            for (std::size_t r = 0; r < 3; ++r) {
                CHECK(a.records[r].selected == b.records[r].selected);
                CHECK(a.records[r].mqe == b.records[r].mqe);
            }
        }
    }

    SUBCASE("method order does not change per-method results") {
        StudyConfig swapped = cfg;
        swapped.methods = {Algorithm::L1QR, Algorithm::QPCS};
        const qpc::SimulationReport rerun = qpc::run_study(swapped);
        const auto& qpcs = rerun.settings[0].methods[1];
        const auto& l1 = rerun.settings[0].methods[0];
        CHECK(qpcs.mqe == setting.methods[0].mqe);
        CHECK(l1.mqe == setting.methods[1].mqe);
        for (std::size_t r = 0; r < 3; ++r) {
            CHECK(qpcs.records[r].selected == setting.methods[0].records[r].selected);
            CHECK(l1.records[r].selected == setting.methods[1].records[r].selected);
        }
    }
}

TEST_CASE("settings are ordered tau, then phi, then rho" * doctest::timeout(60)) {
    StudyConfig cfg;
    cfg.family = DgpFamily::B;
    cfg.n = 30;
    cfg.p = 6;
    cfg.tau = {0.3, 0.7};
    cfg.phi = {0.2};
    cfg.rho = {0.1, 0.5};
    cfg.burn_in = 10;
    cfg.holdout = 2;
    cfg.replications = 1;
    cfg.methods = {Algorithm::QPCFR};
    cfg.lambda_grid = 5;
    cfg.seed = 12;

    const qpc::SimulationReport report = qpc::run_study(cfg);
    REQUIRE(report.settings.size() == 4);
    CHECK(report.settings[0].dgp.tau == 0.3);
    CHECK(report.settings[0].dgp.rho == 0.1);
    CHECK(report.settings[1].dgp.tau == 0.3);
    CHECK(report.settings[1].dgp.rho == 0.5);
    CHECK(report.settings[2].dgp.tau == 0.7);
    CHECK(report.settings[2].dgp.rho == 0.1);
    CHECK(report.settings[3].dgp.tau == 0.7);
    CHECK(report.settings[3].dgp.rho == 0.5);
    for (const auto& setting : report.settings) {
        CHECK(setting.dgp.phi == 0.2);
        CHECK(setting.methods.size() == 1);
        CHECK(setting.methods[0].method == Algorithm::QPCFR);
    }
}

TEST_CASE("runtime benches record one timing per replication" * doctest::timeout(60)) {
    StudyConfig cfg;
    cfg.family = DgpFamily::A;
    cfg.n = 40;
    cfg.p = 8;
    cfg.tau = {0.5};
    cfg.phi = {0.2};
    cfg.rho = {0.3};
    cfg.burn_in = 20;
    cfg.holdout = 2;
    cfg.replications = 2;
    cfg.methods = {Algorithm::QPCS, Algorithm::L1QR};
    cfg.lambda_grid = 8;
    cfg.seed = 3;

    const std::vector<qpc::BenchResult> results = qpc::bench_runtime(cfg);
    REQUIRE(results.size() == 2);
    CHECK(results[0].method == Algorithm::QPCS);
    CHECK(results[1].method == Algorithm::L1QR);
    for (const qpc::BenchResult& res : results) {
        REQUIRE(res.seconds.size() == 2);
        double total = 0.0;
        for (double s : res.seconds) {
            CHECK(s >= 0.0);
            total += s;
        }
        CHECK(res.mean_seconds == doctest::Approx(total / 2).epsilon(1e-12));
    }
}
