#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "qpc/qpc.hpp"

using qpc::Dataset;
using qpc::QuantileLevel;

namespace {

Dataset make_dataset(const Eigen::VectorXd& y, const Eigen::MatrixXd& x) {
    Dataset d;
    d.y = y;
    d.x = x;
    return d;
}

// Recompute the statistic from first principles: exhaustive-vertex quantile
// fit, closed-form OLS, explicit psi sum with psi(0) = tau.
double qpc_by_hand(const Dataset& d, int j, const std::vector<int>& s, double tau) {
    const Eigen::Index n = d.n();
    const Eigen::Index m = static_cast<Eigen::Index>(s.size()) + 1;
    Eigen::MatrixXd design(n, m);
    design.col(0).setOnes();
    for (Eigen::Index k = 1; k < m; ++k) design.col(k) = d.x.col(s[static_cast<std::size_t>(k - 1)]);

    // best interpolating vertex for the quantile fit, exact zeros kept for the
    // psi convention below
    Eigen::VectorXd ar;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = (m > 1 ? a + 1 : a); b < (m > 1 ? n : a + 1); ++b) {
            Eigen::MatrixXd sub(m, m);
            Eigen::VectorXd ys(m);
            sub.row(0) = design.row(a);
            ys[0] = d.y[a];
            if (m > 1) {
                sub.row(1) = design.row(b);
                ys[1] = d.y[b];
            }
            Eigen::FullPivLU<Eigen::MatrixXd> lu(sub);
            if (!lu.isInvertible()) continue;
            Eigen::VectorXd cand = lu.solve(ys);
            Eigen::VectorXd r = d.y - design * cand;
            r[a] = 0.0;
            if (m > 1) r[b] = 0.0;
            double obj = 0.0;
            for (Eigen::Index i = 0; i < n; ++i)
                obj += r[i] >= 0.0 ? tau * r[i] : (tau - 1.0) * r[i];
            if (obj < best) {
                best = obj;
                ar = r;
            }
        }
    }

    Eigen::VectorXd theta =
        (design.transpose() * design).fullPivLu().solve(design.transpose() * d.x.col(j));
    Eigen::VectorXd tr = d.x.col(j) - design * theta;
    const double sigma2 = tr.squaredNorm() / static_cast<double>(n);

    double num = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        num += (tau - (ar[i] < 0.0 ? 1.0 : 0.0)) * tr[i];
    num /= static_cast<double>(n);
    return num / std::sqrt(tau * (1.0 - tau) * sigma2);
}

}  // namespace

TEST_CASE("six-observation instance matches a from-scratch recompute") {
    Eigen::MatrixXd x(6, 2);
    x << 0.2, 1.1,
         1.0, -0.4,
         2.1, 0.9,
         3.0, 2.2,
         3.9, 1.4,
         5.2, -0.7;
    Eigen::VectorXd y(6);
    y << 0.5, 1.9, 1.7, 3.6, 4.1, 5.0;
    Dataset d = make_dataset(y, x);

    for (double tau : {0.3, 0.5, 0.75}) {
        qpc::QpcValue v = qpc::sample_qpc(d, 1, {0}, QuantileLevel(tau));
        const double by_hand = qpc_by_hand(d, 1, {0}, tau);
        CHECK(v.value == doctest::Approx(by_hand).epsilon(1e-9));
        // the composed pieces are consistent with each other
        CHECK(v.value ==
              doctest::Approx(v.numerator / std::sqrt(tau * (1.0 - tau) * v.sigma2)).epsilon(1e-12));
    }
}

TEST_CASE("psi treats exact-zero residuals as tau") {
    // alpha fit interpolates two rows exactly; their psi contribution is tau,
    // not 0 or tau - 1, which shifts the numerator by a known amount
    Eigen::MatrixXd x(6, 2);
    x << 0, 2.0, 1, -1.0, 2, 0.5, 3, 1.5, 4, -0.5, 5, 1.0;
    Eigen::VectorXd y(6);
    y << 0.1, 1.2, 2.05, 2.9, 4.2, 5.1;
    Dataset d = make_dataset(y, x);
    const double tau = 0.4;
    qpc::QpcValue v = qpc::sample_qpc(d, 1, {0}, QuantileLevel(tau));

    int zeros = 0;
    for (Eigen::Index i = 0; i < 6; ++i)
        if (v.alpha.residuals[i] == 0.0) ++zeros;
    REQUIRE(zeros == 2);

    double num = 0.0;
    for (Eigen::Index i = 0; i < 6; ++i) {
        const double p = v.alpha.residuals[i] == 0.0
                             ? tau
                             : (v.alpha.residuals[i] > 0.0 ? tau : tau - 1.0);
        num += p * v.theta.residuals[i];
    }
    CHECK(v.numerator == doctest::Approx(num / 6.0).epsilon(1e-12));
}

TEST_CASE("plug-in bound holds across random instances") {
    oracle::Rng rng(211);
    for (int rep = 0; rep < 300; ++rep) {
        const Eigen::Index n = 15 + static_cast<Eigen::Index>(rng.uniform() * 30);
        const double tau = rng.uniform(0.05, 0.95);
        Eigen::MatrixXd x = oracle::random_matrix(rng, n, 4);
        Eigen::VectorXd y = oracle::random_vector(rng, n) + x.col(0) + 0.5 * x.col(1);
        Dataset d = make_dataset(y, x);
        qpc::QpcValue v = qpc::sample_qpc(d, 2, {0, 1}, QuantileLevel(tau));
        const double hi = std::max(tau, 1.0 - tau);
        const double lo = std::min(tau, 1.0 - tau);
        CHECK(std::abs(v.value) <= std::sqrt(hi / lo) + 1e-9);
    }
}

TEST_CASE("value is invariant under affine maps and flips sign with the candidate") {
    oracle::Rng rng(223);
    const Eigen::Index n = 80;
    Eigen::MatrixXd x = oracle::random_matrix(rng, n, 3);
    Eigen::VectorXd y = oracle::random_vector(rng, n) + x.col(1) - 0.7 * x.col(2);
    Dataset d = make_dataset(y, x);
    const QuantileLevel tau(0.35);
    const double base = qpc::sample_qpc(d, 1, {0, 2}, tau).value;

    Dataset scaled_y = d;
    scaled_y.y = 3.0 * d.y.array() + 2.0;
    CHECK(qpc::sample_qpc(scaled_y, 1, {0, 2}, tau).value == doctest::Approx(base).epsilon(1e-8));

    Dataset scaled_j = d;
    scaled_j.x.col(1) = 2.5 * d.x.col(1).array() - 4.0;
    CHECK(qpc::sample_qpc(scaled_j, 1, {0, 2}, tau).value == doctest::Approx(base).epsilon(1e-8));

    Dataset scaled_s = d;
    scaled_s.x.col(0) = -1.5 * d.x.col(0).array() + 0.3;
    scaled_s.x.col(2) = 0.25 * d.x.col(2).array() + 9.0;
    CHECK(qpc::sample_qpc(scaled_s, 1, {0, 2}, tau).value == doctest::Approx(base).epsilon(1e-8));

    Dataset flipped = d;
    flipped.x.col(1) = -d.x.col(1);
    CHECK(qpc::sample_qpc(flipped, 1, {0, 2}, tau).value == doctest::Approx(-base).epsilon(1e-8));
}

TEST_CASE("independent candidates score near zero") {
    oracle::Rng rng(227);
    const Eigen::Index n = 20000;
    Eigen::MatrixXd x = oracle::random_matrix(rng, n, 2);
    Eigen::VectorXd y = oracle::random_vector(rng, n);
    Dataset d = make_dataset(y, x);
    for (double tau : {0.2, 0.5, 0.8}) {
        qpc::QpcValue v = qpc::sample_qpc(d, 0, {}, QuantileLevel(tau));
        CHECK(std::abs(v.value) < 0.05);
    }
}

TEST_CASE("screen scores agree with one-at-a-time values") {
    oracle::Rng rng(229);
    const Eigen::Index n = 50;
    Eigen::MatrixXd x = oracle::random_matrix(rng, n, 8);
    Eigen::VectorXd y = oracle::random_vector(rng, n) + x.col(2) + x.col(5);
    Dataset d = make_dataset(y, x);
    const QuantileLevel tau(0.6);
    std::vector<int> s{2, 5};
    std::vector<int> candidates{0, 1, 3, 4, 6, 7};

    std::vector<qpc::CandidateScore> scores = qpc::qpc_screen_scores(d, candidates, s, tau);
    REQUIRE(scores.size() == candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        CHECK(scores[i].index == candidates[i]);
        REQUIRE(scores[i].ok);
        const double direct = std::abs(qpc::sample_qpc(d, candidates[i], s, tau).value);
        CHECK(scores[i].abs_value == doctest::Approx(direct).epsilon(1e-9));
    }
}

TEST_CASE("degenerate candidates are reported, not fatal, in batch scoring") {
    oracle::Rng rng(233);
    const Eigen::Index n = 40;
    Eigen::MatrixXd x = oracle::random_matrix(rng, n, 5);
    x.col(3) = 2.0 * x.col(0) - 0.5 * x.col(1);  // explained by the conditioning set
    Eigen::VectorXd y = oracle::random_vector(rng, n);
    Dataset d = make_dataset(y, x);
    const QuantileLevel tau(0.5);

    CHECK_THROWS_AS(qpc::sample_qpc(d, 3, {0, 1}, tau), qpc::DegeneratePredictor);

    std::vector<qpc::CandidateScore> scores = qpc::qpc_screen_scores(d, {2, 3, 4}, {0, 1}, tau);
    REQUIRE(scores.size() == 3);
    CHECK(scores[0].ok);
    CHECK_FALSE(scores[1].ok);
    CHECK(scores[2].ok);
}

TEST_CASE("collinear conditioning sets raise RankDeficient") {
    oracle::Rng rng(239);
    Eigen::MatrixXd x = oracle::random_matrix(rng, 30, 4);
    x.col(1) = x.col(0);
    Eigen::VectorXd y = oracle::random_vector(rng, 30);
    Dataset d = make_dataset(y, x);
    CHECK_THROWS_AS(qpc::sample_qpc(d, 2, {0, 1}, QuantileLevel(0.5)), qpc::RankDeficient);
    CHECK_THROWS_AS(qpc::qpc_screen_scores(d, {2, 3}, {0, 1}, QuantileLevel(0.5)),
                    qpc::RankDeficient);
}

TEST_CASE("index validation") {
    oracle::Rng rng(241);
    Dataset d = make_dataset(oracle::random_vector(rng, 10), oracle::random_matrix(rng, 10, 3));
    CHECK_THROWS_AS(qpc::sample_qpc(d, 3, {}, QuantileLevel(0.5)), qpc::ConfigError);
    CHECK_THROWS_AS(qpc::sample_qpc(d, -1, {}, QuantileLevel(0.5)), qpc::ConfigError);
    CHECK_THROWS_AS(qpc::sample_qpc(d, 1, {1}, QuantileLevel(0.5)), qpc::ConfigError);
    CHECK_THROWS_AS(qpc::sample_qpc(d, 1, {0, 7}, QuantileLevel(0.5)), qpc::ConfigError);
}

TEST_CASE("empty conditioning set reduces to marginal quantities") {
    oracle::Rng rng(251);
    const Eigen::Index n = 200;
    Eigen::MatrixXd x = oracle::random_matrix(rng, n, 2);
    Eigen::VectorXd y = oracle::random_vector(rng, n) + 0.8 * x.col(0);
    Dataset d = make_dataset(y, x);
    const double tau = 0.45;
    qpc::QpcValue v = qpc::sample_qpc(d, 0, {}, QuantileLevel(tau));

    const double q = qpc::empirical_quantile(y, tau);
    CHECK(v.alpha.beta[0] == q);
    const double mean = x.col(0).mean();
    double num = 0.0, var = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double r = y[i] - q;
        const double c = x(i, 0) - mean;
        num += (r == 0.0 ? tau : (r > 0.0 ? tau : tau - 1.0)) * c;
        var += c * c;
    }
    num /= static_cast<double>(n);
    var /= static_cast<double>(n);
    CHECK(v.value == doctest::Approx(num / std::sqrt(tau * (1.0 - tau) * var)).epsilon(1e-10));
}
