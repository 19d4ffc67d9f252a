#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qpc/dataset.hpp"
#include "qpc/screening.hpp"

namespace qpc {

enum class DgpFamily { A, B };

// VAR(1) design X_t = phi X_{t-1} + eta_t with the two innovation covariances
// from the study section; the response is linear in the contemporaneous X row
// with noise shifted so its tau-quantile is exactly zero.
struct DgpSpec {
    DgpFamily family = DgpFamily::A;
    Eigen::Index n = 200;   // training rows kept
    Eigen::Index p = 1000;  // predictors (family A needs p >= 5, B needs p >= 4)
    double tau = 0.5;
    double phi = 0.2;
    double rho = 0.5;
    double sigma = 1.0;
    Eigen::Index burn_in = 200;
    Eigen::Index holdout = 10;  // extra rows from the same path, after training
    std::uint64_t seed = 0;
    std::uint64_t replication = 0;

    void validate() const;
    double beta() const { return 2.5 * (1.0 + std::abs(tau - 0.5)); }
    std::vector<int> true_support() const;  // always {0,1,2,3}
};

struct DgpDraw {
    Dataset train;
    Dataset holdout;
};

DgpDraw gen_dgp_a(const DgpSpec& spec);
DgpDraw gen_dgp_b(const DgpSpec& spec);
DgpDraw gen_dgp(const DgpSpec& spec);

// Innovation covariance for the spec (exposed for tests; the implied
// stationary covariance is Sigma_eta / (1 - phi^2)).
Eigen::MatrixXd innovation_covariance(const DgpSpec& spec);

struct ReplicationRecord {
    std::uint64_t replication = 0;
    bool ok = false;
    std::string error;          // set when ok = false
    std::vector<int> selected;  // selection order (screening) or column order (l1)
    double mqe = 0.0;           // mean holdout check loss
    int tp = 0;
    int fp = 0;
    bool exact = false;
    std::vector<int> ranks;  // 1-based rank of each true covariate in the chosen set; 0 = missed
};

struct MethodSummary {
    Algorithm method = Algorithm::QPCS;
    int replications = 0;  // successful ones
    int failures = 0;
    double mqe = 0.0;
    int crate = 0;
    double tp = 0.0;
    double fp = 0.0;
    // Mean rank of true covariate i, or empty: missed in some replication (screening)
    // or not applicable (l1).
    std::vector<std::optional<double>> rank;
    std::vector<ReplicationRecord> records;
};

struct StudySetting {
    DgpSpec dgp;
    std::vector<MethodSummary> methods;
};

struct StudyConfig {
    DgpFamily family = DgpFamily::A;
    Eigen::Index n = 200;
    Eigen::Index p = 1000;
    std::vector<double> tau{0.5};
    std::vector<double> phi{0.2};
    std::vector<double> rho{0.5};
    double sigma = 1.0;
    Eigen::Index burn_in = 200;
    Eigen::Index holdout = 10;
    int replications = 50;
    std::vector<Algorithm> methods{Algorithm::QPCS};
    int lambda_grid = 100;
    std::uint64_t seed = 0;
    int jobs = 1;
};

struct SimulationReport {
    StudyConfig config;
    std::vector<StudySetting> settings;  // tau x phi x rho, in config order
};

// Replications are independent streams of (seed, replication); every method
// sees the same draws. Aggregation order is fixed, so reports are identical
// for any worker count.
SimulationReport run_study(const StudyConfig& cfg);

struct BenchResult {
    Algorithm method;
    double mean_seconds = 0.0;
    std::vector<double> seconds;  // per replication
};

// Times selection + final fit per method on shared pre-generated datasets.
std::vector<BenchResult> bench_runtime(const StudyConfig& cfg);

}  // namespace qpc
