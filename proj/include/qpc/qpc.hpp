#pragma once

#include <vector>

#include <Eigen/Dense>

#include "qpc/dataset.hpp"
#include "qpc/kernels.hpp"
#include "qpc/quantile.hpp"

namespace qpc {

struct QpcValue {
    double value = 0.0;      // signed sample quantile partial correlation
    double numerator = 0.0;  // (1/n) sum psi_tau(y - x_S'alpha) * (x_j - x_S'theta)
    double sigma2 = 0.0;     // mean squared OLS residual of x_j on the conditioning set
    QrFit alpha;             // quantile fit of y on the conditioning set
    OlsFit theta;            // OLS fit of x_j on the conditioning set
};

// Sample QPC of candidate column j given conditioning set S (j not in S). Both
// fits carry an implicit intercept. Throws DegeneratePredictor when sigma2
// <= 1e-12, RankDeficient / NotConverged from the underlying fits.
QpcValue sample_qpc(const Dataset& data, int j, const std::vector<int>& s, QuantileLevel tau);

struct CandidateScore {
    int index = -1;
    double abs_value = 0.0;
    bool ok = false;  // false: degenerate or failed candidate, excluded from argmax
};

// |QPC| for every candidate against one shared conditioning set. The quantile
// fit on S is computed once and reused; the conditioning Gram factorization is
// shared across candidates. Failed candidates come back with ok = false.
std::vector<CandidateScore> qpc_screen_scores(const Dataset& data,
                                              const std::vector<int>& candidates,
                                              const std::vector<int>& s, QuantileLevel tau);

}  // namespace qpc
