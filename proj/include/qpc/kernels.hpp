#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qpc/dataset.hpp"

namespace qpc {

struct OlsFit {
    Eigen::VectorXd theta;      // intercept first, then one entry per conditioning column
    Eigen::VectorXd residuals;  // length n
    double sigma2 = 0.0;        // mean squared residual (divide by n)
};

// Least squares of column `target` on [1 | x(:, cond)]. Gram solve with a
// pivoted LDLT; throws RankDeficient when the Gram matrix is singular beyond
// a 1e-10 relative pivot tolerance.
OlsFit ols_fit(const Eigen::MatrixXd& x, int target, const std::vector<int>& cond);

// Same, but the response is an arbitrary vector (used by tests and the macro app).
OlsFit ols_fit_vec(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                   const std::vector<int>& cond);

// Population-convention Pearson correlation (variances divide by n). Throws
// DegenerateColumn if either variance is <= 1e-14.
double pearson_corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct Standardization {
    Dataset data;                                   // standardized copy
    std::vector<std::pair<double, double>> scale;   // per-column (mean, sd), sd by divide-by-n
};

// Center/scale every predictor column to mean 0, sd 1. The response is left
// untouched. Throws DegenerateColumn for constant columns.
Standardization standardize(const Dataset& d);

}  // namespace qpc
