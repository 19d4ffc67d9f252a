#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qpc/errors.hpp"

namespace qpc {

// Aligned screening sample: row i pairs the response with the predictor vector
// observed one period earlier, so x.row(i) is what was known when y(i) realized.
struct Dataset {
    Eigen::VectorXd y;
    Eigen::MatrixXd x;
    std::vector<std::string> names;  // one per predictor column

    Eigen::Index n() const { return y.size(); }
    Eigen::Index p() const { return x.cols(); }

    void validate() const;
};

// Design matrix [1 | x(:, cols)] for fits; the intercept column is always
// implicit at position 0 and never part of `cols`.
Eigen::MatrixXd design_with_intercept(const Eigen::MatrixXd& x, const std::vector<int>& cols);

}  // namespace qpc
