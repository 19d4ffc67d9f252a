#pragma once

#include <vector>

#include <Eigen/Dense>

#include "qpc/errors.hpp"

namespace qpc {

// Quantile level, validated once at construction: 0 < tau < 1.
struct QuantileLevel {
    explicit QuantileLevel(double t) : tau(t) {
        if (!(t > 0.0 && t < 1.0)) throw ConfigError("tau must lie strictly in (0,1)");
    }
    double tau;
};

inline double check_loss(double u, double tau) { return u * (tau - (u < 0.0 ? 1.0 : 0.0)); }

// Subgradient convention: strict inequality, so psi(0, tau) = tau.
inline double psi(double u, double tau) { return tau - (u < 0.0 ? 1.0 : 0.0); }

struct QrFit {
    Eigen::VectorXd beta;       // intercept first
    Eigen::VectorXd residuals;  // y - [1 X] beta; exact zeros on the interpolated basis
    double objective = 0.0;     // mean check loss, plus lambda * ||slopes||_1 when penalized
    double lambda = 0.0;        // 0 for the unpenalized fit
    int iterations = 0;
    bool converged = false;
};

// Quantile regression of y on [1 | x(:, cols)] via a primal-dual interior-point
// solve of the LP dual (relative duality-gap tolerance 1e-9, at most 200
// iterations), followed by a vertex polish that zeroes the interpolated
// residuals exactly. Throws NotConverged / RankDeficient.
QrFit qr_fit(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
             const std::vector<int>& cols, QuantileLevel tau);

// l1-penalized quantile regression over all columns of x; the intercept is not
// penalized. objective = mean check loss + lambda * ||slopes||_1.
QrFit qr_fit_l1(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, QuantileLevel tau,
                double lambda);

// Smallest penalty at which the all-zero-slope fit is optimal, from the
// subgradient condition at the intercept-only model (tie-set subgradients
// chosen to satisfy intercept stationarity).
double lambda_max(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, QuantileLevel tau);

// Geometric grid of `grid_size >= 2` penalties from lambda_max down to
// 1e-3 * lambda_max, with one fit per grid point (dual warm starts along the path).
std::vector<QrFit> lambda_path(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                               QuantileLevel tau, int grid_size);

// Slope indices with |beta_k| > 1e-8 (0-based column indices into x).
std::vector<int> active_slopes(const QrFit& fit);

// EBIC argmin over a lambda path, with the active-slope count as the model
// size (the empty model carries no penalty). Losses are the unpenalized mean
// check losses; underflowing ones are skipped. Ties keep the earlier, sparser
// grid point.
std::size_t ebic_lambda_index(const std::vector<QrFit>& path, Eigen::Index n, QuantileLevel tau);

// Type-1 (lower) empirical quantile: sorted y at index ceil(n*tau), 1-based.
double empirical_quantile(const Eigen::VectorXd& y, double tau);

}  // namespace qpc
