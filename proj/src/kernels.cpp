#include "qpc/kernels.hpp"

#include <cmath>
#include <unordered_set>

namespace qpc {

void Dataset::validate() const {
    if (y.size() == 0) throw ConfigError("dataset has no rows");
    if (x.rows() != y.size()) throw ConfigError("response and predictor row counts differ");
    if (!names.empty() && static_cast<Eigen::Index>(names.size()) != x.cols())
        throw ConfigError("predictor name count does not match column count");
    if (!y.allFinite() || !x.allFinite()) throw ConfigError("dataset contains non-finite entries");
    std::unordered_set<std::string> seen;
    for (const auto& name : names)
        if (!seen.insert(name).second) throw ConfigError("duplicate predictor name: " + name);
}

Eigen::MatrixXd design_with_intercept(const Eigen::MatrixXd& x, const std::vector<int>& cols) {
    Eigen::MatrixXd b(x.rows(), static_cast<Eigen::Index>(cols.size()) + 1);
    b.col(0).setOnes();
    for (std::size_t i = 0; i < cols.size(); ++i) {
        int c = cols[i];
        if (c < 0 || c >= x.cols()) throw ConfigError("conditioning index out of range");
        b.col(static_cast<Eigen::Index>(i) + 1) = x.col(c);
    }
    return b;
}

namespace {

// Gram solve shared by both OLS entry points. Pivot tolerance is relative to
// the largest pivot, 1e-10.
OlsFit ols_on_design(const Eigen::VectorXd& y, const Eigen::MatrixXd& b) {
    const double n = static_cast<double>(b.rows());
    Eigen::MatrixXd gram = (b.transpose() * b) / n;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    Eigen::VectorXd d = ldlt.vectorD();
    double dmax = d.maxCoeff();
    if (!(dmax > 0.0) || d.minCoeff() <= 1e-10 * dmax)
        throw RankDeficient("conditioning design is collinear");
    OlsFit fit;
    fit.theta = ldlt.solve(b.transpose() * y / n);
    fit.residuals = y - b * fit.theta;
    fit.sigma2 = fit.residuals.squaredNorm() / n;
    return fit;
}

}  // namespace

OlsFit ols_fit(const Eigen::MatrixXd& x, int target, const std::vector<int>& cond) {
    if (target < 0 || target >= x.cols()) throw ConfigError("target index out of range");
    for (int c : cond)
        if (c == target) throw ConfigError("target must not appear in its conditioning set");
    return ols_on_design(x.col(target), design_with_intercept(x, cond));
}

OlsFit ols_fit_vec(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                   const std::vector<int>& cond) {
    if (y.size() != x.rows()) throw ConfigError("response length does not match design rows");
    return ols_on_design(y, design_with_intercept(x, cond));
}

double pearson_corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size() || a.size() == 0) throw ConfigError("correlation needs equal nonzero lengths");
    const double n = static_cast<double>(a.size());
    const double ma = a.mean(), mb = b.mean();
    Eigen::ArrayXd da = a.array() - ma, db = b.array() - mb;
    const double va = da.square().sum() / n;
    const double vb = db.square().sum() / n;
    if (va <= 1e-14 || vb <= 1e-14) throw DegenerateColumn("constant column in correlation");
    return (da * db).sum() / n / std::sqrt(va * vb);
}

Standardization standardize(const Dataset& d) {
    d.validate();
    Standardization out;
    out.data = d;
    out.scale.reserve(static_cast<std::size_t>(d.p()));
    const double n = static_cast<double>(d.n());
    for (Eigen::Index j = 0; j < d.p(); ++j) {
        const double mean = d.x.col(j).mean();
        Eigen::ArrayXd centered = d.x.col(j).array() - mean;
        const double var = centered.square().sum() / n;
        if (var <= 1e-14)
            throw DegenerateColumn("constant column cannot be standardized: " +
                                   (d.names.empty() ? std::to_string(j) : d.names[static_cast<std::size_t>(j)]));
        const double sd = std::sqrt(var);
        out.data.x.col(j) = (centered / sd).matrix();
        out.scale.emplace_back(mean, sd);
    }
    return out;
}

}  // namespace qpc
