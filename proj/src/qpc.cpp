#include "qpc/qpc.hpp"

#include <cmath>

namespace qpc {

namespace {

void check_indices(const Dataset& data, int j, const std::vector<int>& s) {
    if (j < 0 || j >= data.p()) throw ConfigError("candidate index out of range");
    for (int k : s) {
        if (k < 0 || k >= data.p()) throw ConfigError("conditioning index out of range");
        if (k == j) throw ConfigError("candidate appears in its conditioning set");
    }
}

}  // namespace

QpcValue sample_qpc(const Dataset& data, int j, const std::vector<int>& s, QuantileLevel tau) {
    check_indices(data, j, s);
    QpcValue out;
    out.alpha = qr_fit(data.y, data.x, s, tau);
    out.theta = ols_fit(data.x, j, s);
    if (out.theta.sigma2 <= 1e-12)
        throw DegeneratePredictor("candidate is explained by the conditioning set");
    const Eigen::Index n = data.n();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        acc += psi(out.alpha.residuals[i], tau.tau) * out.theta.residuals[i];
    out.numerator = acc / static_cast<double>(n);
    out.sigma2 = out.theta.sigma2;
    out.value = out.numerator / std::sqrt(tau.tau * (1.0 - tau.tau) * out.sigma2);
    return out;
}

std::vector<CandidateScore> qpc_screen_scores(const Dataset& data,
                                              const std::vector<int>& candidates,
                                              const std::vector<int>& s, QuantileLevel tau) {
    for (int j : candidates) check_indices(data, j, s);
    const Eigen::Index n = data.n();
    const double dn = static_cast<double>(n);

    // One quantile fit on the shared conditioning set serves every candidate.
    QrFit alpha = qr_fit(data.y, data.x, s, tau);
    Eigen::VectorXd psis(n);
    for (Eigen::Index i = 0; i < n; ++i) psis[i] = psi(alpha.residuals[i], tau.tau);

    // Likewise one Gram factorization for all the per-candidate OLS solves.
    Eigen::MatrixXd design = design_with_intercept(data.x, s);
    Eigen::MatrixXd gram = (design.transpose() * design) / dn;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    Eigen::VectorXd d = ldlt.vectorD();
    double dmax = d.maxCoeff();
    if (!(dmax > 0.0) || d.minCoeff() <= 1e-10 * dmax)
        throw RankDeficient("conditioning design is collinear");

    const double denom_scale = tau.tau * (1.0 - tau.tau);
    std::vector<CandidateScore> scores;
    scores.reserve(candidates.size());
    Eigen::VectorXd theta, resid;
    for (int j : candidates) {
        CandidateScore sc;
        sc.index = j;
        theta = ldlt.solve(design.transpose() * data.x.col(j) / dn);
        resid = data.x.col(j) - design * theta;
        const double sigma2 = resid.squaredNorm() / dn;
        if (sigma2 > 1e-12) {
            const double num = psis.dot(resid) / dn;
            sc.abs_value = std::abs(num / std::sqrt(denom_scale * sigma2));
            sc.ok = true;
        }
        scores.push_back(sc);
    }
    return scores;
}

}  // namespace qpc
