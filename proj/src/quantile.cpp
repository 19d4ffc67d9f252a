#include "qpc/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "qpc/dataset.hpp"

namespace qpc {

double empirical_quantile(const Eigen::VectorXd& y, double tau) {
    if (y.size() == 0) throw ConfigError("quantile of an empty vector");
    const double n = static_cast<double>(y.size());
    // ceil(n * tau), nudged so binary rounding of n*tau cannot push an exact
    // integer product over the next boundary
    Eigen::Index k = static_cast<Eigen::Index>(std::ceil(n * tau - 1e-9));
    k = std::clamp<Eigen::Index>(k, 1, y.size());
    std::vector<double> v(y.data(), y.data() + y.size());
    std::nth_element(v.begin(), v.begin() + (k - 1), v.end());
    return v[static_cast<std::size_t>(k - 1)];
}

namespace {

double mean_check_loss(const Eigen::VectorXd& r, double tau) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) s += check_loss(r[i], tau);
    return s / static_cast<double>(r.size());
}

// ------------------------------------------------------------------
// Interior-point core for  min c'a  s.t.  A a = b,  0 <= a <= 1.
// The quantile LP dual: A = design', c = -y, b = (1-tau) A 1; the fitted
// coefficients are the negated equality duals.
// ------------------------------------------------------------------

struct IpResult {
    Eigen::VectorXd dual;
    Eigen::VectorXd dual_alt;  // best-merit iterate of a run that failed to converge
    Eigen::VectorXd primal;
    int iterations = 0;
    bool converged = false;
};

// Design' * diag(d) * design for the plain fit; p' is small here so a dense
// LDLT is the right tool.
class DenseBackend {
  public:
    explicit DenseBackend(const Eigen::MatrixXd& design) : b_(design) {}

    Eigen::Index nvars() const { return b_.rows(); }
    Eigen::Index nduals() const { return b_.cols(); }

    void at_mult(const Eigen::VectorXd& y, Eigen::VectorXd& out) const {
        out.noalias() = b_ * y;
    }
    void a_mult(const Eigen::VectorXd& v, Eigen::VectorXd& out) const {
        out.noalias() = b_.transpose() * v;
    }

    // structural = first factorization (unit weights), where a bad pivot ratio
    // reflects the design itself. Later systems are legitimately ill
    // conditioned, so only a PSD breakdown is repaired (tiny ridge) or fatal.
    void factorize(const Eigen::ArrayXd& d, bool structural) {
        scaled_ = b_.array().colwise() * d.sqrt();
        m_.setZero(b_.cols(), b_.cols());
        m_.selfadjointView<Eigen::Lower>().rankUpdate(scaled_.matrix().transpose());
        ldlt_.compute(m_.selfadjointView<Eigen::Lower>());
        Eigen::VectorXd diag = ldlt_.vectorD();
        double dmax = diag.maxCoeff();
        if (structural) {
            if (!(dmax > 0.0) || diag.minCoeff() <= 1e-12 * dmax)
                throw RankDeficient("design is collinear in the quantile fit");
            return;
        }
        if (!(dmax > 0.0)) throw RankDeficient("design is collinear in the quantile fit");
        if (diag.minCoeff() <= 0.0) {
            const double ridge =
                std::max(4.0 * std::abs(diag.minCoeff()), 1e-13 * dmax);
            m_.diagonal().array() += ridge;
            ldlt_.compute(m_.selfadjointView<Eigen::Lower>());
            diag = ldlt_.vectorD();
            if (!(diag.minCoeff() > 0.0))
                throw RankDeficient("design is collinear in the quantile fit");
        }
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
        Eigen::VectorXd out = ldlt_.solve(rhs);
        for (int round = 0; round < 2; ++round) {
            Eigen::VectorXd r = rhs;
            r.noalias() -= m_.selfadjointView<Eigen::Lower>() * out;
            if (r.cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + rhs.cwiseAbs().maxCoeff())) break;
            out += ldlt_.solve(r);
        }
        return out;
    }

  private:
    const Eigen::MatrixXd& b_;
    Eigen::ArrayXXd scaled_;
    Eigen::MatrixXd m_;
    Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

// Backend for the l1-augmented LP. Real rows carry the design [1 X]; each
// slope k also owns the pseudo-row pair (+-n*lambda e_k), so the normal matrix
// is  B' Dn B + diag(0, pen)  and for p' > n it is solved through the n x n
// capacitance  C = Dn^-1 + Xg Pg^-1 Xg'  (Schur identity: S_FF = P_F + U' C^-1 U).
class PenalizedBackend {
  public:
    PenalizedBackend(const Eigen::MatrixXd& design, double nlam)
        : b_(design), nlam_(nlam), n_(design.rows()), m_(design.cols()) {}

    Eigen::Index nvars() const { return n_ + 2 * (m_ - 1); }
    Eigen::Index nduals() const { return m_; }

    void at_mult(const Eigen::VectorXd& y, Eigen::VectorXd& out) const {
        out.resize(nvars());
        out.head(n_).noalias() = b_ * y;
        for (Eigen::Index k = 1; k < m_; ++k) {
            out[n_ + 2 * (k - 1)] = nlam_ * y[k];
            out[n_ + 2 * (k - 1) + 1] = -nlam_ * y[k];
        }
    }

    void a_mult(const Eigen::VectorXd& v, Eigen::VectorXd& out) const {
        out.noalias() = b_.transpose() * v.head(n_);
        for (Eigen::Index k = 1; k < m_; ++k)
            out[k] += nlam_ * (v[n_ + 2 * (k - 1)] - v[n_ + 2 * (k - 1) + 1]);
    }

    // The penalty keeps the slope block positive definite for any design, so
    // there is no structural rank test here; only PSD breakdown from rounding
    // is repaired (tiny ridge) or, failing that, fatal.
    void factorize(const Eigen::ArrayXd& d, bool /*structural*/) {
        dn_ = d.head(n_).max(1e-300);
        pen_.resize(m_);
        pen_[0] = 0.0;
        for (Eigen::Index k = 1; k < m_; ++k)
            pen_[k] = std::max(nlam_ * nlam_ * (d[n_ + 2 * (k - 1)] + d[n_ + 2 * (k - 1) + 1]),
                               1e-300);

        free_.clear();
        bound_.clear();
        free_.push_back(0);
        Eigen::ArrayXd dd =
            (b_.array().square().colwise() * dn_).colwise().sum().transpose();
        for (Eigen::Index k = 1; k < m_; ++k) {
            if (pen_[k] < 1e-7 * (dd[k] + pen_[k]))
                free_.push_back(k);
            else
                bound_.push_back(k);
        }

        dense_mode_ = (m_ <= n_ + 8) ||
                      (static_cast<Eigen::Index>(free_.size()) > (3 * n_) / 4);
        if (dense_mode_) {
            Eigen::ArrayXXd scaled = b_.array().colwise() * dn_.sqrt();
            md_.setZero(m_, m_);
            md_.selfadjointView<Eigen::Lower>().rankUpdate(scaled.matrix().transpose());
            md_.diagonal() += pen_;
            for (int attempt = 0;; ++attempt) {
                ldlt_.compute(md_.selfadjointView<Eigen::Lower>());
                Eigen::VectorXd diag = ldlt_.vectorD();
                double dmax = diag.maxCoeff();
                if (!(dmax > 0.0)) throw RankDeficient("penalized system is not positive definite");
                if (diag.minCoeff() > 0.0) return;
                if (attempt == 1) throw RankDeficient("penalized system is not positive definite");
                md_.diagonal().array() +=
                    std::max(4.0 * std::abs(diag.minCoeff()), 1e-13 * dmax);
            }
        }

        const Eigen::Index g = static_cast<Eigen::Index>(bound_.size());
        const Eigen::Index f = static_cast<Eigen::Index>(free_.size());
        zg_.resize(n_, g);
        for (Eigen::Index j = 0; j < g; ++j)
            zg_.col(j) = b_.col(bound_[static_cast<std::size_t>(j)]) /
                         std::sqrt(pen_[bound_[static_cast<std::size_t>(j)]]);
        cap_.setZero(n_, n_);
        cap_.selfadjointView<Eigen::Lower>().rankUpdate(zg_);
        cap_.diagonal() += dn_.inverse().matrix();
        cap_llt_.compute(cap_.selfadjointView<Eigen::Lower>());
        if (cap_llt_.info() != Eigen::Success) {
            cap_.diagonal().array() += 1e-12 * cap_.diagonal().maxCoeff();
            cap_llt_.compute(cap_.selfadjointView<Eigen::Lower>());
            if (cap_llt_.info() != Eigen::Success)
                throw RankDeficient("capacitance factorization failed");
        }

        uf_.resize(n_, f);
        for (Eigen::Index j = 0; j < f; ++j)
            uf_.col(j) = b_.col(free_[static_cast<std::size_t>(j)]);
        Eigen::MatrixXd t = cap_llt_.solve(uf_);
        Eigen::MatrixXd s = uf_.transpose() * t;
        for (Eigen::Index j = 0; j < f; ++j)
            s(j, j) += pen_[free_[static_cast<std::size_t>(j)]];
        for (int attempt = 0;; ++attempt) {
            schur_.compute(s);
            Eigen::VectorXd diag = schur_.vectorD();
            double dmax = diag.maxCoeff();
            if (!(dmax > 0.0)) throw RankDeficient("penalized system is not positive definite");
            if (diag.minCoeff() > 0.0) return;
            if (attempt == 1) throw RankDeficient("penalized system is not positive definite");
            s.diagonal().array() += std::max(4.0 * std::abs(diag.minCoeff()), 1e-13 * dmax);
        }
    }

    void apply(const Eigen::VectorXd& v, Eigen::VectorXd& out) const {
        if (dense_mode_) {
            out.noalias() = md_.selfadjointView<Eigen::Lower>() * v;
            return;
        }
        out.noalias() = b_.transpose() * (dn_ * (b_ * v).array()).matrix();
        out.array() += pen_.array() * v.array();
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
        Eigen::VectorXd out = base_solve(rhs);
        Eigen::VectorXd mv(rhs.size()), r(rhs.size());
        for (int round = 0; round < 2; ++round) {
            apply(out, mv);
            r = rhs - mv;
            if (r.cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + rhs.cwiseAbs().maxCoeff())) break;
            out += base_solve(r);
        }
        return out;
    }

    Eigen::VectorXd base_solve(const Eigen::VectorXd& rhs) const {
        if (dense_mode_) return ldlt_.solve(rhs);
        const Eigen::Index g = static_cast<Eigen::Index>(bound_.size());
        const Eigen::Index f = static_cast<Eigen::Index>(free_.size());
        Eigen::VectorXd rg(g), rf(f);
        for (Eigen::Index j = 0; j < g; ++j) rg[j] = rhs[bound_[static_cast<std::size_t>(j)]];
        for (Eigen::Index j = 0; j < f; ++j) rf[j] = rhs[free_[static_cast<std::size_t>(j)]];

        Eigen::VectorXd t = apply_mgg_inv(rg);
        Eigen::VectorXd rhs_f = rf;
        rhs_f.noalias() -= uf_.transpose() * (dn_ * bound_cols_times(t).array()).matrix();
        Eigen::VectorXd zf = schur_.solve(rhs_f);
        Eigen::VectorXd q = bound_cols_t_times((dn_ * (uf_ * zf).array()).matrix());
        Eigen::VectorXd zg = apply_mgg_inv(rg - q);

        Eigen::VectorXd out(m_);
        for (Eigen::Index j = 0; j < f; ++j) out[free_[static_cast<std::size_t>(j)]] = zf[j];
        for (Eigen::Index j = 0; j < g; ++j) out[bound_[static_cast<std::size_t>(j)]] = zg[j];
        return out;
    }

  private:
    Eigen::VectorXd bound_cols_times(const Eigen::VectorXd& v) const {
        Eigen::VectorXd out = Eigen::VectorXd::Zero(n_);
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(bound_.size()); ++j)
            out.noalias() += b_.col(bound_[static_cast<std::size_t>(j)]) * v[j];
        return out;
    }
    Eigen::VectorXd bound_cols_t_times(const Eigen::VectorXd& v) const {
        Eigen::VectorXd out(static_cast<Eigen::Index>(bound_.size()));
        for (Eigen::Index j = 0; j < out.size(); ++j)
            out[j] = b_.col(bound_[static_cast<std::size_t>(j)]).dot(v);
        return out;
    }
    // (Pg + Xg' Dn Xg)^-1 via the capacitance factorization
    Eigen::VectorXd apply_mgg_inv(const Eigen::VectorXd& v) const {
        Eigen::VectorXd u1(v.size());
        for (Eigen::Index j = 0; j < v.size(); ++j)
            u1[j] = v[j] / pen_[bound_[static_cast<std::size_t>(j)]];
        Eigen::VectorXd w = cap_llt_.solve(bound_cols_times(u1));
        Eigen::VectorXd correction = bound_cols_t_times(w);
        for (Eigen::Index j = 0; j < v.size(); ++j)
            u1[j] -= correction[j] / pen_[bound_[static_cast<std::size_t>(j)]];
        return u1;
    }

    const Eigen::MatrixXd& b_;
    double nlam_;
    Eigen::Index n_, m_;
    Eigen::ArrayXd dn_;
    Eigen::VectorXd pen_;
    std::vector<Eigen::Index> free_, bound_;
    bool dense_mode_ = true;
    Eigen::MatrixXd md_, cap_, zg_, uf_;
    Eigen::LDLT<Eigen::MatrixXd> ldlt_, schur_;
    Eigen::LLT<Eigen::MatrixXd> cap_llt_;
};

double max_step(const Eigen::ArrayXd& v, const Eigen::ArrayXd& dv) {
    double a = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
    return a;
}

template <class Backend>
IpResult solve_bounded_lp(Backend& bk, const Eigen::VectorXd& c, const Eigen::VectorXd& b,
                          const Eigen::VectorXd& x0, const Eigen::VectorXd* warm_dual,
                          double tol, int maxit) {
    const Eigen::Index nv = bk.nvars();
    Eigen::ArrayXd x = x0.array().max(1e-4).min(1.0 - 1e-4);
    Eigen::ArrayXd s = 1.0 - x;

    Eigen::VectorXd y(bk.nduals());
    Eigen::VectorXd work_v(nv), aty(nv);
    if (warm_dual != nullptr) {
        y = *warm_dual;
    } else {
        bk.factorize(Eigen::ArrayXd::Ones(nv), true);
        bk.a_mult(c, y);  // reuse y as A c
        y = bk.solve(y);
    }
    bk.at_mult(y, aty);
    Eigen::ArrayXd r = c.array() - aty.array();
    const double d0 = 1e-2 * (1.0 + r.abs().maxCoeff());
    Eigen::ArrayXd z = r.max(0.0) + d0;
    Eigen::ArrayXd w = (-r).max(0.0) + d0;

    IpResult out;
    int stalled = 0;
    double best_merit = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_y;
    Eigen::VectorXd rp(bk.nduals()), rhs(bk.nduals()), dy(bk.nduals());
    Eigen::ArrayXd rd(nv), g(nv), d(nv), dx(nv), ds(nv), dz(nv), dw(nv), fx(nv), fs(nv);
    const double bscale = 1.0 + b.cwiseAbs().maxCoeff();

    for (int it = 0; it < maxit; ++it) {
        bk.a_mult(Eigen::VectorXd(x.matrix()), rp);
        rp = b - rp;
        bk.at_mult(y, aty);
        rd = c.array() - aty.array() - z + w;
        const double gap = (x * z).sum() + (s * w).sum();
        const double pobj = (c.array() * x).sum();
        if (gap <= tol * (1.0 + std::abs(pobj)) && rp.cwiseAbs().maxCoeff() <= 1e-8 * bscale) {
            out.converged = true;
            out.iterations = it;
            break;
        }
        // Degenerate faces can floor the equality residual while the gap keeps
        // shrinking; record the most balanced iterate so a stalled run still
        // hands back its best dual, and cut the run once the gap has overshot
        // the gate by three orders with infeasibility stuck above its own.
        const double merit = std::max(gap / (tol * (1.0 + std::abs(pobj))),
                                      rp.cwiseAbs().maxCoeff() / (1e-8 * bscale));
        if (merit < best_merit) {
            best_merit = merit;
            best_y = y;
        }
        if (gap <= 1e-3 * tol * (1.0 + std::abs(pobj)) &&
            rp.cwiseAbs().maxCoeff() > 1e-8 * bscale) {
            if (++stalled >= 10) {
                out.iterations = it;
                break;
            }
        } else {
            stalled = 0;
        }

        d = 1.0 / (z / x + w / s);
        bk.factorize(d, false);
        const double mu = gap / static_cast<double>(2 * nv);

        // affine scaling predictor: fx = -x z, fs = -s w
        g = rd + z - w;  // ru is kept at zero by the common primal step
        work_v = (d * g).matrix();
        bk.a_mult(work_v, rhs);
        rhs += rp;
        dy = bk.solve(rhs);
        bk.at_mult(dy, work_v);
        dx = d * (work_v.array() - g);
        ds = -dx;
        dz = -z - z * dx / x;
        dw = -w - w * ds / s;

        double ap = std::min(1.0, 0.9995 * std::min(max_step(x, dx), max_step(s, ds)));
        double ad = std::min(1.0, 0.9995 * std::min(max_step(z, dz), max_step(w, dw)));
        const double mu_aff = (((x + ap * dx) * (z + ad * dz)).sum() +
                               ((s + ap * ds) * (w + ad * dw)).sum()) /
                              static_cast<double>(2 * nv);
        double sigma = std::clamp(mu_aff / mu, 0.0, 1.0);
        sigma = sigma * sigma * sigma;

        // Mehrotra corrector reuses the factorization
        fx = sigma * mu - x * z - dx * dz;
        fs = sigma * mu - s * w - ds * dw;
        g = rd - fx / x + fs / s;
        work_v = (d * g).matrix();
        bk.a_mult(work_v, rhs);
        rhs += rp;
        dy = bk.solve(rhs);
        bk.at_mult(dy, work_v);
        dx = d * (work_v.array() - g);
        ds = -dx;
        dz = (fx - z * dx) / x;
        dw = (fs - w * ds) / s;

        ap = std::min(1.0, 0.9995 * std::min(max_step(x, dx), max_step(s, ds)));
        ad = std::min(1.0, 0.9995 * std::min(max_step(z, dz), max_step(w, dw)));
        x += ap * dx;
        s += ap * ds;
        y += ad * dy;
        z += ad * dz;
        w += ad * dw;
        x = x.max(1e-250);
        s = s.max(1e-250);
        z = z.max(1e-250);
        w = w.max(1e-250);
        out.iterations = it + 1;
    }

    if (!out.converged) {  // the loop may have converged on its very last update
        bk.a_mult(Eigen::VectorXd(x.matrix()), rp);
        rp = b - rp;
        const double gap = (x * z).sum() + (s * w).sum();
        const double pobj = (c.array() * x).sum();
        if (gap <= tol * (1.0 + std::abs(pobj)) && rp.cwiseAbs().maxCoeff() <= 1e-8 * bscale)
            out.converged = true;
        else
            out.dual_alt = best_y;
    }

    out.dual = y;
    out.primal = x.matrix();
    return out;
}

constexpr double kGapTol = 1e-9;
constexpr int kMaxIter = 300;

// Moves the interior-point iterate onto an exact vertex: interpolate the p'
// rows with the smallest |residual| (pool widened for independence) and accept
// when the objective does not get worse. Interpolated residuals become exact
// zeros, which the psi convention and the subgradient check rely on.
void polish_vertex(const Eigen::VectorXd& y, const Eigen::MatrixXd& design, double tau,
                   Eigen::VectorXd& beta, Eigen::VectorXd& residuals, double& objective) {
    const Eigen::Index n = design.rows(), p = design.cols();
    if (n < p) return;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        double ra = std::abs(residuals[a]), rb = std::abs(residuals[b]);
        return ra != rb ? ra < rb : a < b;
    });
    // Greedy independent subset in residual order. Pivoted QR would reorder
    // the pool by row norm and pull large-residual rows into the basis.
    const Eigen::Index pool = std::min(n, 2 * p + 4);
    Eigen::MatrixXd q(p, p);
    Eigen::MatrixXd bh(p, p);
    Eigen::VectorXd yh(p);
    std::vector<Eigen::Index> rows;
    rows.reserve(static_cast<std::size_t>(p));
    Eigen::Index got = 0;
    for (Eigen::Index j = 0; j < pool && got < p; ++j) {
        const Eigen::Index i = order[static_cast<std::size_t>(j)];
        Eigen::VectorXd v = design.row(i).transpose();
        const double vn = v.norm();
        Eigen::VectorXd w = v;
        if (got > 0) {
            w.noalias() -= q.leftCols(got) * (q.leftCols(got).transpose() * v);
            w.noalias() -= q.leftCols(got) * (q.leftCols(got).transpose() * w);
        }
        const double wn = w.norm();
        if (!(wn > 1e-10 * std::max(vn, 1.0))) continue;
        q.col(got) = w / wn;
        bh.row(got) = v.transpose();
        yh[got] = y[i];
        rows.push_back(i);
        ++got;
    }
    if (got < p) return;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(bh);
    Eigen::VectorXd cand = lu.solve(yh);
    if (!cand.allFinite()) return;
    Eigen::VectorXd res = y - design * cand;
    for (Eigen::Index j : rows) res[j] = 0.0;
    double obj = mean_check_loss(res, tau);
    if (obj <= objective + 1e-9 * (1.0 + std::abs(objective))) {
        beta = cand;
        residuals = res;
        objective = obj;
    }
}

QrFit intercept_only_fit(const Eigen::VectorXd& y, double tau) {
    QrFit fit;
    const double q = empirical_quantile(y, tau);
    fit.beta = Eigen::VectorXd::Constant(1, q);
    fit.residuals = y.array() - q;
    fit.objective = mean_check_loss(fit.residuals, tau);
    fit.converged = true;
    return fit;
}

}  // namespace

QrFit qr_fit(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, const std::vector<int>& cols,
             QuantileLevel tau) {
    if (y.size() != x.rows() && !cols.empty())
        throw ConfigError("response length does not match design rows");
    if (static_cast<Eigen::Index>(cols.size()) + 1 > y.size())
        throw ConfigError("quantile fit needs at least as many rows as coefficients");
    if (cols.empty()) return intercept_only_fit(y, tau.tau);

    Eigen::MatrixXd design = design_with_intercept(x, cols);
    DenseBackend bk(design);
    Eigen::VectorXd c = -y;
    Eigen::VectorXd b = (1.0 - tau.tau) * design.colwise().sum().transpose();
    Eigen::VectorXd x0 = Eigen::VectorXd::Constant(design.rows(), 1.0 - tau.tau);
    IpResult res = solve_bounded_lp(bk, c, b, x0, nullptr, kGapTol, kMaxIter);
    if (!res.converged)
        throw NotConverged(res.iterations, "quantile fit did not reach the duality-gap tolerance");

    QrFit fit;
    fit.beta = -res.dual;
    fit.residuals = y - design * fit.beta;
    fit.objective = mean_check_loss(fit.residuals, tau.tau);
    fit.iterations = res.iterations;
    fit.converged = true;
    polish_vertex(y, design, tau.tau, fit.beta, fit.residuals, fit.objective);
    return fit;
}

namespace {

// KKT certificate for a polished l1 candidate. Rows with an exactly zero
// residual carry free subgradients in [tau-1, tau]; stationarity on the
// intercept and active columns pins them through a square solve, and every
// inactive column then needs |score| <= n*lambda. A vertex passing this
// check is a global optimum no matter how the iterate behind it terminated.
bool l1_kkt_optimal(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, double tau,
                    double lambda, const QrFit& fit) {
    const Eigen::Index n = y.size(), p = x.cols();
    const double nlam = static_cast<double>(n) * lambda;
    std::vector<int> act;
    for (Eigen::Index k = 0; k < p; ++k)
        if (fit.beta[k + 1] != 0.0) act.push_back(static_cast<int>(k));
    std::vector<Eigen::Index> zrows;
    for (Eigen::Index i = 0; i < n; ++i)
        if (fit.residuals[i] == 0.0) zrows.push_back(i);
    const Eigen::Index f = static_cast<Eigen::Index>(act.size()) + 1;
    if (static_cast<Eigen::Index>(zrows.size()) != f || f > n) return false;

    Eigen::VectorXd score = Eigen::VectorXd::Zero(p + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (fit.residuals[i] == 0.0) continue;
        const double ps = psi(fit.residuals[i], tau);
        score[0] += ps;
        score.tail(p).noalias() += ps * x.row(i).transpose();
    }

    Eigen::MatrixXd bsys(f, f);
    Eigen::VectorXd rhs(f);
    bsys.row(0).setOnes();
    rhs[0] = -score[0];
    for (Eigen::Index a = 1; a < f; ++a) {
        const int k = act[static_cast<std::size_t>(a - 1)];
        for (Eigen::Index j = 0; j < f; ++j) bsys(a, j) = x(zrows[static_cast<std::size_t>(j)], k);
        rhs[a] = -score[k + 1] + nlam * (fit.beta[k + 1] > 0.0 ? 1.0 : -1.0);
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(bsys);
    Eigen::VectorXd xi = lu.solve(rhs);
    if (!xi.allFinite()) return false;
    if ((bsys * xi - rhs).cwiseAbs().maxCoeff() >
        1e-8 * (1.0 + rhs.cwiseAbs().maxCoeff()))
        return false;
    for (Eigen::Index j = 0; j < f; ++j)
        if (xi[j] < tau - 1.0 - 1e-8 || xi[j] > tau + 1e-8) return false;
    for (Eigen::Index k = 0; k < p; ++k) {
        if (fit.beta[k + 1] != 0.0) continue;
        double g = score[k + 1];
        double scale = 1.0 + nlam;
        for (Eigen::Index j = 0; j < f; ++j) {
            const double v = x(zrows[static_cast<std::size_t>(j)], k);
            g += xi[j] * v;
            scale += std::abs(v);
        }
        if (std::abs(g) > nlam + 1e-8 * scale) return false;
    }
    return true;
}

// l1 fit with an optional warm dual (used along the path). beta layout matches
// qr_fit: intercept then one slope per column of x.
QrFit qr_fit_l1_impl(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, QuantileLevel tau,
                     double lambda, const Eigen::VectorXd* warm, Eigen::VectorXd* dual_out) {
    if (y.size() != x.rows()) throw ConfigError("response length does not match design rows");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
    const Eigen::Index n = y.size(), p = x.cols();

    if (lambda == 0.0) {
        std::vector<int> all(static_cast<std::size_t>(p));
        std::iota(all.begin(), all.end(), 0);
        QrFit fit = qr_fit(y, x, all, tau);
        if (dual_out != nullptr) *dual_out = -fit.beta;
        return fit;
    }

    Eigen::MatrixXd design(n, p + 1);
    design.col(0).setOnes();
    design.rightCols(p) = x;
    const double nlam = static_cast<double>(n) * lambda;
    PenalizedBackend bk(design, nlam);

    Eigen::VectorXd c = Eigen::VectorXd::Zero(bk.nvars());
    c.head(n) = -y;
    Eigen::VectorXd b = (1.0 - tau.tau) * design.colwise().sum().transpose();
    Eigen::VectorXd x0 = Eigen::VectorXd::Constant(bk.nvars(), 1.0 - tau.tau);

    auto make_fit = [&](const IpResult& res, double tol_scale) {
        QrFit fit;
        fit.lambda = lambda;
        fit.iterations = res.iterations;
        fit.beta = -res.dual;
        fit.residuals = y - design * fit.beta;
        fit.objective = mean_check_loss(fit.residuals, tau.tau) +
                        lambda * fit.beta.tail(p).cwiseAbs().sum();

        // Vertex polish on the augmented problem: slopes below tol become exact
        // zeros, the remaining coefficients interpolate the smallest residuals.
        const double slope_tol = tol_scale * (1.0 + fit.beta.cwiseAbs().maxCoeff());
        std::vector<int> act;
        for (Eigen::Index k = 0; k < p; ++k)
            if (std::abs(fit.beta[k + 1]) > slope_tol) act.push_back(static_cast<int>(k));
        const Eigen::Index f = static_cast<Eigen::Index>(act.size()) + 1;
        if (f <= n) {
            Eigen::MatrixXd sub = design_with_intercept(x, act);
            Eigen::VectorXd beta_sub(f);
            beta_sub[0] = fit.beta[0];
            for (Eigen::Index j = 0; j < f - 1; ++j)
                beta_sub[j + 1] = fit.beta[act[static_cast<std::size_t>(j)] + 1];
            Eigen::VectorXd res_sub = y - sub * beta_sub;
            double obj_sub = std::numeric_limits<double>::infinity();
            polish_vertex(y, sub, tau.tau, beta_sub, res_sub, obj_sub);
            if (std::isfinite(obj_sub)) {
                double l1 = beta_sub.tail(f - 1).cwiseAbs().sum();
                double cand_obj = obj_sub + lambda * l1;
                if (cand_obj <= fit.objective + 1e-9 * (1.0 + std::abs(fit.objective))) {
                    fit.beta.setZero();
                    fit.beta[0] = beta_sub[0];
                    for (Eigen::Index j = 0; j < f - 1; ++j)
                        fit.beta[act[static_cast<std::size_t>(j)] + 1] = beta_sub[j + 1];
                    fit.residuals = res_sub;
                    fit.objective = cand_obj;
                }
            }
        }

        // The all-zero-slope model is optimal at lambda >= lambda_max; prefer it
        // whenever it ties, so the path endpoint is exactly null.
        const double q = empirical_quantile(y, tau.tau);
        Eigen::VectorXd null_res = y.array() - q;
        double null_obj = mean_check_loss(null_res, tau.tau);
        if (null_obj <= fit.objective + 1e-12 * (1.0 + std::abs(fit.objective))) {
            fit.beta.setZero();
            fit.beta[0] = q;
            fit.residuals = null_res;
            fit.objective = null_obj;
        }
        return fit;
    };

    // Saturated faces can floor the equality residual above the interior-point
    // gate while the gap vanishes. The stalled iterate still identifies the
    // optimal vertex up to its noise level, so sweep coarser slope cutoffs and
    // accept the first candidate the KKT certificate confirms.
    auto recover = [&](IpResult& res, QrFit& fit) {
        if (res.converged) return true;
        if (l1_kkt_optimal(y, x, tau.tau, lambda, fit)) return true;
        for (int pass = 0; pass < 2; ++pass) {
            for (double t : {1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2}) {
                QrFit cand = make_fit(res, t);
                if (l1_kkt_optimal(y, x, tau.tau, lambda, cand)) {
                    fit = std::move(cand);
                    return true;
                }
            }
            if (res.dual_alt.size() == 0) break;
            res.dual = res.dual_alt;  // second pass from the best-merit iterate
        }
        return false;
    };
    IpResult res = solve_bounded_lp(bk, c, b, x0, warm, kGapTol, kMaxIter);
    QrFit fit = make_fit(res, 1e-7);
    bool ok = recover(res, fit);
    if (!ok && warm != nullptr) {  // retry cold once before giving up
        res = solve_bounded_lp(bk, c, b, x0, nullptr, kGapTol, kMaxIter);
        fit = make_fit(res, 1e-7);
        ok = recover(res, fit);
    }
    if (!ok) {
        // Continuation fallback: approach the target penalty from above,
        // where the face is less degenerate, and warm-chain the duals down.
        Eigen::VectorXd yw;
        for (double mlt : {8.0, 4.0, 2.0, 1.0}) {
            PenalizedBackend bk2(design, nlam * mlt);
            IpResult r2 = solve_bounded_lp(bk2, c, b, x0, yw.size() > 0 ? &yw : nullptr,
                                           kGapTol, kMaxIter);
            yw = r2.dual;
            if (mlt == 1.0) {
                fit = make_fit(r2, 1e-7);
                ok = recover(r2, fit);
                res = std::move(r2);
            }
        }
    }
    if (!ok)
        throw NotConverged(res.iterations, "l1 quantile fit did not reach the duality-gap tolerance");
    fit.converged = true;

    if (dual_out != nullptr) *dual_out = res.dual;
    return fit;
}

}  // namespace

QrFit qr_fit_l1(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, QuantileLevel tau,
                double lambda) {
    return qr_fit_l1_impl(y, x, tau, lambda, nullptr, nullptr);
}

double lambda_max(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, QuantileLevel tau) {
    if (y.size() != x.rows()) throw ConfigError("response length does not match design rows");
    const Eigen::Index n = y.size();
    const double q = empirical_quantile(y, tau.tau);
    // q is an element of y, so ties are exact zeros
    double g_rest = 0.0;
    Eigen::Index ties = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double r = y[i] - q;
        if (r == 0.0)
            ++ties;
        else
            g_rest += psi(r, tau.tau);
    }
    // Intercept stationarity pins the tie-set subgradient mass to -g_rest;
    // split it evenly (for tie-free data the single value is forced).
    const double xi = -g_rest / static_cast<double>(ties);
    double best = 0.0;
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double r = y[i] - q;
            acc += (r == 0.0 ? xi : psi(r, tau.tau)) * x(i, k);
        }
        best = std::max(best, std::abs(acc) / static_cast<double>(n));
    }
    return best;
}

std::vector<QrFit> lambda_path(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                               QuantileLevel tau, int grid_size) {
    if (grid_size < 2) throw ConfigError("lambda grid needs at least 2 points");
    const double lmax = lambda_max(y, x, tau);
    std::vector<QrFit> fits;
    fits.reserve(static_cast<std::size_t>(grid_size));
    Eigen::VectorXd warm;
    bool have_warm = false;
    for (int i = 0; i < grid_size; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(grid_size - 1);
        const double lam = lmax * std::pow(1e-3, frac);
        Eigen::VectorXd dual;
        fits.push_back(qr_fit_l1_impl(y, x, tau, lam, have_warm ? &warm : nullptr, &dual));
        warm = dual;
        have_warm = true;
    }
    return fits;
}

std::vector<int> active_slopes(const QrFit& fit) {
    std::vector<int> out;
    for (Eigen::Index k = 1; k < fit.beta.size(); ++k)
        if (std::abs(fit.beta[k]) > 1e-8) out.push_back(static_cast<int>(k - 1));
    return out;
}

std::size_t ebic_lambda_index(const std::vector<QrFit>& path, Eigen::Index n, QuantileLevel tau) {
    if (path.empty()) throw ConfigError("lambda path is empty");
    if (n < 2) throw ConfigError("EBIC needs at least 2 observations");
    const double nn = static_cast<double>(n);
    std::size_t best = 0;
    double best_value = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < path.size(); ++i) {
        double loss = 0.0;
        for (Eigen::Index r = 0; r < path[i].residuals.size(); ++r)
            loss += check_loss(path[i].residuals(r), tau.tau);
        loss /= nn;
        if (!(loss > 1e-300)) continue;
        const auto d = static_cast<double>(active_slopes(path[i]).size());
        const double value =
            std::log(loss) + (d > 0.0 ? d * (std::log(nn) / (2.0 * nn)) * std::log(d) : 0.0);
        if (value < best_value) {
            best_value = value;
            best = i;
        }
    }
    return best;
}

}  // namespace qpc
