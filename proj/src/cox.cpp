#include "iss/cox.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "iss/errors.hpp"

namespace iss {

CoxModelSpec CoxModelSpec::parse(const std::vector<std::string>& terms, const CovariateSchema& schema) {
    CoxModelSpec spec;
    std::set<std::string> seen;
    for (const auto& raw : terms) {
        Term t;
        std::size_t start = 0;
        while (true) {
            std::size_t pos = raw.find(':', start);
            std::string part = raw.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
            auto ref = schema.find(part);
            if (!ref) throw ValidationError("model term '" + raw + "' references unknown column '" + part + "'");
            t.factors.push_back(*ref);
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        if (t.factors.size() > 2) throw ValidationError("only pairwise interactions are supported: '" + raw + "'");
        if (t.factors.size() == 2 && t.factors[0] == t.factors[1])
            throw ValidationError("interaction of a column with itself: '" + raw + "'");
        // Canonical name so "a:b" and "b:a" collide.
        std::vector<std::string> parts;
        for (const auto& f : t.factors) parts.push_back(schema.name_of(f));
        std::string key = parts.size() == 2 ? std::min(parts[0], parts[1]) + ":" + std::max(parts[0], parts[1])
                                            : parts[0];
        if (!seen.insert(key).second) throw ValidationError("duplicate model term '" + raw + "'");
        t.name = raw;
        spec.terms_.push_back(std::move(t));
    }
    if (spec.terms_.empty()) throw ValidationError("model needs at least one term");
    return spec;
}

std::vector<std::string> CoxModelSpec::names() const {
    std::vector<std::string> out;
    for (const auto& t : terms_) out.push_back(t.name);
    return out;
}

bool CoxModelSpec::uses_expensive() const {
    for (const auto& t : terms_)
        for (const auto& f : t.factors)
            if (f.block == Block::Expensive) return true;
    return false;
}

double CoxModelSpec::linear_predictor(const Eigen::VectorXd& beta, std::span<const double> z,
                                      std::span<const double> x) const {
    double lp = 0.0;
    for (std::size_t j = 0; j < terms_.size(); ++j) {
        double v = 1.0;
        for (const ColumnRef& f : terms_[j].factors) v *= f.block == Block::LowCost ? z[f.index] : x[f.index];
        lp += beta(static_cast<Eigen::Index>(j)) * v;
    }
    return lp;
}

Eigen::MatrixXd CoxModelSpec::design(const CohortDataset& dataset, std::span<const std::size_t> units) const {
    Eigen::MatrixXd G(static_cast<Eigen::Index>(units.size()), static_cast<Eigen::Index>(terms_.size()));
    for (std::size_t r = 0; r < units.size(); ++r) {
        const Subject& s = dataset[units[r]];
        fill_row(s.z, s.x, G.row(static_cast<Eigen::Index>(r)));
    }
    return G;
}

Eigen::MatrixXd CoxModelSpec::design(const CohortDataset& dataset) const {
    std::vector<std::size_t> all(dataset.size());
    std::iota(all.begin(), all.end(), 0);
    return design(dataset, all);
}

CoxProblem::CoxProblem(Eigen::VectorXd time, Eigen::VectorXi event, Eigen::MatrixXd design, Eigen::VectorXd weight)
    : time_(std::move(time)), event_(std::move(event)), design_(std::move(design)), weight_(std::move(weight)) {
    const Eigen::Index n = time_.size();
    if (event_.size() != n || design_.rows() != n || weight_.size() != n)
        throw ValidationError("Cox problem: inconsistent row counts");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(weight_(i) > 0.0) || !std::isfinite(weight_(i)))
            throw ValidationError("Cox problem: weights must be positive", static_cast<std::size_t>(i + 1));
        if (!std::isfinite(time_(i))) throw ValidationError("Cox problem: non-finite time");
        if (!design_.row(i).allFinite())
            throw ValidationError("Cox problem: missing or non-finite design value", static_cast<std::size_t>(i + 1));
    }
    order_.resize(static_cast<std::size_t>(n));
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
    std::stable_sort(order_.begin(), order_.end(), [this](Eigen::Index a, Eigen::Index b) { return time_(a) > time_(b); });
    Eigen::Index i = 0;
    while (i < n) {
        Group g{i, i, time_(order_[static_cast<std::size_t>(i)]), 0};
        while (g.end < n && time_(order_[static_cast<std::size_t>(g.end)]) == g.time)
            g.events += event_(order_[static_cast<std::size_t>(g.end++)]);
        groups_.push_back(g);
        i = g.end;
    }
}

void CoxProblem::set_design(const Eigen::MatrixXd& design) {
    if (design.rows() != design_.rows() || design.cols() != design_.cols())
        throw ValidationError("Cox problem: replacement design has the wrong shape");
    if (!design.allFinite()) throw ValidationError("Cox problem: missing or non-finite design value");
    design_ = design;
}

RiskSums risk_accumulators(const CoxProblem& problem, const Eigen::VectorXd& beta, double at_time) {
    const Eigen::Index p = problem.cols();
    RiskSums r{0.0, Eigen::VectorXd::Zero(p), Eigen::MatrixXd::Zero(p, p)};
    for (Eigen::Index i = 0; i < problem.rows(); ++i) {
        if (problem.time()(i) < at_time) continue;
        const auto x = problem.design().row(i).transpose();
        const double e = problem.weight()(i) * std::exp(x.dot(beta));
        r.s0 += e;
        r.s1 += e * x;
        r.s2 += e * x * x.transpose();
    }
    return r;
}

namespace {

double max_lp(const Eigen::VectorXd& lp) { return lp.size() ? lp.maxCoeff() : 0.0; }

}  // namespace

CoxEvaluation evaluate_cox(const CoxProblem& problem, const Eigen::VectorXd& beta, bool with_information) {
    const Eigen::Index p = problem.cols();
    const Eigen::MatrixXd& X = problem.design();
    const Eigen::VectorXd lp = X * beta;
    const double shift = max_lp(lp);

    CoxEvaluation ev;
    ev.score = Eigen::VectorXd::Zero(p);
    if (with_information) ev.information = Eigen::MatrixXd::Zero(p, p);

    const auto& order = problem.scan_order();
    const auto& groups = problem.groups();
    Eigen::VectorXd r(X.rows());
    std::vector<double> hazard(groups.size(), 0.0);  // d / S0 per group
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd xsum(p);

    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        xsum.setZero();
        double lpsum = 0.0;
        for (Eigen::Index k = g.begin; k < g.end; ++k) {
            const Eigen::Index i = order[static_cast<std::size_t>(k)];
            r(i) = problem.weight()(i) * std::exp(lp(i) - shift);
            s0 += r(i);
            s1.noalias() += r(i) * X.row(i).transpose();
            if (problem.event()(i)) {
                xsum.noalias() += X.row(i).transpose();
                lpsum += lp(i);
            }
        }
        if (g.events == 0) continue;
        const double d = g.events;
        ev.loglik += lpsum - d * (std::log(s0) + shift);
        const Eigen::VectorXd mean = s1 / s0;
        ev.score += xsum - d * mean;
        if (with_information) {
            hazard[gi] = d / s0;
            ev.information.noalias() -= d * mean * mean.transpose();
        }
    }
    if (with_information) {
        // sum_g d_g S2_g / S0_g = sum_i r_i x_i x_i' A(t_i), with A(t) the
        // cumulative d/S0 over event times up to t.
        Eigen::VectorXd c(X.rows());
        double A = 0.0;
        for (std::size_t gi = groups.size(); gi-- > 0;) {
            A += hazard[gi];
            for (Eigen::Index k = groups[gi].begin; k < groups[gi].end; ++k) {
                const Eigen::Index i = order[static_cast<std::size_t>(k)];
                c(i) = r(i) * A;
            }
        }
        ev.information.noalias() += X.transpose() * c.asDiagonal() * X;
        ev.information = 0.5 * (ev.information + ev.information.transpose()).eval();
    }
    return ev;
}

namespace {

// Eigen's rcond estimate ignores exact zero pivots, so the pivots are checked too.
void require_nonsingular(const Eigen::LDLT<Eigen::MatrixXd>& ldlt) {
    bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() >= 1e-13;
    if (ok && ldlt.vectorD().size() > 0) {
        const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
        ok = d.minCoeff() > 1e-13 * d.maxCoeff();
    }
    if (!ok) throw SingularMatrixError("information matrix is singular (collinear design?)");
}

Eigen::MatrixXd invert_information(const Eigen::MatrixXd& info) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    require_nonsingular(ldlt);
    Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
    return 0.5 * (inv + inv.transpose());
}

}  // namespace

CoxFit fit_cox(const CoxProblem& problem, const CoxOptions& options, const Eigen::VectorXd* start) {
    const Eigen::Index p = problem.cols();
    Eigen::VectorXd beta = start ? *start : Eigen::VectorXd::Zero(p);
    if (beta.size() != p) throw ValidationError("start vector has the wrong dimension");

    CoxEvaluation ev = evaluate_cox(problem, beta);
    CoxFit fit;
    int iter = 0;
    for (; iter < options.max_iter; ++iter) {
        if (ev.score.lpNorm<Eigen::Infinity>() <= options.tol) {
            fit.converged = true;
            break;
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(ev.information);
        require_nonsingular(ldlt);
        const Eigen::VectorXd step = ldlt.solve(ev.score);
        double scale = 1.0;
        Eigen::VectorXd trial = beta + step;
        CoxEvaluation trial_ev = evaluate_cox(problem, trial);
        for (int h = 0; h < options.max_halvings && !(trial_ev.loglik >= ev.loglik); ++h) {
            scale *= 0.5;
            trial = beta + scale * step;
            trial_ev = evaluate_cox(problem, trial);
        }
        beta = trial;
        ev = std::move(trial_ev);
        if (beta.lpNorm<Eigen::Infinity>() > options.divergence_bound)
            throw MonotoneLikelihoodError("coefficient diverged beyond |beta| > " +
                                          std::to_string(options.divergence_bound) + " (monotone likelihood)");
    }
    if (!fit.converged && ev.score.lpNorm<Eigen::Infinity>() <= options.tol) fit.converged = true;
    if (!fit.converged)
        throw ConvergenceError("Cox fit did not converge in " + std::to_string(options.max_iter) +
                               " iterations (score max-norm " +
                               std::to_string(ev.score.lpNorm<Eigen::Infinity>()) + ")");
    fit.beta = beta;
    fit.information = ev.information;
    fit.covariance = invert_information(ev.information);
    fit.model_se = fit.covariance.diagonal().cwiseSqrt();
    fit.loglik = ev.loglik;
    fit.iterations = iter;
    return fit;
}

CoxProblem make_cox_problem(const CohortDataset& dataset, const CoxModelSpec& spec, std::span<const double> weights,
                            const std::vector<bool>& analysis_mask) {
    if (weights.size() != dataset.size() || analysis_mask.size() != dataset.size())
        throw ValidationError("weights and mask need one entry per subject");
    std::vector<std::size_t> units;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (analysis_mask[i]) units.push_back(i);
    const auto n = static_cast<Eigen::Index>(units.size());
    Eigen::VectorXd time(n), w(n);
    Eigen::VectorXi event(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const std::size_t u = units[static_cast<std::size_t>(r)];
        time(r) = dataset[u].time;
        event(r) = dataset[u].event;
        w(r) = weights[u];
        if (!(w(r) > 0.0)) throw ValidationError("analysis unit with nonpositive weight", u + 1);
    }
    Eigen::MatrixXd G = spec.design(dataset, units);
    for (Eigen::Index r = 0; r < n; ++r)
        if (!G.row(r).allFinite())
            throw ValidationError("analysis unit '" + dataset[units[static_cast<std::size_t>(r)]].id +
                                      "' has a missing model covariate",
                                  units[static_cast<std::size_t>(r)] + 1);
    return CoxProblem(std::move(time), std::move(event), std::move(G), std::move(w));
}

CoxFit fit_weighted_cox(const CohortDataset& dataset, const CoxModelSpec& spec, std::span<const double> weights,
                        const std::vector<bool>& analysis_mask, const CoxOptions& options) {
    CoxFit fit = fit_cox(make_cox_problem(dataset, spec, weights, analysis_mask), options);
    fit.terms = spec.names();
    return fit;
}

Eigen::MatrixXd dfbeta(const CoxFit& fit, const CoxProblem& problem) {
    const Eigen::Index n = problem.rows();
    const Eigen::Index p = problem.cols();
    if (fit.beta.size() != p) throw ValidationError("fit and problem dimensions differ");
    const Eigen::MatrixXd& X = problem.design();
    const Eigen::VectorXd lp = X * fit.beta;
    const double shift = max_lp(lp);
    const auto& order = problem.scan_order();
    const auto& groups = problem.groups();

    // Descending pass: risk-set sums at each distinct time.
    std::vector<double> g_s0(groups.size());
    Eigen::MatrixXd g_s1(p, static_cast<Eigen::Index>(groups.size()));
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        for (Eigen::Index k = groups[gi].begin; k < groups[gi].end; ++k) {
            const Eigen::Index i = order[static_cast<std::size_t>(k)];
            const double r = problem.weight()(i) * std::exp(lp(i) - shift);
            s0 += r;
            s1.noalias() += r * X.row(i).transpose();
        }
        g_s0[gi] = s0;
        g_s1.col(static_cast<Eigen::Index>(gi)) = s1;
    }

    // Ascending pass: cumulative event sums over t_j <= t_i.
    Eigen::MatrixXd resid(n, p);
    Eigen::VectorXd a = Eigen::VectorXd::Zero(p);
    double b = 0.0;
    for (std::size_t gi = groups.size(); gi-- > 0;) {
        const auto& g = groups[gi];
        const auto col = g_s1.col(static_cast<Eigen::Index>(gi));
        if (g.events > 0) {
            a += g.events * col / (g_s0[gi] * g_s0[gi]);
            b += g.events / g_s0[gi];
        }
        for (Eigen::Index k = g.begin; k < g.end; ++k) {
            const Eigen::Index i = order[static_cast<std::size_t>(k)];
            const double r = problem.weight()(i) * std::exp(lp(i) - shift);
            resid.row(i) = (r * (a - b * X.row(i).transpose())).transpose();
            if (problem.event()(i)) resid.row(i) += X.row(i) - (col / g_s0[gi]).transpose();
        }
    }
    return resid * fit.covariance;
}

InfluenceMatrix dfbeta(const CoxFit& fit, const CohortDataset& dataset, const CoxModelSpec& spec,
                       std::span<const double> weights, const std::vector<bool>& analysis_mask) {
    InfluenceMatrix out;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (analysis_mask[i]) out.units.push_back(i);
    out.values = dfbeta(fit, make_cox_problem(dataset, spec, weights, analysis_mask));
    return out;
}

}  // namespace iss
