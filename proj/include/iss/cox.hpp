#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

#include "iss/defaults.hpp"
#include "iss/cohort.hpp"

namespace iss {

/// One design column: a covariate or a pairwise interaction ("z1:xc1").
struct Term {
    std::string name;
    std::vector<ColumnRef> factors;  // 1 or 2 entries
};

class CoxModelSpec {
public:
    CoxModelSpec() = default;
    /// Resolves term names against the schema's expanded columns.
    static CoxModelSpec parse(const std::vector<std::string>& terms, const CovariateSchema& schema);

    const std::vector<Term>& terms() const { return terms_; }
    std::size_t size() const { return terms_.size(); }
    std::vector<std::string> names() const;
    bool uses_expensive() const;

    template <class Row>
    void fill_row(std::span<const double> z, std::span<const double> x, Row&& row) const {
        for (std::size_t j = 0; j < terms_.size(); ++j) {
            double v = 1.0;
            for (const ColumnRef& f : terms_[j].factors) v *= f.block == Block::LowCost ? z[f.index] : x[f.index];
            row(static_cast<Eigen::Index>(j)) = v;
        }
    }

    double linear_predictor(const Eigen::VectorXd& beta, std::span<const double> z, std::span<const double> x) const;

    /// Design rows of the listed subjects; NaN where an X factor is missing.
    Eigen::MatrixXd design(const CohortDataset& dataset, std::span<const std::size_t> units) const;
    Eigen::MatrixXd design(const CohortDataset& dataset) const;

private:
    std::vector<Term> terms_;
};

/// Survival data prepared for repeated likelihood evaluation. Rows keep the
/// caller's order; a descending-time scan order with tie groups is cached.
class CoxProblem {
public:
    CoxProblem(Eigen::VectorXd time, Eigen::VectorXi event, Eigen::MatrixXd design, Eigen::VectorXd weight);

    const Eigen::VectorXd& time() const { return time_; }
    const Eigen::VectorXi& event() const { return event_; }
    const Eigen::MatrixXd& design() const { return design_; }
    const Eigen::VectorXd& weight() const { return weight_; }
    Eigen::Index rows() const { return design_.rows(); }
    Eigen::Index cols() const { return design_.cols(); }

    /// Replaces the design keeping times, events and weights (same shape).
    void set_design(const Eigen::MatrixXd& design);

    struct Group {
        Eigen::Index begin, end;  // range in scan_order()
        double time;
        int events;
    };
    const std::vector<Eigen::Index>& scan_order() const { return order_; }
    const std::vector<Group>& groups() const { return groups_; }  // descending time

private:
    Eigen::VectorXd time_;
    Eigen::VectorXi event_;
    Eigen::MatrixXd design_;
    Eigen::VectorXd weight_;
    std::vector<Eigen::Index> order_;
    std::vector<Group> groups_;
};

struct RiskSums {
    double s0 = 0.0;
    Eigen::VectorXd s1;
    Eigen::MatrixXd s2;
};

/// Weighted risk-set sums over units with time >= at_time:
/// S0 = sum w e^{lp}, S1 = sum w e^{lp} x, S2 = sum w e^{lp} x x'.
RiskSums risk_accumulators(const CoxProblem& problem, const Eigen::VectorXd& beta, double at_time);

struct CoxEvaluation {
    double loglik = 0.0;
    Eigen::VectorXd score;
    Eigen::MatrixXd information;
};

/// Log pseudo-likelihood sum_i delta_i [lp_i - log S0(t_i)] with weighted
/// denominators and unweighted event contributions, plus its gradient and
/// negative Hessian (Breslow ties).
CoxEvaluation evaluate_cox(const CoxProblem& problem, const Eigen::VectorXd& beta, bool with_information = true);

struct CoxOptions {
    double tol = defaults::cox_tol;  // score max-norm
    int max_iter = defaults::cox_max_iter;
    int max_halvings = defaults::cox_max_halvings;
    double divergence_bound = defaults::cox_beta_bound;
};

struct CoxFit {
    std::vector<std::string> terms;
    Eigen::VectorXd beta;
    Eigen::MatrixXd information;
    Eigen::MatrixXd covariance;  // information^{-1}
    Eigen::VectorXd model_se;
    double loglik = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Damped Newton-Raphson. Throws ConvergenceError, SingularMatrixError or
/// MonotoneLikelihoodError.
CoxFit fit_cox(const CoxProblem& problem, const CoxOptions& options = {},
               const Eigen::VectorXd* start = nullptr);

/// Problem for the units with analysis_mask[i] (weights indexed by subject).
CoxProblem make_cox_problem(const CohortDataset& dataset, const CoxModelSpec& spec, std::span<const double> weights,
                            const std::vector<bool>& analysis_mask);

CoxFit fit_weighted_cox(const CohortDataset& dataset, const CoxModelSpec& spec, std::span<const double> weights,
                        const std::vector<bool>& analysis_mask, const CoxOptions& options = {});

/// Per-unit empirical influence of each unit on beta-hat (dfbeta):
///   psi_i = I^{-1} [ delta_i (x_i - S1/S0 (t_i))
///                    + w_i e^{lp_i} sum_{t_j <= t_i} delta_j (S1/S0^2 - x_i / S0)(t_j) ].
/// Rows follow the problem's row order. Censored units have no first term.
Eigen::MatrixXd dfbeta(const CoxFit& fit, const CoxProblem& problem);

struct InfluenceMatrix {
    std::vector<std::size_t> units;  // subject index per row
    Eigen::MatrixXd values;
};

InfluenceMatrix dfbeta(const CoxFit& fit, const CohortDataset& dataset, const CoxModelSpec& spec,
                       std::span<const double> weights, const std::vector<bool>& analysis_mask);

}  // namespace iss
