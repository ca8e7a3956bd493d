#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

#include "iss/defaults.hpp"
#include "iss/sampling.hpp"

namespace iss {

/// Raking problem over the sampled units. Rows of A align with `units`.
/// Units flagged in `fixed` keep their initial weight; their contribution is
/// subtracted from the totals before solving.
struct CalibrationProblem {
    std::vector<std::size_t> units;  // subject index per row
    Eigen::VectorXd w0;
    Eigen::MatrixXd A;
    Eigen::VectorXd totals;
    std::vector<std::string> names;  // one per constraint
    std::vector<bool> fixed;         // empty means none fixed
};

struct CalibratedWeights {
    Eigen::VectorXd weights;    // aligned with the problem rows
    Eigen::VectorXd lambda;     // per constraint; 0 for dropped ones
    Eigen::VectorXd residuals;  // achieved minus target, per constraint
    int iterations = 0;
    std::vector<int> dropped;   // constraints pruned as linearly dependent
    std::vector<std::string> warnings;
};

struct RakeOptions {
    int max_iter = defaults::rake_max_iter;
    double rel_tol = defaults::rake_rel_tol;  // relative to max |total|
    int max_halvings = defaults::rake_max_halvings;
};

/// Exponential tilting w = w0 exp(A lambda) solved by Newton's method with
/// step-halving on the residual norm. Throws ConvergenceError (with the
/// attainable range of every constraint) when the system cannot be met.
CalibratedWeights rake(const CalibrationProblem& problem, const RakeOptions& options = {});

/// Three-constraint system for ISS samples: subcohort non-cases,
/// supersample and cases, with non-case totals split by influence norms.
/// `psi_norms` is indexed by subject.
CalibrationProblem build_iss_constraints(const SampleAssignment& assignment, std::span<const double> psi_norms);

/// RSS system: one total N - D over all sampled non-cases, cases fixed at D.
/// `w0` is indexed by subject.
CalibrationProblem build_rss_constraints(const SampleAssignment& assignment, std::span<const double> w0);

enum class WeightVariant { CaseCohort, Supersampled, Stratified };

/// Per-subject analysis weights (0 for units outside the sample).
///   CaseCohort:   non-cases in the subcohort (N - D) / m
///   Supersampled: subcohort and supersample non-cases (N - D) / (m + n1)
///   Stratified:   (N_h - D_h) / (m_h + n1_h) within each stratum
/// Cases get weight 1.
std::vector<double> closed_form_weights(const SampleAssignment& assignment, WeightVariant variant);

/// Scatters calibrated weights back to a per-subject vector (0 elsewhere).
std::vector<double> subject_weights(const CalibrationProblem& problem, const CalibratedWeights& cw,
                                    std::size_t cohort_size);

}  // namespace iss
