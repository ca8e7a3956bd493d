#pragma once

#include <Eigen/Core>
#include <vector>

#include "iss/cox.hpp"
#include "iss/sampling.hpp"

namespace iss {

struct PhaseTwoVariance {
    Eigen::MatrixXd total;
    Eigen::MatrixXd phase1;  // inverse weighted information
    Eigen::MatrixXd phase2;  // finite-population influence term
};

/// factor * sum_r (psi_r - mean)(psi_r - mean)' over the rows of psi.
Eigen::MatrixXd centered_outer_sum(const Eigen::MatrixXd& psi, double factor);

/// Case-cohort analysis: phase 2 term over subcohort non-cases with factor
/// 1 - m / (N - D). `psi` are weighted dfbeta rows of the fit.
PhaseTwoVariance lin_ying_variance(const CoxFit& fit, const InfluenceMatrix& psi, const SampleAssignment& a);

/// Supersampled analysis: subcohort non-cases and supersample, factor
/// 1 - (m + n1) / (N - D).
PhaseTwoVariance supersample_variance(const CoxFit& fit, const InfluenceMatrix& psi, const SampleAssignment& a);

/// Stratified supersampled analysis: per stratum, centred at the stratum
/// mean, factor c_h / (c_h - 1) * (1 - c_h / (N_h - D_h)) with c_h = m_h + n1_h.
PhaseTwoVariance stratified_variance(const CoxFit& fit, const InfluenceMatrix& psi, const SampleAssignment& a);

/// Complete data: the model variance alone.
PhaseTwoVariance model_variance(const CoxFit& fit);

struct PooledEstimate {
    Eigen::VectorXd beta;
    Eigen::MatrixXd covariance;
    Eigen::MatrixXd within;   // mean of the per-copy covariances
    Eigen::MatrixXd between;  // sample covariance of the per-copy estimates
    Eigen::VectorXd se;
    Eigen::VectorXd lo95, hi95;
    int M = 0;
};

/// Rubin's rules: mean estimate, W + (1 + 1/M) B, normal-quantile intervals.
PooledEstimate rubin_pool(const std::vector<Eigen::VectorXd>& estimates, const std::vector<Eigen::MatrixXd>& variances);

/// Wraps a single estimate (no imputation) in the same structure; between = 0.
PooledEstimate single_estimate(const Eigen::VectorXd& beta, const Eigen::MatrixXd& covariance);

inline constexpr double kNormalQuantile975 = 1.959963984540054;

}  // namespace iss
