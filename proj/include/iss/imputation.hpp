#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "iss/defaults.hpp"
#include "iss/cohort.hpp"
#include "iss/cox.hpp"
#include "iss/regression.hpp"

namespace iss {

using XMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ImputationColumn {
    std::size_t x_index = 0;
    Family family = Family::LinearNormal;
};

/// Conditional models for the expensive columns. Every model regresses X_k on
/// an intercept and all Z columns; optionally on the other X columns and on
/// the outcome summary (marginal Nelson-Aalen at the observed time, event
/// indicator).
struct ImputationModelSpec {
    std::vector<ImputationColumn> columns;
    bool use_other_x = true;
    bool use_outcome = true;

    /// Chained equations: Z, X_{-k}, cumulative hazard and event indicator.
    static ImputationModelSpec mice(const CovariateSchema& schema);
    /// Compatible imputation: Z only; the outcome enters through rejection.
    static ImputationModelSpec smcfcs(const CovariateSchema& schema);
};

struct ImputationInput {
    const CohortDataset* dataset = nullptr;
    std::vector<bool> analysis;  // units forming the completed sample
    std::vector<bool> fit;       // units fitting the covariate models (subcohort, X complete)
};

struct ImputationOptions {
    int M = defaults::M;
    int L = defaults::L;
    std::uint64_t seed = 0;
    int reject_limit = defaults::reject_limit;
    int threads = 1;
};

struct CopyStats {
    std::uint64_t seed = 0;
    std::size_t draws = 0;       // accepted (or kept) values
    std::size_t attempts = 0;    // proposals made
    std::size_t limit_hits = 0;  // draws that reached the rejection limit
    int cox_retries = 0;
    bool flagged = false;
    double mean_attempts() const { return draws ? static_cast<double>(attempts) / static_cast<double>(draws) : 0.0; }
};

struct ImputedDatasetSet {
    std::vector<XMatrix> x;  // N x p per copy; NaN outside the analysis sample where unobserved
    std::vector<CopyStats> stats;
    std::vector<std::size_t> imputed_columns;
    std::size_t missing_cells = 0;
    std::size_t size() const { return x.size(); }
};

/// Raw X of the cohort as an N x p matrix.
XMatrix x_matrix(const CohortDataset& dataset);

/// Design rows of `units` for a completed X.
Eigen::MatrixXd completed_design(const CoxModelSpec& spec, const CohortDataset& dataset, const XMatrix& x,
                                 std::span<const std::size_t> units);

ImputedDatasetSet mice_impute(const ImputationInput& input, const ImputationModelSpec& spec,
                              const ImputationOptions& options);

/// Chained imputation with rejection against the weighted Cox analysis model.
/// `weights` are indexed by subject and fixed during imputation.
ImputedDatasetSet smcfcs_impute(const ImputationInput& input, const CoxModelSpec& analysis,
                                const ImputationModelSpec& spec, std::span<const double> weights,
                                const ImputationOptions& options);

/// mice_impute with a single cycle; requires exactly one incomplete column.
ImputedDatasetSet single_pass_impute(const ImputationInput& input, const ImputationModelSpec& spec,
                                     std::uint64_t seed, int M);

}  // namespace iss
