#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iss/defaults.hpp"
#include "iss/calibration.hpp"
#include "iss/cohort.hpp"
#include "iss/cox.hpp"
#include "iss/imputation.hpp"
#include "iss/sampling.hpp"
#include "iss/variance.hpp"

namespace iss {

/// Estimation strategies compared in the simulation study.
///   full      complete cohort, no missing data
///   cc        case-cohort sample with inverse-probability weights
///   mice/smc  impute every unit outside the case-cohort sample
///   *_rss     impute a simple random supersample
///   *_iss     impute an influence-based balanced supersample, calibrated weights
enum class Method { Full, CaseCohort, Mice, MiceRss, MiceIss, Smc, SmcRss, SmcIss };

const std::vector<Method>& all_methods();
std::string method_name(Method m);
std::optional<Method> parse_method(std::string_view name);
bool is_rss(Method m);
bool is_iss(Method m);
bool is_smc(Method m);
bool imputes_cohort(Method m);  // mice, smc

struct PipelineSettings {
    CoxModelSpec analysis;
    CoxModelSpec submodel;  // low-cost terms fitted on the full cohort for ISS
    ImputationModelSpec mice_models;
    ImputationModelSpec smc_models;
    int M = defaults::M;
    int L = defaults::L;
    int reject_limit = defaults::reject_limit;
    int threads = 1;
    CoxOptions cox;
};

/// Step I: submodel influence, PPS probabilities, cube draw, raking.
struct IssDesign {
    SampleAssignment assignment;
    std::vector<double> psi_norm;  // per subject
    CubeReport cube;
    CalibrationProblem problem;
    CalibratedWeights calibrated;
    std::vector<double> weights;   // per subject, 0 outside the sample
};

/// `cohort` needs Z, time and event for every subject (X is not used).
IssDesign iss_design(const CohortDataset& cohort, const SampleAssignment& case_cohort, const CoxModelSpec& submodel,
                     const std::vector<std::size_t>& n1, std::uint64_t seed);

struct RssDesign {
    SampleAssignment assignment;
    std::vector<double> weights;
};

RssDesign rss_design(const SampleAssignment& case_cohort, const std::vector<std::size_t>& n1, std::uint64_t seed);

/// Weights for the case-cohort analysis (plain or stratified).
std::vector<double> case_cohort_weights(const SampleAssignment& case_cohort);

enum class ErrorKind { None, Validation, Numerical, Other };

struct MethodResult {
    Method method = Method::Full;
    bool ok = false;
    std::string error;
    ErrorKind error_kind = ErrorKind::None;
    PooledEstimate estimate;
    std::size_t analysis_units = 0;
    double mean_attempts = 0.0;
    std::size_t limit_hits = 0;
    int flagged_copies = 0;
};

/// Runs one estimation strategy on `observed` (X is NaN where not measured).
/// `design` is the case-cohort assignment for cc/mice/smc and the
/// supersampled assignment for the *_rss / *_iss methods; `weights` are per
/// subject and ignored by full/mice/smc, which weight every unit by 1.
/// Numerical failures are returned in the result, not thrown.
MethodResult run_method(Method method, const CohortDataset& observed, const SampleAssignment* design,
                        std::span<const double> weights, const PipelineSettings& settings, std::uint64_t seed);

/// Keep-mask for measured X: cases and subcohort members.
std::vector<bool> case_cohort_mask(const SampleAssignment& a);

}  // namespace iss
