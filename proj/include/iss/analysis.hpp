#pragma once

#include <optional>
#include <string>
#include <vector>

#include "iss/config.hpp"
#include "iss/pipeline.hpp"

namespace iss {

/// Cohort read from CSV with its case-cohort design. X is masked to the
/// case-cohort sample; `row` gives each subject's 1-based data row in the file.
struct PreparedCohort {
    CohortDataset observed;
    std::optional<SampleAssignment> case_cohort;  // unset for method full
    std::vector<std::size_t> row;
    bool subcohort_from_file = false;
};

PreparedCohort prepare_cohort(const AnalysisConfig& config, const RawTable& raw);

/// Per-stratum supersample sizes (a single size is split over pool sizes).
std::vector<std::size_t> supersample_sizes(const AnalysisConfig& config, const SampleAssignment& case_cohort);

PipelineSettings analysis_settings(const AnalysisConfig& config, const CovariateSchema& schema, int threads);

struct AnalysisResult {
    MethodResult result;
    std::vector<std::string> terms;
    SampleAssignment design;            // empty for method full
    std::optional<CubeReport> cube;     // ISS only
    std::vector<double> weights;        // per subject, design weights (empty for full)
};

AnalysisResult run_analysis(const AnalysisConfig& config, const PreparedCohort& cohort, int threads);

/// ISS draw only: submodel fit, dfbeta, PPS probabilities, cube, raking.
IssDesign run_sampling(const AnalysisConfig& config, const PreparedCohort& cohort);

}  // namespace iss
