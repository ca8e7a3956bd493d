#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iss/cohort.hpp"
#include "iss/defaults.hpp"
#include "iss/pipeline.hpp"
#include "iss/simulation.hpp"

namespace iss {

/// Real-data pipeline description. Sizes given as a single number are split
/// over strata in proportion to stratum size (pool size for n1).
struct AnalysisConfig {
    std::string cohort;                  // CSV path
    std::vector<CovariateSpec> covariates;
    std::vector<std::string> model;      // analysis terms, "a:b" for products
    std::vector<std::string> submodel;   // empty: the low-cost main terms of `model`
    Method method = Method::SmcIss;
    std::string subcohort_column = "subcohort";  // used when present in the CSV
    std::vector<std::size_t> n_sc;       // one entry, or one per stratum
    std::vector<std::size_t> n1;
    int M = defaults::M;
    int L = defaults::L;
    int reject_limit = defaults::reject_limit;
    bool mice_other_x = true;
    bool mice_outcome = true;
    std::uint64_t seed = defaults::seed;
};

struct ExperimentConfig {
    std::optional<SimConfig> simulation;
    std::optional<AnalysisConfig> analysis;
    std::optional<std::string> output;
    std::optional<int> threads;
};

/// Parses and validates a JSON config. Unknown keys and type errors throw
/// ValidationError naming the JSON path ("$.simulation.n1: ...").
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

/// FNV-1a 64-bit hash, printed as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace iss
