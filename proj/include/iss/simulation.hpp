#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "iss/defaults.hpp"
#include "iss/cohort.hpp"
#include "iss/pipeline.hpp"
#include "iss/random.hpp"

namespace iss {

struct SimConfig {
    std::size_t N = defaults::N;
    std::size_t n_sc = defaults::n_sc;
    std::size_t n1 = defaults::n1;
    int M = defaults::M;
    int L = defaults::L;
    int reject_limit = defaults::reject_limit;
    double alpha = defaults::alpha;    // Weibull shape
    std::optional<double> beta0;       // solved for event_fraction when unset
    double event_fraction = defaults::event_fraction;
    bool interaction = false;
    bool stratified = false;           // strata = levels of z3, proportional allocation
    int replicates = defaults::replicates;
    std::vector<Method> methods = all_methods();
    std::uint64_t seed = defaults::seed;
    int threads = 1;

    static SimConfig desk() { return {}; }
    static SimConfig paper_scale();

    std::vector<std::string> terms() const;
    std::vector<std::string> submodel_terms() const;
    Eigen::VectorXd truth() const;
};

/// z0, z1 continuous; z2 binary; z3 categorical (3 levels); xc1..xc4
/// continuous and xb1, xb2 binary expensive covariates.
CovariateSchema sim_schema();

/// Correlation of the latent normal u2 with (z0, z1) giving the requested
/// correlations after thresholding at 0: rho_latent = rho / sqrt(2/pi).
double latent_correlation(double point_biserial);

/// One simulated subject before censoring is applied.
struct SimDraw {
    double z0, z1, z2, u2;
    int z3;
    std::array<double, 6> x;  // xc1..xc4, xb1, xb2
    double lp;                // without beta0
    double e;                 // Exp(1) variate driving the event time
    double entry, c2;         // uniform entry on [0,2]; exponential censoring time
};

SimDraw draw_sim_subject(Rng& rng, const Eigen::VectorXd& beta);

/// Weibull event time by inversion: (e)^{1/alpha} exp(-(beta0 + lp)/alpha).
double event_time(double e, double lp, double beta0, double alpha);

/// Complete cohort (every X observed). Subject ids are "1".."N".
CohortDataset generate_cohort(const SimConfig& config, double beta0, std::uint64_t seed);

/// Baseline log-hazard giving the configured expected event fraction: the
/// exact empirical quantile of the event threshold over a fixed sample of
/// common random numbers, so the share of events in that sample hits the
/// target.
double calibrate_beta0(const SimConfig& config);

struct ReplicateResult {
    int replicate = 0;
    std::size_t cases = 0;
    std::vector<MethodResult> methods;  // in config.methods order
    std::vector<double> seconds;
    std::string design_error;           // sampling stage failure, if any
};

ReplicateResult run_replicate(const SimConfig& config, double beta0, int replicate);

struct MetricsRow {
    std::string method;
    std::string term;
    double truth = 0.0;
    double mean = 0.0;
    double bias = 0.0;      // |mean - truth|
    double mc_se = 0.0;     // sd of the estimates
    double est_se = 0.0;    // mean of the estimated se
    double coverage = 0.0;  // share of 95% intervals covering the truth
    double rel_eff = 0.0;   // (mc_se of full / mc_se)^2, NaN without a full run
    int replicates = 0;     // successful replicates
};

std::vector<MetricsRow> summarize(const std::vector<ReplicateResult>& results, const SimConfig& config);

struct TimingRow {
    std::string method;
    double mean = 0.0, max = 0.0, min = 0.0;
};

std::vector<TimingRow> summarize_timing(const std::vector<ReplicateResult>& results, const SimConfig& config);

struct StudyResult {
    double beta0 = 0.0;
    std::vector<ReplicateResult> replicates;
    std::vector<MetricsRow> metrics;
};

using Progress = std::function<void(int done, int total)>;

/// Runs every replicate (in parallel over config.threads) and summarizes.
/// Results do not depend on the thread count.
StudyResult run_study(const SimConfig& config, const Progress& progress = {});

std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string replicates_csv(const std::vector<ReplicateResult>& results, const SimConfig& config);
std::string timing_csv(const std::vector<TimingRow>& rows);
/// Text table with one block per statistic, one column per method.
std::string metrics_table(const std::vector<MetricsRow>& rows, const SimConfig& config);

}  // namespace iss
