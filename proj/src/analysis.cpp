#include "iss/analysis.hpp"

#include <algorithm>
#include <map>

#include "iss/errors.hpp"
#include "iss/random.hpp"

namespace iss {

namespace {

std::vector<std::size_t> split(const std::vector<std::size_t>& given, const std::vector<std::size_t>& over,
                               const std::string& what) {
    if (given.size() == 1) return over.size() == 1 ? given : proportional_allocation(over, given.front());
    if (given.size() != over.size())
        throw ValidationError(what + ": expected 1 or " + std::to_string(over.size()) + " sizes, got " +
                              std::to_string(given.size()));
    return given;
}

bool flag_value(const std::string& cell, std::size_t row) {
    if (cell == "1" || cell == "true" || cell == "TRUE") return true;
    if (cell == "0" || cell == "false" || cell == "FALSE") return false;
    throw ValidationError("subcohort flag must be 0 or 1", row);
}

}  // namespace

PreparedCohort prepare_cohort(const AnalysisConfig& config, const RawTable& raw) {
    PreparedCohort out;
    const CovariateSchema schema(config.covariates);
    CohortDataset full = validate_cohort(raw, schema);

    const int c_id = raw.column("id");
    std::map<std::string, std::size_t> row_of;
    for (std::size_t r = 0; r < raw.rows.size(); ++r) row_of[raw.rows[r][static_cast<std::size_t>(c_id)]] = r + 1;
    out.row.resize(full.size());
    for (std::size_t i = 0; i < full.size(); ++i) out.row[i] = row_of.at(full[i].id);

    if (config.method == Method::Full) {
        for (std::size_t i = 0; i < full.size(); ++i)
            for (std::size_t k = 0; k < schema.p(); ++k)
                if (is_missing(full[i].x[k]))
                    throw ValidationError("method full needs every expensive covariate; '" + schema.x_names()[k] +
                                              "' is missing",
                                          out.row[i]);
        out.observed = std::move(full);
        return out;
    }

    SampleAssignment cc;
    const int c_sc = raw.column(config.subcohort_column);
    if (c_sc >= 0) {
        std::vector<bool> flags(full.size());
        for (std::size_t i = 0; i < full.size(); ++i)
            flags[i] = flag_value(raw.rows[out.row[i] - 1][static_cast<std::size_t>(c_sc)], out.row[i]);
        cc = case_cohort_from_flags(full, flags);
        out.subcohort_from_file = true;
    } else {
        if (config.n_sc.empty())
            throw ValidationError("$.analysis.n_sc: required when the cohort has no '" + config.subcohort_column +
                                  "' column");
        const std::uint64_t seed = derive_seed(config.seed, {1});
        if (full.stratified()) {
            std::vector<std::size_t> sizes(full.num_strata(), 0);
            for (std::size_t i = 0; i < full.size(); ++i) ++sizes[static_cast<std::size_t>(full.stratum_of(i))];
            cc = draw_stratified_case_cohort(full, split(config.n_sc, sizes, "$.analysis.n_sc"), seed);
        } else {
            if (config.n_sc.size() != 1) throw ValidationError("$.analysis.n_sc: cohort is not stratified");
            cc = draw_case_cohort(full, config.n_sc.front(), seed);
        }
    }
    for (std::size_t h = 0; h < cc.strata.size(); ++h)
        if (cc.strata[h].m < 2)
            throw ValidationError("stratum " + std::to_string(h + 1) + " has fewer than 2 subcohort non-cases");

    const std::vector<bool> keep = case_cohort_mask(cc);
    for (std::size_t i = 0; i < full.size(); ++i) {
        if (!keep[i]) continue;
        for (std::size_t k = 0; k < schema.p(); ++k)
            if (is_missing(full[i].x[k]))
                throw ValidationError("expensive covariate '" + schema.x_names()[k] +
                                          "' missing for a case-cohort member",
                                      out.row[i]);
    }
    out.observed = full.with_x_masked(keep);
    out.case_cohort = std::move(cc);
    return out;
}

std::vector<std::size_t> supersample_sizes(const AnalysisConfig& config, const SampleAssignment& case_cohort) {
    if (config.n1.empty()) throw ValidationError("$.analysis.n1: required for method " + method_name(config.method));
    std::vector<std::size_t> pools;
    for (const auto& s : case_cohort.strata) pools.push_back(s.pool());
    std::vector<std::size_t> n1 = split(config.n1, pools, "$.analysis.n1");
    for (std::size_t h = 0; h < n1.size(); ++h)
        if (n1[h] > pools[h])
            throw ValidationError("$.analysis.n1: supersample of " + std::to_string(n1[h]) + " exceeds pool of " +
                                  std::to_string(pools[h]) + " in stratum " + std::to_string(h + 1));
    return n1;
}

PipelineSettings analysis_settings(const AnalysisConfig& config, const CovariateSchema& schema, int threads) {
    PipelineSettings s;
    s.analysis = CoxModelSpec::parse(config.model, schema);
    std::vector<std::string> sub = config.submodel;
    if (sub.empty())
        for (const auto& t : s.analysis.terms())
            if (t.factors.size() == 1 && t.factors.front().block == Block::LowCost) sub.push_back(t.name);
    if (!sub.empty()) s.submodel = CoxModelSpec::parse(sub, schema);
    s.mice_models = ImputationModelSpec::mice(schema);
    s.mice_models.use_other_x = config.mice_other_x;
    s.mice_models.use_outcome = config.mice_outcome;
    s.smc_models = ImputationModelSpec::smcfcs(schema);
    s.M = config.M;
    s.L = config.L;
    s.reject_limit = config.reject_limit;
    s.threads = threads;
    return s;
}

IssDesign run_sampling(const AnalysisConfig& config, const PreparedCohort& cohort) {
    if (!cohort.case_cohort) throw ValidationError("sampling needs a case-cohort design");
    const PipelineSettings s = analysis_settings(config, cohort.observed.schema(), 1);
    if (s.submodel.size() == 0) throw ValidationError("$.analysis.submodel: no low-cost terms to fit");
    return iss_design(cohort.observed, *cohort.case_cohort, s.submodel, supersample_sizes(config, *cohort.case_cohort),
                      derive_seed(config.seed, {3}));
}

AnalysisResult run_analysis(const AnalysisConfig& config, const PreparedCohort& cohort, int threads) {
    AnalysisResult out;
    const PipelineSettings s = analysis_settings(config, cohort.observed.schema(), threads);
    out.terms = s.analysis.names();
    const Method m = config.method;
    const SampleAssignment* design = nullptr;
    if (m != Method::Full) {
        const SampleAssignment& cc = *cohort.case_cohort;
        if (is_iss(m)) {
            IssDesign d = run_sampling(config, cohort);
            out.design = std::move(d.assignment);
            out.weights = std::move(d.weights);
            out.cube = d.cube;
        } else if (is_rss(m)) {
            RssDesign d = rss_design(cc, supersample_sizes(config, cc), derive_seed(config.seed, {2}));
            out.design = std::move(d.assignment);
            out.weights = std::move(d.weights);
        } else {
            out.design = cc;
            out.weights = case_cohort_weights(cc);
        }
        design = &out.design;
    }
    out.result = run_method(m, cohort.observed, design, out.weights, s,
                            derive_seed(config.seed, {10 + static_cast<std::uint64_t>(m)}));
    return out;
}

}  // namespace iss
