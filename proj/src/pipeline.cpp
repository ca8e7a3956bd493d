#include "iss/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iss/errors.hpp"
#include "iss/random.hpp"

namespace iss {

const std::vector<Method>& all_methods() {
    static const std::vector<Method> m{Method::Full, Method::CaseCohort, Method::Mice,   Method::MiceRss,
                                       Method::MiceIss, Method::Smc,      Method::SmcRss, Method::SmcIss};
    return m;
}

std::string method_name(Method m) {
    switch (m) {
        case Method::Full: return "full";
        case Method::CaseCohort: return "cc";
        case Method::Mice: return "mice";
        case Method::MiceRss: return "mice_rss";
        case Method::MiceIss: return "mice_iss";
        case Method::Smc: return "smc";
        case Method::SmcRss: return "smc_rss";
        case Method::SmcIss: return "smc_iss";
    }
    return "full";
}

std::optional<Method> parse_method(std::string_view name) {
    for (Method m : all_methods())
        if (method_name(m) == name) return m;
    return std::nullopt;
}

bool is_rss(Method m) { return m == Method::MiceRss || m == Method::SmcRss; }
bool is_iss(Method m) { return m == Method::MiceIss || m == Method::SmcIss; }
bool is_smc(Method m) { return m == Method::Smc || m == Method::SmcRss || m == Method::SmcIss; }
bool imputes_cohort(Method m) { return m == Method::Mice || m == Method::Smc; }

std::vector<bool> case_cohort_mask(const SampleAssignment& a) {
    std::vector<bool> keep(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) keep[i] = a.role[i] == Role::Case || a.in_subcohort[i];
    return keep;
}

IssDesign iss_design(const CohortDataset& cohort, const SampleAssignment& case_cohort, const CoxModelSpec& submodel,
                     const std::vector<std::size_t>& n1, std::uint64_t seed) {
    if (submodel.uses_expensive()) throw ValidationError("the supersampling submodel may only use low-cost terms");
    if (n1.size() != case_cohort.strata.size())
        throw ValidationError("one supersample size per stratum required");
    IssDesign out;
    out.assignment = case_cohort;
    const std::size_t N = cohort.size();
    const std::vector<double> ones(N, 1.0);
    const std::vector<bool> all(N, true);
    const CoxProblem problem = make_cox_problem(cohort, submodel, ones, all);
    const CoxFit fit = fit_cox(problem);
    const Eigen::MatrixXd psi = dfbeta(fit, problem);
    out.psi_norm.resize(N);
    for (std::size_t i = 0; i < N; ++i) out.psi_norm[i] = psi.row(static_cast<Eigen::Index>(i)).norm();

    const std::vector<std::size_t> pool = case_cohort.pool_units();
    std::vector<double> pi(pool.size());
    for (std::size_t h = 0; h < case_cohort.strata.size(); ++h) {
        std::vector<std::size_t> rows;
        std::vector<double> sizes;
        for (std::size_t r = 0; r < pool.size(); ++r)
            if (case_cohort.stratum[pool[r]] == static_cast<int>(h)) {
                rows.push_back(r);
                sizes.push_back(out.psi_norm[pool[r]]);
            }
        if (rows.empty()) {
            if (n1[h] > 0) throw ValidationError("supersample requested from an empty pool stratum");
            continue;
        }
        const std::vector<double> ph = solve_inclusion_probabilities(sizes, static_cast<double>(n1[h]));
        for (std::size_t r = 0; r < rows.size(); ++r) pi[rows[r]] = ph[r];
    }
    Eigen::MatrixXd psi_pool(static_cast<Eigen::Index>(pool.size()), psi.cols());
    for (std::size_t r = 0; r < pool.size(); ++r)
        psi_pool.row(static_cast<Eigen::Index>(r)) = psi.row(static_cast<Eigen::Index>(pool[r]));
    out.cube = draw_balanced(out.assignment, pool, pi, psi_pool, derive_seed(seed, {1}));

    out.problem = build_iss_constraints(out.assignment, out.psi_norm);
    out.calibrated = rake(out.problem);
    out.weights = subject_weights(out.problem, out.calibrated, N);
    return out;
}

RssDesign rss_design(const SampleAssignment& case_cohort, const std::vector<std::size_t>& n1, std::uint64_t seed) {
    RssDesign out;
    out.assignment = case_cohort;
    draw_rss(out.assignment, n1, seed);
    out.weights = closed_form_weights(out.assignment, out.assignment.strata.size() > 1 ? WeightVariant::Stratified
                                                                                       : WeightVariant::Supersampled);
    return out;
}

std::vector<double> case_cohort_weights(const SampleAssignment& case_cohort) {
    return closed_form_weights(case_cohort, case_cohort.strata.size() > 1 ? WeightVariant::Stratified
                                                                          : WeightVariant::CaseCohort);
}

namespace {

PhaseTwoVariance design_variance(Method method, const CoxFit& fit, const InfluenceMatrix& psi,
                                 const SampleAssignment* design) {
    if (method == Method::Full || imputes_cohort(method)) return model_variance(fit);
    if (design->strata.size() > 1) return stratified_variance(fit, psi, *design);
    if (method == Method::CaseCohort) return lin_ying_variance(fit, psi, *design);
    return supersample_variance(fit, psi, *design);
}

}  // namespace

MethodResult run_method(Method method, const CohortDataset& observed, const SampleAssignment* design,
                        std::span<const double> weights, const PipelineSettings& settings, std::uint64_t seed) {
    MethodResult res;
    res.method = method;
    const std::size_t N = observed.size();
    try {
        if (method != Method::Full && !design) throw ValidationError(method_name(method) + " needs a sample design");
        if (design && design->size() != N) throw ValidationError("design and cohort sizes differ");
        if ((is_rss(method) || is_iss(method)) && design->sizes.n1 == 0)
            throw ValidationError(method_name(method) + " needs a supersample");

        std::vector<bool> units(N, false);
        std::vector<double> w(N, 1.0);
        for (std::size_t i = 0; i < N; ++i) {
            if (method == Method::Full || imputes_cohort(method))
                units[i] = true;
            else if (method == Method::CaseCohort)
                units[i] = design->role[i] == Role::Case || design->role[i] == Role::SubcohortNoncase;
            else
                units[i] = design->sampled(i);
        }
        if (!(method == Method::Full || imputes_cohort(method))) {
            if (weights.size() != N) throw ValidationError("one weight per subject required");
            for (std::size_t i = 0; i < N; ++i)
                if (units[i]) w[i] = weights[i];
        }
        res.analysis_units = static_cast<std::size_t>(std::count(units.begin(), units.end(), true));

        ImputedDatasetSet imputed;
        const bool needs_imputation = method != Method::Full && method != Method::CaseCohort;
        if (needs_imputation) {
            // Compatible models condition on Z only and are fitted on the
            // random subcohort; MICE conditions on the outcome, so every
            // measured unit (cases included) is a valid fitting unit.
            ImputationInput input{&observed, units, is_smc(method) ? design->in_subcohort : case_cohort_mask(*design)};
            ImputationOptions opt;
            opt.M = settings.M;
            opt.L = settings.L;
            opt.seed = seed;
            opt.reject_limit = settings.reject_limit;
            opt.threads = settings.threads;
            imputed = is_smc(method) ? smcfcs_impute(input, settings.analysis, settings.smc_models, w, opt)
                                     : mice_impute(input, settings.mice_models, opt);
            std::size_t draws = 0, attempts = 0;
            for (const auto& st : imputed.stats) {
                draws += st.draws;
                attempts += st.attempts;
                res.limit_hits += st.limit_hits;
                res.flagged_copies += st.flagged ? 1 : 0;
            }
            res.mean_attempts = draws ? static_cast<double>(attempts) / static_cast<double>(draws) : 0.0;
        } else {
            imputed.x.push_back(x_matrix(observed));
        }

        std::vector<std::size_t> unit_list;
        for (std::size_t i = 0; i < N; ++i)
            if (units[i]) unit_list.push_back(i);
        Eigen::VectorXd time(static_cast<Eigen::Index>(unit_list.size())), wv(time.size());
        Eigen::VectorXi event(time.size());
        for (std::size_t r = 0; r < unit_list.size(); ++r) {
            time(static_cast<Eigen::Index>(r)) = observed[unit_list[r]].time;
            event(static_cast<Eigen::Index>(r)) = observed[unit_list[r]].event;
            wv(static_cast<Eigen::Index>(r)) = w[unit_list[r]];
        }

        std::vector<Eigen::VectorXd> betas;
        std::vector<Eigen::MatrixXd> vars;
        for (const XMatrix& X : imputed.x) {
            const Eigen::MatrixXd G = completed_design(settings.analysis, observed, X, unit_list);
            if (!G.allFinite())
                throw ValidationError(method_name(method) + ": analysis units have unmeasured expensive covariates");
            CoxProblem problem(time, event, G, wv);
            CoxFit fit = fit_cox(problem, settings.cox);
            fit.terms = settings.analysis.names();
            InfluenceMatrix psi{unit_list, Eigen::MatrixXd()};
            if (!(method == Method::Full || imputes_cohort(method))) psi.values = dfbeta(fit, problem);
            const PhaseTwoVariance v = design_variance(method, fit, psi, design);
            betas.push_back(fit.beta);
            vars.push_back(v.total);
        }
        res.estimate = betas.size() >= 2 ? rubin_pool(betas, vars) : single_estimate(betas.front(), vars.front());
        res.ok = true;
    } catch (const ValidationError& e) {
        res.error = e.what();
        res.error_kind = ErrorKind::Validation;
    } catch (const NumericalError& e) {
        res.error = e.what();
        res.error_kind = ErrorKind::Numerical;
    } catch (const std::exception& e) {
        res.error = e.what();
        res.error_kind = ErrorKind::Other;
    }
    return res;
}

}  // namespace iss
