// issmi: case-cohort analysis with influence-based supersampling and multiple
// imputation.
//
//   issmi simulate [--config f] [--method a,b] [--replicates n] [--paper-scale]
//   issmi analyze  [cohort.csv] --config f
//   issmi sample   [cohort.csv] --config f
//
// Exit codes: 0 success, 1 validation, 2 numerical failure, 3 I/O.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "iss/analysis.hpp"
#include "iss/config.hpp"
#include "iss/csv.hpp"
#include "iss/errors.hpp"
#include "iss/parallel.hpp"
#include "iss/simulation.hpp"

using nlohmann::ordered_json;
using namespace iss;

namespace {

constexpr const char* kVersion = "1.0.0";

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string method;
    std::optional<int> replicates;
    std::optional<int> threads;
    std::string out;
    bool paper_scale = false;
    std::string cohort;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

Method method_flag(const std::string& name) {
    const auto m = parse_method(name);
    if (!m) throw ValidationError("--method: unknown method '" + name + "'");
    return *m;
}

std::string out_dir(const Flags& f, const ExperimentConfig& c, const std::string& fallback) {
    std::string dir = !f.out.empty() ? f.out : c.output.value_or(fallback);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
    return dir;
}

std::string join(const std::string& dir, const std::string& file) {
    return (std::filesystem::path(dir) / file).string();
}

ordered_json decisions() {
    return {
        {"ties", "breslow; events precede censorings at tied times"},
        {"cox_solver", "newton-raphson, step-halving, |score| <= 1e-9"},
        {"influence", "weighted dfbeta: score residual times inverse information"},
        {"pps", "exact capped proportional-to-size solve; zero sizes floored at 1e-8 of the largest"},
        {"cube", "fast flight on a window of p+1 units; landing drops constraints from the last backwards"},
        {"raking", "exponential tilting by newton with step-halving; cases fixed at weight 1"},
        {"imputation_start", "random observed value from the model-fitting units"},
        {"imputation_fit_units", "mice: case-cohort sample; smc: subcohort"},
        {"mice_predictors", "Z, other X, marginal Nelson-Aalen, event indicator"},
        {"smc_predictors", "Z"},
        {"smc_reject_limit", "last proposal kept and counted when the limit is hit"},
        {"pooling", "Rubin's rules, T = W + (1 + 1/M) B"},
        {"intervals", "wald, normal quantile 1.959963984540054"},
        {"beta0", "exact quantile of the event threshold over 200000 common random numbers"},
        {"z2_latent_correlation", "point-biserial target / sqrt(2/pi)"},
        {"bias", "absolute"},
        {"rel_eff", "(mc_se full / mc_se method)^2"},
        {"seeds", "derive_seed(master, {replicate, stage}); stage 0 cohort, 1 subcohort, 2 rss, 3 iss, "
                  "10+method imputation"},
    };
}

ordered_json sim_json(const SimConfig& c, double beta0) {
    ordered_json methods = ordered_json::array();
    for (Method m : c.methods) methods.push_back(method_name(m));
    return {{"N", c.N},
            {"n_sc", c.n_sc},
            {"n1", c.n1},
            {"M", c.M},
            {"L", c.L},
            {"reject_limit", c.reject_limit},
            {"alpha", c.alpha},
            {"beta0", beta0},
            {"beta0_given", c.beta0.has_value()},
            {"event_fraction", c.event_fraction},
            {"interaction", c.interaction},
            {"stratified", c.stratified},
            {"replicates", c.replicates},
            {"methods", methods},
            {"seed", c.seed}};
}

ordered_json analysis_json(const AnalysisConfig& a) {
    ordered_json cov = ordered_json::array();
    for (const auto& c : a.covariates) {
        ordered_json e{{"name", c.name},
                       {"type", c.kind == CovariateKind::Continuous ? "continuous"
                                : c.kind == CovariateKind::Binary   ? "binary"
                                                                    : "categorical"},
                       {"block", c.block == Block::LowCost ? "low_cost" : "expensive"}};
        if (c.kind == CovariateKind::Categorical) e["levels"] = c.levels;
        cov.push_back(e);
    }
    return {{"cohort", a.cohort},
            {"covariates", cov},
            {"model", a.model},
            {"submodel", a.submodel},
            {"method", method_name(a.method)},
            {"subcohort_column", a.subcohort_column},
            {"n_sc", a.n_sc},
            {"n1", a.n1},
            {"M", a.M},
            {"L", a.L},
            {"reject_limit", a.reject_limit},
            {"mice", {{"other_x", a.mice_other_x}, {"outcome", a.mice_outcome}}},
            {"seed", a.seed}};
}

ordered_json metadata(const std::string& command, const ordered_json& effective, const Flags& f) {
    ordered_json m;
    m["tool"] = "issmi";
    m["version"] = kVersion;
    m["command"] = command;
    m["config_file"] = f.config.empty() ? ordered_json(nullptr) : ordered_json(f.config);
    m["config_hash"] = fnv1a_hex(effective.dump());
    m["config"] = effective;
    m["decisions"] = decisions();
    return m;
}

ExperimentConfig load(const Flags& f) { return f.config.empty() ? ExperimentConfig{} : load_config(f.config); }

int threads_of(const Flags& f, const ExperimentConfig& c) {
    if (f.threads) {
        if (*f.threads < 1) throw ValidationError("--threads must be at least 1");
        return *f.threads;
    }
    return c.threads.value_or(default_threads());
}

int cmd_simulate(const Flags& f) {
    const ExperimentConfig cfg = load(f);
    if (cfg.analysis) throw ValidationError("$.analysis: not used by simulate");
    SimConfig sim = cfg.simulation.value_or(SimConfig{});
    if (f.paper_scale) {
        const SimConfig p = SimConfig::paper_scale();
        sim.N = p.N;
        sim.n_sc = p.n_sc;
        sim.n1 = p.n1;
        sim.replicates = p.replicates;
    }
    if (f.seed) sim.seed = *f.seed;
    if (f.replicates) {
        if (*f.replicates < 1) throw ValidationError("--replicates must be at least 1");
        sim.replicates = *f.replicates;
    }
    if (!f.method.empty()) {
        sim.methods.clear();
        for (const auto& name : split_list(f.method)) sim.methods.push_back(method_flag(name));
        if (sim.methods.empty()) throw ValidationError("--method: no method given");
    }
    sim.threads = threads_of(f, cfg);
    const std::string dir = out_dir(f, cfg, "results");

    std::cerr << "simulate: N=" << sim.N << " n_sc=" << sim.n_sc << " n1=" << sim.n1 << " replicates=" << sim.replicates
              << " threads=" << sim.threads << "\n";
    const StudyResult study = run_study(sim, [](int done, int total) {
        std::cerr << "\rreplicate " << done << "/" << total << std::flush;
        if (done == total) std::cerr << "\n";
    });

    write_text_file(join(dir, "metrics.csv"), metrics_csv(study.metrics));
    write_text_file(join(dir, "table.txt"), metrics_table(study.metrics, sim));
    write_text_file(join(dir, "replicates.csv"), replicates_csv(study.replicates, sim));
    write_text_file(join(dir, "timing.csv"), timing_csv(summarize_timing(study.replicates, sim)));

    ordered_json meta = metadata("simulate", {{"simulation", sim_json(sim, study.beta0)}}, f);
    meta["seed"] = sim.seed;
    meta["paper_scale"] = f.paper_scale;
    std::size_t failures = 0;
    for (const auto& r : study.replicates)
        for (const auto& m : r.methods) failures += m.ok ? 0 : 1;
    meta["failed_method_runs"] = failures;
    write_text_file(join(dir, "metadata.json"), meta.dump(2) + "\n");
    std::cout << metrics_table(study.metrics, sim);
    return 0;
}

AnalysisConfig analysis_config(const Flags& f, const ExperimentConfig& cfg) {
    if (!cfg.analysis) throw ValidationError("$.analysis: required");
    if (cfg.simulation) throw ValidationError("$.simulation: not used by this command");
    AnalysisConfig a = *cfg.analysis;
    if (!f.cohort.empty()) a.cohort = f.cohort;
    if (a.cohort.empty()) throw ValidationError("$.analysis.cohort: no cohort file given");
    if (f.seed) a.seed = *f.seed;
    if (!f.method.empty()) a.method = method_flag(f.method);
    if (f.replicates) throw ValidationError("--replicates applies to simulate only");
    if (f.paper_scale) throw ValidationError("--paper-scale applies to simulate only");
    return a;
}

int exit_code(ErrorKind k) { return k == ErrorKind::Validation ? 1 : 2; }

int cmd_analyze(const Flags& f) {
    const ExperimentConfig cfg = load(f);
    const AnalysisConfig a = analysis_config(f, cfg);
    const int threads = threads_of(f, cfg);
    const RawTable raw = read_csv(a.cohort);
    const PreparedCohort cohort = prepare_cohort(a, raw);
    const std::string dir = out_dir(f, cfg, "analysis");
    std::cerr << "analyze: " << cohort.observed.size() << " subjects, " << cohort.observed.num_cases()
              << " cases, method " << method_name(a.method) << "\n";
    const AnalysisResult res = run_analysis(a, cohort, threads);

    ordered_json meta = metadata("analyze", {{"analysis", analysis_json(a)}}, f);
    meta["seed"] = a.seed;
    meta["subcohort_from_file"] = cohort.subcohort_from_file;
    if (!res.result.ok) {
        meta["error"] = res.result.error;
        write_text_file(join(dir, "metadata.json"), meta.dump(2) + "\n");
        std::cerr << "error: " << res.result.error << "\n";
        return exit_code(res.result.error_kind);
    }

    const PooledEstimate& e = res.result.estimate;
    std::ostringstream csv;
    CsvWriter w(csv);
    w.row({"term", "estimate", "se", "lo95", "hi95", "within_var", "between_var"});
    ordered_json terms = ordered_json::array();
    for (std::size_t t = 0; t < res.terms.size(); ++t) {
        const auto i = static_cast<Eigen::Index>(t);
        w.row({res.terms[t], format_double(e.beta(i)), format_double(e.se(i)), format_double(e.lo95(i)),
               format_double(e.hi95(i)), format_double(e.within(i, i)), format_double(e.between(i, i))});
        terms.push_back({{"term", res.terms[t]},
                         {"estimate", e.beta(i)},
                         {"se", e.se(i)},
                         {"lo95", e.lo95(i)},
                         {"hi95", e.hi95(i)}});
    }
    ordered_json cov = ordered_json::array();
    for (Eigen::Index r = 0; r < e.covariance.rows(); ++r) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index c = 0; c < e.covariance.cols(); ++c) row.push_back(e.covariance(r, c));
        cov.push_back(row);
    }
    ordered_json est{{"method", method_name(a.method)},
                     {"imputations", e.M},
                     {"analysis_units", res.result.analysis_units},
                     {"terms", terms},
                     {"covariance", cov}};
    if (is_smc(a.method)) {
        est["mean_attempts"] = res.result.mean_attempts;
        est["reject_limit_hits"] = res.result.limit_hits;
        est["flagged_copies"] = res.result.flagged_copies;
    }
    if (a.method != Method::Full) {
        const auto& s = res.design.sizes;
        est["design"] = {{"N", s.N}, {"cases", s.D}, {"subcohort", s.n_sc}, {"subcohort_noncases", s.m},
                         {"supersample", s.n1}};
    }
    if (res.cube)
        est["cube"] = {{"flight_residual", res.cube->flight_residual},
                       {"retained_residual", res.cube->retained_residual},
                       {"dropped_constraints", res.cube->dropped}};
    write_text_file(join(dir, "estimates.csv"), csv.str());
    write_text_file(join(dir, "estimates.json"), est.dump(2) + "\n");
    write_text_file(join(dir, "metadata.json"), meta.dump(2) + "\n");
    std::cout << csv.str();
    return 0;
}

int cmd_sample(const Flags& f) {
    const ExperimentConfig cfg = load(f);
    AnalysisConfig a = analysis_config(f, cfg);
    if (a.method == Method::Full) a.method = Method::SmcIss;
    const RawTable raw = read_csv(a.cohort);
    const PreparedCohort cohort = prepare_cohort(a, raw);
    const std::string dir = out_dir(f, cfg, "sample");
    std::cerr << "sample: " << cohort.observed.size() << " subjects, " << cohort.observed.num_cases() << " cases\n";
    const IssDesign d = run_sampling(a, cohort);
    const SampleAssignment& s = d.assignment;

    std::ostringstream asg, wts;
    CsvWriter wa(asg), ww(wts);
    wa.row({"id", "row", "stratum", "role", "in_subcohort", "inclusion_prob", "influence_norm"});
    ww.row({"id", "role", "weight"});
    const auto& labels = cohort.observed.stratum_labels();
    for (std::size_t i = 0; i < s.size(); ++i) {
        const std::string stratum = labels.empty() ? "" : labels[static_cast<std::size_t>(s.stratum[i])];
        wa.row({cohort.observed[i].id, std::to_string(cohort.row[i]), stratum, role_name(s.role[i]),
                s.in_subcohort[i] ? "1" : "0", format_double(s.inclusion_prob[i]), format_double(d.psi_norm[i])});
        if (s.sampled(i)) ww.row({cohort.observed[i].id, role_name(s.role[i]), format_double(d.weights[i])});
    }
    write_text_file(join(dir, "assignment.csv"), asg.str());
    write_text_file(join(dir, "weights.csv"), wts.str());

    // Constraint totals: target against the calibrated weights.
    const Eigen::VectorXd achieved = d.problem.A.transpose() * d.calibrated.weights;
    std::ostringstream tot;
    CsvWriter wt(tot);
    wt.row({"constraint", "target", "achieved", "relative_error"});
    ordered_json totals = ordered_json::array();
    for (Eigen::Index c = 0; c < achieved.size(); ++c) {
        const double target = d.problem.totals(c);
        const double rel = std::abs(achieved(c) - target) / std::max(1.0, std::abs(target));
        wt.row({d.problem.names[static_cast<std::size_t>(c)], format_double(target), format_double(achieved(c)),
                format_double(rel)});
        totals.push_back({{"constraint", d.problem.names[static_cast<std::size_t>(c)]},
                          {"target", target},
                          {"achieved", achieved(c)}});
    }
    std::cout << tot.str();

    ordered_json meta = metadata("sample", {{"analysis", analysis_json(a)}}, f);
    meta["seed"] = a.seed;
    meta["subcohort_from_file"] = cohort.subcohort_from_file;
    meta["design"] = {{"N", s.sizes.N}, {"cases", s.sizes.D}, {"subcohort", s.sizes.n_sc},
                      {"subcohort_noncases", s.sizes.m}, {"supersample", s.sizes.n1}};
    meta["cube"] = {{"flight_residual", d.cube.flight_residual},
                    {"retained_residual", d.cube.retained_residual},
                    {"dropped_constraints", d.cube.dropped}};
    meta["raking_iterations"] = d.calibrated.iterations;
    meta["constraint_totals"] = totals;
    write_text_file(join(dir, "metadata.json"), meta.dump(2) + "\n");
    return 0;
}

void add_common(CLI::App* app, Flags& f, bool simulate) {
    app->add_option("--config", f.config, "JSON config file");
    app->add_option("--seed", f.seed, "master seed");
    app->add_option("--method", f.method, simulate ? "comma-separated methods" : "estimation method");
    app->add_option("--replicates", f.replicates, "simulation replicates");
    app->add_option("--threads", f.threads, "worker threads (default: all cores)");
    app->add_option("--out", f.out, "output directory");
    app->add_flag("--paper-scale", f.paper_scale, "N=25000, n_sc=250, n1=750, 1000 replicates");
    if (!simulate) app->add_option("cohort", f.cohort, "cohort CSV (overrides the config)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Case-cohort analysis with influence-based supersampling and multiple imputation", "issmi"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    Flags f;
    CLI::App* sim = app.add_subcommand("simulate", "run the simulation study");
    CLI::App* ana = app.add_subcommand("analyze", "pooled estimates for a cohort file");
    CLI::App* smp = app.add_subcommand("sample", "draw an influence-based supersample with calibrated weights");
    add_common(sim, f, true);
    add_common(ana, f, false);
    add_common(smp, f, false);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    try {
        if (sim->parsed()) return cmd_simulate(f);
        if (ana->parsed()) return cmd_analyze(f);
        return cmd_sample(f);
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
