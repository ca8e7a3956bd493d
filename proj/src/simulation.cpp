#include "iss/defaults.hpp"
#include "iss/simulation.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <tuple>

#include "iss/csv.hpp"
#include "iss/errors.hpp"
#include "iss/parallel.hpp"
#include "iss/random.hpp"

namespace iss {

SimConfig SimConfig::paper_scale() {
    SimConfig c;
    c.N = defaults::paper_N;
    c.n_sc = defaults::paper_n_sc;
    c.n1 = defaults::paper_n1;
    c.replicates = defaults::paper_replicates;
    return c;
}

std::vector<std::string> SimConfig::terms() const {
    std::vector<std::string> t{"z1", "z2", "z3.2", "z3.3", "xc1", "xc2", "xc3", "xc4", "xb1", "xb2"};
    if (interaction) t.push_back("z1:xc1");
    return t;
}

std::vector<std::string> SimConfig::submodel_terms() const { return {"z1", "z2", "z3.2", "z3.3"}; }

Eigen::VectorXd SimConfig::truth() const {
    Eigen::VectorXd b(interaction ? 11 : 10);
    b.head(10) << 1.5, 0.5, 0.1, 0.2, 0.4, 0.1, 0.1, 0.1, 0.3, 0.5;
    if (interaction) b(10) = 0.3;
    return b;
}

CovariateSchema sim_schema() {
    return CovariateSchema({
        {"z0", CovariateKind::Continuous, Block::LowCost, 0},
        {"z1", CovariateKind::Continuous, Block::LowCost, 0},
        {"z2", CovariateKind::Binary, Block::LowCost, 0},
        {"z3", CovariateKind::Categorical, Block::LowCost, 3},
        {"xc1", CovariateKind::Continuous, Block::Expensive, 0},
        {"xc2", CovariateKind::Continuous, Block::Expensive, 0},
        {"xc3", CovariateKind::Continuous, Block::Expensive, 0},
        {"xc4", CovariateKind::Continuous, Block::Expensive, 0},
        {"xb1", CovariateKind::Binary, Block::Expensive, 0},
        {"xb2", CovariateKind::Binary, Block::Expensive, 0},
    });
}

double latent_correlation(double point_biserial) {
    // corr(z, 1{u > 0}) = corr(z, u) * phi(0) / sqrt(1/4) = corr(z, u) * sqrt(2/pi)
    return point_biserial / std::sqrt(2.0 / std::numbers::pi);
}

namespace {

constexpr double kCorrZ0Z1 = 0.05;
constexpr double kCorrZ0Z2 = -0.05;
constexpr double kCorrZ1Z2 = 0.01;

constexpr double kXc[4][5] = {{0.2, 0.1, 0.1, 0.1, -0.1},
                              {0.1, -0.15, 0.1, 0.1, 0.05},
                              {0.05, -0.1, 0.15, -0.05, 0.1},
                              {0.2, 0.01, -0.1, 0.12, -0.05}};
constexpr double kXb[2][5] = {{0.15, 0.1, 0.07, 0.08, -0.03}, {0.15, 0.15, 0.0, 0.15, -0.05}};

// u2 = a z0 + b z1 + c e with unit variance and the latent correlations.
struct LatentLoadings {
    double a, b, c;
};

LatentLoadings latent_loadings() {
    const double r0 = latent_correlation(kCorrZ0Z2), r1 = latent_correlation(kCorrZ1Z2);
    const double det = 1.0 - kCorrZ0Z1 * kCorrZ0Z1;
    const double a = (r0 - kCorrZ0Z1 * r1) / det;
    const double b = (r1 - kCorrZ0Z1 * r0) / det;
    const double explained = a * r0 + b * r1;
    return {a, b, std::sqrt(1.0 - explained)};
}

SimDraw draw_subject(Rng& rng, const Eigen::VectorXd& beta, const LatentLoadings& L) {
    SimDraw d{};
    const double e1 = std_normal(rng), e2 = std_normal(rng), e3 = std_normal(rng);
    d.z0 = e1;
    d.z1 = kCorrZ0Z1 * e1 + std::sqrt(1.0 - kCorrZ0Z1 * kCorrZ0Z1) * e2;
    d.u2 = L.a * d.z0 + L.b * d.z1 + L.c * e3;
    d.z2 = d.u2 > 0.0 ? 1.0 : 0.0;

    const double eta2 = -0.5 * d.z0 - 0.1 * d.z1, eta3 = -0.3 * d.z0 - 0.2 * d.z1;
    const double denom = 1.0 + std::exp(eta2) + std::exp(eta3);
    const double u = uniform01(rng);
    const double p1 = 1.0 / denom, p2 = std::exp(eta2) / denom;
    d.z3 = u < p1 ? 1 : (u < p1 + p2 ? 2 : 3);
    const double v[5] = {d.z0, d.z1, d.u2, d.z3 == 2 ? 1.0 : 0.0, d.z3 == 3 ? 1.0 : 0.0};

    for (int r = 0; r < 4; ++r) {
        double s = 0.0;
        for (int c = 0; c < 5; ++c) s += kXc[r][c] * v[c];
        d.x[static_cast<std::size_t>(r)] = s + std_normal(rng);
    }
    for (int r = 0; r < 2; ++r) {
        double s = 0.0;
        for (int c = 0; c < 5; ++c) s += kXb[r][c] * v[c];
        d.x[static_cast<std::size_t>(4 + r)] = uniform01(rng) < 1.0 / (1.0 + std::exp(-s)) ? 1.0 : 0.0;
    }

    const double cov[10] = {d.z1, d.z2, v[3], v[4], d.x[0], d.x[1], d.x[2], d.x[3], d.x[4], d.x[5]};
    d.lp = 0.0;
    for (int j = 0; j < 10; ++j) d.lp += beta(j) * cov[j];
    if (beta.size() > 10) d.lp += beta(10) * d.z1 * d.x[0];

    d.e = -std::log(uniform_open(rng));
    d.entry = 2.0 * uniform01(rng);
    d.c2 = -std::log(uniform_open(rng)) / (-std::log(0.9) / 15.0);
    return d;
}

}  // namespace

SimDraw draw_sim_subject(Rng& rng, const Eigen::VectorXd& beta) { return draw_subject(rng, beta, latent_loadings()); }

double event_time(double e, double lp, double beta0, double alpha) {
    // S(t) = exp(-(gamma t)^alpha) with gamma^alpha = exp(beta0 + lp)
    return std::pow(e, 1.0 / alpha) * std::exp(-(beta0 + lp) / alpha);
}

CohortDataset generate_cohort(const SimConfig& config, double beta0, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    const Eigen::VectorXd beta = config.truth();
    const LatentLoadings L = latent_loadings();
    std::vector<Subject> subjects;
    subjects.reserve(config.N);
    for (std::size_t i = 0; i < config.N; ++i) {
        const SimDraw d = draw_subject(rng, beta, L);
        const double T = event_time(d.e, d.lp, beta0, config.alpha);
        const double C = std::min(15.0 - d.entry, d.c2);
        Subject s;
        s.id = std::to_string(i + 1);
        s.time = std::min(T, C);
        s.event = T <= C ? 1 : 0;
        s.z = {d.z0, d.z1, d.z2, d.z3 == 2 ? 1.0 : 0.0, d.z3 == 3 ? 1.0 : 0.0};
        s.x.assign(d.x.begin(), d.x.end());
        if (config.stratified) s.stratum = d.z3 - 1;
        subjects.push_back(std::move(s));
    }
    std::vector<std::string> labels;
    if (config.stratified) labels = {"z3=1", "z3=2", "z3=3"};
    return CohortDataset::from_subjects(sim_schema(), std::move(subjects), std::move(labels));
}

double calibrate_beta0(const SimConfig& config) {
    if (config.beta0) return *config.beta0;
    static std::mutex mutex;
    static std::map<std::tuple<bool, double, double>, double> cache;
    const auto key = std::make_tuple(config.interaction, config.alpha, config.event_fraction);
    {
        std::lock_guard lock(mutex);
        if (auto it = cache.find(key); it != cache.end()) return it->second;
    }
    if (!(config.event_fraction > 0.0 && config.event_fraction < 1.0))
        throw ValidationError("event_fraction must lie in (0,1)");
    // A subject is a case iff beta0 >= log E - alpha log C - lp, so the event
    // fraction is the empirical distribution function of that threshold and
    // the solution is its quantile on a fixed sample.
    constexpr std::size_t K = defaults::beta0_draws;
    Rng rng = make_rng(derive_seed(0x5eed0b0, {config.interaction ? 1u : 0u}));
    const Eigen::VectorXd beta = config.truth();
    const LatentLoadings L = latent_loadings();
    std::vector<double> tau(K);
    for (std::size_t k = 0; k < K; ++k) {
        const SimDraw d = draw_subject(rng, beta, L);
        const double C = std::min(15.0 - d.entry, d.c2);
        tau[k] = std::log(d.e) - config.alpha * std::log(C) - d.lp;
    }
    const auto idx = static_cast<std::size_t>(std::ceil(config.event_fraction * static_cast<double>(K))) - 1;
    std::nth_element(tau.begin(), tau.begin() + static_cast<std::ptrdiff_t>(idx), tau.end());
    const double beta0 = tau[idx];
    std::lock_guard lock(mutex);
    cache[key] = beta0;
    return beta0;
}

namespace {

PipelineSettings make_settings(const SimConfig& config) {
    const CovariateSchema schema = sim_schema();
    PipelineSettings s;
    s.analysis = CoxModelSpec::parse(config.terms(), schema);
    s.submodel = CoxModelSpec::parse(config.submodel_terms(), schema);
    s.mice_models = ImputationModelSpec::mice(schema);
    s.smc_models = ImputationModelSpec::smcfcs(schema);
    s.M = config.M;
    s.L = config.L;
    s.reject_limit = config.reject_limit;
    s.threads = 1;
    return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ReplicateResult run_replicate(const SimConfig& config, double beta0, int replicate) {
    using clock = std::chrono::steady_clock;
    const auto r = static_cast<std::uint64_t>(replicate);
    ReplicateResult out;
    out.replicate = replicate;
    const CohortDataset cohort = generate_cohort(config, beta0, derive_seed(config.seed, {r, 0}));
    out.cases = cohort.num_cases();
    const PipelineSettings settings = make_settings(config);

    SampleAssignment cc;
    std::vector<std::size_t> n1{config.n1};
    try {
        if (config.stratified) {
            std::vector<std::size_t> sizes(cohort.num_strata(), 0);
            for (std::size_t i = 0; i < cohort.size(); ++i) ++sizes[static_cast<std::size_t>(cohort.stratum_of(i))];
            cc = draw_stratified_case_cohort(cohort, proportional_allocation(sizes, config.n_sc),
                                             derive_seed(config.seed, {r, 1}));
            std::vector<std::size_t> pools;
            for (const auto& st : cc.strata) pools.push_back(st.pool());
            n1 = proportional_allocation(pools, config.n1);
        } else {
            cc = draw_case_cohort(cohort, config.n_sc, derive_seed(config.seed, {r, 1}));
        }
    } catch (const std::exception& e) {
        out.design_error = e.what();
    }
    const CohortDataset observed =
        out.design_error.empty() ? cohort.with_x_masked(case_cohort_mask(cc)) : CohortDataset{};

    std::optional<RssDesign> rss;
    std::optional<IssDesign> iss;
    double rss_seconds = 0.0, iss_seconds = 0.0;
    std::string rss_error, iss_error;
    auto wants = [&](bool (*pred)(Method)) {
        return std::any_of(config.methods.begin(), config.methods.end(), pred);
    };
    if (out.design_error.empty() && wants(is_rss)) {
        const auto t0 = clock::now();
        try {
            rss = rss_design(cc, n1, derive_seed(config.seed, {r, 2}));
        } catch (const std::exception& e) {
            rss_error = e.what();
        }
        rss_seconds = seconds_since(t0);
    }
    if (out.design_error.empty() && wants(is_iss)) {
        const auto t0 = clock::now();
        try {
            iss = iss_design(cohort, cc, settings.submodel, n1, derive_seed(config.seed, {r, 3}));
        } catch (const std::exception& e) {
            iss_error = e.what();
        }
        iss_seconds = seconds_since(t0);
    }
    const std::vector<double> cc_weights = out.design_error.empty() ? case_cohort_weights(cc) : std::vector<double>{};

    for (Method m : config.methods) {
        const auto t0 = clock::now();
        const std::uint64_t seed = derive_seed(config.seed, {r, 10 + static_cast<std::uint64_t>(m)});
        MethodResult res;
        res.method = m;
        double extra = 0.0;
        if (m == Method::Full) {
            res = run_method(m, cohort, nullptr, {}, settings, seed);
        } else if (!out.design_error.empty()) {
            res.error = out.design_error;
        } else if (is_rss(m)) {
            extra = rss_seconds;
            if (rss)
                res = run_method(m, observed, &rss->assignment, rss->weights, settings, seed);
            else
                res.error = rss_error;
        } else if (is_iss(m)) {
            extra = iss_seconds;
            if (iss)
                res = run_method(m, observed, &iss->assignment, iss->weights, settings, seed);
            else
                res.error = iss_error;
        } else {
            res = run_method(m, observed, &cc, cc_weights, settings, seed);
        }
        out.methods.push_back(std::move(res));
        out.seconds.push_back(seconds_since(t0) + extra);
    }
    return out;
}

std::vector<MetricsRow> summarize(const std::vector<ReplicateResult>& results, const SimConfig& config) {
    const std::vector<std::string> terms = config.terms();
    const Eigen::VectorXd truth = config.truth();
    const auto k = static_cast<Eigen::Index>(terms.size());
    std::vector<MetricsRow> rows;
    std::map<std::string, Eigen::VectorXd> mc_se;
    for (std::size_t j = 0; j < config.methods.size(); ++j) {
        std::vector<const PooledEstimate*> ok;
        for (const auto& rep : results)
            if (j < rep.methods.size() && rep.methods[j].ok) ok.push_back(&rep.methods[j].estimate);
        const std::string name = method_name(config.methods[j]);
        Eigen::VectorXd sd(k);
        for (Eigen::Index t = 0; t < k; ++t) {
            MetricsRow row;
            row.method = name;
            row.term = terms[static_cast<std::size_t>(t)];
            row.truth = truth(t);
            row.replicates = static_cast<int>(ok.size());
            const double nan = std::nan("");
            if (ok.size() < 2) {
                row.mean = row.bias = row.mc_se = row.est_se = row.coverage = nan;
            } else {
                double sum = 0.0, se = 0.0, cover = 0.0;
                for (const auto* e : ok) {
                    sum += e->beta(t);
                    se += e->se(t);
                    cover += (e->lo95(t) <= truth(t) && truth(t) <= e->hi95(t)) ? 1.0 : 0.0;
                }
                const double n = static_cast<double>(ok.size());
                row.mean = sum / n;
                double ss = 0.0;
                for (const auto* e : ok) ss += (e->beta(t) - row.mean) * (e->beta(t) - row.mean);
                row.bias = std::abs(row.mean - truth(t));
                row.mc_se = std::sqrt(ss / (n - 1.0));
                row.est_se = se / n;
                row.coverage = cover / n;
            }
            sd(t) = row.mc_se;
            rows.push_back(row);
        }
        mc_se[name] = sd;
    }
    const auto full = mc_se.find(method_name(Method::Full));
    for (auto& row : rows) {
        const auto t = static_cast<Eigen::Index>(std::find(terms.begin(), terms.end(), row.term) - terms.begin());
        row.rel_eff = full == mc_se.end() ? std::nan("") : std::pow(full->second(t) / row.mc_se, 2);
    }
    return rows;
}

std::vector<TimingRow> summarize_timing(const std::vector<ReplicateResult>& results, const SimConfig& config) {
    std::vector<TimingRow> out;
    for (std::size_t j = 0; j < config.methods.size(); ++j) {
        TimingRow row;
        row.method = method_name(config.methods[j]);
        double sum = 0.0;
        row.min = std::numeric_limits<double>::infinity();
        row.max = 0.0;
        for (const auto& rep : results) {
            const double s = rep.seconds[j];
            sum += s;
            row.min = std::min(row.min, s);
            row.max = std::max(row.max, s);
        }
        row.mean = results.empty() ? 0.0 : sum / static_cast<double>(results.size());
        if (results.empty()) row.min = 0.0;
        out.push_back(row);
    }
    return out;
}

StudyResult run_study(const SimConfig& config, const Progress& progress) {
    if (config.replicates < 1) throw ValidationError("replicates must be at least 1");
    if (config.n_sc > config.N) throw ValidationError("n_sc exceeds N");
    if (config.n_sc + config.n1 > config.N) throw ValidationError("n_sc + n1 exceeds N");
    StudyResult study;
    study.beta0 = calibrate_beta0(config);
    study.replicates.resize(static_cast<std::size_t>(config.replicates));
    std::mutex mutex;
    int done = 0;
    parallel_for(study.replicates.size(), config.threads, [&](std::size_t r) {
        study.replicates[r] = run_replicate(config, study.beta0, static_cast<int>(r));
        if (progress) {
            std::lock_guard lock(mutex);
            progress(++done, config.replicates);
        }
    });
    study.metrics = summarize(study.replicates, config);
    return study;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    CsvWriter w(os);
    w.row({"method", "term", "truth", "mean", "bias", "mc_se", "est_se", "coverage", "rel_eff", "replicates"});
    for (const auto& r : rows)
        w.row({r.method, r.term, format_double(r.truth), format_double(r.mean), format_double(r.bias),
               format_double(r.mc_se), format_double(r.est_se), format_double(r.coverage), format_double(r.rel_eff),
               std::to_string(r.replicates)});
    return os.str();
}

std::string replicates_csv(const std::vector<ReplicateResult>& results, const SimConfig& config) {
    const std::vector<std::string> terms = config.terms();
    std::ostringstream os;
    CsvWriter w(os);
    w.row({"replicate", "cases", "method", "term", "estimate", "se", "ok", "mean_attempts", "limit_hits", "error"});
    for (const auto& rep : results) {
        for (const auto& m : rep.methods) {
            for (std::size_t t = 0; t < terms.size(); ++t) {
                const auto ti = static_cast<Eigen::Index>(t);
                w.row({std::to_string(rep.replicate), std::to_string(rep.cases), method_name(m.method), terms[t],
                       m.ok ? format_double(m.estimate.beta(ti)) : "NA", m.ok ? format_double(m.estimate.se(ti)) : "NA",
                       m.ok ? "1" : "0", format_double(m.mean_attempts), std::to_string(m.limit_hits), m.error});
            }
        }
    }
    return os.str();
}

std::string timing_csv(const std::vector<TimingRow>& rows) {
    std::ostringstream os;
    CsvWriter w(os);
    w.row({"method", "mean_seconds", "max_seconds", "min_seconds"});
    for (const auto& r : rows) w.row({r.method, format_double(r.mean), format_double(r.max), format_double(r.min)});
    return os.str();
}

std::string metrics_table(const std::vector<MetricsRow>& rows, const SimConfig& config) {
    const std::vector<std::string> terms = config.terms();
    std::vector<std::string> methods;
    for (Method m : config.methods) methods.push_back(method_name(m));
    auto find = [&](const std::string& method, const std::string& term) -> const MetricsRow* {
        for (const auto& r : rows)
            if (r.method == method && r.term == term) return &r;
        return nullptr;
    };
    auto num = [](double v, int prec) {
        if (std::isnan(v)) return std::string("NA");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.*f", prec, v);
        return std::string(buf);
    };
    auto pct = [](double v) {
        if (std::isnan(v)) return std::string("NA");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * v);
        return std::string(buf);
    };
    std::ostringstream os;
    char buf[64];
    auto header = [&](const char* title) {
        std::snprintf(buf, sizeof buf, "%-12s", title);
        os << buf;
        for (const auto& m : methods) {
            std::snprintf(buf, sizeof buf, " %16s", m.c_str());
            os << buf;
        }
        os << "\n";
    };
    auto block = [&](const char* title, auto cell) {
        header(title);
        for (const auto& t : terms) {
            std::snprintf(buf, sizeof buf, "%-12s", t.c_str());
            os << buf;
            for (const auto& m : methods) {
                const MetricsRow* r = find(m, t);
                std::snprintf(buf, sizeof buf, " %16s", r ? cell(*r).c_str() : "NA");
                os << buf;
            }
            os << "\n";
        }
        os << "\n";
    };
    block("bias", [&](const MetricsRow& r) { return num(r.bias, 3); });
    block("mc.se", [&](const MetricsRow& r) { return num(r.mc_se, 3) + "(" + pct(r.rel_eff) + ")"; });
    block("est.se", [&](const MetricsRow& r) { return num(r.est_se, 3) + "(" + num(r.coverage, 3) + ")"; });
    return os.str();
}

}  // namespace iss
