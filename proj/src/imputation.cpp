#include "iss/imputation.hpp"

#include <cmath>
#include <stdexcept>

#include "iss/errors.hpp"
#include "iss/parallel.hpp"
#include "iss/random.hpp"

namespace iss {

ImputationModelSpec ImputationModelSpec::mice(const CovariateSchema& schema) {
    ImputationModelSpec s;
    for (std::size_t k = 0; k < schema.p(); ++k)
        s.columns.push_back({k, schema.is_binary({Block::Expensive, k}) ? Family::Logistic : Family::LinearNormal});
    return s;
}

ImputationModelSpec ImputationModelSpec::smcfcs(const CovariateSchema& schema) {
    ImputationModelSpec s = mice(schema);
    s.use_other_x = false;
    s.use_outcome = false;
    return s;
}

XMatrix x_matrix(const CohortDataset& dataset) {
    const std::size_t p = dataset.schema().p();
    XMatrix X(static_cast<Eigen::Index>(dataset.size()), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < dataset.size(); ++i)
        for (std::size_t k = 0; k < p; ++k) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = dataset[i].x[k];
    return X;
}

Eigen::MatrixXd completed_design(const CoxModelSpec& spec, const CohortDataset& dataset, const XMatrix& x,
                                 std::span<const std::size_t> units) {
    Eigen::MatrixXd G(static_cast<Eigen::Index>(units.size()), static_cast<Eigen::Index>(spec.size()));
    const auto p = static_cast<std::size_t>(x.cols());
    for (std::size_t r = 0; r < units.size(); ++r) {
        const std::size_t i = units[r];
        spec.fill_row(dataset[i].z, std::span<const double>(x.row(static_cast<Eigen::Index>(i)).data(), p),
                      G.row(static_cast<Eigen::Index>(r)));
    }
    return G;
}

namespace {

// Everything shared by the copies of one imputation run.
class Imputer {
public:
    Imputer(const ImputationInput& input, const ImputationModelSpec& spec) : in_(input), spec_(spec) {
        if (!in_.dataset) throw ValidationError("imputation: no dataset");
        const CohortDataset& ds = *in_.dataset;
        if (in_.analysis.size() != ds.size() || in_.fit.size() != ds.size())
            throw ValidationError("imputation: unit masks need one entry per subject");
        x0_ = x_matrix(ds);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (in_.analysis[i]) analysis_units_.push_back(i);
            if (in_.fit[i]) fit_units_.push_back(i);
        }
        const std::size_t p = ds.schema().p();
        std::vector<bool> incomplete(p, false);
        for (std::size_t i : analysis_units_)
            for (std::size_t k = 0; k < p; ++k)
                if (is_missing(ds[i].x[k])) incomplete[k] = true;
        for (std::size_t k = 0; k < p; ++k) {
            if (!incomplete[k]) continue;
            const ImputationColumn* model = nullptr;
            for (const auto& c : spec_.columns)
                if (c.x_index == k) model = &c;
            if (!model)
                throw ValidationError("expensive column '" + ds.schema().x_names()[k] +
                                      "' has missing values but no imputation model");
            models_.push_back(*model);
        }
        for (std::size_t i : fit_units_)
            for (const auto& m : models_)
                if (is_missing(ds[i].x[m.x_index]))
                    throw ValidationError("subject '" + ds[i].id + "' fits the imputation models but has missing " +
                                              ds.schema().x_names()[m.x_index],
                                          i + 1);
        if (!models_.empty() && fit_units_.empty()) throw ValidationError("imputation: no units to fit models on");
        cells_.resize(models_.size());
        for (std::size_t c = 0; c < models_.size(); ++c)
            for (std::size_t i : analysis_units_)
                if (is_missing(ds[i].x[models_[c].x_index])) cells_[c].push_back(i);
        if (spec_.use_outcome) {
            const StepFunction na = nelson_aalen_marginal(ds);
            cumhaz_.resize(ds.size());
            for (std::size_t i = 0; i < ds.size(); ++i) cumhaz_[i] = na(ds[i].time);
        }
    }

    ImputedDatasetSet empty_set() const {
        ImputedDatasetSet set;
        for (const auto& m : models_) set.imputed_columns.push_back(m.x_index);
        for (const auto& c : cells_) set.missing_cells += c.size();
        return set;
    }

    std::size_t num_models() const { return models_.size(); }
    const std::vector<std::size_t>& analysis_units() const { return analysis_units_; }
    const std::vector<std::vector<std::size_t>>& cells() const { return cells_; }
    const ImputationColumn& model(std::size_t c) const { return models_[c]; }

    // X^{(0)}: each missing cell takes a random observed value of its column
    // from the model-fitting units.
    XMatrix initial(Rng& rng) const {
        XMatrix X = x0_;
        for (std::size_t c = 0; c < models_.size(); ++c) {
            const auto k = static_cast<Eigen::Index>(models_[c].x_index);
            std::uniform_int_distribution<std::size_t> pick(0, fit_units_.size() - 1);
            for (std::size_t i : cells_[c]) X(static_cast<Eigen::Index>(i), k) = x0_(static_cast<Eigen::Index>(fit_units_[pick(rng)]), k);
        }
        return X;
    }

    void predictors(const XMatrix& X, std::size_t unit, std::size_t k, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> g) const {
        const Subject& s = (*in_.dataset)[unit];
        Eigen::Index c = 0;
        g(c++) = 1.0;
        for (double z : s.z) g(c++) = z;
        if (spec_.use_other_x)
            for (Eigen::Index j = 0; j < X.cols(); ++j)
                if (static_cast<std::size_t>(j) != k) g(c++) = X(static_cast<Eigen::Index>(unit), j);
        if (spec_.use_outcome) {
            g(c++) = cumhaz_[unit];
            g(c++) = s.event;
        }
    }

    Eigen::Index num_predictors() const {
        const CovariateSchema& sch = in_.dataset->schema();
        return 1 + static_cast<Eigen::Index>(sch.q()) +
               (spec_.use_other_x ? static_cast<Eigen::Index>(sch.p()) - 1 : 0) + (spec_.use_outcome ? 2 : 0);
    }

    ParameterDraw draw_parameters(const XMatrix& X, std::size_t c, Rng& rng) const {
        const std::size_t k = models_[c].x_index;
        Eigen::MatrixXd G(static_cast<Eigen::Index>(fit_units_.size()), num_predictors());
        Eigen::VectorXd y(G.rows());
        for (std::size_t r = 0; r < fit_units_.size(); ++r) {
            predictors(X, fit_units_[r], k, G.row(static_cast<Eigen::Index>(r)));
            y(static_cast<Eigen::Index>(r)) = X(static_cast<Eigen::Index>(fit_units_[r]), static_cast<Eigen::Index>(k));
        }
        return posterior_draw(models_[c].family, G, y, rng);
    }

    const CohortDataset& dataset() const { return *in_.dataset; }

private:
    const ImputationInput& in_;
    const ImputationModelSpec& spec_;
    XMatrix x0_;
    std::vector<std::size_t> analysis_units_, fit_units_;
    std::vector<ImputationColumn> models_;
    std::vector<std::vector<std::size_t>> cells_;
    std::vector<double> cumhaz_;
};

void check_options(const ImputationOptions& o) {
    if (o.M < 1) throw ValidationError("number of imputations M must be at least 1");
    if (o.L < 1) throw ValidationError("number of cycles L must be at least 1");
    if (o.reject_limit < 1) throw ValidationError("reject_limit must be at least 1");
}

}  // namespace

ImputedDatasetSet mice_impute(const ImputationInput& input, const ImputationModelSpec& spec,
                              const ImputationOptions& options) {
    check_options(options);
    const Imputer imp(input, spec);
    ImputedDatasetSet set = imp.empty_set();
    const auto M = static_cast<std::size_t>(options.M);
    set.x.resize(M);
    set.stats.resize(M);
    parallel_for(M, options.threads, [&](std::size_t m) {
        CopyStats& st = set.stats[m];
        st.seed = derive_seed(options.seed, {m});
        Rng rng = make_rng(st.seed);
        XMatrix X = imp.initial(rng);
        Eigen::RowVectorXd g(imp.num_predictors());
        for (int l = 0; l < options.L && imp.num_models() > 0; ++l) {
            for (std::size_t c = 0; c < imp.num_models(); ++c) {
                const ParameterDraw theta = imp.draw_parameters(X, c, rng);
                const std::size_t k = imp.model(c).x_index;
                for (std::size_t i : imp.cells()[c]) {
                    imp.predictors(X, i, k, g);
                    X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = draw_from_model(theta, g, rng);
                    ++st.draws;
                    ++st.attempts;
                }
            }
        }
        set.x[m] = std::move(X);
    });
    return set;
}

ImputedDatasetSet smcfcs_impute(const ImputationInput& input, const CoxModelSpec& analysis,
                                const ImputationModelSpec& spec, std::span<const double> weights,
                                const ImputationOptions& options) {
    check_options(options);
    if (spec.use_outcome)
        throw ValidationError("compatible imputation models must not use outcome predictors; the outcome enters "
                              "through the rejection step");
    const Imputer imp(input, spec);
    const CohortDataset& ds = imp.dataset();
    if (weights.size() != ds.size()) throw ValidationError("imputation: one weight per subject required");
    for (const auto& cells : imp.cells())
        for (std::size_t i : cells)
            if (ds[i].event)
                throw ValidationError("case '" + ds[i].id + "' has a missing expensive covariate; cases must be "
                                      "fully observed",
                                      i + 1);

    const auto& units = imp.analysis_units();
    ImputedDatasetSet set = imp.empty_set();
    const auto M = static_cast<std::size_t>(options.M);
    set.x.resize(M);
    set.stats.resize(M);

    parallel_for(M, options.threads, [&](std::size_t m) {
        CopyStats& st = set.stats[m];
        st.seed = derive_seed(options.seed, {m});
        Rng rng = make_rng(st.seed);
        XMatrix X = imp.initial(rng);
        if (imp.num_models() == 0) {
            set.x[m] = std::move(X);
            return;
        }
        std::vector<double> time(units.size()), wts(units.size()), lp(units.size());
        std::vector<int> event(units.size());
        for (std::size_t r = 0; r < units.size(); ++r) {
            time[r] = ds[units[r]].time;
            event[r] = ds[units[r]].event;
            wts[r] = weights[units[r]];
        }
        // Built once; only the design changes between cycles.
        CoxProblem problem(Eigen::Map<const Eigen::VectorXd>(time.data(), static_cast<Eigen::Index>(time.size())),
                           Eigen::Map<const Eigen::VectorXi>(event.data(), static_cast<Eigen::Index>(event.size())),
                           completed_design(analysis, ds, X, units),
                           Eigen::Map<const Eigen::VectorXd>(wts.data(), static_cast<Eigen::Index>(wts.size())));

        Eigen::VectorXd beta;
        bool have_beta = false;
        Eigen::RowVectorXd g(imp.num_predictors());
        std::vector<double> xrow(static_cast<std::size_t>(X.cols()));

        for (int l = 0; l < options.L; ++l) {
            for (std::size_t c = 0; c < imp.num_models(); ++c) {
                const std::size_t k = imp.model(c).x_index;
                const ParameterDraw theta = imp.draw_parameters(X, c, rng);

                problem.set_design(completed_design(analysis, ds, X, units));
                try {
                    beta = fit_cox(problem, {}, have_beta ? &beta : nullptr).beta;
                } catch (const NumericalError&) {
                    ++st.cox_retries;
                    try {
                        beta = fit_cox(problem).beta;
                    } catch (const NumericalError&) {
                        st.flagged = true;
                        if (!have_beta) throw;
                    }
                }
                have_beta = true;

                const Eigen::MatrixXd G = problem.design();
                const Eigen::VectorXd lpv = G * beta;
                for (std::size_t r = 0; r < units.size(); ++r) lp[r] = lpv(static_cast<Eigen::Index>(r));
                const StepFunction H0 = breslow_cumhaz(time, event, lp, wts);

                for (std::size_t i : imp.cells()[c]) {
                    const Subject& s = ds[i];
                    const double h0 = H0(s.time);
                    for (Eigen::Index j = 0; j < X.cols(); ++j) xrow[static_cast<std::size_t>(j)] = X(static_cast<Eigen::Index>(i), j);
                    imp.predictors(X, i, k, g);
                    double proposal = 0.0;
                    bool accepted = false;
                    for (int a = 0; a < options.reject_limit; ++a) {
                        proposal = draw_from_model(theta, g, rng);
                        ++st.attempts;
                        xrow[k] = proposal;
                        const double ratio = std::exp(-h0 * std::exp(analysis.linear_predictor(beta, s.z, xrow)));
                        if (!(ratio >= 0.0 && ratio <= 1.0))
                            throw std::logic_error("acceptance ratio outside [0,1]");
                        if (uniform01(rng) <= ratio) {
                            accepted = true;
                            break;
                        }
                    }
                    if (!accepted) ++st.limit_hits;
                    ++st.draws;
                    X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = proposal;
                }
            }
        }
        set.x[m] = std::move(X);
    });
    return set;
}

ImputedDatasetSet single_pass_impute(const ImputationInput& input, const ImputationModelSpec& spec,
                                     std::uint64_t seed, int M) {
    const Imputer probe(input, spec);
    if (probe.num_models() != 1)
        throw ValidationError("single-pass imputation needs exactly one incomplete column, found " +
                              std::to_string(probe.num_models()));
    ImputationOptions o;
    o.M = M;
    o.L = 1;
    o.seed = seed;
    return mice_impute(input, spec, o);
}

}  // namespace iss
