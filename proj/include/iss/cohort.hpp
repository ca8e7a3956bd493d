#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iss/csv.hpp"

namespace iss {

enum class CovariateKind { Continuous, Binary, Categorical };

/// Low-cost covariates (Z) are observed on the whole cohort; expensive
/// covariates (X) may be missing by design.
enum class Block { LowCost, Expensive };

struct CovariateSpec {
    std::string name;
    CovariateKind kind = CovariateKind::Continuous;
    Block block = Block::LowCost;
    int levels = 0;  // categorical only; values coded 1..levels
};

struct ColumnRef {
    Block block;
    std::size_t index;

    friend bool operator==(const ColumnRef&, const ColumnRef&) = default;
};

/// Declared covariates and their expansion into model columns. A categorical
/// covariate `c` with L levels becomes dummies `c.2` .. `c.L` (level 1 is the
/// reference).
class CovariateSchema {
public:
    CovariateSchema() = default;
    explicit CovariateSchema(std::vector<CovariateSpec> covariates);

    const std::vector<CovariateSpec>& covariates() const { return covariates_; }
    const std::vector<std::string>& z_names() const { return z_names_; }
    const std::vector<std::string>& x_names() const { return x_names_; }
    std::size_t q() const { return z_names_.size(); }
    std::size_t p() const { return x_names_.size(); }

    /// Looks up an expanded column by name ("z1", "z3.2", "xc1").
    std::optional<ColumnRef> find(std::string_view name) const;
    const std::string& name_of(ColumnRef ref) const;
    /// True when the expanded column holds a binary (0/1) value.
    bool is_binary(ColumnRef ref) const;

private:
    std::vector<CovariateSpec> covariates_;
    std::vector<std::string> z_names_;
    std::vector<std::string> x_names_;
    std::vector<bool> z_binary_;
    std::vector<bool> x_binary_;
};

struct Subject {
    std::string id;
    double time = 0.0;  // observed time, min(T, C)
    int event = 0;      // 1 = case
    std::vector<double> z;
    std::vector<double> x;  // NaN marks a missing value
    std::optional<int> stratum;
};

inline bool is_missing(double v) { return v != v; }

/// Validated cohort. Subjects are ordered by time ascending with events
/// before censorings at tied times; the object is immutable once built.
class CohortDataset {
public:
    CohortDataset() = default;

    /// Checks every invariant, then stable-sorts. Throws ValidationError with
    /// the 1-based position of the offending subject in `subjects`.
    static CohortDataset from_subjects(CovariateSchema schema, std::vector<Subject> subjects,
                                       std::vector<std::string> stratum_labels = {});

    const CovariateSchema& schema() const { return schema_; }
    const std::vector<Subject>& subjects() const { return subjects_; }
    const Subject& operator[](std::size_t i) const { return subjects_[i]; }
    std::size_t size() const { return subjects_.size(); }
    std::size_t num_cases() const;

    bool stratified() const { return !stratum_labels_.empty(); }
    std::size_t num_strata() const { return stratified() ? stratum_labels_.size() : 1; }
    const std::vector<std::string>& stratum_labels() const { return stratum_labels_; }
    /// Stratum index of subject i (0 when unstratified).
    int stratum_of(std::size_t i) const { return subjects_[i].stratum.value_or(0); }

    /// Value of an expanded column for subject i (NaN if missing).
    double value(std::size_t i, ColumnRef ref) const {
        const Subject& s = subjects_[i];
        return ref.block == Block::LowCost ? s.z[ref.index] : s.x[ref.index];
    }

    /// Copy in which subjects with keep_x[i] == false have every X value set to NaN.
    CohortDataset with_x_masked(const std::vector<bool>& keep_x) const;

private:
    CovariateSchema schema_;
    std::vector<Subject> subjects_;
    std::vector<std::string> stratum_labels_;
};

/// Builds a cohort from CSV cells. Required columns: id, time, event and one
/// column per declared covariate; an optional "stratum" column labels strata.
/// Missing X is "" or "NA". Other columns are ignored.
CohortDataset validate_cohort(const RawTable& raw, const CovariateSchema& schema);

/// Right-continuous nondecreasing step function starting at 0.
class StepFunction {
public:
    StepFunction() = default;
    StepFunction(std::vector<double> jump_times, std::vector<double> cumulative_values);

    double operator()(double t) const;
    const std::vector<double>& jump_times() const { return jump_times_; }
    const std::vector<double>& values() const { return values_; }
    bool empty() const { return jump_times_.empty(); }

private:
    std::vector<double> jump_times_;
    std::vector<double> values_;
};

/// Covariate-free, unweighted Nelson-Aalen cumulative hazard of the cohort.
StepFunction nelson_aalen_marginal(const CohortDataset& dataset);

/// Breslow estimator with weighted risk sets:
///   L(t) = sum_{u <= t} dN(u) / sum_r Y_r(u) w_r exp(lp_r).
/// Event counts are unweighted. Units with weight 0 are outside the sample.
/// Ties: all events at a time share one risk set that still contains the
/// units censored at that time.
StepFunction breslow_cumhaz(std::span<const double> time, std::span<const int> event,
                            std::span<const double> linear_predictor, std::span<const double> weight);

/// Returns the N x k design for the whole cohort.
using DesignMatrixBuilder = std::function<Eigen::MatrixXd(const CohortDataset&)>;

StepFunction weighted_breslow_cumhaz(const CohortDataset& dataset, const Eigen::VectorXd& beta,
                                     std::span<const double> weights, const DesignMatrixBuilder& design);

}  // namespace iss
