#include "iss/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "iss/errors.hpp"

namespace iss {

CovariateSchema::CovariateSchema(std::vector<CovariateSpec> covariates) : covariates_(std::move(covariates)) {
    std::set<std::string> seen;
    for (const auto& c : covariates_) {
        if (c.name.empty()) throw ValidationError("covariate with empty name");
        if (!seen.insert(c.name).second) throw ValidationError("duplicate covariate '" + c.name + "'");
        auto& names = c.block == Block::LowCost ? z_names_ : x_names_;
        auto& binary = c.block == Block::LowCost ? z_binary_ : x_binary_;
        switch (c.kind) {
            case CovariateKind::Continuous:
                names.push_back(c.name);
                binary.push_back(false);
                break;
            case CovariateKind::Binary:
                names.push_back(c.name);
                binary.push_back(true);
                break;
            case CovariateKind::Categorical:
                if (c.levels < 2)
                    throw ValidationError("categorical covariate '" + c.name + "' needs at least 2 levels");
                if (c.block == Block::Expensive)
                    throw ValidationError("categorical expensive covariate '" + c.name +
                                          "' is not supported; declare it binary or continuous");
                for (int l = 2; l <= c.levels; ++l) {
                    names.push_back(c.name + "." + std::to_string(l));
                    binary.push_back(true);
                }
                break;
        }
    }
    for (const auto& n : z_names_)
        if (std::count(x_names_.begin(), x_names_.end(), n))
            throw ValidationError("column name '" + n + "' used in both blocks");
}

std::optional<ColumnRef> CovariateSchema::find(std::string_view name) const {
    for (std::size_t i = 0; i < z_names_.size(); ++i)
        if (z_names_[i] == name) return ColumnRef{Block::LowCost, i};
    for (std::size_t i = 0; i < x_names_.size(); ++i)
        if (x_names_[i] == name) return ColumnRef{Block::Expensive, i};
    return std::nullopt;
}

const std::string& CovariateSchema::name_of(ColumnRef ref) const {
    return ref.block == Block::LowCost ? z_names_.at(ref.index) : x_names_.at(ref.index);
}

bool CovariateSchema::is_binary(ColumnRef ref) const {
    return ref.block == Block::LowCost ? z_binary_.at(ref.index) : x_binary_.at(ref.index);
}

namespace {

void check_value(const CovariateSchema& schema, ColumnRef ref, double v, std::size_t row) {
    if (!std::isfinite(v))
        throw ValidationError("non-finite value in column '" + schema.name_of(ref) + "'", row);
    if (schema.is_binary(ref) && v != 0.0 && v != 1.0)
        throw ValidationError("column '" + schema.name_of(ref) + "' must be 0 or 1", row);
}

}  // namespace

CohortDataset CohortDataset::from_subjects(CovariateSchema schema, std::vector<Subject> subjects,
                                           std::vector<std::string> stratum_labels) {
    if (subjects.size() < 2) throw ValidationError("cohort needs at least 2 subjects");
    std::set<std::string> ids;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const Subject& s = subjects[i];
        const std::size_t row = i + 1;
        if (!ids.insert(s.id).second) throw ValidationError("duplicate id '" + s.id + "'", row);
        if (!(std::isfinite(s.time) && s.time > 0.0)) throw ValidationError("time must be positive and finite", row);
        if (s.event != 0 && s.event != 1) throw ValidationError("event must be 0 or 1", row);
        if (s.z.size() != schema.q() || s.x.size() != schema.p())
            throw ValidationError("covariate vector length does not match schema", row);
        for (std::size_t k = 0; k < s.z.size(); ++k) check_value(schema, {Block::LowCost, k}, s.z[k], row);
        for (std::size_t k = 0; k < s.x.size(); ++k)
            if (!is_missing(s.x[k])) check_value(schema, {Block::Expensive, k}, s.x[k], row);
        if (!stratum_labels.empty()) {
            if (!s.stratum) throw ValidationError("subject without stratum label", row);
            if (*s.stratum < 0 || *s.stratum >= static_cast<int>(stratum_labels.size()))
                throw ValidationError("stratum index out of range", row);
        } else if (s.stratum) {
            throw ValidationError("stratum given but no stratum labels declared", row);
        }
    }
    std::stable_sort(subjects.begin(), subjects.end(), [](const Subject& a, const Subject& b) {
        if (a.time != b.time) return a.time < b.time;
        return a.event > b.event;
    });
    CohortDataset d;
    d.schema_ = std::move(schema);
    d.subjects_ = std::move(subjects);
    d.stratum_labels_ = std::move(stratum_labels);
    return d;
}

std::size_t CohortDataset::num_cases() const {
    return static_cast<std::size_t>(
        std::count_if(subjects_.begin(), subjects_.end(), [](const Subject& s) { return s.event == 1; }));
}

CohortDataset CohortDataset::with_x_masked(const std::vector<bool>& keep_x) const {
    CohortDataset d = *this;
    for (std::size_t i = 0; i < d.subjects_.size(); ++i)
        if (!keep_x[i]) std::fill(d.subjects_[i].x.begin(), d.subjects_[i].x.end(), std::nan(""));
    return d;
}

namespace {

bool is_na_token(const std::string& s) { return s.empty() || s == "NA"; }

std::optional<double> parse_number(const std::string& s) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && *b == ' ') ++b;
    while (e > b && e[-1] == ' ') --e;
    if (b < e && *b == '+') ++b;
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e) return std::nullopt;
    return v;
}

}  // namespace

CohortDataset validate_cohort(const RawTable& raw, const CovariateSchema& schema) {
    const int c_id = raw.column("id");
    const int c_time = raw.column("time");
    const int c_event = raw.column("event");
    const int c_stratum = raw.column("stratum");
    if (c_id < 0 || c_time < 0 || c_event < 0) throw ValidationError("cohort CSV needs columns id, time, event");
    std::vector<int> cov_cols;
    for (const auto& c : schema.covariates()) {
        int col = raw.column(c.name);
        if (col < 0) throw ValidationError("cohort CSV lacks covariate column '" + c.name + "'");
        cov_cols.push_back(col);
    }

    std::vector<std::string> labels;
    if (c_stratum >= 0) {
        std::set<std::string> distinct;
        for (std::size_t r = 0; r < raw.rows.size(); ++r) {
            const auto& lab = raw.rows[r][c_stratum];
            if (is_na_token(lab)) throw ValidationError("missing stratum label", r + 1);
            distinct.insert(lab);
        }
        labels.assign(distinct.begin(), distinct.end());
    }

    std::vector<Subject> subjects;
    subjects.reserve(raw.rows.size());
    for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        const auto& cells = raw.rows[r];
        const std::size_t row = r + 1;
        Subject s;
        s.id = cells[c_id];
        auto t = parse_number(cells[c_time]);
        if (!t) throw ValidationError("time is not a number", row);
        if (!(*t > 0.0) || !std::isfinite(*t)) throw ValidationError("time must be positive and finite", row);
        s.time = *t;
        auto ev = parse_number(cells[c_event]);
        if (!ev || (*ev != 0.0 && *ev != 1.0)) throw ValidationError("event must be 0 or 1", row);
        s.event = static_cast<int>(*ev);

        for (std::size_t k = 0; k < schema.covariates().size(); ++k) {
            const CovariateSpec& spec = schema.covariates()[k];
            const std::string& cell = cells[cov_cols[k]];
            auto& out = spec.block == Block::LowCost ? s.z : s.x;
            if (is_na_token(cell)) {
                if (spec.block == Block::LowCost)
                    throw ValidationError("missing value in low-cost covariate '" + spec.name + "'", row);
                out.push_back(std::nan(""));
                continue;
            }
            auto v = parse_number(cell);
            if (!v) throw ValidationError("covariate '" + spec.name + "' is not a number", row);
            switch (spec.kind) {
                case CovariateKind::Continuous:
                    if (!std::isfinite(*v)) throw ValidationError("non-finite value in '" + spec.name + "'", row);
                    out.push_back(*v);
                    break;
                case CovariateKind::Binary:
                    if (*v != 0.0 && *v != 1.0)
                        throw ValidationError("binary covariate '" + spec.name + "' must be 0 or 1", row);
                    out.push_back(*v);
                    break;
                case CovariateKind::Categorical: {
                    const double lv = *v;
                    if (lv != std::floor(lv) || lv < 1 || lv > spec.levels)
                        throw ValidationError("unknown level of categorical '" + spec.name + "'", row);
                    for (int l = 2; l <= spec.levels; ++l) out.push_back(static_cast<int>(lv) == l ? 1.0 : 0.0);
                    break;
                }
            }
        }
        if (c_stratum >= 0) {
            auto it = std::lower_bound(labels.begin(), labels.end(), cells[c_stratum]);
            s.stratum = static_cast<int>(it - labels.begin());
        }
        subjects.push_back(std::move(s));
    }
    return CohortDataset::from_subjects(schema, std::move(subjects), std::move(labels));
}

StepFunction::StepFunction(std::vector<double> jump_times, std::vector<double> cumulative_values)
    : jump_times_(std::move(jump_times)), values_(std::move(cumulative_values)) {
    if (jump_times_.size() != values_.size()) throw std::invalid_argument("StepFunction: length mismatch");
    for (std::size_t i = 1; i < jump_times_.size(); ++i) {
        if (!(jump_times_[i] > jump_times_[i - 1]))
            throw std::invalid_argument("StepFunction: jump times must increase strictly");
        if (values_[i] < values_[i - 1]) throw std::invalid_argument("StepFunction: values must be nondecreasing");
    }
    if (!values_.empty() && values_.front() < 0.0) throw std::invalid_argument("StepFunction: negative value");
}

double StepFunction::operator()(double t) const {
    auto it = std::upper_bound(jump_times_.begin(), jump_times_.end(), t);
    if (it == jump_times_.begin()) return 0.0;
    return values_[static_cast<std::size_t>(it - jump_times_.begin()) - 1];
}

StepFunction nelson_aalen_marginal(const CohortDataset& dataset) {
    std::vector<double> times, values;
    const auto& s = dataset.subjects();
    const std::size_t n = s.size();
    double cum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        int events = 0;
        while (j < n && s[j].time == s[i].time) events += s[j++].event;
        if (events > 0) {
            cum += static_cast<double>(events) / static_cast<double>(n - i);
            times.push_back(s[i].time);
            values.push_back(cum);
        }
        i = j;
    }
    return StepFunction(std::move(times), std::move(values));
}

StepFunction breslow_cumhaz(std::span<const double> time, std::span<const int> event,
                            std::span<const double> linear_predictor, std::span<const double> weight) {
    const std::size_t n = time.size();
    if (event.size() != n || linear_predictor.size() != n || weight.size() != n)
        throw std::invalid_argument("breslow_cumhaz: length mismatch");
    std::vector<std::size_t> order;
    order.reserve(n);
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        if (weight[i] < 0.0 || !std::isfinite(weight[i])) throw ValidationError("weights must be nonnegative");
        if (weight[i] > 0.0) {
            order.push_back(i);
            shift = std::max(shift, linear_predictor[i]);
        }
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (time[a] != time[b]) return time[a] > time[b];
        return a < b;
    });
    // Backward pass: accumulate the weighted risk set, record jumps.
    std::vector<double> jt, jumps;
    double risk = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double t = time[order[i]];
        std::size_t j = i;
        int d = 0;
        while (j < order.size() && time[order[j]] == t) {
            const std::size_t u = order[j];
            risk += weight[u] * std::exp(linear_predictor[u] - shift);
            d += event[u];
            ++j;
        }
        if (d > 0) {
            if (!(risk > 0.0)) throw NumericalError("empty weighted risk set at an event time");
            jt.push_back(t);
            jumps.push_back(static_cast<double>(d) * std::exp(-shift) / risk);
        }
        i = j;
    }
    std::reverse(jt.begin(), jt.end());
    std::reverse(jumps.begin(), jumps.end());
    double cum = 0.0;
    for (double& v : jumps) {
        cum += v;
        v = cum;
    }
    return StepFunction(std::move(jt), std::move(jumps));
}

StepFunction weighted_breslow_cumhaz(const CohortDataset& dataset, const Eigen::VectorXd& beta,
                                     std::span<const double> weights, const DesignMatrixBuilder& design) {
    const Eigen::MatrixXd G = design(dataset);
    if (G.rows() != static_cast<Eigen::Index>(dataset.size()) || G.cols() != beta.size())
        throw ValidationError("design matrix does not match dataset size or coefficient dimension");
    if (weights.size() != dataset.size()) throw ValidationError("one weight per subject required");
    const Eigen::VectorXd lp = G * beta;
    std::vector<double> time(dataset.size());
    std::vector<int> event(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        time[i] = dataset[i].time;
        event[i] = dataset[i].event;
    }
    return breslow_cumhaz(time, event, std::span<const double>(lp.data(), static_cast<std::size_t>(lp.size())),
                          weights);
}

}  // namespace iss
