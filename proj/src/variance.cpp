#include "iss/variance.hpp"

#include "iss/errors.hpp"

namespace iss {

Eigen::MatrixXd centered_outer_sum(const Eigen::MatrixXd& psi, double factor) {
    if (psi.rows() == 0) return Eigen::MatrixXd::Zero(psi.cols(), psi.cols());
    const Eigen::RowVectorXd mean = psi.colwise().mean();
    const Eigen::MatrixXd c = psi.rowwise() - mean;
    Eigen::MatrixXd out = factor * (c.transpose() * c);
    return 0.5 * (out + out.transpose());
}

namespace {

Eigen::MatrixXd rows_with(const InfluenceMatrix& psi, const SampleAssignment& a, bool include_ss, int stratum = -1) {
    std::vector<Eigen::Index> rows;
    for (std::size_t r = 0; r < psi.units.size(); ++r) {
        const std::size_t i = psi.units[r];
        const bool take = a.role[i] == Role::SubcohortNoncase || (include_ss && a.role[i] == Role::Supersample);
        if (take && (stratum < 0 || a.stratum[i] == stratum)) rows.push_back(static_cast<Eigen::Index>(r));
    }
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), psi.values.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = psi.values.row(rows[r]);
    return out;
}

PhaseTwoVariance assemble(const CoxFit& fit, Eigen::MatrixXd phase2) {
    PhaseTwoVariance v;
    v.phase1 = fit.covariance;
    v.phase2 = std::move(phase2);
    v.total = v.phase1 + v.phase2;
    return v;
}

double fpc(std::size_t sampled, std::size_t population) {
    return 1.0 - static_cast<double>(sampled) / static_cast<double>(population);
}

}  // namespace

PhaseTwoVariance lin_ying_variance(const CoxFit& fit, const InfluenceMatrix& psi, const SampleAssignment& a) {
    const auto& s = a.sizes;
    if (s.m <= 1) throw ValidationError("case-cohort variance needs at least 2 subcohort non-cases");
    const Eigen::MatrixXd rows = rows_with(psi, a, false);
    if (static_cast<std::size_t>(rows.rows()) != s.m)
        throw ValidationError("influence rows missing for some subcohort non-cases");
    return assemble(fit, centered_outer_sum(rows, fpc(s.m, s.N - s.D)));
}

PhaseTwoVariance supersample_variance(const CoxFit& fit, const InfluenceMatrix& psi, const SampleAssignment& a) {
    const auto& s = a.sizes;
    if (s.m + s.n1 <= 1) throw ValidationError("supersample variance needs at least 2 sampled non-cases");
    const Eigen::MatrixXd rows = rows_with(psi, a, true);
    if (static_cast<std::size_t>(rows.rows()) != s.m + s.n1)
        throw ValidationError("influence rows missing for some sampled non-cases");
    return assemble(fit, centered_outer_sum(rows, fpc(s.m + s.n1, s.N - s.D)));
}

PhaseTwoVariance stratified_variance(const CoxFit& fit, const InfluenceMatrix& psi, const SampleAssignment& a) {
    Eigen::MatrixXd phase2 = Eigen::MatrixXd::Zero(psi.values.cols(), psi.values.cols());
    for (std::size_t h = 0; h < a.strata.size(); ++h) {
        const auto& s = a.strata[h];
        const std::size_t c = s.m + s.n1;
        if (c < 2)
            throw ValidationError("stratum " + std::to_string(h + 1) + " has fewer than 2 sampled non-cases");
        const Eigen::MatrixXd rows = rows_with(psi, a, true, static_cast<int>(h));
        if (static_cast<std::size_t>(rows.rows()) != c)
            throw ValidationError("influence rows missing for some sampled non-cases");
        const double factor = static_cast<double>(c) / static_cast<double>(c - 1) * fpc(c, s.N - s.D);
        phase2 += centered_outer_sum(rows, factor);
    }
    return assemble(fit, phase2);
}

PhaseTwoVariance model_variance(const CoxFit& fit) {
    return assemble(fit, Eigen::MatrixXd::Zero(fit.covariance.rows(), fit.covariance.cols()));
}

namespace {

void finish_intervals(PooledEstimate& p) {
    p.se = p.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    p.lo95 = p.beta - kNormalQuantile975 * p.se;
    p.hi95 = p.beta + kNormalQuantile975 * p.se;
}

}  // namespace

PooledEstimate rubin_pool(const std::vector<Eigen::VectorXd>& estimates, const std::vector<Eigen::MatrixXd>& variances) {
    const std::size_t M = estimates.size();
    if (M < 2) throw ValidationError("Rubin pooling needs at least 2 imputations");
    if (variances.size() != M) throw ValidationError("one covariance matrix per estimate required");
    const Eigen::Index k = estimates.front().size();
    PooledEstimate p;
    p.M = static_cast<int>(M);
    p.beta = Eigen::VectorXd::Zero(k);
    p.within = Eigen::MatrixXd::Zero(k, k);
    for (std::size_t m = 0; m < M; ++m) {
        if (estimates[m].size() != k || variances[m].rows() != k || variances[m].cols() != k)
            throw ValidationError("pooled estimates have inconsistent dimensions");
        p.beta += estimates[m];
        p.within += variances[m];
    }
    p.beta /= static_cast<double>(M);
    p.within /= static_cast<double>(M);
    p.between = Eigen::MatrixXd::Zero(k, k);
    for (const auto& e : estimates) p.between += (e - p.beta) * (e - p.beta).transpose();
    p.between /= static_cast<double>(M - 1);
    p.covariance = p.within + (1.0 + 1.0 / static_cast<double>(M)) * p.between;
    finish_intervals(p);
    return p;
}

PooledEstimate single_estimate(const Eigen::VectorXd& beta, const Eigen::MatrixXd& covariance) {
    PooledEstimate p;
    p.M = 1;
    p.beta = beta;
    p.within = covariance;
    p.between = Eigen::MatrixXd::Zero(beta.size(), beta.size());
    p.covariance = covariance;
    finish_intervals(p);
    return p;
}

}  // namespace iss
