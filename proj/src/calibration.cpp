#include "iss/calibration.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <cmath>
#include <limits>
#include <sstream>

#include "iss/errors.hpp"

namespace iss {

namespace {

std::string attainable_ranges(const Eigen::MatrixXd& A, const Eigen::VectorXd& targets,
                              const std::vector<std::string>& names) {
    std::ostringstream os;
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
        const bool pos = (A.col(j).array() > 0).any(), neg = (A.col(j).array() < 0).any();
        os << "; " << (j < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(j)]
                                                                     : "c" + std::to_string(j))
           << " target " << targets(j) << " attainable (" << (neg ? "-inf" : "0") << ", " << (pos ? "inf" : "0")
           << ")";
    }
    return os.str();
}

}  // namespace

CalibratedWeights rake(const CalibrationProblem& problem, const RakeOptions& options) {
    const Eigen::Index n = problem.A.rows();
    const Eigen::Index k = problem.A.cols();
    if (problem.w0.size() != n || problem.totals.size() != k)
        throw ValidationError("calibration: dimensions of w0, A and totals disagree");
    for (Eigen::Index i = 0; i < n; ++i)
        if (!(problem.w0(i) > 0.0)) throw ValidationError("calibration: initial weights must be positive", i + 1);
    std::vector<bool> fixed = problem.fixed;
    fixed.resize(static_cast<std::size_t>(n), false);

    CalibratedWeights out;
    out.weights = problem.w0;
    out.lambda = Eigen::VectorXd::Zero(k);
    const double scale = std::max(problem.totals.cwiseAbs().maxCoeff(), 1.0);
    const double tol = options.rel_tol * scale;

    // Free rows and the targets left for them.
    std::vector<Eigen::Index> free_rows;
    Eigen::VectorXd target = problem.totals;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (fixed[static_cast<std::size_t>(i)])
            target -= problem.w0(i) * problem.A.row(i).transpose();
        else
            free_rows.push_back(i);
    }
    const auto nf = static_cast<Eigen::Index>(free_rows.size());
    Eigen::MatrixXd Af(nf, k);
    Eigen::VectorXd w0f(nf);
    for (Eigen::Index r = 0; r < nf; ++r) {
        Af.row(r) = problem.A.row(free_rows[static_cast<std::size_t>(r)]);
        w0f(r) = problem.w0(free_rows[static_cast<std::size_t>(r)]);
    }

    // Constraints with no free support must already hold; dependent ones are pruned.
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < k; ++j) {
        if (Af.col(j).cwiseAbs().maxCoeff() == 0.0 || nf == 0) {
            if (std::abs(target(j)) > tol)
                throw ConvergenceError("calibration infeasible: constraint has no free units" +
                                       attainable_ranges(Af, target, problem.names));
            continue;
        }
        active.push_back(j);
    }
    if (!active.empty()) {
        Eigen::MatrixXd S(nf, static_cast<Eigen::Index>(active.size()));
        for (std::size_t c = 0; c < active.size(); ++c)
            S.col(static_cast<Eigen::Index>(c)) = w0f.cwiseSqrt().asDiagonal() * Af.col(active[c]);
        for (Eigen::Index c = 0; c < S.cols(); ++c) S.col(c) /= S.col(c).norm();
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(S);
        qr.setThreshold(1e-10);
        if (qr.rank() < S.cols()) {
            std::vector<Eigen::Index> keep;
            for (Eigen::Index c = 0; c < qr.rank(); ++c) keep.push_back(active[static_cast<std::size_t>(qr.colsPermutation().indices()(c))]);
            std::sort(keep.begin(), keep.end());
            for (Eigen::Index j : active)
                if (std::find(keep.begin(), keep.end(), j) == keep.end()) {
                    out.dropped.push_back(static_cast<int>(j));
                    out.warnings.push_back("constraint '" +
                                           (j < static_cast<Eigen::Index>(problem.names.size())
                                                ? problem.names[static_cast<std::size_t>(j)]
                                                : std::to_string(j)) +
                                           "' is linearly dependent on the others and was dropped");
                }
            active = keep;
        }
    }

    const auto ka = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd Aa(nf, ka);
    Eigen::VectorXd ta(ka);
    for (Eigen::Index c = 0; c < ka; ++c) {
        Aa.col(c) = Af.col(active[static_cast<std::size_t>(c)]);
        ta(c) = target(active[static_cast<std::size_t>(c)]);
    }
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(ka);
    Eigen::VectorXd w = w0f;
    auto residual = [&](const Eigen::VectorXd& wv) -> Eigen::VectorXd { return Aa.transpose() * wv - ta; };
    Eigen::VectorXd r = residual(w);
    int iter = 0;
    auto newton_step = [&]() {
        const Eigen::MatrixXd J = Aa.transpose() * w.asDiagonal() * Aa;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(J);
        if (ldlt.info() != Eigen::Success)
            throw ConvergenceError("calibration Jacobian is singular" + attainable_ranges(Aa, ta, problem.names));
        const Eigen::VectorXd step = -ldlt.solve(r);
        double t = 1.0;
        for (int h = 0; h <= options.max_halvings; ++h, t *= 0.5) {
            Eigen::VectorXd lam = lambda + t * step;
            Eigen::VectorXd wt = (w0f.array() * (Aa * lam).array().exp()).matrix();
            if (!wt.allFinite()) continue;
            Eigen::VectorXd rt = residual(wt);
            if (rt.norm() < r.norm()) {
                lambda = lam;
                w = wt;
                r = rt;
                return true;
            }
        }
        return false;
    };
    while (ka > 0 && r.cwiseAbs().maxCoeff() > tol) {
        if (iter == options.max_iter)
            throw ConvergenceError("calibration did not converge in " + std::to_string(options.max_iter) +
                                   " iterations (residual " + std::to_string(r.cwiseAbs().maxCoeff()) + ")" +
                                   attainable_ranges(Aa, ta, problem.names));
        ++iter;
        if (!newton_step())
            throw ConvergenceError("calibration stalled (residual " + std::to_string(r.cwiseAbs().maxCoeff()) +
                                   "); targets may be infeasible" + attainable_ranges(Aa, ta, problem.names));
    }
    // Newton converges quadratically here, so a few more steps reach rounding level.
    if (iter > 0)
        for (int polish = 0; polish < 3 && newton_step(); ++polish) ++iter;

    for (Eigen::Index r2 = 0; r2 < nf; ++r2) out.weights(free_rows[static_cast<std::size_t>(r2)]) = w(r2);
    for (Eigen::Index c = 0; c < ka; ++c) out.lambda(active[static_cast<std::size_t>(c)]) = lambda(c);
    out.residuals = problem.A.transpose() * out.weights - problem.totals;
    out.iterations = iter;
    return out;
}

CalibrationProblem build_iss_constraints(const SampleAssignment& assignment, std::span<const double> psi_norms) {
    if (psi_norms.size() != assignment.size()) throw ValidationError("need one influence norm per subject");
    const auto& sz = assignment.sizes;
    double db0 = 0.0, db1 = 0.0;
    CalibrationProblem p;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        if (!assignment.sampled(i)) continue;
        p.units.push_back(i);
        if (assignment.role[i] == Role::SubcohortNoncase) db0 += psi_norms[i];
        if (assignment.role[i] == Role::Supersample) db1 += psi_norms[i];
    }
    if (!(db0 + db1 > 0.0)) throw ValidationError("ISS calibration: influence norms of sampled non-cases sum to zero");
    const auto n = static_cast<Eigen::Index>(p.units.size());
    p.w0.resize(n);
    p.A = Eigen::MatrixXd::Zero(n, 3);
    p.fixed.assign(static_cast<std::size_t>(n), false);
    for (Eigen::Index r = 0; r < n; ++r) {
        const std::size_t i = p.units[static_cast<std::size_t>(r)];
        const auto& st = assignment.strata[static_cast<std::size_t>(assignment.stratum[i])];
        switch (assignment.role[i]) {
            case Role::SubcohortNoncase:
                p.A(r, 0) = 1.0;
                p.w0(r) = static_cast<double>(st.N) / static_cast<double>(st.n_sc);
                break;
            case Role::Supersample:
                p.A(r, 1) = 1.0;
                if (!(assignment.inclusion_prob[i] > 0.0))
                    throw ValidationError("supersample unit without an inclusion probability", i + 1);
                p.w0(r) = 1.0 / assignment.inclusion_prob[i];
                break;
            case Role::Case:
                p.A(r, 2) = 1.0;
                p.w0(r) = 1.0;
                p.fixed[static_cast<std::size_t>(r)] = true;
                break;
            case Role::Unsampled: break;
        }
    }
    const double noncases = static_cast<double>(sz.N - sz.D);
    p.totals.resize(3);
    p.totals << noncases * db0 / (db0 + db1), noncases * db1 / (db0 + db1), static_cast<double>(sz.D);
    p.names = {"subcohort_noncases", "supersample", "cases"};
    return p;
}

CalibrationProblem build_rss_constraints(const SampleAssignment& assignment, std::span<const double> w0) {
    CalibrationProblem p;
    for (std::size_t i = 0; i < assignment.size(); ++i)
        if (assignment.sampled(i)) p.units.push_back(i);
    const auto n = static_cast<Eigen::Index>(p.units.size());
    p.w0.resize(n);
    p.A = Eigen::MatrixXd::Zero(n, 2);
    p.fixed.assign(static_cast<std::size_t>(n), false);
    for (Eigen::Index r = 0; r < n; ++r) {
        const std::size_t i = p.units[static_cast<std::size_t>(r)];
        p.w0(r) = w0[i];
        if (assignment.role[i] == Role::Case) {
            p.A(r, 1) = 1.0;
            p.fixed[static_cast<std::size_t>(r)] = true;
        } else {
            p.A(r, 0) = 1.0;
        }
    }
    p.totals.resize(2);
    p.totals << static_cast<double>(assignment.sizes.N - assignment.sizes.D), static_cast<double>(assignment.sizes.D);
    p.names = {"noncases", "cases"};
    return p;
}

std::vector<double> closed_form_weights(const SampleAssignment& assignment, WeightVariant variant) {
    std::vector<double> w(assignment.size(), 0.0);
    auto ratio = [](const DesignSizes& s, bool with_ss, const std::string& where) {
        const std::size_t denom = s.m + (with_ss ? s.n1 : 0);
        if (denom == 0) throw ValidationError("no sampled non-cases" + where + "; weights undefined");
        return static_cast<double>(s.N - s.D) / static_cast<double>(denom);
    };
    std::vector<double> per_stratum(assignment.strata.size(), 0.0);
    double global = 0.0;
    if (variant == WeightVariant::Stratified) {
        for (std::size_t h = 0; h < assignment.strata.size(); ++h)
            if (assignment.strata[h].N > assignment.strata[h].D)
                per_stratum[h] = ratio(assignment.strata[h], true, " in stratum " + std::to_string(h + 1));
    } else {
        global = ratio(assignment.sizes, variant == WeightVariant::Supersampled, "");
    }
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        switch (assignment.role[i]) {
            case Role::Case: w[i] = 1.0; break;
            case Role::SubcohortNoncase:
                w[i] = variant == WeightVariant::Stratified ? per_stratum[static_cast<std::size_t>(assignment.stratum[i])]
                                                            : global;
                break;
            case Role::Supersample:
                if (variant == WeightVariant::CaseCohort) break;
                w[i] = variant == WeightVariant::Stratified ? per_stratum[static_cast<std::size_t>(assignment.stratum[i])]
                                                            : global;
                break;
            case Role::Unsampled: break;
        }
    }
    return w;
}

std::vector<double> subject_weights(const CalibrationProblem& problem, const CalibratedWeights& cw,
                                    std::size_t cohort_size) {
    std::vector<double> w(cohort_size, 0.0);
    for (std::size_t r = 0; r < problem.units.size(); ++r) w[problem.units[r]] = cw.weights(static_cast<Eigen::Index>(r));
    return w;
}

}  // namespace iss
