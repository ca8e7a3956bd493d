#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "iss/cohort.hpp"
#include "iss/cox.hpp"
#include "iss/random.hpp"
#include "iss/sampling.hpp"

namespace testing {

using iss::Block;
using iss::CovariateKind;

// Cohort with continuous low-cost columns z1..zq and no expensive block.
inline iss::CohortDataset z_cohort(const std::vector<double>& time, const std::vector<int>& event,
                                   const std::vector<std::vector<double>>& z) {
    std::vector<iss::CovariateSpec> specs;
    for (std::size_t j = 0; j < z.front().size(); ++j)
        specs.push_back({"z" + std::to_string(j + 1), CovariateKind::Continuous, Block::LowCost, 0});
    std::vector<iss::Subject> subjects;
    for (std::size_t i = 0; i < time.size(); ++i) {
        iss::Subject s;
        s.id = std::to_string(i + 1);
        s.time = time[i];
        s.event = event[i];
        s.z = z[i];
        subjects.push_back(s);
    }
    return iss::CohortDataset::from_subjects(iss::CovariateSchema(specs), subjects);
}

inline iss::CoxProblem problem_of(const std::vector<double>& time, const std::vector<int>& event,
                                  const Eigen::MatrixXd& X, const std::vector<double>& w) {
    const auto n = static_cast<Eigen::Index>(time.size());
    Eigen::VectorXd t(n), wv(n);
    Eigen::VectorXi d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        t(i) = time[static_cast<std::size_t>(i)];
        d(i) = event[static_cast<std::size_t>(i)];
        wv(i) = w[static_cast<std::size_t>(i)];
    }
    return iss::CoxProblem(t, d, X, wv);
}

// Log pseudo-likelihood by direct double loop (Breslow ties): for every
// event i, lp_i - log sum_{j: t_j >= t_i} w_j exp(lp_j).
inline double naive_loglik(const std::vector<double>& time, const std::vector<int>& event, const Eigen::MatrixXd& X,
                           const std::vector<double>& w, const Eigen::VectorXd& beta) {
    const Eigen::VectorXd lp = X * beta;
    double ll = 0.0;
    for (std::size_t i = 0; i < time.size(); ++i) {
        if (!event[i]) continue;
        double s0 = 0.0;
        for (std::size_t j = 0; j < time.size(); ++j)
            if (time[j] >= time[i]) s0 += w[j] * std::exp(lp(static_cast<Eigen::Index>(j)));
        ll += lp(static_cast<Eigen::Index>(i)) - std::log(s0);
    }
    return ll;
}

// Golden-section maximizer of a unimodal function on [a, b].
inline double golden_max(const std::function<double(double)>& f, double a, double b, double tol = 1e-10) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

// Influence of every unit by the direct O(N^2) formula:
//   I^{-1} [ d_i (x_i - xbar(t_i)) - sum_{j event, t_j <= t_i} w_i e^{lp_i} (x_i - xbar(t_j)) / S0(t_j) ]
inline Eigen::MatrixXd naive_dfbeta(const std::vector<double>& time, const std::vector<int>& event,
                                    const Eigen::MatrixXd& X, const std::vector<double>& w, const Eigen::VectorXd& beta,
                                    const Eigen::MatrixXd& covariance) {
    const auto n = static_cast<Eigen::Index>(time.size());
    const Eigen::VectorXd lp = X * beta;
    auto at = [&](std::size_t j) {
        double s0 = 0.0;
        Eigen::VectorXd s1 = Eigen::VectorXd::Zero(X.cols());
        for (Eigen::Index k = 0; k < n; ++k)
            if (time[static_cast<std::size_t>(k)] >= time[j]) {
                const double r = w[static_cast<std::size_t>(k)] * std::exp(lp(k));
                s0 += r;
                s1 += r * X.row(k).transpose();
            }
        return std::make_pair(s0, Eigen::VectorXd(s1 / s0));
    };
    Eigen::MatrixXd resid = Eigen::MatrixXd::Zero(n, X.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (event[ui]) resid.row(i) += (X.row(i).transpose() - at(ui).second).transpose();
        for (std::size_t j = 0; j < time.size(); ++j) {
            if (!event[j] || time[j] > time[ui]) continue;
            const auto [s0, xbar] = at(j);
            resid.row(i) -= (w[ui] * std::exp(lp(i)) / s0 * (X.row(i).transpose() - xbar)).transpose();
        }
    }
    return resid * covariance;
}

// Cox data with p normal covariates, exponential event and censoring times.
// The first two units are forced to be events.
struct Toy {
    std::vector<double> time;
    std::vector<int> event;
    Eigen::MatrixXd X;
    std::vector<double> w;
};

inline Toy random_toy(std::uint64_t seed, int n, int p, bool ties, bool weighted, double beta_scale = 0.7) {
    iss::Rng rng = iss::make_rng(seed);
    Toy t;
    t.X.resize(n, p);
    Eigen::VectorXd beta(p);
    for (int j = 0; j < p; ++j) beta(j) = beta_scale * iss::std_normal(rng);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) t.X(i, j) = iss::std_normal(rng);
        const double T = -std::log(iss::uniform_open(rng)) * std::exp(-t.X.row(i).dot(beta));
        const double C = -std::log(iss::uniform_open(rng)) * 1.5;
        double obs = std::min(T, C);
        if (ties) obs = std::ceil(obs * 4.0) / 4.0;
        t.time.push_back(obs);
        t.event.push_back(T <= C);
        t.w.push_back(weighted ? 0.5 + 3.0 * iss::uniform01(rng) : 1.0);
    }
    t.event[0] = 1;
    t.event[1] = 1;
    return t;
}

inline double max_rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

// Cohort of n subjects with exponential times, about `case_rate` events and
// one continuous column z1. With strata > 0 subjects are dealt round-robin
// into that many labelled strata.
inline iss::CohortDataset random_cohort(std::uint64_t seed, std::size_t n, double case_rate, int strata = 0) {
    iss::Rng rng = iss::make_rng(seed);
    std::vector<iss::Subject> subjects;
    for (std::size_t i = 0; i < n; ++i) {
        iss::Subject s;
        s.id = "s" + std::to_string(i + 1);
        s.z = {iss::std_normal(rng)};
        s.time = 0.01 + iss::uniform01(rng);
        s.event = iss::uniform01(rng) < case_rate;
        if (strata > 0) s.stratum = static_cast<int>(i % static_cast<std::size_t>(strata));
        subjects.push_back(s);
    }
    std::vector<std::string> labels;
    if (strata > 0)
        for (int h = 0; h < strata; ++h) labels.push_back("h" + std::to_string(h + 1));
    return iss::CohortDataset::from_subjects(
        iss::CovariateSchema({{"z1", CovariateKind::Continuous, Block::LowCost, 0}}), subjects, labels);
}

// Assignment built from explicit roles. Subcohort membership covers the
// non-case subcohort role plus the cases listed in `case_in_subcohort`.
inline iss::SampleAssignment hand_assignment(const std::vector<iss::Role>& roles, const std::vector<int>& stratum = {},
                                             const std::vector<std::size_t>& case_in_subcohort = {}) {
    iss::SampleAssignment a;
    a.role = roles;
    a.stratum = stratum.empty() ? std::vector<int>(roles.size(), 0) : stratum;
    a.in_subcohort.assign(roles.size(), false);
    a.inclusion_prob.assign(roles.size(), 0.0);
    for (std::size_t i = 0; i < roles.size(); ++i) {
        a.in_subcohort[i] = roles[i] == iss::Role::SubcohortNoncase;
        if (roles[i] == iss::Role::Case) a.inclusion_prob[i] = 1.0;
    }
    for (std::size_t i : case_in_subcohort) a.in_subcohort[i] = true;
    a.recount();
    return a;
}

// sum (1 - pi_i) s_i^2 / pi_i
inline double pps_objective(const std::vector<double>& pi, const std::vector<double>& s) {
    double v = 0.0;
    for (std::size_t i = 0; i < pi.size(); ++i) v += (1.0 - pi[i]) * s[i] * s[i] / pi[i];
    return v;
}

// Minimum of pps_objective over {pi in (0,1]^n, sum pi = n1} by grid search:
// the first n-1 coordinates run over a 7-point grid of a box (points at or
// below 0 are moved just above it), the last is implied by the sum, and the
// box shrinks around the best point until it is narrower than 1e-10.
// Exhaustive at every level.
inline double pps_grid_minimum(const std::vector<double>& s, double n1) {
    const std::size_t n = s.size(), k = n - 1;
    const int G = 7;
    std::vector<double> centre(k, 0.5);
    double width = 1.0, best = std::numeric_limits<double>::infinity();
    std::vector<double> pi(n);
    while (width > 1e-10) {
        const double step = width / (G - 1);
        std::vector<int> idx(k, 0);
        std::vector<double> next = centre;
        for (;;) {
            double used = 0.0;
            bool ok = true;
            for (std::size_t j = 0; j < k && ok; ++j) {
                pi[j] = centre[j] - width / 2 + step * idx[j];
                if (pi[j] <= 0.0) pi[j] = 1e-3 * step;
                ok = pi[j] > 1e-12 && pi[j] <= 1.0;
                used += pi[j];
            }
            pi[k] = n1 - used;
            if (ok && pi[k] > 1e-12 && pi[k] <= 1.0) {
                const double v = pps_objective(pi, s);
                if (v < best) {
                    best = v;
                    next.assign(pi.begin(), pi.begin() + static_cast<std::ptrdiff_t>(k));
                }
            }
            std::size_t j = 0;
            while (j < k && ++idx[j] == G) idx[j++] = 0;
            if (j == k) break;
        }
        centre = next;
        width *= 0.5;
    }
    return best;
}

}  // namespace testing
