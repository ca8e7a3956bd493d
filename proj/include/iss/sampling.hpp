#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "iss/cohort.hpp"

namespace iss {

enum class Role { Case, SubcohortNoncase, Supersample, Unsampled };

std::string role_name(Role r);

/// Sample sizes of one stratum (or of the whole cohort).
///   n0 = m + D is the case-cohort sample, n = n0 + n1 the super case-cohort.
struct DesignSizes {
    std::size_t N = 0;     // cohort
    std::size_t D = 0;     // cases
    std::size_t n_sc = 0;  // subcohort
    std::size_t d = 0;     // cases inside the subcohort
    std::size_t m = 0;     // non-cases inside the subcohort
    std::size_t n1 = 0;    // supersample
    std::size_t n0() const { return m + D; }
    std::size_t n() const { return n0() + n1; }
    std::size_t pool() const { return N - D - m; }
};

struct SampleAssignment {
    std::vector<Role> role;
    std::vector<bool> in_subcohort;     // includes cases drawn into the subcohort
    std::vector<double> inclusion_prob; // 1 for cases, SRS fraction for subcohort, pi for pool units; 0 if unset
    std::vector<int> stratum;           // all 0 when unstratified
    DesignSizes sizes;
    std::vector<DesignSizes> strata;    // one entry per stratum (one entry when unstratified)

    std::size_t size() const { return role.size(); }
    bool sampled(std::size_t i) const { return role[i] != Role::Unsampled; }
    /// Non-cases outside the subcohort, the population the supersample is drawn from.
    std::vector<std::size_t> pool_units(int stratum_filter = -1) const;
    std::vector<std::size_t> units_with(Role r) const;
    /// Recomputes sizes from roles.
    void recount();
};

SampleAssignment draw_case_cohort(const CohortDataset& dataset, std::size_t n_sc, std::uint64_t seed);

SampleAssignment draw_stratified_case_cohort(const CohortDataset& dataset, const std::vector<std::size_t>& n_sc,
                                             std::uint64_t seed);

/// Case-cohort assignment for a subcohort that was drawn elsewhere.
SampleAssignment case_cohort_from_flags(const CohortDataset& dataset, const std::vector<bool>& in_subcohort);

/// pi_i = min(lambda * size_i, 1) with sum pi = n1, solved exactly by sorting
/// and iterative capping. Zero sizes are floored at 1e-8 * max size.
std::vector<double> solve_inclusion_probabilities(std::span<const double> sizes, double n1);

/// Simple random supersample of n1[h] pool units in each stratum.
void draw_rss(SampleAssignment& assignment, const std::vector<std::size_t>& n1, std::uint64_t seed);

struct CubeReport {
    double flight_residual = 0.0;    // max relative HT residual over all constraints after the flight phase
    double retained_residual = 0.0;  // same, final sample, constraints never dropped
    int dropped = 0;                 // constraints dropped during landing (max over strata)
};

/// Balanced supersample from the pool by the cube method. `pool` lists the
/// pool units, `pi` their inclusion probabilities and `psi` their balancing
/// influence values (rows align with `pool`). The balancing vector is
/// B_i = (pi_i, psi_i). Runs separately within each stratum.
CubeReport draw_balanced(SampleAssignment& assignment, const std::vector<std::size_t>& pool,
                         std::span<const double> pi, const Eigen::MatrixXd& psi, std::uint64_t seed);

/// First term of the HT design variance, (1/N^2) sum (1 - pi_i)/pi_i psi_i psi_i'.
Eigen::MatrixXd approx_design_variance(std::span<const double> pi, const Eigen::MatrixXd& psi, double N);

/// Allocation of `total` over strata proportional to `sizes` (largest remainder).
std::vector<std::size_t> proportional_allocation(const std::vector<std::size_t>& sizes, std::size_t total);

}  // namespace iss
