#pragma once

#include <Eigen/Core>
#include <vector>

#include "iss/random.hpp"

namespace iss {

struct CubeResult {
    std::vector<int> selected;       // 0/1 per unit
    double flight_residual = 0.0;    // relative residual of every constraint at the end of the first flight
    double retained_residual = 0.0;  // relative residual of the constraints that were never dropped
    int dropped = 0;
};

/// Balanced sampling by the cube method (fast flight phase, landing by
/// dropping constraints from the last column backwards).
///
/// `pi` are inclusion probabilities in (0,1]; `B` is n x k with the
/// balancing variables. The HT totals sum_i B_i S_i / pi_i match sum_i B_i
/// for every constraint kept through landing. When the first column of B is
/// pi itself the sample size is fixed.
CubeResult cube_sample(const Eigen::VectorXd& pi, const Eigen::MatrixXd& B, Rng& rng);

/// Max over columns of |sum_i B_ij s_i / pi_i - sum_i B_ij| / sum_i |B_ij|.
double balancing_residual(const Eigen::VectorXd& pi, const Eigen::MatrixXd& B, const Eigen::VectorXd& s,
                          Eigen::Index columns);

}  // namespace iss
