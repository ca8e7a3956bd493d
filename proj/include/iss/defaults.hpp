#pragma once

#include <cstddef>
#include <cstdint>

// Every numeric default of the library and the command line tool. README.md
// mirrors this table.
namespace iss::defaults {

// simulation, desk scale
inline constexpr std::size_t N = 5000;
inline constexpr std::size_t n_sc = 100;
inline constexpr std::size_t n1 = 300;
inline constexpr int replicates = 200;
inline constexpr double alpha = 1.0;             // Weibull shape
inline constexpr double event_fraction = 0.01;   // expected share of cases, fixes beta0
inline constexpr std::uint64_t seed = 20240611;

// simulation, paper scale
inline constexpr std::size_t paper_N = 25000;
inline constexpr std::size_t paper_n_sc = 250;
inline constexpr std::size_t paper_n1 = 750;
inline constexpr int paper_replicates = 1000;

// imputation
inline constexpr int M = 10;                     // imputed datasets
inline constexpr int L = 20;                     // chained-equation cycles
inline constexpr int reject_limit = 1000;        // SMC-FCS proposals per value

// Cox fit
inline constexpr int cox_max_iter = 50;
inline constexpr double cox_tol = 1e-9;          // max |score|
inline constexpr int cox_max_halvings = 10;
inline constexpr double cox_beta_bound = 20.0;   // |beta| beyond this is monotone likelihood

// raking
inline constexpr int rake_max_iter = 100;
inline constexpr double rake_rel_tol = 1e-8;
inline constexpr int rake_max_halvings = 30;

// beta0 calibration sample
inline constexpr std::size_t beta0_draws = 200000;

}  // namespace iss::defaults
