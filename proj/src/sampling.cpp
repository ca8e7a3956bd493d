#include "iss/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iss/cube.hpp"
#include "iss/errors.hpp"
#include "iss/random.hpp"

namespace iss {

std::string role_name(Role r) {
    switch (r) {
        case Role::Case: return "case";
        case Role::SubcohortNoncase: return "subcohort_noncase";
        case Role::Supersample: return "supersample";
        case Role::Unsampled: return "unsampled";
    }
    return "unsampled";
}

std::vector<std::size_t> SampleAssignment::pool_units(int stratum_filter) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < role.size(); ++i)
        if ((role[i] == Role::Unsampled || role[i] == Role::Supersample) &&
            (stratum_filter < 0 || stratum[i] == stratum_filter))
            out.push_back(i);
    return out;
}

std::vector<std::size_t> SampleAssignment::units_with(Role r) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < role.size(); ++i)
        if (role[i] == r) out.push_back(i);
    return out;
}

void SampleAssignment::recount() {
    std::size_t H = strata.empty() ? 1 : strata.size();
    for (int h : stratum) H = std::max(H, static_cast<std::size_t>(h) + 1);
    strata.assign(H, DesignSizes{});
    sizes = DesignSizes{};
    for (std::size_t i = 0; i < role.size(); ++i) {
        for (DesignSizes* s : {&sizes, &strata[static_cast<std::size_t>(stratum[i])]}) {
            ++s->N;
            if (role[i] == Role::Case) ++s->D;
            if (in_subcohort[i]) {
                ++s->n_sc;
                if (role[i] == Role::Case) ++s->d;
            }
            if (role[i] == Role::SubcohortNoncase) ++s->m;
            if (role[i] == Role::Supersample) ++s->n1;
        }
    }
}

namespace {

// Partial Fisher-Yates: k distinct entries of `units`, in draw order.
std::vector<std::size_t> srs(std::vector<std::size_t> units, std::size_t k, Rng& rng) {
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, units.size() - 1);
        std::swap(units[i], units[pick(rng)]);
    }
    units.resize(k);
    return units;
}

SampleAssignment empty_assignment(const CohortDataset& dataset, std::size_t strata) {
    SampleAssignment a;
    const std::size_t N = dataset.size();
    a.role.assign(N, Role::Unsampled);
    a.in_subcohort.assign(N, false);
    a.inclusion_prob.assign(N, 0.0);
    a.stratum.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        a.stratum[i] = dataset.stratum_of(i);
        if (dataset[i].event) {
            a.role[i] = Role::Case;
            a.inclusion_prob[i] = 1.0;
        }
    }
    a.strata.resize(strata);
    return a;
}

void add_subcohort(SampleAssignment& a, const std::vector<std::size_t>& chosen, double fraction) {
    for (std::size_t i : chosen) {
        a.in_subcohort[i] = true;
        if (a.role[i] != Role::Case) {
            a.role[i] = Role::SubcohortNoncase;
            a.inclusion_prob[i] = fraction;
        }
    }
}

}  // namespace

SampleAssignment draw_case_cohort(const CohortDataset& dataset, std::size_t n_sc, std::uint64_t seed) {
    const std::size_t N = dataset.size();
    if (n_sc > N)
        throw ValidationError("subcohort size " + std::to_string(n_sc) + " exceeds cohort size " + std::to_string(N));
    SampleAssignment a = empty_assignment(dataset, 1);
    std::fill(a.stratum.begin(), a.stratum.end(), 0);
    std::vector<std::size_t> all(N);
    std::iota(all.begin(), all.end(), 0);
    Rng rng = make_rng(seed);
    add_subcohort(a, srs(std::move(all), n_sc, rng), static_cast<double>(n_sc) / static_cast<double>(N));
    a.recount();
    return a;
}

SampleAssignment draw_stratified_case_cohort(const CohortDataset& dataset, const std::vector<std::size_t>& n_sc,
                                             std::uint64_t seed) {
    if (!dataset.stratified()) throw ValidationError("stratified subcohort requested but the cohort has no strata");
    const std::size_t H = dataset.num_strata();
    if (n_sc.size() != H)
        throw ValidationError("expected " + std::to_string(H) + " stratum allocations, got " +
                              std::to_string(n_sc.size()));
    SampleAssignment a = empty_assignment(dataset, H);
    for (std::size_t h = 0; h < H; ++h) {
        std::vector<std::size_t> units;
        for (std::size_t i = 0; i < dataset.size(); ++i)
            if (a.stratum[i] == static_cast<int>(h)) units.push_back(i);
        if (n_sc[h] > units.size())
            throw ValidationError("subcohort allocation " + std::to_string(n_sc[h]) + " exceeds size " +
                                  std::to_string(units.size()) + " of stratum '" + dataset.stratum_labels()[h] + "'");
        Rng rng = make_rng(derive_seed(seed, {h}));
        const double fraction = units.empty() ? 0.0 : static_cast<double>(n_sc[h]) / static_cast<double>(units.size());
        add_subcohort(a, srs(std::move(units), n_sc[h], rng), fraction);
    }
    a.recount();
    return a;
}

SampleAssignment case_cohort_from_flags(const CohortDataset& dataset, const std::vector<bool>& in_subcohort) {
    if (in_subcohort.size() != dataset.size()) throw ValidationError("one subcohort flag per subject required");
    const std::size_t H = dataset.num_strata();
    SampleAssignment a = empty_assignment(dataset, H);
    for (std::size_t h = 0; h < H; ++h) {
        std::vector<std::size_t> chosen;
        std::size_t total = 0;
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            if (a.stratum[i] != static_cast<int>(h)) continue;
            ++total;
            if (in_subcohort[i]) chosen.push_back(i);
        }
        const double fraction = total ? static_cast<double>(chosen.size()) / static_cast<double>(total) : 0.0;
        add_subcohort(a, chosen, fraction);
    }
    a.recount();
    return a;
}

std::vector<double> solve_inclusion_probabilities(std::span<const double> sizes, double n1) {
    const std::size_t n = sizes.size();
    if (n1 < 0.0 || n1 > static_cast<double>(n))
        throw ValidationError("supersample size " + std::to_string(n1) + " exceeds pool size " + std::to_string(n));
    std::vector<double> pi(n, 0.0);
    if (n1 == 0.0) return pi;
    double max_size = 0.0;
    for (double s : sizes) {
        if (!(s >= 0.0) || !std::isfinite(s)) throw ValidationError("size measures must be finite and nonnegative");
        max_size = std::max(max_size, s);
    }
    if (max_size <= 0.0) throw ValidationError("every size measure is zero; PPS probabilities are undefined");
    const double floor = 1e-8 * max_size;
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = std::max(sizes[i], floor);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    // Tail sums over the sorted sizes: rest[c] = sum of sizes from rank c on.
    std::vector<double> rest(n + 1, 0.0);
    for (std::size_t c = n; c-- > 0;) rest[c] = rest[c + 1] + s[order[c]];

    std::size_t capped = 0;
    double lambda = 0.0;
    while (true) {
        lambda = (n1 - static_cast<double>(capped)) / rest[capped];
        if (capped == n || lambda * s[order[capped]] <= 1.0) break;
        ++capped;
    }
    for (std::size_t c = 0; c < n; ++c) pi[order[c]] = c < capped ? 1.0 : std::min(lambda * s[order[c]], 1.0);
    return pi;
}

void draw_rss(SampleAssignment& assignment, const std::vector<std::size_t>& n1, std::uint64_t seed) {
    const std::size_t H = assignment.strata.size();
    if (n1.size() != H)
        throw ValidationError("expected " + std::to_string(H) + " supersample allocations, got " +
                              std::to_string(n1.size()));
    for (std::size_t h = 0; h < H; ++h) {
        std::vector<std::size_t> pool = assignment.pool_units(static_cast<int>(h));
        if (n1[h] > pool.size())
            throw ValidationError("supersample size " + std::to_string(n1[h]) + " exceeds pool size " +
                                  std::to_string(pool.size()));
        const double fraction = pool.empty() ? 0.0 : static_cast<double>(n1[h]) / static_cast<double>(pool.size());
        for (std::size_t i : pool) {
            assignment.role[i] = Role::Unsampled;
            assignment.inclusion_prob[i] = fraction;
        }
        Rng rng = make_rng(derive_seed(seed, {h}));
        for (std::size_t i : srs(std::move(pool), n1[h], rng)) assignment.role[i] = Role::Supersample;
    }
    assignment.recount();
}

CubeReport draw_balanced(SampleAssignment& assignment, const std::vector<std::size_t>& pool,
                         std::span<const double> pi, const Eigen::MatrixXd& psi, std::uint64_t seed) {
    if (pi.size() != pool.size() || static_cast<std::size_t>(psi.rows()) != pool.size())
        throw ValidationError("pool, probabilities and balancing rows must align");
    for (std::size_t i : pool)
        if (assignment.role[i] == Role::Case || assignment.role[i] == Role::SubcohortNoncase)
            throw ValidationError("balanced draw: unit " + std::to_string(i + 1) + " is not in the pool");
    CubeReport report;
    const std::size_t H = assignment.strata.size();
    for (std::size_t h = 0; h < H; ++h) {
        std::vector<std::size_t> rows;
        for (std::size_t r = 0; r < pool.size(); ++r)
            if (assignment.stratum[pool[r]] == static_cast<int>(h)) rows.push_back(r);
        if (rows.empty()) continue;
        const auto n = static_cast<Eigen::Index>(rows.size());
        Eigen::VectorXd p(n);
        Eigen::MatrixXd B(n, psi.cols() + 1);
        for (Eigen::Index r = 0; r < n; ++r) {
            p(r) = pi[rows[static_cast<std::size_t>(r)]];
            B(r, 0) = p(r);
            B.row(r).tail(psi.cols()) = psi.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]));
        }
        Rng rng = make_rng(derive_seed(seed, {h}));
        CubeResult res = cube_sample(p, B, rng);
        report.flight_residual = std::max(report.flight_residual, res.flight_residual);
        report.retained_residual = std::max(report.retained_residual, res.retained_residual);
        report.dropped = std::max(report.dropped, res.dropped);
        for (Eigen::Index r = 0; r < n; ++r) {
            const std::size_t i = pool[rows[static_cast<std::size_t>(r)]];
            assignment.inclusion_prob[i] = p(r);
            assignment.role[i] = res.selected[static_cast<std::size_t>(r)] ? Role::Supersample : Role::Unsampled;
        }
    }
    assignment.recount();
    return report;
}

Eigen::MatrixXd approx_design_variance(std::span<const double> pi, const Eigen::MatrixXd& psi, double N) {
    if (static_cast<Eigen::Index>(pi.size()) != psi.rows()) throw ValidationError("pi and psi must align");
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(psi.cols(), psi.cols());
    for (Eigen::Index i = 0; i < psi.rows(); ++i) {
        const double p = pi[static_cast<std::size_t>(i)];
        if (!(p > 0.0 && p <= 1.0))
            throw ValidationError("inclusion probability must lie in (0,1]", static_cast<std::size_t>(i + 1));
        V.noalias() += (1.0 - p) / p * psi.row(i).transpose() * psi.row(i);
    }
    return V / (N * N);
}

std::vector<std::size_t> proportional_allocation(const std::vector<std::size_t>& sizes, std::size_t total) {
    const double S = std::accumulate(sizes.begin(), sizes.end(), 0.0);
    if (total > S) throw ValidationError("allocation total exceeds the summed stratum sizes");
    std::vector<std::size_t> out(sizes.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t given = 0;
    for (std::size_t h = 0; h < sizes.size(); ++h) {
        const double exact = S > 0 ? static_cast<double>(total) * static_cast<double>(sizes[h]) / S : 0.0;
        out[h] = static_cast<std::size_t>(std::floor(exact));
        given += out[h];
        rem.emplace_back(exact - std::floor(exact), h);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; given < total; ++r, ++given) ++out[rem[r % rem.size()].second];
    return out;
}

}  // namespace iss
