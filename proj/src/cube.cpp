#include "iss/cube.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "iss/errors.hpp"

namespace iss {

double balancing_residual(const Eigen::VectorXd& pi, const Eigen::MatrixXd& B, const Eigen::VectorXd& s,
                          Eigen::Index columns) {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < columns; ++j) {
        double ht = 0.0, total = 0.0, scale = 0.0;
        for (Eigen::Index i = 0; i < B.rows(); ++i) {
            ht += B(i, j) * s(i) / pi(i);
            total += B(i, j);
            scale += std::abs(B(i, j));
        }
        if (scale > 0.0) worst = std::max(worst, std::abs(ht - total) / scale);
    }
    return worst;
}

namespace {

class Cube {
public:
    Cube(const Eigen::VectorXd& pi, const Eigen::MatrixXd& B, Rng& rng) : pi0_(pi), B_(B), cur_(pi), rng_(rng) {
        for (Eigen::Index i = 0; i < pi.size(); ++i)
            if (fractional(i)) order_.push_back(i);
        std::shuffle(order_.begin(), order_.end(), rng_);
    }

    // Moves the probability vector within the constraint subspace of the
    // first k columns until fewer than k + 1 fractional units remain and no
    // further balanced move exists.
    void fly(Eigen::Index k) {
        while (true) {
            refill(k);
            if (window_.empty()) return;
            Eigen::VectorXd u;
            if (!direction(k, u)) return;
            step(u);
        }
    }

    std::size_t remaining() {
        refill(0);
        return window_.size();
    }

    // Rounds the leftover units: to the nearer face when only the size
    // constraint was left, otherwise by independent Bernoulli draws.
    void finish(bool size_only) {
        refill(0);
        for (Eigen::Index i : window_) {
            if (size_only && window_.size() == 1)
                cur_(i) = cur_(i) >= 0.5 ? 1.0 : 0.0;
            else
                cur_(i) = std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < cur_(i) ? 1.0 : 0.0;
        }
        window_.clear();
    }

    const Eigen::VectorXd& current() const { return cur_; }

private:
    bool fractional(Eigen::Index i) const { return cur_(i) > 0.0 && cur_(i) < 1.0; }

    void refill(Eigen::Index k) {
        std::erase_if(window_, [this](Eigen::Index i) { return !fractional(i); });
        while (static_cast<Eigen::Index>(window_.size()) < k + 1 && next_ < order_.size()) {
            Eigen::Index i = order_[next_++];
            if (fractional(i)) window_.push_back(i);
        }
        if (k == 0) {
            while (next_ < order_.size()) {
                Eigen::Index i = order_[next_++];
                if (fractional(i)) window_.push_back(i);
            }
        }
    }

    // Null-space direction of the window: sum_c A_c u_c = 0 with A_c = B_c / pi_c.
    // Solved as B' v = 0, u_c = pi_c v_c, which avoids dividing by small pi.
    bool direction(Eigen::Index k, Eigen::VectorXd& u) {
        const auto w = static_cast<Eigen::Index>(window_.size());
        if (k == 0) {
            u = Eigen::VectorXd::Zero(w);
            return false;
        }
        Eigen::MatrixXd M(k, w);
        for (Eigen::Index c = 0; c < w; ++c) M.col(c) = B_.row(window_[static_cast<std::size_t>(c)]).head(k).transpose();
        for (Eigen::Index r = 0; r < k; ++r) {
            double mx = M.row(r).cwiseAbs().maxCoeff();
            if (mx > 0.0) M.row(r) /= mx;
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
        lu.setThreshold(1e-10);
        if (lu.dimensionOfKernel() == 0) return false;
        Eigen::VectorXd v = lu.kernel().col(0);
        u.resize(w);
        for (Eigen::Index c = 0; c < w; ++c) u(c) = pi0_(window_[static_cast<std::size_t>(c)]) * v(c);
        double mx = u.cwiseAbs().maxCoeff();
        if (!(mx > 0.0)) return false;
        u /= mx;
        for (Eigen::Index c = 0; c < w; ++c)
            if (std::abs(u(c)) < 1e-14) u(c) = 0.0;
        if (std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < 0.5) u = -u;
        return true;
    }

    void step(const Eigen::VectorXd& u) {
        const auto w = static_cast<Eigen::Index>(window_.size());
        double l1 = std::numeric_limits<double>::infinity(), l2 = l1;
        Eigen::Index a1 = -1, a2 = -1;
        for (Eigen::Index c = 0; c < w; ++c) {
            const double p = cur_(window_[static_cast<std::size_t>(c)]);
            if (u(c) > 0.0) {
                double up = (1.0 - p) / u(c), down = p / u(c);
                if (up < l1) l1 = up, a1 = c;
                if (down < l2) l2 = down, a2 = c;
            } else if (u(c) < 0.0) {
                double up = p / -u(c), down = (1.0 - p) / -u(c);
                if (up < l1) l1 = up, a1 = c;
                if (down < l2) l2 = down, a2 = c;
            }
        }
        const bool forward = std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < l2 / (l1 + l2);
        const double len = forward ? l1 : -l2;
        const Eigen::Index hit = forward ? a1 : a2;
        for (Eigen::Index c = 0; c < w; ++c) {
            const Eigen::Index i = window_[static_cast<std::size_t>(c)];
            cur_(i) += len * u(c);
            // Snap to a face when within roundoff of it, relative to the unit's HT scale.
            const double tol = 1e-12 * std::min(pi0_(i), 1.0);
            if (c == hit) {
                cur_(i) = cur_(i) < 0.5 ? 0.0 : 1.0;
            } else if (cur_(i) <= tol) {
                cur_(i) = 0.0;
            } else if (cur_(i) >= 1.0 - tol) {
                cur_(i) = 1.0;
            }
        }
    }

    const Eigen::VectorXd& pi0_;
    const Eigen::MatrixXd& B_;
    Eigen::VectorXd cur_;
    Rng& rng_;
    std::vector<Eigen::Index> order_;
    std::size_t next_ = 0;
    std::vector<Eigen::Index> window_;
};

}  // namespace

CubeResult cube_sample(const Eigen::VectorXd& pi, const Eigen::MatrixXd& B, Rng& rng) {
    const Eigen::Index n = pi.size();
    if (B.rows() != n) throw ValidationError("cube: balancing matrix rows differ from the number of units");
    for (Eigen::Index i = 0; i < n; ++i)
        if (!(pi(i) > 0.0 && pi(i) <= 1.0))
            throw ValidationError("cube: inclusion probabilities must lie in (0,1]", static_cast<std::size_t>(i + 1));
    if (!B.allFinite()) throw ValidationError("cube: balancing matrix has non-finite entries");

    Cube cube(pi, B, rng);
    Eigen::Index k = B.cols();
    cube.fly(k);

    CubeResult res;
    res.flight_residual = balancing_residual(pi, B, cube.current(), B.cols());
    while (cube.remaining() > 0 && k > 1) {
        --k;
        ++res.dropped;
        cube.fly(k);
    }
    Eigen::Index retained = k;
    if (cube.remaining() > 0) {
        // A lone size constraint can only leave a unit that is integral up to roundoff.
        const bool size_only = k == 1 && (B.col(0) - pi).cwiseAbs().maxCoeff() <= 1e-12;
        if (!size_only) {
            ++res.dropped;
            retained = 0;
        }
        cube.finish(size_only);
    }
    res.selected.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) res.selected[static_cast<std::size_t>(i)] = cube.current()(i) > 0.5 ? 1 : 0;
    Eigen::VectorXd s(n);
    for (Eigen::Index i = 0; i < n; ++i) s(i) = res.selected[static_cast<std::size_t>(i)];
    res.retained_residual = balancing_residual(pi, B, s, retained);
    return res;
}

}  // namespace iss
