#include "iss/regression.hpp"

#include <Eigen/Cholesky>
#include <cmath>

#include "iss/errors.hpp"

namespace iss {

namespace {

// Eigen's rcond estimate ignores exact zero pivots, so the pivots are checked too.
bool nonsingular(const Eigen::LDLT<Eigen::MatrixXd>& ldlt) {
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-13) return false;
    if (ldlt.vectorD().size() == 0) return true;
    const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
    return d.minCoeff() > 1e-13 * d.maxCoeff();
}

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& M, const char* what) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
    if (!nonsingular(ldlt))
        throw SingularMatrixError(std::string(what) + ": design matrix is rank deficient");
    Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(M.rows(), M.cols()));
    return 0.5 * (inv + inv.transpose());
}

Eigen::VectorXd mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, Rng& rng) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw SingularMatrixError("posterior covariance is not positive definite");
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = std_normal(rng);
    return mean + llt.matrixL() * z;
}

}  // namespace

RegressionFit fit_ols(const Eigen::MatrixXd& G, const Eigen::VectorXd& y) {
    if (G.rows() != y.size()) throw ValidationError("regression: rows of design and response differ");
    if (G.rows() <= G.cols()) throw SingularMatrixError("regression: fewer observations than parameters");
    RegressionFit f;
    f.family = Family::LinearNormal;
    f.cov_unscaled = spd_inverse(G.transpose() * G, "linear imputation model");
    f.coef = f.cov_unscaled * (G.transpose() * y);
    f.rss = (y - G * f.coef).squaredNorm();
    f.df = static_cast<int>(G.rows() - G.cols());
    return f;
}

RegressionFit fit_logistic(const Eigen::MatrixXd& G, const Eigen::VectorXd& y) {
    if (G.rows() != y.size()) throw ValidationError("regression: rows of design and response differ");
    const Eigen::Index n = G.rows(), k = G.cols();
    RegressionFit f;
    f.family = Family::Logistic;
    f.coef = Eigen::VectorXd::Zero(k);
    auto loglik = [&](const Eigen::VectorXd& b) {
        const Eigen::VectorXd eta = G * b;
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            // log(1 + e^eta) computed without overflow
            const double soft = eta(i) > 0 ? eta(i) + std::log1p(std::exp(-eta(i))) : std::log1p(std::exp(eta(i)));
            ll += y(i) * eta(i) - soft;
        }
        return ll;
    };
    double ll = loglik(f.coef);
    Eigen::MatrixXd info;
    for (int iter = 0; iter < 100; ++iter) {
        const Eigen::VectorXd eta = G * f.coef;
        Eigen::VectorXd p(n), wt(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            p(i) = 1.0 / (1.0 + std::exp(-eta(i)));
            wt(i) = p(i) * (1.0 - p(i));
        }
        const Eigen::VectorXd score = G.transpose() * (y - p);
        info = G.transpose() * wt.asDiagonal() * G;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        if (!nonsingular(ldlt)) {
            if ((G * f.coef).cwiseAbs().maxCoeff() > 15.0)
                throw SeparationError("logistic imputation model: perfect separation (MLE does not exist)");
            throw SingularMatrixError("logistic imputation model: design matrix is rank deficient");
        }
        const Eigen::VectorXd step = ldlt.solve(score);
        Eigen::VectorXd trial = f.coef + step;
        double tll = loglik(trial);
        for (int h = 0; h < 20 && tll < ll; ++h) {
            trial = f.coef + std::ldexp(1.0, -(h + 1)) * step;
            tll = loglik(trial);
        }
        const bool done = score.cwiseAbs().maxCoeff() < 1e-10 || std::abs(tll - ll) < 1e-12 * (1.0 + std::abs(ll));
        f.coef = trial;
        ll = tll;
        // Fitted probabilities within e^-30 of 0 or 1: the likelihood keeps
        // rising along a separating direction. Judged on the linear predictor
        // so that predictors on small scales may carry large coefficients.
        if ((G * f.coef).cwiseAbs().maxCoeff() > 30.0)
            throw SeparationError("logistic imputation model: perfect separation (MLE does not exist)");
        if (done) break;
    }
    const Eigen::VectorXd eta = G * f.coef;
    Eigen::VectorXd wt(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-eta(i)));
        wt(i) = p * (1.0 - p);
    }
    f.cov_unscaled = spd_inverse(G.transpose() * wt.asDiagonal() * G, "logistic imputation model");
    f.df = static_cast<int>(n - k);
    return f;
}

ParameterDraw posterior_draw(const RegressionFit& fit, Rng& rng) {
    ParameterDraw d;
    d.family = fit.family;
    if (fit.family == Family::LinearNormal) {
        const double chi2 = std::chi_squared_distribution<double>(fit.df)(rng);
        const double sigma2 = fit.rss / chi2;
        d.sigma = std::sqrt(sigma2);
        d.coef = mvn(fit.coef, sigma2 * fit.cov_unscaled, rng);
    } else {
        d.coef = mvn(fit.coef, fit.cov_unscaled, rng);
    }
    return d;
}

ParameterDraw posterior_draw(Family family, const Eigen::MatrixXd& G, const Eigen::VectorXd& y, Rng& rng) {
    return posterior_draw(family == Family::LinearNormal ? fit_ols(G, y) : fit_logistic(G, y), rng);
}

double draw_from_model(const ParameterDraw& theta, const Eigen::Ref<const Eigen::RowVectorXd>& g, Rng& rng) {
    const double eta = g.dot(theta.coef);
    if (theta.family == Family::LinearNormal) return eta + theta.sigma * std_normal(rng);
    const double p = 1.0 / (1.0 + std::exp(-eta));
    return uniform01(rng) < p ? 1.0 : 0.0;
}

}  // namespace iss
