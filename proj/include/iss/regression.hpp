#pragma once

#include <Eigen/Core>

#include "iss/random.hpp"

namespace iss {

enum class Family { LinearNormal, Logistic };

struct RegressionFit {
    Family family = Family::LinearNormal;
    Eigen::VectorXd coef;
    Eigen::MatrixXd cov_unscaled;  // (G'G)^{-1} for OLS, inverse information for logistic
    double rss = 0.0;              // OLS only
    int df = 0;                    // n - k
};

/// Least squares with intercept supplied by the caller (G includes it).
RegressionFit fit_ols(const Eigen::MatrixXd& G, const Eigen::VectorXd& y);

/// Logistic MLE by IRLS. Throws SeparationError when the fit runs off to
/// infinity, SingularMatrixError for a rank-deficient design.
RegressionFit fit_logistic(const Eigen::MatrixXd& G, const Eigen::VectorXd& y);

/// One draw of the imputation-model parameters from their approximate
/// posterior: for linear-normal sigma^2 = RSS / chi^2(df) and
/// coef ~ N(hat, sigma^2 (G'G)^{-1}); for logistic coef ~ N(hat, I^{-1}).
struct ParameterDraw {
    Family family = Family::LinearNormal;
    Eigen::VectorXd coef;
    double sigma = 0.0;
};

ParameterDraw posterior_draw(const RegressionFit& fit, Rng& rng);

/// Fits on (G, y) and draws in one step.
ParameterDraw posterior_draw(Family family, const Eigen::MatrixXd& G, const Eigen::VectorXd& y, Rng& rng);

/// A value from the proposal f(x | predictors, theta): normal with residual
/// noise, or Bernoulli at the fitted probability.
double draw_from_model(const ParameterDraw& theta, const Eigen::Ref<const Eigen::RowVectorXd>& g, Rng& rng);

}  // namespace iss
