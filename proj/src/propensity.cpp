#include "rebar/propensity.hpp"

#include <cmath>
#include <stdexcept>

namespace rebar {
namespace {

double log1pexp(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double expit(double x) {
  return x > 0 ? 1.0 / (1.0 + std::exp(-x))
               : std::exp(x) / (1.0 + std::exp(x));
}

// Penalized log-likelihood; slopes only are penalized.
double objective(const Eigen::MatrixXd& xd, const Eigen::VectorXd& zv,
                 const Eigen::VectorXd& beta, double penalty) {
  const Eigen::VectorXd eta = xd * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    ll += zv[i] * eta[i] - log1pexp(eta[i]);
  const double pen =
      0.5 * penalty * beta.tail(beta.size() - 1).squaredNorm();
  return ll - pen;
}

}  // namespace

Eigen::VectorXd PropensityModel::probabilities() const {
  Eigen::VectorXd p(logits.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = expit(logits[i]);
  return p;
}

PropensityModel fit_propensity(const ObservationalDataset& ds,
                               const std::vector<int>& covariate_cols,
                               double penalty, bool standardize, int max_iter,
                               double grad_tol) {
  if (covariate_cols.empty())
    throw std::invalid_argument("propensity: need at least one covariate");
  if (penalty < 0)
    throw std::invalid_argument("propensity: penalty must be >= 0");
  const int n = ds.n();
  const int k = static_cast<int>(covariate_cols.size());

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(k);
  Eigen::MatrixXd xd(n, k + 1);
  xd.col(0).setOnes();
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd col = ds.x.col(covariate_cols[j]);
    if (standardize) {
      mean[j] = col.mean();
      const double sd =
          std::sqrt((col.array() - mean[j]).square().sum() / n);
      scale[j] = sd > 0 ? sd : 1.0;
      col = (col.array() - mean[j]) / scale[j];
    }
    xd.col(j + 1) = col;
  }

  Eigen::VectorXd zv(n);
  for (int i = 0; i < n; ++i) zv[i] = ds.z[i];

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k + 1);
  beta[0] = std::log(zv.mean() / (1.0 - zv.mean()));
  double obj = objective(xd, zv, beta, penalty);

  Eigen::VectorXd penalty_diag = Eigen::VectorXd::Constant(k + 1, penalty);
  penalty_diag[0] = 0.0;

  int iter = 0;
  for (; iter < max_iter; ++iter) {
    const Eigen::VectorXd eta = xd * beta;
    Eigen::VectorXd mu(n), w(n);
    for (int i = 0; i < n; ++i) {
      mu[i] = expit(eta[i]);
      w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-12);
    }
    Eigen::VectorXd grad = xd.transpose() * (zv - mu);
    grad -= penalty_diag.cwiseProduct(beta);
    if (grad.cwiseAbs().maxCoeff() < grad_tol) break;

    Eigen::MatrixXd hess = xd.transpose() * w.asDiagonal() * xd;
    hess.diagonal() += penalty_diag;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);

    // step-halving keeps the penalized log-likelihood non-decreasing
    double alpha = 1.0;
    bool improved = false;
    for (int h = 0; h < 40; ++h) {
      const Eigen::VectorXd cand = beta + alpha * step;
      const double cand_obj = objective(xd, zv, cand, penalty);
      if (cand_obj >= obj) {
        beta = cand;
        obj = cand_obj;
        improved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!improved) break;
  }

  {
    const Eigen::VectorXd eta = xd * beta;
    Eigen::VectorXd mu(n);
    for (int i = 0; i < n; ++i) mu[i] = expit(eta[i]);
    Eigen::VectorXd grad = xd.transpose() * (zv - mu);
    grad -= penalty_diag.cwiseProduct(beta);
    if (grad.cwiseAbs().maxCoeff() >= grad_tol) {
      if (penalty == 0.0 && eta.cwiseAbs().maxCoeff() > 25.0)
        throw std::runtime_error(
            "propensity: separation with penalty = 0 (no finite MLE)");
      throw std::runtime_error("propensity: IRLS did not converge");
    }
  }

  PropensityModel model;
  model.penalty = penalty;
  model.iterations = iter;
  model.logits = xd * beta;
  // back-transform to the original covariate scale
  model.coefficients.resize(k + 1);
  double intercept = beta[0];
  for (int j = 0; j < k; ++j) {
    model.coefficients[j + 1] = beta[j + 1] / scale[j];
    intercept -= beta[j + 1] * mean[j] / scale[j];
  }
  model.coefficients[0] = intercept;
  if (!model.logits.allFinite())
    throw std::runtime_error("propensity: non-finite logits");
  return model;
}

}  // namespace rebar
