#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "rebar/learners.hpp"

using namespace rebar;

namespace {

Eigen::MatrixXd gaussian(int n, int p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd x(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) x(i, j) = g(rng);
  return x;
}

// columns centered and orthonormal in the x'x/n = I sense
Eigen::MatrixXd orthonormal_design(int n, int p, std::uint64_t seed) {
  Eigen::MatrixXd x = gaussian(n, p, seed);
  for (int j = 0; j < p; ++j) {
    x.col(j).array() -= x.col(j).mean();
    for (int k = 0; k < j; ++k)
      x.col(j) -= (x.col(k).dot(x.col(j)) / x.col(k).squaredNorm()) * x.col(k);
    x.col(j) /= std::sqrt(x.col(j).squaredNorm() / n);
  }
  return x;
}

}  // namespace

TEST_SUITE("learners") {

TEST_CASE("grand mean predicts the mean") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 2);
  Eigen::VectorXd y(3);
  y << 1, 2, 3;
  const auto model = fit_learner(LearnerConfig::of(LearnerKind::grand_mean),
                                 x, y, 0);
  const Eigen::VectorXd pred = model->predict(gaussian(5, 2, 1));
  for (int i = 0; i < 5; ++i) CHECK(pred[i] == doctest::Approx(2.0));
}

TEST_CASE("lasso kill point: lambda >= lambda_max zeroes every slope") {
  const Eigen::MatrixXd x = orthonormal_design(80, 4, 2);
  Eigen::VectorXd y = x.col(0) * 1.5 + x.col(2) * 0.5;
  y.array() += 3.0;

  const double lambda_max =
      (x.transpose() * (y.array() - y.mean()).matrix()).cwiseAbs().maxCoeff() /
      x.rows();
  LearnerConfig cfg = LearnerConfig::of(LearnerKind::lasso);
  cfg.penalty = lambda_max * 1.01;
  const auto model = fit_learner(cfg, x, y, 0);
  const Eigen::VectorXd pred = model->predict(x);
  for (int i = 0; i < x.rows(); ++i)
    CHECK(pred[i] == doctest::Approx(y.mean()).epsilon(1e-10));
}

TEST_CASE("lasso on an orthonormal design equals soft-thresholded OLS") {
  const int n = 120, p = 5;
  const Eigen::MatrixXd x = orthonormal_design(n, p, 3);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 0.3);
  Eigen::VectorXd beta_true(p);
  beta_true << 1.2, -0.8, 0.0, 0.4, -0.1;
  Eigen::VectorXd y = x * beta_true;
  for (int i = 0; i < n; ++i) y[i] += g(rng);

  const Eigen::VectorXd yc = y.array() - y.mean();
  const double lambda = 0.3;
  LearnerConfig cfg = LearnerConfig::of(LearnerKind::lasso);
  cfg.penalty = lambda;
  cfg.standardize = false;  // columns already unit variance
  const auto model = fit_learner(cfg, x, y, 0);

  // closed form: beta_j = S(x_j'y / n, lambda)
  Eigen::VectorXd expected(p);
  for (int j = 0; j < p; ++j)
    expected[j] = oracles::soft_threshold(x.col(j).dot(yc) / n, lambda);
  Eigen::RowVectorXd probe = Eigen::RowVectorXd::Zero(p);
  const double intercept = model->predict_row(probe);
  CHECK(intercept == doctest::Approx(y.mean()).epsilon(1e-8));
  for (int j = 0; j < p; ++j) {
    probe.setZero();
    probe[j] = 1.0;
    CHECK(model->predict_row(probe) - intercept ==
          doctest::Approx(expected[j]).epsilon(1e-6));
  }
}

TEST_CASE("ridge with vanishing penalty matches OLS") {
  const int n = 150, p = 4;
  const Eigen::MatrixXd x = gaussian(n, p, 5);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 0.5);
  Eigen::VectorXd y = x.col(0) - 2.0 * x.col(3);
  for (int i = 0; i < n; ++i) y[i] += 1.0 + g(rng);

  LearnerConfig cfg = LearnerConfig::of(LearnerKind::ridge);
  cfg.penalty = 1e-12;
  const auto model = fit_learner(cfg, x, y, 0);

  Eigen::MatrixXd xd(n, p + 1);
  xd.col(0).setOnes();
  xd.rightCols(p) = x;
  const Eigen::VectorXd beta = oracles::ols(xd, y);
  const Eigen::MatrixXd probe = gaussian(10, p, 7);
  const Eigen::VectorXd pred = model->predict(probe);
  for (int i = 0; i < 10; ++i) {
    double want = beta[0];
    for (int j = 0; j < p; ++j) want += beta[j + 1] * probe(i, j);
    CHECK(pred[i] == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("cross-validated grand mean has R^2 near zero from below") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  const int n = 400;
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = g(rng);
  const CrossValidation cv = cross_validate(
      LearnerConfig::of(LearnerKind::grand_mean), gaussian(n, 2, 9), y, 10, 3);
  CHECK(cv.r2 < 0.0);
  CHECK(cv.r2 > -0.05);
}

TEST_CASE("ridge recovers a strong linear signal") {
  const int n = 500, p = 5;
  const Eigen::MatrixXd x = gaussian(n, p, 10);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 0.1);
  Eigen::VectorXd y = x * Eigen::VectorXd::Ones(p);
  for (int i = 0; i < n; ++i) y[i] += g(rng);
  const CrossValidation cv =
      cross_validate(LearnerConfig::of(LearnerKind::ridge), x, y, 5, 12);
  CHECK(cv.r2 > 0.95);
}

TEST_CASE("leave-one-out grand mean on three points") {
  Eigen::VectorXd y(3);
  y << 1, 2, 3;
  const CrossValidation cv = cross_validate(
      LearnerConfig::of(LearnerKind::grand_mean), gaussian(3, 1, 13), y, 3, 0);
  // held-out errors: 1 - 2.5, 2 - 2, 3 - 1.5
  CHECK(cv.mse == doctest::Approx((2.25 + 0.0 + 2.25) / 3.0).epsilon(1e-12));
}

TEST_CASE("super learner: single member gets weight one exactly") {
  const Eigen::MatrixXd x = gaussian(60, 3, 14);
  Eigen::VectorXd y = x.col(0);
  const LearnerEnsemble ens =
      super_learner({LearnerConfig::of(LearnerKind::ridge)}, x, y, 5, 15);
  REQUIRE(ens.weights.size() == 1);
  CHECK(ens.weights[0] == 1.0);
}

TEST_CASE("super learner favours the true-model learner") {
  const int n = 300, p = 4;
  const Eigen::MatrixXd x = gaussian(n, p, 16);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 0.2);
  Eigen::VectorXd y = 2.0 * x.col(1) - x.col(2);
  for (int i = 0; i < n; ++i) y[i] += g(rng);
  const LearnerEnsemble ens =
      super_learner({LearnerConfig::of(LearnerKind::ridge),
                     LearnerConfig::of(LearnerKind::grand_mean)},
                    x, y, 5, 18);
  CHECK(ens.weights[0] > 0.9);
  CHECK(ens.weights.sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK((ens.weights.array() >= 0).all());
}

TEST_CASE("ensemble held-out MSE weakly beats every member") {
  const int n = 200, p = 6;
  const Eigen::MatrixXd x = gaussian(n, p, 19);
  std::mt19937_64 rng(20);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd y = x.col(0) + 0.5 * x.col(1).array().square().matrix();
  for (int i = 0; i < n; ++i) y[i] += g(rng);
  const std::vector<LearnerConfig> lib{
      LearnerConfig::of(LearnerKind::grand_mean),
      LearnerConfig::of(LearnerKind::ridge),
      LearnerConfig::of(LearnerKind::lasso)};
  const LearnerEnsemble ens = super_learner(lib, x, y, 5, 21);
  for (const auto& member : ens.cv_report)
    CHECK(ens.cv_mse <= member.cv_rmse * member.cv_rmse + 1e-9);
}

TEST_CASE("linear learners are location equivariant") {
  const Eigen::MatrixXd x = gaussian(100, 3, 22);
  std::mt19937_64 rng(23);
  std::normal_distribution<double> g(0.0, 0.5);
  Eigen::VectorXd y = x.col(0);
  for (int i = 0; i < 100; ++i) y[i] += g(rng);
  const Eigen::MatrixXd probe = gaussian(7, 3, 24);
  for (LearnerKind kind :
       {LearnerKind::grand_mean, LearnerKind::ridge, LearnerKind::lasso,
        LearnerKind::bayes_lm}) {
    const auto a = fit_learner(LearnerConfig::of(kind), x, y, 1);
    const auto b =
        fit_learner(LearnerConfig::of(kind), x, y.array() + 10.0, 1);
    const Eigen::VectorXd pa = a->predict(probe);
    const Eigen::VectorXd pb = b->predict(probe);
    for (int i = 0; i < 7; ++i)
      CHECK(pb[i] - pa[i] == doctest::Approx(10.0).epsilon(1e-8));
  }
}

TEST_CASE("forest training-point predictions survive monotone transforms") {
  // small hand-built sample; transform x -> x^3 preserves row order
  Eigen::MatrixXd x(10, 2);
  x << 0.1, 1.0, 0.2, 0.9, 0.3, 0.8, 0.4, 0.7, 0.5, 0.6, 0.6, 0.5, 0.7, 0.4,
      0.8, 0.3, 0.9, 0.2, 1.0, 0.1;
  Eigen::VectorXd y(10);
  y << 5, 5, 5, 5, 1, 1, 1, 1, 9, 9;
  LearnerConfig cfg = LearnerConfig::of(LearnerKind::random_forest);
  cfg.trees = 25;
  cfg.min_leaf = 2;
  const auto a = fit_learner(cfg, x, y, 99);
  Eigen::MatrixXd xt = x;
  xt.col(0) = x.col(0).array().cube();
  const auto b = fit_learner(cfg, xt, y, 99);
  const Eigen::VectorXd pa = a->predict(x);
  const Eigen::VectorXd pb = b->predict(xt);
  for (int i = 0; i < 10; ++i) CHECK(pa[i] == pb[i]);
}

TEST_CASE("equal seeds give bit-identical predictions") {
  const Eigen::MatrixXd x = gaussian(120, 8, 25);
  std::mt19937_64 rng(26);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd y(120);
  for (int i = 0; i < 120; ++i) y[i] = x(i, 0) + g(rng);
  const Eigen::MatrixXd probe = gaussian(9, 8, 27);
  for (LearnerKind kind :
       {LearnerKind::lasso, LearnerKind::ridge, LearnerKind::random_forest}) {
    LearnerConfig cfg = LearnerConfig::of(kind);
    cfg.trees = 30;
    const Eigen::VectorXd p1 = fit_learner(cfg, x, y, 777)->predict(probe);
    const Eigen::VectorXd p2 = fit_learner(cfg, x, y, 777)->predict(probe);
    for (int i = 0; i < 9; ++i) CHECK(p1[i] == p2[i]);
  }
}

TEST_CASE("degenerate outcomes fall back to the mean") {
  const Eigen::MatrixXd x = gaussian(40, 3, 28);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(40, 7.0);
  for (LearnerKind kind :
       {LearnerKind::grand_mean, LearnerKind::ridge, LearnerKind::lasso,
        LearnerKind::random_forest}) {
    LearnerConfig cfg = LearnerConfig::of(kind);
    cfg.trees = 10;
    const auto model = fit_learner(cfg, x, y, 1);
    const Eigen::VectorXd pred = model->predict(gaussian(5, 3, 29));
    for (int i = 0; i < 5; ++i)
      CHECK(pred[i] == doctest::Approx(7.0).epsilon(1e-9));
  }
}

TEST_CASE("cross_validate preconditions") {
  const Eigen::MatrixXd x = gaussian(10, 2, 30);
  const Eigen::VectorXd y = Eigen::VectorXd::Zero(10);
  CHECK_THROWS_AS(cross_validate(LearnerConfig::of(LearnerKind::grand_mean),
                                 x, y, 1, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(cross_validate(LearnerConfig::of(LearnerKind::grand_mean),
                                 x, y, 11, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(super_learner({}, x, y, 5, 0), std::invalid_argument);
}

}  // TEST_SUITE
