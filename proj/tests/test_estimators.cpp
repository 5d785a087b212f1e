#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "rebar/estimators.hpp"

using namespace rebar;

namespace {

MatchAssignment pairs_match(int n_pairs) {
  MatchAssignment m;
  for (int i = 0; i < n_pairs; ++i)
    m.sets.push_back({{2 * i}, {2 * i + 1}});
  return m;
}

std::vector<int> pairs_z(int n_pairs) {
  std::vector<int> z(2 * n_pairs, 0);
  for (int i = 0; i < n_pairs; ++i) z[2 * i] = 1;
  return z;
}

PredictionSource clean_source(const Eigen::VectorXd& yhat) {
  return PredictionSource{yhat, {}};
}

// random sets, outcomes, and predictions over n units
struct RandomInstance {
  Eigen::VectorXd y, yhat;
  std::vector<int> z;
  MatchAssignment m;
};

RandomInstance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_sets_d(1, 4), nt_d(1, 2), nc_d(1, 3);
  std::normal_distribution<double> g(0.0, 2.0);
  RandomInstance inst;
  int next = 0;
  const int n_sets = n_sets_d(rng);
  for (int s = 0; s < n_sets; ++s) {
    MatchedSet set;
    const int nt = nt_d(rng), nc = nc_d(rng);
    for (int i = 0; i < nt; ++i) set.treated.push_back(next++);
    for (int i = 0; i < nc; ++i) set.controls.push_back(next++);
    inst.m.sets.push_back(std::move(set));
  }
  inst.y.resize(next);
  inst.yhat.resize(next);
  inst.z.assign(next, 0);
  for (int i = 0; i < next; ++i) {
    inst.y[i] = g(rng);
    inst.yhat[i] = g(rng);
  }
  for (const auto& s : inst.m.sets)
    for (int i : s.treated) inst.z[i] = 1;
  return inst;
}

}  // namespace

TEST_SUITE("estimators") {

TEST_CASE("matching estimator arithmetic") {
  // two pairs with gaps 2 and 0
  Eigen::VectorXd y(4);
  y << 3, 1, 5, 5;
  CHECK(matching_estimator(y, pairs_z(2), pairs_match(2)) ==
        doctest::Approx(1.0).epsilon(1e-15));

  // one set: treated 5, controls {1, 3}
  MatchAssignment m;
  m.sets.push_back({{0}, {1, 2}});
  Eigen::VectorXd y2(3);
  y2 << 5, 1, 3;
  CHECK(matching_estimator(y2, {1, 0, 0}, m) == doctest::Approx(3.0));

  // constant outcome -> exactly zero
  const Eigen::VectorXd y3 = Eigen::VectorXd::Constant(4, 2.5);
  CHECK(matching_estimator(y3, pairs_z(2), pairs_match(2)) == 0.0);

  CHECK_THROWS_AS(matching_estimator(y, pairs_z(2), MatchAssignment{}),
                  std::invalid_argument);
}

TEST_CASE("rebar equals matching when yhat is zero") {
  Eigen::VectorXd y(4);
  y << 4, 2, 1, 0;
  const auto z = pairs_z(2);
  const auto m = pairs_match(2);
  const double tau =
      rebar_estimator(y, z, m, clean_source(Eigen::VectorXd::Zero(4)));
  CHECK(tau == matching_estimator(y, z, m));
}

TEST_CASE("rebar pairs example") {
  // (Y_T=4, yhat=3), (Y_C=2, yhat=2): e_T=1, e_C=0
  Eigen::VectorXd y(2), yhat(2);
  y << 4, 2;
  yhat << 3, 2;
  CHECK(rebar_estimator(y, pairs_z(1), pairs_match(1), clean_source(yhat)) ==
        doctest::Approx(1.0));
}

TEST_CASE("rebar decomposition on random instances") {
  std::mt19937_64 rng(71);
  for (int rep = 0; rep < 200; ++rep) {
    const RandomInstance inst = random_instance(rng);
    const double tau =
        rebar_estimator(inst.y, inst.z, inst.m, clean_source(inst.yhat));
    const double two_pass = matching_estimator(inst.y, inst.z, inst.m) -
                            matching_estimator(inst.yhat, inst.z, inst.m);
    CHECK(std::abs(tau - two_pass) < 1e-10);
  }
}

TEST_CASE("leakage guard fires on matched training rows") {
  const auto m = pairs_match(2);
  Eigen::VectorXd y(4), yhat(4);
  y << 1, 2, 3, 4;
  yhat.setZero();
  PredictionSource poisoned{yhat, {1, 7}};  // unit 1 is matched
  CHECK_THROWS_AS(rebar_estimator(y, pairs_z(2), m, poisoned), LeakageError);
  PredictionSource fine{yhat, {7, 9}};
  CHECK_NOTHROW(rebar_estimator(y, pairs_z(2), m, fine));
}

TEST_CASE("nn att without adjustment equals the pair matching estimator") {
  std::mt19937_64 rng(72);
  std::normal_distribution<double> g(0.0, 1.0);
  const int n_pairs = 6;
  Eigen::VectorXd y(2 * n_pairs);
  for (int i = 0; i < y.size(); ++i) y[i] = g(rng);
  const auto m = pairs_match(n_pairs);
  const auto z = pairs_z(n_pairs);
  const ObservationalDataset ds =
      make_dataset(Eigen::MatrixXd::Zero(2 * n_pairs, 1), z, y);
  CHECK(nn_att_estimator(y, z, m, ds, {}) ==
        doctest::Approx(matching_estimator(y, z, m)).epsilon(1e-12));
}

TEST_CASE("adjusted nn att is exact under a linear outcome and zero effect") {
  std::mt19937_64 rng(73);
  std::normal_distribution<double> g(0.0, 1.0);
  const int n = 30;
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  std::vector<int> z(n, 0);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = g(rng);
    x(i, 1) = g(rng);
    y[i] = 2.0 + 1.5 * x(i, 0) - 0.5 * x(i, 1);  // exactly linear, no effect
    z[i] = i < 6 ? 1 : 0;
  }
  const ObservationalDataset ds = make_dataset(x, z, y);
  MatchAssignment m;
  m.control_reuse = true;
  for (int i = 0; i < 6; ++i) m.sets.push_back({{i}, {6 + i, 12 + i}});
  NnAttOptions options;
  options.adjust = true;
  options.covariate_cols = {0, 1};
  CHECK(std::abs(nn_att_estimator(y, z, m, ds, options)) < 1e-8);
}

TEST_CASE("shared control counts per its multiplicity") {
  // treated 0 and 1 share control 2; treated 1 also has control 3
  Eigen::VectorXd y(4);
  y << 5.0, 4.0, 1.0, 3.0;
  std::vector<int> z{1, 1, 0, 0};
  MatchAssignment m;
  m.control_reuse = true;
  m.sets.push_back({{0}, {2}});
  m.sets.push_back({{1}, {2, 3}});
  const ObservationalDataset ds =
      make_dataset(Eigen::MatrixXd::Zero(4, 1), z, y);
  // hand: (5 - 1) and (4 - mean(1, 3)) -> mean(4, 2) = 3
  CHECK(nn_att_estimator(y, z, m, ds, {}) == doctest::Approx(3.0));
}

TEST_CASE("regression estimator nests the matching estimator") {
  std::mt19937_64 rng(74);
  for (int rep = 0; rep < 30; ++rep) {
    const RandomInstance inst = random_instance(rng);
    const ObservationalDataset ds = make_dataset(
        Eigen::MatrixXd::Zero(inst.y.size(), 1), inst.z, inst.y);
    const RegressionEstimate est =
        regression_estimator(inst.y, inst.z, inst.m, ds, {});
    CHECK(est.coefficient ==
          doctest::Approx(matching_estimator(inst.y, inst.z, inst.m))
              .epsilon(1e-9));
  }
}

TEST_CASE("duplicating every set preserves the point and shrinks HC3") {
  std::mt19937_64 rng(75);
  std::normal_distribution<double> g(0.0, 1.0);
  const int n_pairs = 8;
  const int n = 2 * n_pairs;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = g(rng);
    y[i] = g(rng);
  }
  const auto z = pairs_z(n_pairs);
  const auto m = pairs_match(n_pairs);
  const ObservationalDataset ds = make_dataset(x, z, y);
  const RegressionEstimate base = regression_estimator(y, z, m, ds, {0});

  // duplicated data: everything twice
  Eigen::MatrixXd x2(2 * n, 1);
  Eigen::VectorXd y2(2 * n);
  std::vector<int> z2(2 * n);
  for (int i = 0; i < n; ++i) {
    x2(i, 0) = x2(i + n, 0) = x(i, 0);
    y2[i] = y2[i + n] = y[i];
    z2[i] = z2[i + n] = z[i];
  }
  MatchAssignment m2;
  for (int i = 0; i < n_pairs; ++i) {
    m2.sets.push_back({{2 * i}, {2 * i + 1}});
    m2.sets.push_back({{n + 2 * i}, {n + 2 * i + 1}});
  }
  const ObservationalDataset ds2 = make_dataset(x2, z2, y2);
  const RegressionEstimate twice = regression_estimator(y2, z2, m2, ds2, {0});
  CHECK(twice.coefficient == doctest::Approx(base.coefficient).epsilon(1e-9));
  CHECK(twice.hc3_se < base.hc3_se);
}

TEST_CASE("zero-residual exact fit has zero HC3 standard error") {
  const int n_pairs = 5;
  const int n = 2 * n_pairs;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd y(n);
  const auto z = pairs_z(n_pairs);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 0.25 * i;
    y[i] = 2.0 * x(i, 0) + 3.0 * z[i] + 1.0;  // exact fit, zero residuals
  }
  const ObservationalDataset ds = make_dataset(x, z, y);
  const RegressionEstimate est =
      regression_estimator(y, z, pairs_match(n_pairs), ds, {0});
  CHECK(est.coefficient == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(est.hc3_se < 1e-8);
}

TEST_CASE("rank-deficient design falls back to ridge with a flag") {
  const int n_pairs = 4;
  const int n = 2 * n_pairs;
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  const auto z = pairs_z(n_pairs);
  std::mt19937_64 rng(76);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = g(rng);
    x(i, 1) = 2.0 * x(i, 0);  // collinear
    y[i] = g(rng);
  }
  const ObservationalDataset ds = make_dataset(x, z, y);
  const RegressionEstimate est =
      regression_estimator(y, z, pairs_match(n_pairs), ds, {0, 1});
  CHECK(est.ridge_fallback);
  CHECK(std::isfinite(est.coefficient));
}

TEST_CASE("all estimators are shift equivariant") {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 20; ++rep) {
    const RandomInstance inst = random_instance(rng);
    const ObservationalDataset ds = make_dataset(
        Eigen::MatrixXd::Zero(inst.y.size(), 1), inst.z, inst.y);
    const double c = 64.0;
    const Eigen::VectorXd shifted = inst.y.array() + c;
    CHECK(matching_estimator(shifted, inst.z, inst.m) ==
          doctest::Approx(matching_estimator(inst.y, inst.z, inst.m))
              .epsilon(1e-12));
    CHECK(regression_estimator(shifted, inst.z, inst.m, ds, {}).coefficient ==
          doctest::Approx(
              regression_estimator(inst.y, inst.z, inst.m, ds, {}).coefficient)
              .epsilon(1e-9));
  }
}

TEST_CASE("effect recovered exactly when pairs share y_C") {
  std::mt19937_64 rng(78);
  std::normal_distribution<double> g(0.0, 3.0);
  const int n_pairs = 10;
  const double tau = 1.75;
  Eigen::VectorXd y(2 * n_pairs), yhat(2 * n_pairs);
  for (int i = 0; i < n_pairs; ++i) {
    const double yc = g(rng);
    y[2 * i] = yc + tau;
    y[2 * i + 1] = yc;
    yhat[2 * i] = g(rng);
    yhat[2 * i + 1] = yhat[2 * i];  // equal within pair
  }
  const auto z = pairs_z(n_pairs);
  const auto m = pairs_match(n_pairs);
  CHECK(matching_estimator(y, z, m) == doctest::Approx(tau).epsilon(1e-12));
  CHECK(rebar_estimator(y, z, m, clean_source(yhat)) ==
        doctest::Approx(tau).epsilon(1e-12));
}

TEST_CASE("rebar adds no bias under equal within-set probabilities") {
  // fixed design {1:1, 1:2, 2:2}, exhaustive enumeration
  oracles::EnumeratedDesign d;
  std::mt19937_64 rng(79);
  d = oracles::random_design({{1, 1}, {1, 2}, {2, 2}}, false, rng);
  std::normal_distribution<double> g(0.0, 2.0);
  Eigen::VectorXd y_c(d.n_units), tau(d.n_units), yhat(d.n_units);
  for (int i = 0; i < d.n_units; ++i) {
    y_c[i] = g(rng);
    tau[i] = g(rng);
    yhat[i] = g(rng);
  }
  const MatchAssignment m = d.as_match();
  const PredictionSource source{yhat, {}};

  const double mean_rebar = d.expectation([&](const std::vector<int>& z) {
    Eigen::VectorXd y(d.n_units);
    for (int i = 0; i < d.n_units; ++i)
      y[i] = y_c[i] + (z[i] == 1 ? tau[i] : 0.0);
    return rebar_estimator(y, z, m, source);
  });
  const double ett = oracles::enumerated_ett(d, tau);
  CHECK(std::abs(mean_rebar - ett) < 1e-12);
}

TEST_CASE("matching-estimator bias matches the closed form") {
  std::mt19937_64 rng(80);
  std::normal_distribution<double> g(0.0, 1.5);
  for (int rep = 0; rep < 10; ++rep) {
    const oracles::EnumeratedDesign d =
        oracles::random_design({{1, 2}, {2, 1}, {1, 1}}, true, rng);
    Eigen::VectorXd y_c(d.n_units);
    for (int i = 0; i < d.n_units; ++i) y_c[i] = g(rng);
    const MatchAssignment m = d.as_match();
    const double mean_est = d.expectation([&](const std::vector<int>& z) {
      return matching_estimator(y_c, z, m);  // tau = 0
    });
    CHECK(std::abs(mean_est - oracles::closed_form_bias(d, y_c)) < 1e-12);
  }
}

}  // TEST_SUITE
