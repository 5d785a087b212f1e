#include <doctest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "rebar/matching.hpp"

using namespace rebar;

namespace {

// logits laid out as treated first, then controls
std::pair<Eigen::VectorXd, std::vector<int>> instance(
    const std::vector<double>& treated, const std::vector<double>& controls) {
  Eigen::VectorXd logits(treated.size() + controls.size());
  std::vector<int> z(logits.size(), 0);
  for (size_t i = 0; i < treated.size(); ++i) {
    logits[i] = treated[i];
    z[i] = 1;
  }
  for (size_t j = 0; j < controls.size(); ++j)
    logits[treated.size() + j] = controls[j];
  return {logits, z};
}

double total_distance(const Eigen::VectorXd& logits,
                      const MatchAssignment& m) {
  double d = 0.0;
  for (const auto& s : m.sets)
    for (int c : s.controls) d += std::abs(logits[s.treated[0]] - logits[c]);
  return d;
}

}  // namespace

TEST_SUITE("matching") {

TEST_CASE("pair match with a unique optimum") {
  auto [logits, z] = instance({0.1, 0.9}, {0.2, 0.8});
  const MatchAssignment m = optimal_match(logits, z, MatchSpec::pair());
  REQUIRE(m.sets.size() == 2);
  CHECK(total_distance(logits, m) == doctest::Approx(0.2).epsilon(1e-12));
  // 0.1 <-> 0.2 and 0.9 <-> 0.8
  for (const auto& s : m.sets) {
    if (s.treated[0] == 0) CHECK(s.controls[0] == 2);
    if (s.treated[0] == 1) CHECK(s.controls[0] == 3);
  }
}

TEST_CASE("pair match beats the greedy alternative") {
  // both complete assignments: 0.6 vs 0.8
  auto [logits, z] = instance({0.3, 0.5}, {0.4, 1.0});
  const MatchAssignment m = optimal_match(logits, z, MatchSpec::pair());
  CHECK(total_distance(logits, m) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("pair match equals brute force on random instances") {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int rep = 0; rep < 40; ++rep) {
    const int nt = 2 + int(rng() % 4), nc = nt + int(rng() % 4);
    Eigen::VectorXd tl(nt), cl(nc);
    for (int i = 0; i < nt; ++i) tl[i] = u(rng);
    for (int j = 0; j < nc; ++j) cl[j] = u(rng);
    std::vector<double> tv(tl.data(), tl.data() + nt),
        cv(cl.data(), cl.data() + nc);
    auto [logits, z] = instance(tv, cv);
    const MatchAssignment m = optimal_match(logits, z, MatchSpec::pair());
    const auto oracle = oracles::brute_force_optimal(tl, cl, 1, 1e18);
    REQUIRE(oracle.feasible);
    CHECK(total_distance(logits, m) ==
          doctest::Approx(oracle.best_distance).epsilon(1e-9));
  }
}

TEST_CASE("variable-ratio match equals brute force on small instances") {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int rep = 0; rep < 25; ++rep) {
    const int nt = 1 + int(rng() % 2), nc = 2 + int(rng() % 4);
    const int cap = 2 + int(rng() % 2);
    Eigen::VectorXd tl(nt), cl(nc);
    for (int i = 0; i < nt; ++i) tl[i] = u(rng);
    for (int j = 0; j < nc; ++j) cl[j] = u(rng);
    std::vector<double> tv(tl.data(), tl.data() + nt),
        cv(cl.data(), cl.data() + nc);
    auto [logits, z] = instance(tv, cv);
    const MatchAssignment m = optimal_match(logits, z, MatchSpec::ratio(cap));
    const auto oracle = oracles::brute_force_optimal(tl, cl, cap, 1e18);
    REQUIRE(oracle.feasible);
    int matched = 0;
    for (const auto& s : m.sets) matched += s.n_controls();
    CHECK(matched == oracle.max_matched);
    CHECK(total_distance(logits, m) ==
          doctest::Approx(oracle.best_distance).epsilon(1e-9));
  }
}

TEST_CASE("caliper restricts matches and reports infeasibility") {
  auto [logits, z] = instance({0.0, 5.0}, {0.1, 0.2, 0.3});
  MatchSpec spec = MatchSpec::pair(0.5);
  try {
    optimal_match(logits, z, spec);
    FAIL("expected MatchInfeasibleError");
  } catch (const MatchInfeasibleError& e) {
    REQUIRE(e.unmatchable.size() == 1);
    CHECK(e.unmatchable[0] == 1);  // the treated unit at 5.0
  }

  auto [logits2, z2] = instance({0.0, 0.6}, {0.1, 0.5, 3.0});
  const MatchAssignment m = optimal_match(logits2, z2, MatchSpec::pair(0.45));
  for (const auto& s : m.sets)
    for (int c : s.controls)
      CHECK(std::abs(logits2[s.treated[0]] - logits2[c]) <= 0.45);
}

TEST_CASE("optimal objective never exceeds greedy") {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int rep = 0; rep < 20; ++rep) {
    const int nt = 3 + int(rng() % 3), nc = nt + 1 + int(rng() % 4);
    std::vector<double> tv(nt), cv(nc);
    for (auto& v : tv) v = u(rng);
    for (auto& v : cv) v = u(rng);
    auto [logits, z] = instance(tv, cv);
    const MatchAssignment m = optimal_match(logits, z, MatchSpec::pair());

    // greedy: treated in index order take their closest unused control
    std::set<int> used;
    double greedy = 0.0;
    for (int t = 0; t < nt; ++t) {
      int best = -1;
      double bd = 1e18;
      for (int c = 0; c < nc; ++c) {
        if (used.count(c)) continue;
        const double d = std::abs(tv[t] - cv[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      used.insert(best);
      greedy += bd;
    }
    CHECK(total_distance(logits, m) <= greedy + 1e-9);
  }
}

TEST_CASE("optimal match never reuses controls; nearest neighbour may") {
  auto [logits, z] = instance({0.1, 0.2}, {0.15, 5.0});
  const MatchAssignment nn = nearest_neighbor_match(logits, z);
  REQUIRE(nn.sets.size() == 2);
  CHECK(nn.sets[0].controls[0] == 2);
  CHECK(nn.sets[1].controls[0] == 2);  // shared nearest control
  CHECK(nn.control_reuse);
  CHECK(nn.remnant == std::vector<int>{3});

  const MatchAssignment opt = optimal_match(logits, z, MatchSpec::pair());
  std::set<int> seen;
  for (const auto& s : opt.sets)
    for (int c : s.controls) {
      CHECK(!seen.count(c));
      seen.insert(c);
    }
}

TEST_CASE("nearest neighbour basics and scan oracle") {
  auto [logits, z] = instance({0.5}, {0.4, 0.7});
  const MatchAssignment m = nearest_neighbor_match(logits, z);
  CHECK(m.sets[0].controls[0] == 1);  // 0.4

  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    const int nt = 1 + int(rng() % 4), nc = 1 + int(rng() % 6);
    std::vector<double> tv(nt), cv(nc);
    for (auto& v : tv) v = u(rng);
    for (auto& v : cv) v = u(rng);
    auto [lg, zz] = instance(tv, cv);
    const MatchAssignment nn = nearest_neighbor_match(lg, zz);
    for (const auto& s : nn.sets) {
      const int t = s.treated[0];
      double best = 1e18;
      int best_c = -1;
      for (int c = 0; c < nc; ++c) {
        const double d = std::abs(lg[t] - lg[nt + c]);
        if (d < best) {
          best = d;
          best_c = nt + c;
        }
      }
      CHECK(s.controls[0] == best_c);
    }
  }
}

TEST_CASE("coarsened exact matching") {
  Eigen::MatrixXd x(3, 1);
  x << 0.1, 0.15, 0.9;
  const std::vector<int> z{1, 0, 0};
  const ObservationalDataset ds = make_dataset(x, z, Eigen::VectorXd::Zero(3));
  const MatchAssignment m = coarsened_exact_match(ds, {0}, 2);
  REQUIRE(m.sets.size() == 1);
  CHECK(m.sets[0].treated == std::vector<int>{0});
  CHECK(m.sets[0].controls == std::vector<int>{1});
  CHECK(m.remnant == std::vector<int>{2});

  // identical covariates for everyone -> one big set
  Eigen::MatrixXd same = Eigen::MatrixXd::Constant(5, 2, 1.0);
  const std::vector<int> z2{1, 1, 0, 0, 0};
  const ObservationalDataset ds2 =
      make_dataset(same, z2, Eigen::VectorXd::Zero(5));
  const MatchAssignment m2 = coarsened_exact_match(ds2, {0, 1}, 5);
  REQUIRE(m2.sets.size() == 1);
  CHECK(m2.sets[0].n_treated() == 2);
  CHECK(m2.sets[0].n_controls() == 3);

  CHECK_THROWS_AS(coarsened_exact_match(ds, {0}, 1), std::invalid_argument);
}

TEST_CASE("cem drops treated units in treated-only cells") {
  Eigen::MatrixXd x(4, 1);
  x << 0.0, 0.1, 0.9, 1.0;  // bins=2: {0, 0.1} low, {0.9, 1.0} high
  const std::vector<int> z{1, 0, 1, 1};
  const ObservationalDataset ds = make_dataset(x, z, Eigen::VectorXd::Zero(4));
  const MatchAssignment m = coarsened_exact_match(ds, {0}, 2);
  REQUIRE(m.sets.size() == 1);
  CHECK(m.dropped_treated == std::vector<int>{2, 3});
}

TEST_CASE("relax_match splits the remnant") {
  // base = identical relaxation -> empty proximal set
  auto [logits, z] = instance({0.0, 1.0}, {0.1, 0.9, 2.0, 3.0});
  auto [base, big] =
      relax_match(logits, z, MatchSpec::pair(), MatchSpec::ratio(1));
  std::set<int> base_matched, big_matched;
  for (const auto& s : base.sets)
    base_matched.insert(s.controls.begin(), s.controls.end());
  for (const auto& s : big.sets)
    big_matched.insert(s.controls.begin(), s.controls.end());
  CHECK(base_matched == big_matched);

  // known caliper geometry: caliper 0.15 matches only the two nearest
  // controls; the relaxed caliper 1.5 additionally reaches 2.0
  auto [lg, zz] = instance({0.0, 1.0}, {0.1, 0.9, 2.0, 9.0});
  auto [m0, m1] =
      relax_match(lg, zz, MatchSpec::pair(0.15), MatchSpec::ratio(2, 1.5));
  std::set<int> matched0, matched1;
  for (const auto& s : m0.sets)
    matched0.insert(s.controls.begin(), s.controls.end());
  for (const auto& s : m1.sets)
    matched1.insert(s.controls.begin(), s.controls.end());
  CHECK(matched0 == std::set<int>{2, 3});
  CHECK(matched1 == std::set<int>{2, 3, 4});  // proximal = {2.0}; 9.0 distal

  CHECK_THROWS_AS(
      relax_match(lg, zz, MatchSpec::ratio(4), MatchSpec::ratio(2)),
      std::invalid_argument);
  CHECK_THROWS_AS(
      relax_match(lg, zz, MatchSpec::pair(0.5), MatchSpec::ratio(2, 0.2)),
      std::invalid_argument);
}

TEST_CASE("relaxation monotonicity on random instances") {
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int rep = 0; rep < 25; ++rep) {
    const int nt = 2 + int(rng() % 2), nc = 6 + int(rng() % 5);
    std::vector<double> tv(nt), cv(nc);
    for (auto& v : tv) v = u(rng);
    for (auto& v : cv) v = u(rng);
    auto [logits, z] = instance(tv, cv);
    auto [base, big] =
        relax_match(logits, z, MatchSpec::pair(), MatchSpec::ratio(2));
    std::set<int> base_matched;
    for (const auto& s : base.sets)
      base_matched.insert(s.controls.begin(), s.controls.end());
    std::set<int> big_matched;
    for (const auto& s : big.sets)
      big_matched.insert(s.controls.begin(), s.controls.end());
    for (int c : base_matched) CHECK(big_matched.count(c) == 1);
  }
}

TEST_CASE("effective sample size") {
  MatchAssignment m;
  m.sets.push_back({{0}, {1, 2, 3, 4}});
  CHECK(effective_sample_size(m) == doctest::Approx(1.6).epsilon(1e-12));

  MatchAssignment pairs;
  pairs.sets.push_back({{0}, {1}});
  CHECK(effective_sample_size(pairs) == doctest::Approx(1.0));

  MatchAssignment both;
  both.sets.push_back({{0}, {1}});
  both.sets.push_back({{2}, {3, 4, 5, 6}});
  CHECK(effective_sample_size(both) == doctest::Approx(2.6).epsilon(1e-12));
}

TEST_CASE("pair match needs enough controls") {
  auto [logits, z] = instance({0.0, 1.0, 2.0}, {0.5});
  CHECK_THROWS_AS(optimal_match(logits, z, MatchSpec::pair()),
                  std::invalid_argument);
}

}  // TEST_SUITE
