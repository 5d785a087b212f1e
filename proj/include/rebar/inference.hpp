#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "rebar/dataset.hpp"

namespace rebar {

// Recomputed under within-set treatment reassignments; the match itself is
// held fixed and must be captured by the closure.
using Statistic =
    std::function<double(const Eigen::VectorXd& y, const std::vector<int>& z)>;

struct PermutationPlan {
  int n_perms = 999;
  bool exact = false;  // enumerate all within-set reassignments
  std::uint64_t seed = 0;
  std::vector<double> shift_grid;  // CI inversion grid; empty -> automatic
  std::uint64_t exact_cap = 1000000;
};

// Two-sided Monte-Carlo p-value (#{|T*| >= |T|} + 1) / (n_perms + 1) under
// uniform within-set reassignment fixing every n_Tm. EXACT mode enumerates
// all assignments and omits the add-one correction.
double permutation_test(const Statistic& statistic, const Eigen::VectorXd& y,
                        const std::vector<int>& z, const MatchAssignment& m,
                        const PermutationPlan& plan);

// Test inversion under the constant-additive-effect model: the interval is
// {tau0 : p(tau0) > 1 - level} with p from permutation_test applied to
// Y - tau0 * Z, endpoints refined by bisection.
std::pair<double, double> permutation_ci(const Statistic& statistic,
                                         const Eigen::VectorXd& y,
                                         const std::vector<int>& z,
                                         const MatchAssignment& m,
                                         const PermutationPlan& plan,
                                         double level);

// Number of distinct within-set reassignments (capped; 0 means overflow).
std::uint64_t reassignment_count(const MatchAssignment& m,
                                 std::uint64_t cap);

}  // namespace rebar
