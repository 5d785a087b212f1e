#include "rebar/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rebar/rng.hpp"

namespace rebar {
namespace {

std::vector<std::vector<int>> set_members(const MatchAssignment& m) {
  std::vector<std::vector<int>> members;
  members.reserve(m.sets.size());
  for (const auto& s : m.sets) {
    std::vector<int> v = s.treated;
    v.insert(v.end(), s.controls.begin(), s.controls.end());
    members.push_back(std::move(v));
  }
  return members;
}

// Uniform reassignment within each set, fixing n_Tm.
std::vector<int> draw_reassignment(const MatchAssignment& m,
                                   const std::vector<std::vector<int>>& members,
                                   const std::vector<int>& z,
                                   std::mt19937_64& rng) {
  std::vector<int> zs = z;
  for (size_t s = 0; s < m.sets.size(); ++s) {
    const auto& mem = members[s];
    for (int i : mem) zs[i] = 0;
    const std::vector<int> chosen = sample_without_replacement(
        static_cast<int>(mem.size()), m.sets[s].n_treated(), rng);
    for (int c : chosen) zs[mem[c]] = 1;
  }
  return zs;
}

std::uint64_t binomial(std::uint64_t n, std::uint64_t k, std::uint64_t cap) {
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;
    if (r > cap) return 0;
  }
  return r;
}

}  // namespace

std::uint64_t reassignment_count(const MatchAssignment& m,
                                 std::uint64_t cap) {
  std::uint64_t total = 1;
  for (const auto& s : m.sets) {
    const std::uint64_t c = binomial(s.n_treated() + s.n_controls(),
                                     s.n_treated(), cap);
    if (c == 0) return 0;
    if (total > cap / c) return 0;
    total *= c;
  }
  return total;
}

double permutation_test(const Statistic& statistic, const Eigen::VectorXd& y,
                        const std::vector<int>& z, const MatchAssignment& m,
                        const PermutationPlan& plan) {
  m.validate(z, true);
  const auto members = set_members(m);
  const double observed = std::abs(statistic(y, z));

  if (plan.exact) {
    if (reassignment_count(m, plan.exact_cap) == 0)
      throw std::invalid_argument(
          "permutation_test: exact enumeration exceeds the configured cap");
    std::uint64_t total = 0, at_least = 0;
    std::vector<int> zs = z;
    std::vector<std::vector<char>> masks(m.sets.size());
    for (size_t s = 0; s < m.sets.size(); ++s) {
      masks[s].assign(members[s].size(), 0);
      std::fill(masks[s].begin(), masks[s].begin() + m.sets[s].n_treated(), 1);
    }
    // odometer over per-set treated subsets
    std::function<void(size_t)> visit = [&](size_t s) {
      if (s == m.sets.size()) {
        ++total;
        if (std::abs(statistic(y, zs)) >= observed) ++at_least;
        return;
      }
      auto& mask = masks[s];
      std::sort(mask.begin(), mask.end(), std::greater<char>());
      do {
        for (size_t i = 0; i < members[s].size(); ++i)
          zs[members[s][i]] = mask[i];
        visit(s + 1);
      } while (std::prev_permutation(mask.begin(), mask.end()));
    };
    visit(0);
    return static_cast<double>(at_least) / static_cast<double>(total);
  }

  if (plan.n_perms < 1)
    throw std::invalid_argument("permutation_test: n_perms must be >= 1");
  int at_least = 0;
  for (int r = 0; r < plan.n_perms; ++r) {
    // pre-assigned per-permutation stream: worker count cannot matter
    std::mt19937_64 rng = make_rng(plan.seed, static_cast<std::uint64_t>(r) + 1);
    const std::vector<int> zs = draw_reassignment(m, members, z, rng);
    if (std::abs(statistic(y, zs)) >= observed) ++at_least;
  }
  return (at_least + 1.0) / (plan.n_perms + 1.0);
}

std::pair<double, double> permutation_ci(const Statistic& statistic,
                                         const Eigen::VectorXd& y,
                                         const std::vector<int>& z,
                                         const MatchAssignment& m,
                                         const PermutationPlan& plan,
                                         double level) {
  if (level < 0.0 || level >= 1.0)
    throw std::invalid_argument("permutation_ci: level must be in [0, 1)");
  const double alpha = 1.0 - level;

  Eigen::VectorXd zv(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) zv[i] = z[i];
  const double sd_y =
      std::sqrt((y.array() - y.mean()).square().sum() / y.size());
  const double scale = sd_y > 0 ? sd_y : 1.0;

  auto p_at = [&](double tau0) {
    return permutation_test(statistic, y - tau0 * zv, z, m, plan);
  };

  const double center = statistic(y, z);
  double half = 6.0 * scale;
  std::vector<double> grid = plan.shift_grid;

  for (int expansion = 0; expansion <= 2; ++expansion) {
    if (grid.empty() || expansion > 0) {
      grid.resize(81);
      for (int i = 0; i < 81; ++i)
        grid[i] = center - half + 2.0 * half * i / 80.0;
    }
    std::vector<double> pvals(grid.size());
    int lo = -1, hi = -1;
    for (size_t i = 0; i < grid.size(); ++i) {
      pvals[i] = p_at(grid[i]);
      if (pvals[i] > alpha) {
        if (lo < 0) lo = static_cast<int>(i);
        hi = static_cast<int>(i);
      }
    }
    if (lo < 0) {
      // nothing qualifies (e.g. level = 0): degenerate interval at the
      // best-supported grid cell
      const auto it = std::max_element(pvals.begin(), pvals.end());
      const double at = grid[it - pvals.begin()];
      return {at, at};
    }
    const bool hits_edge =
        lo == 0 || hi == static_cast<int>(grid.size()) - 1;
    if (hits_edge && expansion < 2) {
      half *= 2.0;
      continue;
    }
    if (hits_edge)
      throw std::runtime_error(
          "permutation_ci: grid too narrow after two expansions");

    const double tol = 1e-3 * scale;
    auto refine = [&](double inside, double outside) {
      while (std::abs(outside - inside) > tol) {
        const double mid = 0.5 * (inside + outside);
        (p_at(mid) > alpha ? inside : outside) = mid;
      }
      return inside;
    };
    return {refine(grid[lo], grid[lo - 1]), refine(grid[hi], grid[hi + 1])};
  }
  throw std::logic_error("permutation_ci: unreachable");
}

}  // namespace rebar
