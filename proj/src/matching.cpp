#include "rebar/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>

namespace rebar {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Successive-shortest-path min-cost flow with Dijkstra on reduced costs.
// Supports negative arc costs on the initial (acyclic) network via one
// topological relaxation pass for the starting potentials.
class MinCostFlow {
 public:
  explicit MinCostFlow(int n) : adj_(n), n_(n) {}

  int add_edge(int from, int to, int cap, double cost) {
    const int id = static_cast<int>(edges_.size());
    edges_.push_back({from, to, cap, 0, cost});
    edges_.push_back({to, from, 0, 0, -cost});
    adj_[from].push_back(id);
    adj_[to].push_back(id + 1);
    return id;
  }

  const auto& edge(int id) const { return edges_[id]; }

  // Pushes flow until no augmenting path remains; returns (flow, cost).
  std::pair<int, double> solve(int source, int sink) {
    std::vector<double> pot(n_, 0.0);
    // one forward pass suffices: the network is layered s -> T -> C -> t
    for (int pass = 0; pass < 2; ++pass)
      for (size_t e = 0; e < edges_.size(); e += 2) {
        const auto& ed = edges_[e];
        if (ed.cap > 0 && pot[ed.from] + ed.cost < pot[ed.to])
          pot[ed.to] = pot[ed.from] + ed.cost;
      }

    int flow = 0;
    double cost = 0.0;
    std::vector<double> dist(n_);
    std::vector<int> prev_edge(n_);
    while (true) {
      std::fill(dist.begin(), dist.end(), kInf);
      std::fill(prev_edge.begin(), prev_edge.end(), -1);
      dist[source] = 0.0;
      using Item = std::pair<double, int>;
      std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
      pq.push({0.0, source});
      while (!pq.empty()) {
        auto [d, v] = pq.top();
        pq.pop();
        if (d > dist[v]) continue;
        for (int id : adj_[v]) {
          const auto& ed = edges_[id];
          if (ed.cap - ed.flow <= 0) continue;
          const double nd = d + ed.cost + pot[v] - pot[ed.to];
          if (nd < dist[ed.to] - 1e-15) {
            dist[ed.to] = nd;
            prev_edge[ed.to] = id;
            pq.push({nd, ed.to});
          }
        }
      }
      if (dist[sink] == kInf) break;
      for (int v = 0; v < n_; ++v)
        if (dist[v] < kInf) pot[v] += dist[v];
      int push = std::numeric_limits<int>::max();
      for (int v = sink; v != source;) {
        const auto& ed = edges_[prev_edge[v]];
        push = std::min(push, ed.cap - ed.flow);
        v = ed.from;
      }
      for (int v = sink; v != source;) {
        auto& ed = edges_[prev_edge[v]];
        ed.flow += push;
        edges_[prev_edge[v] ^ 1].flow -= push;
        cost += push * ed.cost;
        v = ed.from;
      }
      flow += push;
    }
    return {flow, cost};
  }

 private:
  struct Edge {
    int from, to, cap, flow;
    double cost;
  };
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> adj_;
  int n_;
};

std::pair<std::vector<int>, std::vector<int>> arm_indices(
    const std::vector<int>& z) {
  std::vector<int> treated, controls;
  for (size_t i = 0; i < z.size(); ++i)
    (z[i] == 1 ? treated : controls).push_back(static_cast<int>(i));
  return {treated, controls};
}

}  // namespace

MatchSpec MatchSpec::pair(std::optional<double> caliper) {
  return MatchSpec{MatchMethod::optimal_pair, 1, caliper, 5};
}

MatchSpec MatchSpec::ratio(int max_controls, std::optional<double> caliper) {
  return MatchSpec{MatchMethod::optimal_ratio, max_controls, caliper, 5};
}

MatchInfeasibleError::MatchInfeasibleError(std::vector<int> t)
    : std::runtime_error("match infeasible: " + std::to_string(t.size()) +
                         " treated unit(s) have no admissible control"),
      unmatchable(std::move(t)) {}

MatchAssignment optimal_match(const Eigen::VectorXd& logits,
                              const std::vector<int>& z,
                              const MatchSpec& spec) {
  if (spec.method != MatchMethod::optimal_pair &&
      spec.method != MatchMethod::optimal_ratio)
    throw std::invalid_argument("optimal_match: wrong method in spec");
  const int cap =
      spec.method == MatchMethod::optimal_pair ? 1 : spec.max_controls;
  if (cap < 1) throw std::invalid_argument("optimal_match: max_controls < 1");
  if (spec.method == MatchMethod::optimal_pair && spec.max_controls != 1)
    throw std::invalid_argument("optimal_match: pair requires max_controls=1");

  auto [treated, controls] = arm_indices(z);
  const int nt = static_cast<int>(treated.size());
  const int nc = static_cast<int>(controls.size());
  if (nt == 0) throw std::invalid_argument("optimal_match: no treated units");
  if (spec.method == MatchMethod::optimal_pair && nc < nt)
    throw std::invalid_argument("optimal_match: pair match needs n_C >= n_T");

  std::vector<std::vector<int>> admissible(nt);
  double total_dist = 0.0;
  std::vector<int> unmatchable;
  for (int a = 0; a < nt; ++a) {
    for (int b = 0; b < nc; ++b) {
      const double d = std::abs(logits[treated[a]] - logits[controls[b]]);
      if (!spec.caliper || d <= *spec.caliper) {
        admissible[a].push_back(b);
        total_dist += d;
      }
    }
    if (admissible[a].empty()) unmatchable.push_back(treated[a]);
  }
  if (!unmatchable.empty()) throw MatchInfeasibleError(std::move(unmatchable));

  // Layered network: source, treated, controls, sink. The first unit of
  // flow through each treated unit carries a large bonus, which makes any
  // maximum flow that covers all treated units cheaper than one that does
  // not; among covering flows the bonus is a constant, so the solver
  // minimizes total logit distance.
  const double bonus = total_dist + 1.0;
  const int source = 0, sink = nt + nc + 1;
  MinCostFlow mcf(nt + nc + 2);
  std::vector<int> first_arc(nt);
  for (int a = 0; a < nt; ++a) {
    first_arc[a] = mcf.add_edge(source, 1 + a, 1, -bonus);
    if (cap > 1) mcf.add_edge(source, 1 + a, cap - 1, 0.0);
  }
  std::vector<std::vector<std::pair<int, int>>> pair_arcs(nt);
  for (int a = 0; a < nt; ++a)
    for (int b : admissible[a]) {
      const double d = std::abs(logits[treated[a]] - logits[controls[b]]);
      pair_arcs[a].push_back({mcf.add_edge(1 + a, 1 + nt + b, 1, d), b});
    }
  for (int b = 0; b < nc; ++b) mcf.add_edge(1 + nt + b, sink, 1, 0.0);

  mcf.solve(source, sink);

  std::vector<int> uncovered;
  for (int a = 0; a < nt; ++a)
    if (mcf.edge(first_arc[a]).flow == 0) uncovered.push_back(treated[a]);
  if (!uncovered.empty()) throw MatchInfeasibleError(std::move(uncovered));

  MatchAssignment m;
  for (int a = 0; a < nt; ++a) {
    MatchedSet s;
    s.treated.push_back(treated[a]);
    for (auto [arc, b] : pair_arcs[a])
      if (mcf.edge(arc).flow > 0) s.controls.push_back(controls[b]);
    std::sort(s.controls.begin(), s.controls.end());
    m.sets.push_back(std::move(s));
  }
  finalize_remnant(m, z);
  m.validate(z, false);
  return m;
}

MatchAssignment nearest_neighbor_match(const Eigen::VectorXd& logits,
                                       const std::vector<int>& z) {
  auto [treated, controls] = arm_indices(z);
  if (controls.empty())
    throw std::invalid_argument("nearest_neighbor_match: no controls");
  MatchAssignment m;
  m.control_reuse = true;
  for (int t : treated) {
    int best = controls[0];
    double best_d = std::abs(logits[t] - logits[controls[0]]);
    for (int c : controls) {
      const double d = std::abs(logits[t] - logits[c]);
      if (d < best_d) {  // ties keep the lowest control index
        best_d = d;
        best = c;
      }
    }
    m.sets.push_back(MatchedSet{{t}, {best}});
  }
  finalize_remnant(m, z);
  m.validate(z, false);
  return m;
}

MatchAssignment coarsened_exact_match(const ObservationalDataset& ds,
                                      const std::vector<int>& covariate_cols,
                                      int bins) {
  if (bins < 2) throw std::invalid_argument("cem: bins must be >= 2");
  const int n = ds.n();
  const int k = static_cast<int>(covariate_cols.size());

  std::vector<double> lo(k), width(k);
  for (int j = 0; j < k; ++j) {
    const auto col = ds.x.col(covariate_cols[j]);
    lo[j] = col.minCoeff();
    width[j] = (col.maxCoeff() - lo[j]) / bins;
  }
  std::map<std::vector<int>, std::pair<std::vector<int>, std::vector<int>>>
      cells;
  for (int i = 0; i < n; ++i) {
    std::vector<int> sig(k);
    for (int j = 0; j < k; ++j) {
      if (width[j] <= 0) {
        sig[j] = 0;
        continue;
      }
      const int b = static_cast<int>((ds.x(i, covariate_cols[j]) - lo[j]) /
                                     width[j]);
      sig[j] = std::clamp(b, 0, bins - 1);
    }
    (ds.z[i] == 1 ? cells[sig].first : cells[sig].second).push_back(i);
  }

  MatchAssignment m;
  for (auto& [sig, arms] : cells) {
    auto& [ts, cs] = arms;
    if (!ts.empty() && !cs.empty()) {
      m.sets.push_back(MatchedSet{ts, cs});
    } else if (!ts.empty()) {
      m.dropped_treated.insert(m.dropped_treated.end(), ts.begin(), ts.end());
    }
  }
  std::sort(m.dropped_treated.begin(), m.dropped_treated.end());
  finalize_remnant(m, ds.z);
  m.validate(ds.z, true);
  return m;
}

std::pair<MatchAssignment, MatchAssignment> relax_match(
    const Eigen::VectorXd& logits, const std::vector<int>& z,
    const MatchSpec& spec, const MatchSpec& relaxed_spec) {
  const int base_cap =
      spec.method == MatchMethod::optimal_pair ? 1 : spec.max_controls;
  const int relaxed_cap = relaxed_spec.method == MatchMethod::optimal_pair
                              ? 1
                              : relaxed_spec.max_controls;
  if (relaxed_cap < base_cap)
    throw std::invalid_argument("relax_match: relaxed cap below base cap");
  if (relaxed_spec.caliper &&
      (!spec.caliper || *relaxed_spec.caliper < *spec.caliper))
    throw std::invalid_argument("relax_match: relaxed caliper is tighter");
  return {optimal_match(logits, z, spec),
          optimal_match(logits, z, relaxed_spec)};
}

double effective_sample_size(const MatchAssignment& m) {
  double total = 0.0;
  for (const auto& s : m.sets) {
    const double a = s.n_treated(), b = s.n_controls();
    total += 2.0 / (1.0 / a + 1.0 / b);
  }
  return total;
}

}  // namespace rebar
