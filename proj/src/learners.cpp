#include "rebar/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rebar/rng.hpp"

namespace rebar {
namespace {

double population_variance(const Eigen::VectorXd& y) {
  if (y.size() == 0) return 0.0;
  const double m = y.mean();
  return (y.array() - m).square().sum() / y.size();
}

double soft_threshold(double x, double lambda) {
  if (x > lambda) return x - lambda;
  if (x < -lambda) return x + lambda;
  return 0.0;
}

struct Standardizer {
  Eigen::VectorXd mean, scale;  // scale 1 for constant columns

  static Standardizer fit(const Eigen::MatrixXd& x, bool standardize) {
    Standardizer s;
    const int p = static_cast<int>(x.cols());
    s.mean = Eigen::VectorXd::Zero(p);
    s.scale = Eigen::VectorXd::Ones(p);
    if (!standardize) return s;
    for (int j = 0; j < p; ++j) {
      s.mean[j] = x.col(j).mean();
      const double sd = std::sqrt(
          (x.col(j).array() - s.mean[j]).square().sum() / x.rows());
      s.scale[j] = sd > 0 ? sd : 1.0;
    }
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd out = x;
    for (int j = 0; j < x.cols(); ++j)
      out.col(j) = (x.col(j).array() - mean[j]) / scale[j];
    return out;
  }
};

class GrandMeanModel final : public FittedLearner {
 public:
  explicit GrandMeanModel(double mean) : mean_(mean) {}
  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>&) const
      override {
    return mean_;
  }

 private:
  double mean_;
};

// Linear model stored against the standardized fit frame.
class LinearModel final : public FittedLearner {
 public:
  LinearModel(Standardizer st, double intercept, Eigen::VectorXd beta)
      : st_(std::move(st)), intercept_(intercept), beta_(std::move(beta)) {}

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const
      override {
    double out = intercept_;
    for (int j = 0; j < beta_.size(); ++j)
      out += beta_[j] * (x[j] - st_.mean[j]) / st_.scale[j];
    return out;
  }

  const Eigen::VectorXd& beta() const { return beta_; }

 private:
  Standardizer st_;
  double intercept_;
  Eigen::VectorXd beta_;
};

// ---------------------------------------------------------------------------
// ridge / bayes_lm

// Solves min (1/2n)||yc - Xs b||^2 + (lambda/2)||b||^2 for every lambda at
// once through one thin SVD.
Eigen::MatrixXd ridge_path(const Eigen::MatrixXd& xs,
                           const Eigen::VectorXd& yc,
                           const std::vector<double>& lambdas) {
  const int n = static_cast<int>(xs.rows());
  Eigen::BDCSVD<Eigen::MatrixXd> svd(xs,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  const Eigen::VectorXd uty = svd.matrixU().transpose() * yc;
  Eigen::MatrixXd betas(xs.cols(), lambdas.size());
  for (size_t l = 0; l < lambdas.size(); ++l) {
    Eigen::VectorXd g(s.size());
    for (int i = 0; i < s.size(); ++i) {
      const double d = s[i] * s[i] / n + lambdas[l];
      g[i] = d > 0 ? (s[i] / n) * uty[i] / d : 0.0;
    }
    betas.col(l) = svd.matrixV() * g;
  }
  return betas;
}

std::vector<double> ridge_grid(double anchor) {
  std::vector<double> grid;
  if (anchor <= 0) anchor = 1.0;
  for (int i = 0; i < 30; ++i)
    grid.push_back(anchor * std::pow(10.0, 1.0 - 9.0 * i / 29.0));
  return grid;  // descending
}

// ---------------------------------------------------------------------------
// lasso

// Coordinate descent over a descending lambda path with warm starts and
// active-set sweeps. Columns of xs are centered; col_sq = x_j'x_j / n.
Eigen::MatrixXd lasso_path(const Eigen::MatrixXd& xs,
                           const Eigen::VectorXd& yc,
                           const std::vector<double>& lambdas, double tol) {
  const int n = static_cast<int>(xs.rows());
  const int p = static_cast<int>(xs.cols());
  Eigen::VectorXd col_sq(p);
  for (int j = 0; j < p; ++j) col_sq[j] = xs.col(j).squaredNorm() / n;

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd r = yc;
  Eigen::MatrixXd path(p, lambdas.size());
  std::vector<char> active(p, 0);

  auto sweep = [&](double lambda, bool full) {
    double max_delta = 0.0;
    for (int j = 0; j < p; ++j) {
      if (!full && !active[j]) continue;
      if (col_sq[j] <= 0) continue;
      const double rho = xs.col(j).dot(r) / n + col_sq[j] * beta[j];
      const double bj = soft_threshold(rho, lambda) / col_sq[j];
      const double delta = bj - beta[j];
      if (delta != 0.0) {
        r -= delta * xs.col(j);
        beta[j] = bj;
        max_delta = std::max(max_delta, std::abs(delta));
      }
      active[j] = beta[j] != 0.0;
    }
    return max_delta;
  };

  for (size_t l = 0; l < lambdas.size(); ++l) {
    const double lambda = lambdas[l];
    for (int outer = 0; outer < 100; ++outer) {
      const double full_delta = sweep(lambda, /*full=*/true);
      for (int it = 0; it < 1000; ++it)
        if (sweep(lambda, /*full=*/false) <= tol) break;
      if (full_delta <= tol) break;
    }
    path.col(l) = beta;
  }
  return path;
}

std::vector<double> lasso_grid(double lambda_max, int points) {
  std::vector<double> grid;
  if (lambda_max <= 0) return {0.0};
  const double lo = lambda_max * 1e-4;
  for (int i = 0; i < points; ++i)
    grid.push_back(lambda_max *
                   std::pow(lo / lambda_max, double(i) / (points - 1)));
  return grid;  // descending from lambda_max
}

// Picks the penalty index minimizing pooled CV error; ties prefer the
// stronger penalty (lower index: both grids descend).
int pick_lambda(const Eigen::MatrixXd& cv_sse) {
  int best = 0;
  for (int l = 1; l < cv_sse.cols(); ++l)
    if (cv_sse.col(l).sum() < cv_sse.col(best).sum()) best = l;
  return best;
}

enum class PenalizedKind { ridge, lasso };

FittedLearnerPtr fit_penalized(PenalizedKind kind, const LearnerConfig& config,
                               const Eigen::MatrixXd& x,
                               const Eigen::VectorXd& y, std::uint64_t seed) {
  const int n = static_cast<int>(x.rows());
  const Standardizer st = Standardizer::fit(x, config.standardize);
  const Eigen::MatrixXd xs = st.apply(x);
  const double ybar = y.mean();
  const Eigen::VectorXd yc = y.array() - ybar;

  const double anchor = n > 0 ? (xs.transpose() * yc).cwiseAbs().maxCoeff() / n
                              : 0.0;
  const double tol = 1e-7 * (std::sqrt(population_variance(y)) + 1e-12);

  auto path_for = [&](const Eigen::MatrixXd& xs_f, const Eigen::VectorXd& yc_f,
                      const std::vector<double>& grid) {
    return kind == PenalizedKind::lasso ? lasso_path(xs_f, yc_f, grid, tol)
                                        : ridge_path(xs_f, yc_f, grid);
  };

  double chosen;
  if (config.penalty) {
    chosen = *config.penalty;
  } else {
    const std::vector<double> grid =
        kind == PenalizedKind::lasso ? lasso_grid(anchor, config.path_points)
                                     : ridge_grid(anchor);
    const int k = std::min(config.tune_folds, n);
    if (k >= 2 && grid.size() > 1) {
      const std::vector<int> fold = make_folds(n, k, mix_seed(seed) + 17);
      Eigen::MatrixXd cv_sse =
          Eigen::MatrixXd::Zero(k, static_cast<int>(grid.size()));
      for (int f = 0; f < k; ++f) {
        std::vector<int> tr, te;
        for (int i = 0; i < n; ++i) (fold[i] == f ? te : tr).push_back(i);
        if (tr.empty() || te.empty()) continue;
        Eigen::MatrixXd xtr(tr.size(), x.cols());
        Eigen::VectorXd ytr(tr.size());
        for (size_t i = 0; i < tr.size(); ++i) {
          xtr.row(i) = x.row(tr[i]);
          ytr[i] = y[tr[i]];
        }
        const Standardizer st_f = Standardizer::fit(xtr, config.standardize);
        const double ybar_f = ytr.mean();
        const Eigen::MatrixXd betas =
            path_for(st_f.apply(xtr), ytr.array() - ybar_f, grid);
        for (int i : te) {
          Eigen::RowVectorXd xi =
              (x.row(i) - st_f.mean.transpose()).cwiseQuotient(
                  st_f.scale.transpose());
          for (int l = 0; l < betas.cols(); ++l) {
            const double pred = ybar_f + xi.dot(betas.col(l));
            cv_sse(f, l) += (y[i] - pred) * (y[i] - pred);
          }
        }
      }
      chosen = grid[pick_lambda(cv_sse)];
    } else {
      chosen = grid.front();
    }
  }

  const Eigen::MatrixXd beta = path_for(xs, yc, {chosen});
  return std::make_shared<LinearModel>(st, ybar, beta.col(0));
}

// ---------------------------------------------------------------------------
// random forest

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  double value = 0.0;
};

class RegressionTree {
 public:
  void fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
           std::vector<int> rows, int mtry, int min_leaf,
           std::mt19937_64& rng) {
    x_ = &x;
    y_ = &y;
    mtry_ = mtry;
    min_leaf_ = min_leaf;
    rng_ = &rng;
    nodes_.clear();
    grow(std::move(rows));
  }

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    int id = 0;
    while (nodes_[id].feature >= 0)
      id = x[nodes_[id].feature] <= nodes_[id].threshold ? nodes_[id].left
                                                         : nodes_[id].right;
    return nodes_[id].value;
  }

 private:
  int grow(std::vector<int> rows) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(TreeNode{});
    const int m = static_cast<int>(rows.size());
    double sum = 0.0, sum_sq = 0.0;
    for (int r : rows) {
      sum += (*y_)[r];
      sum_sq += (*y_)[r] * (*y_)[r];
    }
    nodes_[id].value = sum / m;
    const double sse = sum_sq - sum * sum / m;
    if (m < 2 * min_leaf_ || sse <= 1e-12) return id;

    const int p = static_cast<int>(x_->cols());
    std::vector<int> feats =
        sample_without_replacement(p, std::min(mtry_, p), *rng_);
    std::sort(feats.begin(), feats.end());

    int best_feature = -1, best_pos = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    double best_threshold = 0.0;
    std::vector<std::pair<double, int>> order(m);
    std::vector<double> ps(m + 1);
    std::vector<std::pair<double, int>> best_order;
    for (int f : feats) {
      for (int i = 0; i < m; ++i)
        order[i] = {(*x_)(rows[i], f), rows[i]};
      std::sort(order.begin(), order.end());
      ps[0] = 0.0;
      for (int i = 0; i < m; ++i) ps[i + 1] = ps[i] + (*y_)[order[i].second];
      for (int k = min_leaf_; k <= m - min_leaf_; ++k) {
        if (order[k - 1].first >= order[k].first) continue;
        const double sl = ps[k], sr = ps[m] - ps[k];
        const double score = sl * sl / k + sr * sr / (m - k);
        if (score > best_score) {
          best_score = score;
          best_feature = f;
          best_pos = k;
          best_threshold = 0.5 * (order[k - 1].first + order[k].first);
          best_order = order;
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<int> left_rows, right_rows;
    left_rows.reserve(best_pos);
    right_rows.reserve(m - best_pos);
    for (int i = 0; i < best_pos; ++i) left_rows.push_back(best_order[i].second);
    for (int i = best_pos; i < m; ++i)
      right_rows.push_back(best_order[i].second);

    nodes_[id].feature = best_feature;
    nodes_[id].threshold = best_threshold;
    const int left = grow(std::move(left_rows));
    nodes_[id].left = left;
    const int right = grow(std::move(right_rows));
    nodes_[id].right = right;
    return id;
  }

  const Eigen::MatrixXd* x_ = nullptr;
  const Eigen::VectorXd* y_ = nullptr;
  int mtry_ = 1, min_leaf_ = 5;
  std::mt19937_64* rng_ = nullptr;
  std::vector<TreeNode> nodes_;
};

class RandomForestModel final : public FittedLearner {
 public:
  RandomForestModel(const LearnerConfig& config, const Eigen::MatrixXd& x,
                    const Eigen::VectorXd& y, std::uint64_t seed) {
    const int n = static_cast<int>(x.rows());
    const int p = static_cast<int>(x.cols());
    const int mtry = config.mtry ? *config.mtry : std::max(1, p / 3);
    trees_.resize(config.trees);
    for (int t = 0; t < config.trees; ++t) {
      // pre-assigned per-tree stream: results do not depend on build order
      std::mt19937_64 rng = make_rng(seed, static_cast<std::uint64_t>(t) + 1);
      std::vector<int> rows(n);
      std::uniform_int_distribution<int> pick(0, n - 1);
      for (int i = 0; i < n; ++i) rows[i] = pick(rng);
      std::sort(rows.begin(), rows.end());
      trees_[t].fit(x, y, std::move(rows), mtry, config.min_leaf, rng);
    }
  }

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const
      override {
    double sum = 0.0;
    for (const auto& t : trees_) sum += t.predict_row(x);
    return sum / trees_.size();
  }

 private:
  std::vector<RegressionTree> trees_;
};

}  // namespace

std::string learner_name(LearnerKind k) {
  switch (k) {
    case LearnerKind::grand_mean: return "grand_mean";
    case LearnerKind::ridge: return "ridge";
    case LearnerKind::lasso: return "lasso";
    case LearnerKind::bayes_lm: return "bayes_lm";
    case LearnerKind::random_forest: return "random_forest";
  }
  return "?";
}

LearnerConfig LearnerConfig::parse(const std::string& name) {
  if (name == "grand_mean" || name == "mean")
    return of(LearnerKind::grand_mean);
  if (name == "ridge") return of(LearnerKind::ridge);
  if (name == "lasso") return of(LearnerKind::lasso);
  if (name == "bayes_lm") return of(LearnerKind::bayes_lm);
  if (name == "random_forest" || name == "rf")
    return of(LearnerKind::random_forest);
  throw std::invalid_argument("unknown learner: " + name);
}

Eigen::VectorXd FittedLearner::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = predict_row(x.row(i));
  return out;
}

FittedLearnerPtr fit_learner(const LearnerConfig& config,
                             const Eigen::MatrixXd& x,
                             const Eigen::VectorXd& y, std::uint64_t seed) {
  if (x.rows() == 0 || x.rows() != y.size())
    throw std::invalid_argument("fit_learner: bad training shapes");
  switch (config.kind) {
    case LearnerKind::grand_mean:
      return std::make_shared<GrandMeanModel>(y.mean());
    case LearnerKind::ridge:
      return fit_penalized(PenalizedKind::ridge, config, x, y, seed);
    case LearnerKind::lasso:
      return fit_penalized(PenalizedKind::lasso, config, x, y, seed);
    case LearnerKind::bayes_lm: {
      // fixed weak-prior analogue instead of a tuned penalty
      LearnerConfig fixed = config;
      if (!fixed.penalty)
        fixed.penalty = population_variance(y) / (2.5 * 2.5 * x.rows());
      return fit_penalized(PenalizedKind::ridge, fixed, x, y, seed);
    }
    case LearnerKind::random_forest:
      return std::make_shared<RandomForestModel>(config, x, y, seed);
  }
  throw std::logic_error("fit_learner: unreachable");
}

std::vector<int> make_folds(int n, int k, std::uint64_t seed) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng = make_rng(seed, 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<int> fold(n);
  for (int i = 0; i < n; ++i) fold[idx[i]] = i % k;
  return fold;
}

CrossValidation cross_validate(const LearnerConfig& config,
                               const Eigen::MatrixXd& x,
                               const Eigen::VectorXd& y, int k_folds,
                               std::uint64_t seed) {
  const int n = static_cast<int>(x.rows());
  if (k_folds < 2) throw std::invalid_argument("cross_validate: k_folds < 2");
  if (n < k_folds) throw std::invalid_argument("cross_validate: n < k_folds");

  const std::vector<int> fold = make_folds(n, k_folds, seed);
  CrossValidation cv;
  cv.heldout.resize(n);
  cv.fold_mse.resize(k_folds, 0.0);
  for (int f = 0; f < k_folds; ++f) {
    std::vector<int> tr, te;
    for (int i = 0; i < n; ++i) (fold[i] == f ? te : tr).push_back(i);
    Eigen::MatrixXd xtr(tr.size(), x.cols());
    Eigen::VectorXd ytr(tr.size());
    for (size_t i = 0; i < tr.size(); ++i) {
      xtr.row(i) = x.row(tr[i]);
      ytr[i] = y[tr[i]];
    }
    const FittedLearnerPtr model =
        fit_learner(config, xtr, ytr, mix_seed(seed) + f);
    double sse = 0.0;
    for (int i : te) {
      cv.heldout[i] = model->predict_row(x.row(i));
      sse += (y[i] - cv.heldout[i]) * (y[i] - cv.heldout[i]);
    }
    cv.fold_mse[f] = te.empty() ? 0.0 : sse / te.size();
  }
  cv.mse = (y - cv.heldout).squaredNorm() / n;
  const double var = population_variance(y);
  cv.r2 = var > 0 ? 1.0 - cv.mse / var : 0.0;
  return cv;
}

namespace {

// Euclidean projection onto {w >= 0, sum w = 1}.
Eigen::VectorXd project_simplex(Eigen::VectorXd v) {
  const int m = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + m);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  int rho = 0;
  for (int i = 0; i < m; ++i) {
    css += u[i];
    if (u[i] - (css - 1.0) / (i + 1) > 0) {
      rho = i + 1;
      theta = (css - 1.0) / (i + 1);
    } else {
      css -= u[i];
    }
  }
  (void)rho;
  for (int i = 0; i < m; ++i) v[i] = std::max(v[i] - theta, 0.0);
  return v;
}

Eigen::VectorXd simplex_weights(const Eigen::MatrixXd& h,
                                const Eigen::VectorXd& y) {
  const int m = static_cast<int>(h.cols());
  const int n = static_cast<int>(h.rows());
  Eigen::VectorXd w = Eigen::VectorXd::Constant(m, 1.0 / m);
  const Eigen::MatrixXd g = h.transpose() * h * (2.0 / n);
  const Eigen::VectorXd b = h.transpose() * y * (2.0 / n);
  const double lip = std::max(g.trace(), 1e-12);
  for (int it = 0; it < 5000; ++it) {
    const Eigen::VectorXd grad = g * w - b;
    const Eigen::VectorXd next = project_simplex(w - grad / lip);
    const double delta = (next - w).cwiseAbs().maxCoeff();
    w = next;
    if (delta < 1e-14) break;
  }
  return w;
}

}  // namespace

Eigen::VectorXd LearnerEnsemble::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
  for (size_t l = 0; l < members.size(); ++l)
    if (weights[l] != 0.0) out += weights[l] * members[l]->predict(x);
  return out;
}

LearnerEnsemble super_learner(const std::vector<LearnerConfig>& library,
                              const Eigen::MatrixXd& x,
                              const Eigen::VectorXd& y, int k_folds,
                              std::uint64_t seed) {
  if (library.empty())
    throw std::invalid_argument("super_learner: empty library");
  const int n = static_cast<int>(x.rows());
  const int m = static_cast<int>(library.size());

  LearnerEnsemble ens;
  ens.cv_report.resize(m);
  const double var = population_variance(y);

  Eigen::MatrixXd heldout(n, m);
  for (int l = 0; l < m; ++l) {
    // same seed for every member: one shared fold split
    const CrossValidation cv =
        cross_validate(library[l], x, y, k_folds, mix_seed(seed) + 101);
    heldout.col(l) = cv.heldout;
    ens.cv_report[l].name = learner_name(library[l].kind);
    ens.cv_report[l].cv_rmse = std::sqrt(cv.mse);
    ens.cv_report[l].cv_r2 = cv.r2;
  }

  ens.weights = m == 1 ? Eigen::VectorXd::Ones(1)
                       : simplex_weights(heldout, y);
  for (int l = 0; l < m; ++l) ens.cv_report[l].weight = ens.weights[l];
  ens.cv_mse = (y - heldout * ens.weights).squaredNorm() / n;
  ens.cv_r2 = var > 0 ? 1.0 - ens.cv_mse / var : 0.0;

  ens.members.resize(m);
  for (int l = 0; l < m; ++l)
    ens.members[l] = fit_learner(library[l], x, y, mix_seed(seed) + 500 + l);
  return ens;
}

RemnantFit fit_remnant_model(const ObservationalDataset& ds,
                             const MatchAssignment& m,
                             const std::vector<LearnerConfig>& library,
                             int k_folds, std::uint64_t seed) {
  const std::vector<int>& rows = m.remnant;
  if (rows.size() < 2)
    throw std::invalid_argument("fit_remnant_model: remnant too small to fit");
  Eigen::MatrixXd x(rows.size(), ds.p());
  Eigen::VectorXd y(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    x.row(i) = ds.x.row(rows[i]);
    y[i] = ds.y[rows[i]];
  }
  const int k = std::min<int>(k_folds, static_cast<int>(rows.size()));
  RemnantFit fit;
  fit.ensemble = super_learner(library, x, y, k, seed);
  fit.source.yhat = fit.ensemble.predict(ds.x);
  fit.source.trained_rows = rows;
  return fit;
}

}  // namespace rebar
