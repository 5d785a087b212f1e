#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rebar/dataset.hpp"

namespace rebar {

enum class LearnerKind { grand_mean, ridge, lasso, bayes_lm, random_forest };

std::string learner_name(LearnerKind k);

struct LearnerConfig {
  LearnerKind kind = LearnerKind::grand_mean;

  // linear learners
  std::optional<double> penalty;  // fixed strength; tuned by CV when absent
  int tune_folds = 5;             // internal CV folds for penalty tuning
  int path_points = 100;          // lasso path resolution
  bool standardize = true;

  // random forest
  int trees = 500;
  int min_leaf = 5;
  std::optional<int> mtry;  // default max(1, floor(p/3))

  static LearnerConfig of(LearnerKind k) {
    LearnerConfig c;
    c.kind = k;
    return c;
  }
  // Accepts "grand_mean", "mean", "ridge", "lasso", "bayes_lm",
  // "random_forest", "rf".
  static LearnerConfig parse(const std::string& name);
};

class FittedLearner {
 public:
  virtual ~FittedLearner() = default;
  virtual double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x)
      const = 0;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
};
using FittedLearnerPtr = std::shared_ptr<const FittedLearner>;

// Deterministic given (config, data, seed).
FittedLearnerPtr fit_learner(const LearnerConfig& config,
                             const Eigen::MatrixXd& x,
                             const Eigen::VectorXd& y, std::uint64_t seed);

// Seeded permutation into k near-equal folds; fold_of[i] in [0, k).
std::vector<int> make_folds(int n, int k, std::uint64_t seed);

struct CrossValidation {
  double mse = 0.0;
  double r2 = 0.0;  // 1 - mse / population variance of y
  Eigen::VectorXd heldout;
  std::vector<double> fold_mse;
};

CrossValidation cross_validate(const LearnerConfig& config,
                               const Eigen::MatrixXd& x,
                               const Eigen::VectorXd& y, int k_folds,
                               std::uint64_t seed);

struct EnsembleMember {
  std::string name;
  double cv_rmse = 0.0;
  double cv_r2 = 0.0;
  double weight = 0.0;
};

struct LearnerEnsemble {
  std::vector<FittedLearnerPtr> members;
  Eigen::VectorXd weights;  // simplex: nonnegative, sums to 1
  std::vector<EnsembleMember> cv_report;
  double cv_mse = 0.0;  // of the weighted held-out predictions
  double cv_r2 = 0.0;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
};

// CV-weighted convex combination: the weights minimize the mean squared
// error of the held-out prediction matrix over the simplex.
LearnerEnsemble super_learner(const std::vector<LearnerConfig>& library,
                              const Eigen::MatrixXd& x,
                              const Eigen::VectorXd& y, int k_folds,
                              std::uint64_t seed);

// Predictions plus the provenance needed by the leakage guard.
struct PredictionSource {
  Eigen::VectorXd yhat;           // one prediction per dataset row
  std::vector<int> trained_rows;  // rows whose outcomes the fit consumed
};

struct RemnantFit {
  LearnerEnsemble ensemble;
  PredictionSource source;
};

// Fits the ensemble on remnant rows only and predicts every unit.
RemnantFit fit_remnant_model(const ObservationalDataset& ds,
                             const MatchAssignment& m,
                             const std::vector<LearnerConfig>& library,
                             int k_folds, std::uint64_t seed);

}  // namespace rebar
