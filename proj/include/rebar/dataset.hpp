#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rebar {

enum class MissingPolicy {
  reject,  // any missing cell is an error
  impute,  // numeric: column mean + appended missingness indicator;
           // categorical: missing becomes its own level
};

struct DatasetSchema {
  std::string treatment_column;
  std::string outcome_column;
  std::string id_column;  // optional; empty means row numbers are used
  std::vector<std::string> exclude;
  MissingPolicy missing = MissingPolicy::reject;
};

// Immutable after construction; safe to share read-only across workers.
struct ObservationalDataset {
  std::vector<std::string> unit_ids;
  Eigen::MatrixXd x;                         // n x p covariates
  std::vector<int> z;                        // 0/1 treatment indicators
  Eigen::VectorXd y;                         // outcomes
  std::vector<std::string> covariate_names;  // length p

  int n() const { return static_cast<int>(z.size()); }
  int p() const { return static_cast<int>(covariate_names.size()); }
  int n_treated() const;
  int n_control() const;
  int column_index(const std::string& name) const;  // -1 if absent

  // Throws std::invalid_argument on any structural violation.
  void validate() const;
};

ObservationalDataset make_dataset(Eigen::MatrixXd x, std::vector<int> z,
                                  Eigen::VectorXd y,
                                  std::vector<std::string> covariate_names = {},
                                  std::vector<std::string> unit_ids = {});

ObservationalDataset load_dataset(const std::string& path,
                                  const DatasetSchema& schema);
void write_dataset(const std::string& path, const ObservationalDataset& ds);

// One matched set: >=1 treated and >=1 control unit.
struct MatchedSet {
  std::vector<int> treated;
  std::vector<int> controls;
  int n_treated() const { return static_cast<int>(treated.size()); }
  int n_controls() const { return static_cast<int>(controls.size()); }
};

// Partition of the sample into matched sets plus the unmatched remnant.
// Nearest-neighbour matches reuse controls, so a control index may appear
// in several sets when control_reuse is set; the remnant is always the set
// of controls that appear in no matched set.
struct MatchAssignment {
  std::vector<MatchedSet> sets;
  std::vector<int> remnant;          // unmatched control indices, ascending
  std::vector<int> dropped_treated;  // estimand changes when non-empty
  bool control_reuse = false;

  int n_treated_total() const;
  int n_controls_total() const;  // with multiplicity under reuse
  int n_matched_units() const;   // distinct matched units
  std::vector<int> matched_units() const;          // ascending, distinct
  std::vector<std::optional<int>> set_of(int n) const;  // first set per unit

  void validate(const std::vector<int>& z, bool allow_dropped_treated) const;
};

// Recomputes the remnant from scratch; call after assembling sets by hand.
void finalize_remnant(MatchAssignment& m, const std::vector<int>& z);

// (matched subset, remnant subset): the matched subset holds all treated
// units plus matched controls, the remnant the leftover controls.
std::pair<std::vector<int>, std::vector<int>> split_remnant(
    const ObservationalDataset& ds, const MatchAssignment& m);

void write_match_csv(const std::string& path, const ObservationalDataset& ds,
                     const MatchAssignment& m);

// Predictions yhat_C(x) for every unit together with e = Y - yhat.
struct ResidualView {
  Eigen::VectorXd yhat;
  Eigen::VectorXd e;
};

ResidualView make_residual_view(const Eigen::VectorXd& y,
                                const Eigen::VectorXd& yhat);

}  // namespace rebar
