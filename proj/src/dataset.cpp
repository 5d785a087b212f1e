#include "rebar/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace rebar {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

bool is_missing_token(const std::string& s) {
  if (s.empty()) return true;
  static const std::set<std::string> kMissing = {"NA", "na", "NaN", "nan",
                                                 "NAN", "null", "NULL"};
  return kMissing.count(s) > 0;
}

bool parse_double(const std::string& s, double& out) {
  try {
    size_t pos = 0;
    out = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos])))
      ++pos;
    return pos == s.size();
  } catch (...) {
    return false;
  }
}

}  // namespace

int ObservationalDataset::n_treated() const {
  int c = 0;
  for (int zi : z) c += zi;
  return c;
}

int ObservationalDataset::n_control() const { return n() - n_treated(); }

int ObservationalDataset::column_index(const std::string& name) const {
  for (int j = 0; j < p(); ++j)
    if (covariate_names[j] == name) return j;
  return -1;
}

void ObservationalDataset::validate() const {
  const int nn = n();
  if (nn == 0) throw std::invalid_argument("dataset: no rows");
  if (static_cast<int>(unit_ids.size()) != nn ||
      static_cast<int>(y.size()) != nn || x.rows() != nn)
    throw std::invalid_argument("dataset: misaligned lengths");
  if (x.cols() != static_cast<Eigen::Index>(covariate_names.size()))
    throw std::invalid_argument("dataset: covariate name/column mismatch");
  int nt = 0;
  for (int zi : z) {
    if (zi != 0 && zi != 1)
      throw std::invalid_argument("dataset: non-binary treatment");
    nt += zi;
  }
  if (nt == 0 || nt == nn)
    throw std::invalid_argument(
        "dataset: need at least one treated and one control unit");
  if (!x.allFinite()) throw std::invalid_argument("dataset: non-finite X");
  if (!y.allFinite()) throw std::invalid_argument("dataset: non-finite Y");
}

ObservationalDataset make_dataset(Eigen::MatrixXd x, std::vector<int> z,
                                  Eigen::VectorXd y,
                                  std::vector<std::string> covariate_names,
                                  std::vector<std::string> unit_ids) {
  ObservationalDataset ds;
  const int n = static_cast<int>(z.size());
  if (covariate_names.empty()) {
    covariate_names.resize(x.cols());
    for (int j = 0; j < x.cols(); ++j)
      covariate_names[j] = "x" + std::to_string(j + 1);
  }
  if (unit_ids.empty()) {
    unit_ids.resize(n);
    for (int i = 0; i < n; ++i) unit_ids[i] = "u" + std::to_string(i + 1);
  }
  ds.x = std::move(x);
  ds.z = std::move(z);
  ds.y = std::move(y);
  ds.covariate_names = std::move(covariate_names);
  ds.unit_ids = std::move(unit_ids);
  ds.validate();
  return ds;
}

ObservationalDataset load_dataset(const std::string& path,
                                  const DatasetSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("empty file: " + path);
  const std::vector<std::string> header = split_csv_line(line);
  const int ncol = static_cast<int>(header.size());

  std::vector<std::vector<std::string>> cells(ncol);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != ncol)
      throw std::invalid_argument("ragged CSV row in " + path);
    for (int j = 0; j < ncol; ++j) cells[j].push_back(std::move(fields[j]));
  }
  const int n = cells.empty() ? 0 : static_cast<int>(cells[0].size());
  if (n == 0) throw std::invalid_argument("no data rows in " + path);

  auto find_col = [&](const std::string& name) {
    for (int j = 0; j < ncol; ++j)
      if (header[j] == name) return j;
    return -1;
  };
  const int z_col = find_col(schema.treatment_column);
  if (z_col < 0)
    throw std::invalid_argument("missing treatment column: " +
                                schema.treatment_column);
  const int y_col = find_col(schema.outcome_column);
  if (y_col < 0)
    throw std::invalid_argument("missing outcome column: " +
                                schema.outcome_column);
  int id_col = -1;
  if (!schema.id_column.empty()) {
    id_col = find_col(schema.id_column);
    if (id_col < 0)
      throw std::invalid_argument("missing id column: " + schema.id_column);
  }

  ObservationalDataset ds;
  ds.unit_ids.resize(n);
  for (int i = 0; i < n; ++i)
    ds.unit_ids[i] = id_col >= 0 ? cells[id_col][i] : std::to_string(i + 1);

  ds.z.resize(n);
  for (int i = 0; i < n; ++i) {
    double v;
    if (!parse_double(cells[z_col][i], v) || (v != 0.0 && v != 1.0))
      throw std::invalid_argument("non-binary treatment in column " +
                                  schema.treatment_column);
    ds.z[i] = static_cast<int>(v);
  }

  ds.y.resize(n);
  for (int i = 0; i < n; ++i) {
    double v;
    if (!parse_double(cells[y_col][i], v) || !std::isfinite(v))
      throw std::invalid_argument("non-numeric outcome in column " +
                                  schema.outcome_column);
    ds.y[i] = v;
  }

  // Remaining columns become covariates, in header order. Categorical
  // columns are one-hot expanded with the first (sorted) level dropped.
  std::vector<Eigen::VectorXd> cols;
  std::vector<std::string> names;
  for (int j = 0; j < ncol; ++j) {
    if (j == z_col || j == y_col || j == id_col) continue;
    if (std::find(schema.exclude.begin(), schema.exclude.end(), header[j]) !=
        schema.exclude.end())
      continue;

    bool numeric = true;
    bool any_missing = false;
    std::vector<double> vals(n);
    std::vector<bool> missing(n, false);
    for (int i = 0; i < n; ++i) {
      if (is_missing_token(cells[j][i])) {
        missing[i] = true;
        any_missing = true;
        continue;
      }
      if (!parse_double(cells[j][i], vals[i])) numeric = false;
    }
    if (any_missing && schema.missing == MissingPolicy::reject)
      throw std::invalid_argument("missing values in column " + header[j] +
                                  " (policy: reject)");

    if (numeric) {
      double mean = 0.0;
      int n_obs = 0;
      for (int i = 0; i < n; ++i)
        if (!missing[i]) {
          mean += vals[i];
          ++n_obs;
        }
      if (n_obs == 0)
        throw std::invalid_argument("column " + header[j] + " is all missing");
      mean /= n_obs;
      Eigen::VectorXd col(n);
      for (int i = 0; i < n; ++i) col[i] = missing[i] ? mean : vals[i];
      if (!col.allFinite())
        throw std::invalid_argument("non-finite value in column " + header[j]);
      cols.push_back(col);
      names.push_back(header[j]);
      if (any_missing) {
        Eigen::VectorXd ind(n);
        for (int i = 0; i < n; ++i) ind[i] = missing[i] ? 1.0 : 0.0;
        cols.push_back(ind);
        names.push_back(header[j] + "_missing");
      }
    } else {
      std::set<std::string> level_set;
      for (int i = 0; i < n; ++i)
        level_set.insert(missing[i] ? "(missing)" : cells[j][i]);
      std::vector<std::string> levels(level_set.begin(), level_set.end());
      // reference level = first sorted level, dropped to avoid collinearity
      for (size_t l = 1; l < levels.size(); ++l) {
        Eigen::VectorXd col(n);
        for (int i = 0; i < n; ++i) {
          const std::string& v = missing[i] ? "(missing)" : cells[j][i];
          col[i] = v == levels[l] ? 1.0 : 0.0;
        }
        cols.push_back(col);
        names.push_back(header[j] + "=" + levels[l]);
      }
    }
  }

  ds.x.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (size_t c = 0; c < cols.size(); ++c) ds.x.col(c) = cols[c];
  ds.covariate_names = std::move(names);
  ds.validate();
  return ds;
}

void write_dataset(const std::string& path, const ObservationalDataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write file: " + path);
  out << "id,z,y";
  for (const auto& name : ds.covariate_names) out << "," << name;
  out << "\n";
  char buf[64];
  for (int i = 0; i < ds.n(); ++i) {
    out << ds.unit_ids[i] << "," << ds.z[i];
    std::snprintf(buf, sizeof(buf), "%.17g", ds.y[i]);
    out << "," << buf;
    for (int j = 0; j < ds.p(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.x(i, j));
      out << "," << buf;
    }
    out << "\n";
  }
}

int MatchAssignment::n_treated_total() const {
  int c = 0;
  for (const auto& s : sets) c += s.n_treated();
  return c;
}

int MatchAssignment::n_controls_total() const {
  int c = 0;
  for (const auto& s : sets) c += s.n_controls();
  return c;
}

std::vector<int> MatchAssignment::matched_units() const {
  std::set<int> u;
  for (const auto& s : sets) {
    u.insert(s.treated.begin(), s.treated.end());
    u.insert(s.controls.begin(), s.controls.end());
  }
  return {u.begin(), u.end()};
}

int MatchAssignment::n_matched_units() const {
  return static_cast<int>(matched_units().size());
}

std::vector<std::optional<int>> MatchAssignment::set_of(int n) const {
  std::vector<std::optional<int>> out(n);
  for (size_t s = 0; s < sets.size(); ++s) {
    for (int i : sets[s].treated)
      if (!out[i]) out[i] = static_cast<int>(s);
    for (int i : sets[s].controls)
      if (!out[i]) out[i] = static_cast<int>(s);
  }
  return out;
}

void MatchAssignment::validate(const std::vector<int>& z,
                               bool allow_dropped_treated) const {
  const int n = static_cast<int>(z.size());
  std::vector<int> control_uses(n, 0);
  std::vector<bool> treated_seen(n, false);
  for (const auto& s : sets) {
    if (s.treated.empty() || s.controls.empty())
      throw std::invalid_argument(
          "match: every set needs >=1 treated and >=1 control");
    for (int i : s.treated) {
      if (i < 0 || i >= n || z[i] != 1)
        throw std::invalid_argument("match: non-treated unit on treated side");
      if (treated_seen[i])
        throw std::invalid_argument("match: treated unit in two sets");
      treated_seen[i] = true;
    }
    for (int i : s.controls) {
      if (i < 0 || i >= n || z[i] != 0)
        throw std::invalid_argument("match: non-control unit on control side");
      ++control_uses[i];
    }
  }
  if (!control_reuse) {
    for (int i = 0; i < n; ++i)
      if (control_uses[i] > 1)
        throw std::invalid_argument("match: control reused without reuse flag");
  }
  int missing_treated = 0;
  for (int i = 0; i < n; ++i)
    if (z[i] == 1 && !treated_seen[i]) ++missing_treated;
  if (missing_treated != static_cast<int>(dropped_treated.size()) ||
      (missing_treated > 0 && !allow_dropped_treated))
    throw std::invalid_argument(
        "match: unmatched treated units (estimand would change)");
  // remnant = controls in no set, and disjoint from the matched sample
  std::set<int> rem(remnant.begin(), remnant.end());
  for (int i = 0; i < n; ++i) {
    const bool should = z[i] == 0 && control_uses[i] == 0;
    if (should != (rem.count(i) > 0))
      throw std::invalid_argument("match: remnant inconsistent with sets");
  }
}

void finalize_remnant(MatchAssignment& m, const std::vector<int>& z) {
  const int n = static_cast<int>(z.size());
  std::vector<bool> used(n, false);
  for (const auto& s : m.sets)
    for (int i : s.controls) used[i] = true;
  m.remnant.clear();
  for (int i = 0; i < n; ++i)
    if (z[i] == 0 && !used[i]) m.remnant.push_back(i);
}

std::pair<std::vector<int>, std::vector<int>> split_remnant(
    const ObservationalDataset& ds, const MatchAssignment& m) {
  m.validate(ds.z, /*allow_dropped_treated=*/true);
  return {m.matched_units(), m.remnant};
}

void write_match_csv(const std::string& path, const ObservationalDataset& ds,
                     const MatchAssignment& m) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write file: " + path);
  out << "unit_id,set\n";
  for (size_t s = 0; s < m.sets.size(); ++s) {
    for (int i : m.sets[s].treated)
      out << ds.unit_ids[i] << ",m" << (s + 1) << "\n";
    for (int i : m.sets[s].controls)
      out << ds.unit_ids[i] << ",m" << (s + 1) << "\n";
  }
  for (int i : m.remnant) out << ds.unit_ids[i] << ",REMNANT\n";
  for (int i : m.dropped_treated) out << ds.unit_ids[i] << ",DROPPED\n";
}

ResidualView make_residual_view(const Eigen::VectorXd& y,
                                const Eigen::VectorXd& yhat) {
  if (y.size() != yhat.size())
    throw std::invalid_argument("residual view: length mismatch");
  return ResidualView{yhat, y - yhat};
}

}  // namespace rebar
