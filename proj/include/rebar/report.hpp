#pragma once

#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "rebar/bounds.hpp"

namespace rebar {

struct EstimateReport {
  std::string estimand = "ETT";
  std::string method;
  double point = 0.0;
  std::optional<double> se;
  std::optional<double> p_value;
  std::optional<std::pair<double, double>> ci;
  std::vector<BiasBound> bounds;  // assumption-based attachments

  nlohmann::json to_json() const;
};

// "Estimate / SE / p-value / 95% CI" rows, one per method.
std::string render_estimate_table(const std::vector<EstimateReport>& reports,
                                  double level);

nlohmann::json bound_to_json(const BiasBound& bound);

}  // namespace rebar
