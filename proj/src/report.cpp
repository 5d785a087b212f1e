#include "rebar/report.hpp"

#include <cstdio>
#include <sstream>

namespace rebar {
namespace {

std::string fmt(double v, const char* spec = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

nlohmann::json bound_to_json(const BiasBound& b) {
  nlohmann::json j;
  j["c_constant"] = b.c_constant;
  if (b.gamma) j["gamma"] = *b.gamma;
  j["multiplier"] = b.multiplier;
  j["assumed_mse_m"] = b.mse_input;
  if (b.sd_yc) j["sd_yc"] = *b.sd_yc;
  j["bound_abs_bias"] = b.bound_abs_bias;
  if (b.bound_standardized) j["bound_standardized"] = *b.bound_standardized;
  return j;
}

nlohmann::json EstimateReport::to_json() const {
  nlohmann::json j;
  j["estimand"] = estimand;
  j["method"] = method;
  j["estimate"] = point;
  if (se) j["se"] = *se;
  if (p_value) j["p_value"] = *p_value;
  if (ci) j["ci"] = {ci->first, ci->second};
  if (!bounds.empty()) {
    j["bounds"] = nlohmann::json::array();
    for (const auto& b : bounds) j["bounds"].push_back(bound_to_json(b));
  }
  return j;
}

std::string render_estimate_table(const std::vector<EstimateReport>& reports,
                                  double level) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-12s %10s %10s %10s   %s\n", "method",
                "Estimate", "SE", "p-value",
                (fmt(100 * level, "%.0f") + "% CI").c_str());
  out << buf;
  for (const auto& r : reports) {
    const std::string se = r.se ? fmt(*r.se) : "-";
    const std::string p = r.p_value ? fmt(*r.p_value) : "-";
    const std::string ci =
        r.ci ? "(" + fmt(r.ci->first) + ", " + fmt(r.ci->second) + ")" : "-";
    std::snprintf(buf, sizeof(buf), "%-12s %10s %10s %10s   %s\n",
                  r.method.c_str(), fmt(r.point).c_str(), se.c_str(),
                  p.c_str(), ci.c_str());
    out << buf;
  }
  return out.str();
}

}  // namespace rebar
