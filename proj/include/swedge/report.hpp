#pragma once

#include <optional>
#include <string>
#include <vector>

namespace swedge {

// 97.5% standard-normal quantile; every interval in the project is a 95%
// normal-approximation CI.
inline constexpr double kZ975 = 1.959963984540054;

enum class EffectScale { Difference, RiskRatio, OddsRatio };

std::string to_string(EffectScale scale);
EffectScale effect_scale_from_string(const std::string& s);

struct EstimandEntry {
  std::string label;
  double estimate = 0.0;
  double se_robust = 0.0;
  std::optional<double> se_model;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct LrtRecord {
  std::string restricted;
  std::string general;
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  std::string note;
};

// Named marginal estimates with robust (and, for linear mixed models,
// model-based) uncertainty. Component labels follow the saturated
// coefficient order; summaries are weighted combinations.
struct EstimandReport {
  std::string schema = "swedge-report/1";
  std::string estimator;    // "lmm" | "gee"
  std::string structure;    // "constant" | "duration" | "period" | "saturated"
  std::string correlation;
  std::string link;
  EffectScale scale = EffectScale::Difference;
  std::string data_fingerprint;
  bool converged = true;
  bool boundary = false;
  std::vector<EstimandEntry> components;
  std::vector<EstimandEntry> summaries;
  std::optional<LrtRecord> lrt;
};

std::string render_table(const EstimandReport& report);
std::string render_json(const EstimandReport& report);
std::string render_csv(const EstimandReport& report);
EstimandReport parse_report_json(const std::string& text);

}  // namespace swedge
