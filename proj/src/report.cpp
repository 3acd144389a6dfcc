#include "swedge/report.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace swedge {

std::string to_string(EffectScale scale) {
  switch (scale) {
    case EffectScale::Difference: return "difference";
    case EffectScale::RiskRatio: return "rr";
    case EffectScale::OddsRatio: return "or";
  }
  return "?";
}

EffectScale effect_scale_from_string(const std::string& s) {
  if (s == "difference") return EffectScale::Difference;
  if (s == "rr") return EffectScale::RiskRatio;
  if (s == "or") return EffectScale::OddsRatio;
  throw std::invalid_argument("unknown effect scale '" + s + "'");
}

namespace {

void render_rows(std::ostringstream& os, const std::vector<EstimandEntry>& rows) {
  for (const auto& e : rows) {
    os << "  " << std::left << std::setw(14) << e.label << std::right << std::fixed
       << std::setprecision(3) << std::setw(9) << e.estimate << std::setw(9) << e.se_robust;
    if (e.se_model) {
      os << std::setw(9) << *e.se_model;
    } else {
      os << std::setw(9) << "-";
    }
    os << "  [" << std::setw(8) << e.ci_lo << ", " << std::setw(8) << e.ci_hi << "]\n";
  }
}

nlohmann::json entry_to_json(const EstimandEntry& e) {
  nlohmann::json j{{"label", e.label},
                   {"estimate", e.estimate},
                   {"se_robust", e.se_robust},
                   {"ci_lo", e.ci_lo},
                   {"ci_hi", e.ci_hi}};
  if (e.se_model) j["se_model"] = *e.se_model;
  return j;
}

EstimandEntry entry_from_json(const nlohmann::json& j) {
  EstimandEntry e;
  e.label = j.at("label").get<std::string>();
  e.estimate = j.at("estimate").get<double>();
  e.se_robust = j.at("se_robust").get<double>();
  e.ci_lo = j.at("ci_lo").get<double>();
  e.ci_hi = j.at("ci_hi").get<double>();
  if (j.contains("se_model")) e.se_model = j.at("se_model").get<double>();
  return e;
}

}  // namespace

std::string render_table(const EstimandReport& report) {
  std::ostringstream os;
  os << "estimator=" << report.estimator << " structure=" << report.structure
     << " correlation=" << report.correlation;
  if (!report.link.empty()) os << " link=" << report.link;
  os << " scale=" << to_string(report.scale) << "\n";
  if (!report.converged) os << "  WARNING: fit did not converge\n";
  if (report.boundary) os << "  note: variance component at boundary\n";
  os << "  " << std::left << std::setw(14) << "estimand" << std::right << std::setw(9)
     << "estimate" << std::setw(9) << "se_rob" << std::setw(9) << "se_mb"
     << "  95% CI\n";
  render_rows(os, report.components);
  if (!report.summaries.empty()) {
    os << "  --\n";
    render_rows(os, report.summaries);
  }
  if (report.lrt) {
    os << "  LRT " << report.lrt->restricted << " vs " << report.lrt->general
       << ": statistic=" << std::setprecision(3) << report.lrt->statistic
       << " df=" << report.lrt->df << " p=" << std::setprecision(4) << report.lrt->p_value
       << "\n";
    if (!report.lrt->note.empty()) os << "  (" << report.lrt->note << ")\n";
  }
  return os.str();
}

std::string render_json(const EstimandReport& report) {
  nlohmann::json j;
  j["schema"] = report.schema;
  j["estimator"] = report.estimator;
  j["structure"] = report.structure;
  j["correlation"] = report.correlation;
  j["link"] = report.link;
  j["scale"] = to_string(report.scale);
  j["data_fingerprint"] = report.data_fingerprint;
  j["converged"] = report.converged;
  j["boundary"] = report.boundary;
  j["components"] = nlohmann::json::array();
  for (const auto& e : report.components) j["components"].push_back(entry_to_json(e));
  j["summaries"] = nlohmann::json::array();
  for (const auto& e : report.summaries) j["summaries"].push_back(entry_to_json(e));
  if (report.lrt) {
    j["lrt"] = {{"restricted", report.lrt->restricted},
                {"general", report.lrt->general},
                {"statistic", report.lrt->statistic},
                {"df", report.lrt->df},
                {"p_value", report.lrt->p_value},
                {"note", report.lrt->note}};
  }
  return j.dump(2);
}

std::string render_csv(const EstimandReport& report) {
  std::ostringstream os;
  os.precision(12);
  os << "kind,label,estimate,se_robust,se_model,ci_lo,ci_hi\n";
  auto emit = [&os](const char* kind, const EstimandEntry& e) {
    os << kind << ',' << e.label << ',' << e.estimate << ',' << e.se_robust << ',';
    if (e.se_model) os << *e.se_model;
    os << ',' << e.ci_lo << ',' << e.ci_hi << '\n';
  };
  for (const auto& e : report.components) emit("component", e);
  for (const auto& e : report.summaries) emit("summary", e);
  return os.str();
}

EstimandReport parse_report_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  EstimandReport report;
  report.schema = j.at("schema").get<std::string>();
  if (report.schema != "swedge-report/1") {
    throw std::runtime_error("unsupported report schema '" + report.schema + "'");
  }
  report.estimator = j.at("estimator").get<std::string>();
  report.structure = j.at("structure").get<std::string>();
  report.correlation = j.at("correlation").get<std::string>();
  report.link = j.at("link").get<std::string>();
  report.scale = effect_scale_from_string(j.at("scale").get<std::string>());
  report.data_fingerprint = j.at("data_fingerprint").get<std::string>();
  report.converged = j.at("converged").get<bool>();
  report.boundary = j.at("boundary").get<bool>();
  for (const auto& e : j.at("components")) report.components.push_back(entry_from_json(e));
  for (const auto& e : j.at("summaries")) report.summaries.push_back(entry_from_json(e));
  if (j.contains("lrt")) {
    LrtRecord rec;
    rec.restricted = j["lrt"].at("restricted").get<std::string>();
    rec.general = j["lrt"].at("general").get<std::string>();
    rec.statistic = j["lrt"].at("statistic").get<double>();
    rec.df = j["lrt"].at("df").get<int>();
    rec.p_value = j["lrt"].at("p_value").get<double>();
    rec.note = j["lrt"].value("note", "");
    report.lrt = rec;
  }
  return report;
}

}  // namespace swedge
