#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "swedge/gee.hpp"
#include "swedge/lmm.hpp"
#include "swedge/report.hpp"
#include "swedge/simulation.hpp"
#include "swedge/trial_data.hpp"

namespace {

// Exit codes: 0 success, 2 usage, 3 data validation, 4 fit failure.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct AnalyzeArgs {
  std::string data;
  std::string estimator = "lmm";
  std::string structure = "constant";
  std::string correlation;
  std::string link = "identity";
  std::string scale = "difference";
  std::string adjust = "none";
  std::string design_probs;
  std::string lrt;
  std::string out_dir = ".";
};

int run_analyze(const AnalyzeArgs& args) {
  using namespace swedge;

  const std::string correlation =
      args.correlation.empty() ? (args.estimator == "lmm" ? "exchangeable" : "independence")
                               : args.correlation;
  const EffectScale scale = effect_scale_from_string(args.scale);
  const TreatmentEffect structure = treatment_effect_from_string(args.structure);
  if (scale != EffectScale::Difference && structure != TreatmentEffect::Saturated &&
      structure != TreatmentEffect::PeriodSpecific) {
    throw UsageError(
        "--scale rr/or requires --structure saturated or period: ratio estimands are "
        "defined per period");
  }
  if (args.estimator == "lmm" && args.link != "identity") {
    throw UsageError("--estimator lmm uses the identity link; drop --link");
  }

  std::optional<std::vector<double>> design_probs;
  if (!args.design_probs.empty()) {
    std::vector<double> probs;
    for (const auto& tok : split_list(args.design_probs)) probs.push_back(std::stod(tok));
    design_probs = probs;
  }

  TrialData data;
  try {
    data = load_trial_csv(args.data);
    if (design_probs) finalize_trial_data(data, design_probs);
  } catch (const std::exception& ex) {
    throw DataError(ex.what());
  }
  const auto diagnostics = validate(data);
  for (const auto& d : diagnostics) {
    std::cerr << (d.severity == Diagnostic::Severity::Error ? "error: " : "warning: ")
              << d.message << "\n";
  }
  if (has_errors(diagnostics)) throw DataError("data validation failed");

  const TreatmentEffectSpec spec{structure, data.n_periods};
  std::vector<std::string> adjust;
  if (args.adjust != "none" && !args.adjust.empty()) adjust = split_list(args.adjust);

  const DesignSet designs = build_designs(data, spec, adjust);
  EstimandReport report;
  if (args.estimator == "lmm" && scale == EffectScale::Difference) {
    const LmmFit fit = fit_lmm(designs, correlation_from_string(correlation));
    report = extract_estimands(fit);
  } else if (args.estimator == "lmm") {
    const Correlation corr = correlation_from_string(correlation);
    const WorkingCorr wc = corr == Correlation::Independence
                               ? WorkingCorr::Independence
                               : WorkingCorr::NestedExchangeable;
    const GeeFit fit = fit_gee(designs, wc, Link::Identity);
    for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";
    report = estimate_estimands_gee(fit, designs, scale);
    report.estimator = "lmm";  // identity-link working-model route
  } else if (args.estimator == "gee") {
    const GeeFit fit =
        fit_gee(designs, working_corr_from_string(correlation), link_from_string(args.link));
    for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";
    report = estimate_estimands_gee(fit, designs, scale);
  } else {
    throw UsageError("--estimator must be lmm or gee");
  }

  if (!args.lrt.empty()) {
    const auto colon = args.lrt.find(':');
    if (colon == std::string::npos) {
      throw UsageError("--lrt expects restricted:general, e.g. constant:duration");
    }
    const TreatmentEffect rk = treatment_effect_from_string(args.lrt.substr(0, colon));
    const TreatmentEffect gk = treatment_effect_from_string(args.lrt.substr(colon + 1));
    const Correlation corr = correlation_from_string(
        args.correlation.empty() ? "exchangeable" : args.correlation);
    const TreatmentEffectSpec gspec{gk, data.n_periods};
    const DesignSet gset = build_designs(data, gspec, adjust);
    const TreatmentEffectSpec rspec{rk, data.n_periods};
    const DesignSet rset = build_designs(data, rspec, adjust, gspec.retained_periods());
    const LmmFit gfit = fit_lmm(gset, corr);
    const LmmFit rfit = fit_lmm(rset, corr);
    const LrtResult lrt = lrt_structures(rfit, gfit);
    LrtRecord rec;
    rec.restricted = to_string(rk);
    rec.general = to_string(gk);
    rec.statistic = lrt.statistic;
    rec.df = lrt.df;
    rec.p_value = lrt.p_value;
    if (gspec.retained_periods() < rspec.retained_periods()) {
      rec.note = "restricted model re-fit on the general model's retained periods";
    }
    report.lrt = rec;
  }

  std::filesystem::create_directories(args.out_dir);
  const std::filesystem::path out(args.out_dir);
  write_file(out / "report.json", render_json(report));
  write_file(out / "report.csv", render_csv(report));
  const std::string table = render_table(report);
  write_file(out / "report.txt", table);
  std::cout << table;
  return 0;
}

struct SimulateArgs {
  std::string config;
  std::string out_dir = ".";
  int threads = 0;
};

int run_simulate(const SimulateArgs& args) {
  using namespace swedge;
  StudyConfig config;
  try {
    config = load_study_config(args.config);
  } catch (const std::exception& ex) {
    throw DataError(std::string("config: ") + ex.what());
  }
  if (args.threads > 0) config.threads = args.threads;
  if (const char* env = std::getenv("SWEDGE_SEED")) {
    config.seed = std::strtoull(env, nullptr, 10);
    std::cerr << "seed overridden by SWEDGE_SEED=" << config.seed << "\n";
  }
  std::cerr << "design " << to_string(config.generator.design)
            << " clusters=" << config.generator.n_clusters
            << " replicates=" << config.replicates << " seed=" << config.seed
            << " threads=" << config.threads << " models=" << config.models.size() << "\n";

  const StudyMetrics metrics = run_study(config);
  std::cerr << "done: " << metrics.replicates << " replicates, " << metrics.failures
            << " fit failures\n";

  std::filesystem::create_directories(args.out_dir);
  const std::filesystem::path out(args.out_dir);
  write_file(out / "metrics.csv", metrics_to_csv(metrics));
  write_file(out / "metrics.json", metrics_to_json(metrics, config));
  std::cout << metrics_to_csv(metrics);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"estimand-aligned analysis of stepped wedge cluster randomized trials"};
  app.require_subcommand(1);

  AnalyzeArgs a;
  auto* analyze = app.add_subcommand("analyze", "fit working models to a trial CSV");
  analyze->add_option("--data", a.data, "long-format CSV")->required();
  analyze->add_option("--estimator", a.estimator, "lmm|gee");
  analyze->add_option("--structure", a.structure, "constant|duration|period|saturated");
  analyze->add_option("--correlation", a.correlation,
                      "lmm: independence|exchangeable|nested; gee: independence|nested|within-period");
  analyze->add_option("--link", a.link, "identity|logit|log (gee)");
  analyze->add_option("--scale", a.scale, "difference|rr|or");
  analyze->add_option("--adjust", a.adjust, "comma-separated covariates or 'none'");
  analyze->add_option("--design-probs", a.design_probs,
                      "comma-separated design randomization probabilities");
  analyze->add_option("--lrt", a.lrt, "restricted:general structure test, e.g. constant:duration");
  analyze->add_option("--out", a.out_dir, "output directory");

  SimulateArgs s;
  auto* simulate = app.add_subcommand("simulate", "run a Monte Carlo study");
  simulate->add_option("--config", s.config, "study config (json or toml)")->required();
  simulate->add_option("--out", s.out_dir, "output directory");
  simulate->add_option("--threads", s.threads, "worker threads (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (analyze->parsed()) return run_analyze(a);
    return run_simulate(s);
  } catch (const UsageError& ex) {
    std::cerr << "usage error: " << ex.what() << "\n";
    return 2;
  } catch (const DataError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return 3;
  } catch (const std::exception& ex) {
    std::cerr << "fit error: " << ex.what() << "\n";
    return 4;
  }
}
