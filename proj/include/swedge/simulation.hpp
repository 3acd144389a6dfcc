#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "swedge/design.hpp"
#include "swedge/gee.hpp"
#include "swedge/lmm.hpp"
#include "swedge/rng.hpp"
#include "swedge/trial_data.hpp"

namespace swedge {

enum class SimDesign { A1, A2, B1, B2, C1, C2 };

std::string to_string(SimDesign design);
SimDesign sim_design_from_string(const std::string& s);

// Centered-Gamma / centered-Poisson noise used by the A2/B2 scenarios in
// place of the Gaussian random effects; second moments match the A1 values.
struct NoiseParams {
  double gamma_cluster_var = 0.1;
  double gamma_cluster_period_var = 0.1;
  double poisson_rate = 0.9;
};

struct GeneratorConfig {
  SimDesign design = SimDesign::A1;
  int n_clusters = 100;
  int n_periods = 0;    // 0 = design default (5 for A/B, 3 for C)
  int source_size = 0;  // 0 = design default (1000 for A/B, 5000 for C)
  int enroll_min = 5;
  int enroll_max = 50;
  bool covariate_effects = true;
  bool treatment_heterogeneity = true;
  bool zero_noise = false;  // degenerate: no random terms, no covariate terms
  bool emit_potential_outcomes = false;
  NoiseParams noise;

  int periods() const;
  int source() const;
};

// One record's potential-outcome row for the consistency check: values for
// assignment z = 0 (index 0) and z = 1..j.
struct PotentialRow {
  int record_index = 0;
  std::vector<double> y_of_z;
};

struct GeneratedTrial {
  TrialData data;
  std::map<std::string, double> truths;
  std::vector<PotentialRow> potential;  // only when emit_potential_outcomes
};

GeneratedTrial generate_trial(const GeneratorConfig& config, Rng& rng);
GeneratedTrial generate_design_a(SimDesign scenario, int n_clusters, std::uint64_t seed);
GeneratedTrial generate_design_b(SimDesign scenario, int n_clusters, std::uint64_t seed);
GeneratedTrial generate_design_c(SimDesign scenario, int n_clusters, std::uint64_t seed);

// True marginal odds-ratio estimands of design C, frozen from the
// deterministic quadrature in tools/true_estimands.
std::map<std::string, double> design_c_true_estimands(SimDesign scenario);
// Recomputes one of them by Gauss-Hermite quadrature (exact up to the
// within-cluster-mean approximation).
double design_c_truth_quadrature(SimDesign scenario, int j, int d, int points = 40);

struct ModelArm {
  std::string name;
  std::string estimator = "lmm";  // "lmm" | "gee"
  TreatmentEffect structure = TreatmentEffect::Constant;
  Correlation lmm_corr = Correlation::Exchangeable;
  WorkingCorr gee_corr = WorkingCorr::Independence;
  Link link = Link::Identity;
  EffectScale scale = EffectScale::Difference;
  std::vector<std::string> adjust;
  std::string re_reference;  // arm whose empirical variance is the RE numerator
};

struct StudyConfig {
  GeneratorConfig generator;
  int replicates = 1;
  std::uint64_t seed = 1;
  int threads = 1;
  std::vector<ModelArm> models;
};

struct MetricRow {
  std::string model;
  std::string estimand;
  double truth = 0.0;
  double bias = 0.0;
  double ese = 0.0;
  double ase_mb = 0.0;  // NaN when the arm has no model-based SE
  double ase_rob = 0.0;
  double ecp_mb = 0.0;  // NaN likewise
  double ecp_rob = 0.0;
  double re = 1.0;
  int n_used = 0;
};

struct StudyMetrics {
  std::vector<MetricRow> rows;
  int replicates = 0;
  int failures = 0;  // replicate x model fit failures, excluded from metrics
  std::map<std::string, int> failures_by_model;
};

// One estimate with its intervals, as recorded per replicate.
struct EstimateRecord {
  double estimate = 0.0;
  double se_robust = 0.0;
  std::optional<double> se_model;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::optional<double> mb_ci_lo;
  std::optional<double> mb_ci_hi;
};

// Aggregates replicate estimates into the study metrics for one
// (model, estimand) cell; exposed for unit testing the formulas.
MetricRow aggregate_metrics(const std::string& model, const std::string& estimand,
                            double truth, const std::vector<EstimateRecord>& records,
                            const std::vector<EstimateRecord>* reference_records);

StudyMetrics run_study(const StudyConfig& config);

std::string metrics_to_csv(const StudyMetrics& metrics);
std::string metrics_to_json(const StudyMetrics& metrics, const StudyConfig& config);

// Reads a study configuration from JSON or a flat TOML subset
// ([[models]] tables, key = value lines).
StudyConfig load_study_config(const std::string& path);
StudyConfig parse_study_config_json(const std::string& text);
StudyConfig parse_study_config_toml(const std::string& text);

}  // namespace swedge
