#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "swedge/trial_data.hpp"

namespace swedge {

enum class TreatmentEffect { Constant, DurationSpecific, PeriodSpecific, Saturated };

std::string to_string(TreatmentEffect kind);
TreatmentEffect treatment_effect_from_string(const std::string& s);

// Which treatment-effect structure the working model assumes, and how many
// coefficients / periods that implies. PeriodSpecific and Saturated drop
// period J from fitting to avoid colinearity.
struct TreatmentEffectSpec {
  TreatmentEffect kind = TreatmentEffect::Constant;
  int n_periods = 0;  // J

  bool drops_last_period() const {
    return kind == TreatmentEffect::PeriodSpecific || kind == TreatmentEffect::Saturated;
  }
  int retained_periods() const { return drops_last_period() ? n_periods - 1 : n_periods; }
  int coef_count() const;
  // Coefficient label in the estimand's notation, e.g. "Delta(2)" or "Delta_2(1)".
  std::string coef_label(int idx) const;
};

// Position of Delta_j(d) in the saturated coefficient vector
// (Delta_1(1), Delta_2(1), Delta_2(2), ...), 0-based; valid for
// 1 <= d <= j <= J-1.
int saturated_index(int j, int d, int J);
std::pair<int, int> saturated_from_index(int idx, int J);

// Treatment block of the design row for a cluster with adoption time z
// observed in period j. At most one entry is 1, the rest 0.
Eigen::RowVectorXd treatment_row(int z, int j, const TreatmentEffectSpec& spec);

enum class SummaryKind { DurationAverage, PeriodAverage, SaturatedAverage, Custom };

// Weight vector over the spec's treatment coefficients; always sums to 1.
Eigen::VectorXd summary_weights(SummaryKind kind, int J,
                                const std::vector<double>* custom = nullptr);

// Per-cluster fitting inputs: stacked outcomes and design matrix over the
// retained periods, with columns ordered (period, treatment, covariates).
struct ClusterDesign {
  std::string cluster_id;
  int adoption = 0;            // Z_i
  std::vector<int> sizes;      // N_ij over retained periods
  std::vector<int> all_sizes;  // N_ij over all J periods
  Eigen::VectorXd y;
  Eigen::MatrixXd Q;
  long M() const { return y.size(); }
};

struct DesignLayout {
  TreatmentEffectSpec spec;
  int retained = 0;
  int n_treat = 0;
  int n_cov = 0;
  std::vector<std::string> covariate_names;
  int cols() const { return retained + n_treat + n_cov; }
  int treat_offset() const { return retained; }
  int cov_offset() const { return retained + n_treat; }
  std::string column_label(int idx) const;
};

struct DesignSet {
  DesignLayout layout;
  std::vector<ClusterDesign> clusters;
  RandomizationSpec randomization;
  long total_rows() const;
};

// Builds Q_i/y_i for every cluster. `adjust` selects covariate columns by
// name (empty = unadjusted). `retained_override` forces a smaller retained
// period count, used when a nested model must be re-fit on the general
// model's retained periods.
DesignSet build_designs(const TrialData& data, const TreatmentEffectSpec& spec,
                        const std::vector<std::string>& adjust = {},
                        std::optional<int> retained_override = std::nullopt);

// Single-cluster design matrix used by tests.
Eigen::MatrixXd build_cluster_design(int adoption, const std::vector<int>& sizes,
                                     const Eigen::MatrixXd& covariates,
                                     const TreatmentEffectSpec& spec);

// Enrollment pattern of one cluster against a known source population,
// with the dense selection matrix it implies. Only simulated or toy data
// know the source indices, so this lives here for property checks.
struct SelectionStructure {
  int source_size = 0;                           // N_i
  std::vector<std::vector<int>> enrolled;        // 0-based source indices per period
  Eigen::MatrixXd dense() const;                 // N_i*J x M_i
  long observed_total() const;
};

}  // namespace swedge
