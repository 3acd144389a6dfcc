#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "swedge/design.hpp"
#include "swedge/report.hpp"

namespace swedge {

enum class Link { Identity, Logit, Log };
enum class WorkingCorr { Independence, NestedExchangeable, ExchangeableWithinPeriodOnly };

std::string to_string(Link link);
Link link_from_string(const std::string& s);
std::string to_string(WorkingCorr corr);
WorkingCorr working_corr_from_string(const std::string& s);

// Canonical inverse link and its paired variance function.
double ginv(Link link, double eta);
double variance_function(Link link, double mu);

struct GeeOptions {
  double beta_tol = 1e-10;
  int max_iterations = 200;
  // Pins (rho1, rho2) instead of moment re-estimation.
  std::optional<std::pair<double, double>> fixed_rho;
};

struct GeeFit {
  DesignLayout layout;
  Link link = Link::Identity;
  WorkingCorr corr = WorkingCorr::Independence;
  Eigen::VectorXd beta;
  double rho1 = 0.0;
  double rho2 = 0.0;
  double dispersion = 1.0;
  bool rho_estimated = false;  // moment rows join the stacked sandwich
  bool rho_projected = false;  // correlations pulled back into the PD region
  bool converged = false;
  // Which estimand-robustness precondition the specification satisfies:
  // 1 = working independence, 2 = identity link with constant variance,
  // 3 = within-period-only correlation with cluster-level covariates,
  // 0 = none (a warning is recorded).
  int robustness_condition = 0;
  std::string data_fingerprint;
  std::vector<std::string> warnings;
};

// Per-cluster Pearson-residual pair statistics feeding the moment
// estimators of (rho1, rho2) and the dispersion.
struct ResidualMoments {
  double cross_sum = 0.0;     // sum of cross-period residual products
  double within_sum = 0.0;    // sum of within-period distinct-pair products
  double cross_pairs = 0.0;
  double within_pairs = 0.0;
  double ssq = 0.0;
  long n = 0;
};

ResidualMoments residual_moments(const std::vector<int>& sizes, const Eigen::VectorXd& pearson);

// Equal-weight-per-pair moment estimators: cross-period products give rho1,
// within-period distinct pairs give rho1 + rho2.
std::pair<double, double> moment_correlations(const std::vector<ResidualMoments>& moments,
                                              double dispersion);

GeeFit fit_gee(const DesignSet& designs, WorkingCorr corr, Link link,
               const GeeOptions& options = {});

// g-computation: standardizes the period-j prediction at treatment
// coefficient value b over every enrolled individual of every retained
// period.
double g_compute_mu(const DesignLayout& layout, const std::vector<ClusterDesign>& clusters,
                    Link link, const Eigen::VectorXd& beta, int period_j, double b);
double g_compute_mu(const GeeFit& fit, const DesignSet& designs, int period_j, double b);

// Period weight for the constant-effect GEE-g estimator; pis is the
// cumulative randomization vector pi^s. 1-based period j.
double lambda_weight(const std::vector<int>& sizes, const std::vector<double>& pis,
                     double rho1, double rho2, int j);

// J x J duration weighting matrix for exposure duration d.
Eigen::MatrixXd duration_weight_matrix(int adoption, const std::vector<int>& sizes,
                                       const std::vector<double>& probs, double rho1,
                                       double rho2, int d);

// The stacked M-estimation system of the GEE-g estimators: estimand rows,
// g-computation rows, the GEE score, and (when estimated) the correlation
// moment rows, with its joint sandwich.
struct GeeStacked {
  std::vector<std::string> labels;  // estimand block labels
  Eigen::VectorXd estimates;        // estimand block (log scale for ratio estimands)
  Eigen::VectorXd theta;            // full stacked parameter at the solution
  Eigen::MatrixXd psi;              // dim x I per-cluster contributions at theta
  Eigen::MatrixXd jacobian;
  Eigen::MatrixXd sandwich;
  int n_estimands = 0;
  int mu_offset = 0;
  int beta_offset = 0;
  int rho_offset = -1;  // -1 when the rho block is absent
};

GeeStacked gee_stacked_system(const GeeFit& fit, const DesignSet& designs, EffectScale scale);

EstimandReport estimate_estimands_gee(const GeeFit& fit, const DesignSet& designs,
                                      EffectScale scale,
                                      const std::vector<std::pair<std::string, Eigen::VectorXd>>&
                                          extra_summaries = {});

}  // namespace swedge
