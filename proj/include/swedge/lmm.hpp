#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "swedge/design.hpp"
#include "swedge/report.hpp"
#include "swedge/structured_cov.hpp"

namespace swedge {

enum class Correlation { Independence, Exchangeable, NestedExchangeable };

std::string to_string(Correlation corr);
Correlation correlation_from_string(const std::string& s);

// Number of free variance components under the working correlation.
int active_vc_count(Correlation corr);

struct LmmOptions {
  double score_tol = 1e-8;  // on the scaled score norm
  int max_outer_iterations = 200;
  double vc_floor = 1e-10;
  bool compute_sandwich = true;
};

struct LmmFit {
  DesignLayout layout;
  Correlation corr = Correlation::NestedExchangeable;
  Eigen::VectorXd beta;  // period, treatment, covariate coefficients
  VarianceComponents vc;
  double loglik = 0.0;
  bool converged = false;
  bool boundary = false;
  int n_clusters = 0;
  long total_rows = 0;
  std::string data_fingerprint;
  Eigen::MatrixXd scores;          // theta_dim x I, per-cluster contributions
  Eigen::MatrixXd jacobian;        // sum_i d psi_i / d theta
  Eigen::MatrixXd sandwich_cov;    // theta_dim x theta_dim
  Eigen::MatrixXd model_based_cov; // beta block only

  int n_beta() const { return static_cast<int>(beta.size()); }
  int theta_dim() const { return n_beta() + active_vc_count(corr); }
};

// Per-cluster Gaussian log-likelihood score for (beta, active variance
// components), evaluated with the structured observed-data inverse.
Eigen::VectorXd lmm_score(const ClusterDesign& cluster, const Eigen::VectorXd& beta,
                          const VarianceComponents& vc, Correlation corr);
double lmm_cluster_loglik(const ClusterDesign& cluster, const Eigen::VectorXd& beta,
                          const VarianceComponents& vc);

LmmFit fit_lmm(const DesignSet& designs, Correlation corr, const LmmOptions& options = {});

// A^{-1} B A^{-T} with B the outer-product sum of per-cluster scores.
Eigen::MatrixXd sandwich_from_scores(const Eigen::MatrixXd& scores,
                                     const Eigen::MatrixXd& jacobian);

struct SummaryRequest {
  std::string label;
  Eigen::VectorXd weights;
};

EstimandReport extract_estimands(const LmmFit& fit,
                                 const std::vector<SummaryRequest>& extra_summaries = {});

// Smallest-eigenvalue eigenvector of the treatment-block covariance,
// normalized to sum 1 (minimum-variance summary weights).
Eigen::VectorXd min_variance_weights(const Eigen::MatrixXd& cov);

struct LrtResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
};

// -2 log likelihood ratio of nested treatment-effect structures fit on the
// same retained periods and correlation structure.
LrtResult lrt_structures(const LmmFit& restricted, const LmmFit& general);

}  // namespace swedge
