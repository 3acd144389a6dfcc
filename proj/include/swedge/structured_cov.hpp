#pragma once

#include <Eigen/Dense>
#include <vector>

namespace swedge {

// Variance components of the working covariance
// sigma2 * I + kappa2 * blockdiag{11^T} + tau2 * 11^T
// over a cluster's stacked observed records (blocks = cluster-periods).
// Exchangeable is the special case kappa2 = 0; independence has
// tau2 = kappa2 = 0.
struct VarianceComponents {
  double sigma2 = 1.0;
  double tau2 = 0.0;
  double kappa2 = 0.0;
};

// Closed-form inverse of the observed-data covariance:
//   inv = blockdiag{ (1/sigma2) I - b_j 11^T }  -  c q q^T,
// where q stacks q_j 1_{N_j}. Everything the fitters need (apply, quadratic
// forms, traces, log-determinant) is O(M) off these scalars; the dense
// matrix is never formed.
class StructuredInverse {
 public:
  StructuredInverse(std::vector<int> sizes, const VarianceComponents& vc);

  // out = inv * v
  void apply(const Eigen::VectorXd& v, Eigen::VectorXd& out) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;

  // u^T inv v
  double quadratic_form(const Eigen::VectorXd& u, const Eigen::VectorXd& v) const;

  double logdet() const { return logdet_; }
  double trace() const;                 // tr(inv)
  double trace_blockdiag_ones() const;  // tr(inv * blockdiag{11^T})
  double one_inv_one() const;           // 1^T inv 1

  // Per-period sums of inv*v, needed by the kappa2 score block.
  std::vector<double> block_sums(const Eigen::VectorXd& v) const;

  long total() const { return total_; }
  const std::vector<int>& sizes() const { return sizes_; }
  double sigma2() const { return vc_.sigma2; }
  double b(int j) const { return b_[static_cast<std::size_t>(j)]; }
  double q(int j) const { return q_[static_cast<std::size_t>(j)]; }
  double c() const { return c_; }

 private:
  std::vector<int> sizes_;
  VarianceComponents vc_;
  std::vector<double> b_;  // within-period rank-one correction
  std::vector<double> q_;  // global rank-one loading per period
  double c_ = 0.0;
  double logdet_ = 0.0;
  long total_ = 0;
};

StructuredInverse invert_observed_cov(const std::vector<int>& sizes,
                                      const VarianceComponents& vc);
double logdet_observed_cov(const std::vector<int>& sizes, const VarianceComponents& vc);

// Dense covariance matrix, for tests and small-scale oracles only.
Eigen::MatrixXd dense_observed_cov(const std::vector<int>& sizes, const VarianceComponents& vc);

}  // namespace swedge
