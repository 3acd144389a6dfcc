#include "swedge/structured_cov.hpp"

#include <cmath>
#include <stdexcept>

namespace swedge {

StructuredInverse::StructuredInverse(std::vector<int> sizes, const VarianceComponents& vc)
    : sizes_(std::move(sizes)), vc_(vc) {
  if (vc.sigma2 <= 0.0) throw std::invalid_argument("sigma2 must be positive");
  if (vc.tau2 < 0.0 || vc.kappa2 < 0.0) {
    throw std::invalid_argument("tau2 and kappa2 must be nonnegative");
  }
  double qn_sum = 0.0;  // sum_j N_j / (sigma2 + N_j kappa2)
  for (int n : sizes_) {
    if (n < 0) throw std::invalid_argument("negative block size");
    total_ += n;
    const double denom = vc.sigma2 + n * vc.kappa2;
    b_.push_back(vc.kappa2 / (vc.sigma2 * denom));
    q_.push_back(1.0 / denom);
    if (n > 0) {
      qn_sum += n / denom;
      logdet_ += (n - 1) * std::log(vc.sigma2) + std::log(denom);
    }
  }
  if (total_ == 0) throw std::invalid_argument("all block sizes are zero");
  // c = (1/tau2 + qn_sum)^{-1} = tau2 / (1 + tau2 qn_sum); the rank-one
  // term vanishes in the tau2 -> 0 limit.
  c_ = vc.tau2 / (1.0 + vc.tau2 * qn_sum);
  logdet_ += std::log1p(vc.tau2 * qn_sum);
}

void StructuredInverse::apply(const Eigen::VectorXd& v, Eigen::VectorXd& out) const {
  if (v.size() != total_) throw std::invalid_argument("length mismatch in apply");
  out.resize(total_);
  const double inv_s2 = 1.0 / vc_.sigma2;
  double qv = 0.0;  // q^T v
  long off = 0;
  for (std::size_t j = 0; j < sizes_.size(); ++j) {
    const int n = sizes_[j];
    if (n == 0) continue;
    const double bsum = v.segment(off, n).sum();
    out.segment(off, n) = inv_s2 * v.segment(off, n).array() - b_[j] * bsum;
    qv += q_[j] * bsum;
    off += n;
  }
  if (c_ != 0.0) {
    off = 0;
    for (std::size_t j = 0; j < sizes_.size(); ++j) {
      const int n = sizes_[j];
      if (n == 0) continue;
      out.segment(off, n).array() -= c_ * qv * q_[j];
      off += n;
    }
  }
}

Eigen::VectorXd StructuredInverse::apply(const Eigen::VectorXd& v) const {
  Eigen::VectorXd out;
  apply(v, out);
  return out;
}

double StructuredInverse::quadratic_form(const Eigen::VectorXd& u,
                                         const Eigen::VectorXd& v) const {
  if (u.size() != total_ || v.size() != total_) {
    throw std::invalid_argument("length mismatch in quadratic_form");
  }
  const double inv_s2 = 1.0 / vc_.sigma2;
  double acc = 0.0, qu = 0.0, qv = 0.0;
  long off = 0;
  for (std::size_t j = 0; j < sizes_.size(); ++j) {
    const int n = sizes_[j];
    if (n == 0) continue;
    const double su = u.segment(off, n).sum();
    const double sv = v.segment(off, n).sum();
    acc += inv_s2 * u.segment(off, n).dot(v.segment(off, n)) - b_[j] * su * sv;
    qu += q_[j] * su;
    qv += q_[j] * sv;
    off += n;
  }
  return acc - c_ * qu * qv;
}

double StructuredInverse::trace() const {
  double tr = 0.0, qq = 0.0;
  for (std::size_t j = 0; j < sizes_.size(); ++j) {
    const int n = sizes_[j];
    tr += n * (1.0 / vc_.sigma2 - b_[j]);
    qq += n * q_[j] * q_[j];
  }
  return tr - c_ * qq;
}

double StructuredInverse::trace_blockdiag_ones() const {
  double tr = 0.0, qq = 0.0;
  for (std::size_t j = 0; j < sizes_.size(); ++j) {
    const double n = sizes_[j];
    tr += n / vc_.sigma2 - b_[j] * n * n;
    qq += (n * q_[j]) * (n * q_[j]);
  }
  return tr - c_ * qq;
}

double StructuredInverse::one_inv_one() const {
  double blocks = 0.0, qn = 0.0;
  for (std::size_t j = 0; j < sizes_.size(); ++j) {
    const double n = sizes_[j];
    blocks += n / vc_.sigma2 - b_[j] * n * n;
    qn += n * q_[j];
  }
  return blocks - c_ * qn * qn;
}

std::vector<double> StructuredInverse::block_sums(const Eigen::VectorXd& v) const {
  if (v.size() != total_) throw std::invalid_argument("length mismatch in block_sums");
  std::vector<double> sums(sizes_.size(), 0.0);
  long off = 0;
  for (std::size_t j = 0; j < sizes_.size(); ++j) {
    const int n = sizes_[j];
    if (n == 0) continue;
    sums[j] = v.segment(off, n).sum();
    off += n;
  }
  return sums;
}

StructuredInverse invert_observed_cov(const std::vector<int>& sizes,
                                      const VarianceComponents& vc) {
  return StructuredInverse(sizes, vc);
}

double logdet_observed_cov(const std::vector<int>& sizes, const VarianceComponents& vc) {
  return StructuredInverse(sizes, vc).logdet();
}

Eigen::MatrixXd dense_observed_cov(const std::vector<int>& sizes,
                                   const VarianceComponents& vc) {
  long total = 0;
  for (int n : sizes) total += n;
  Eigen::MatrixXd cov =
      Eigen::MatrixXd::Constant(total, total, vc.tau2) +
      vc.sigma2 * Eigen::MatrixXd::Identity(total, total);
  long off = 0;
  for (int n : sizes) {
    cov.block(off, off, n, n).array() += vc.kappa2;
    off += n;
  }
  return cov;
}

}  // namespace swedge
