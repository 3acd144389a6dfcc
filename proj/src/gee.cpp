#include "swedge/gee.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace swedge {

std::string to_string(Link link) {
  switch (link) {
    case Link::Identity: return "identity";
    case Link::Logit: return "logit";
    case Link::Log: return "log";
  }
  return "?";
}

Link link_from_string(const std::string& s) {
  if (s == "identity") return Link::Identity;
  if (s == "logit") return Link::Logit;
  if (s == "log") return Link::Log;
  throw std::invalid_argument("unknown link '" + s + "'");
}

std::string to_string(WorkingCorr corr) {
  switch (corr) {
    case WorkingCorr::Independence: return "independence";
    case WorkingCorr::NestedExchangeable: return "nested";
    case WorkingCorr::ExchangeableWithinPeriodOnly: return "within-period";
  }
  return "?";
}

WorkingCorr working_corr_from_string(const std::string& s) {
  if (s == "independence") return WorkingCorr::Independence;
  if (s == "nested") return WorkingCorr::NestedExchangeable;
  if (s == "within-period") return WorkingCorr::ExchangeableWithinPeriodOnly;
  throw std::invalid_argument("unknown working correlation '" + s + "'");
}

double ginv(Link link, double eta) {
  switch (link) {
    case Link::Identity: return eta;
    case Link::Logit: return 1.0 / (1.0 + std::exp(-eta));
    case Link::Log: return std::exp(eta);
  }
  return eta;
}

double variance_function(Link link, double mu) {
  switch (link) {
    case Link::Identity: return 1.0;
    case Link::Logit: return mu * (1.0 - mu);
    case Link::Log: return mu;
  }
  return 1.0;
}

namespace {

// Inverse of the nested-exchangeable working correlation
// (1-r1-r2) I + r1 11^T + r2 blockdiag{11^T} applied in O(M). Unlike the
// variance-component inverse this tolerates negative correlations as long
// as the matrix stays positive definite.
struct CorrInverse {
  const std::vector<int>* sizes;
  double s2;
  std::vector<double> b, q;
  double c;

  CorrInverse(const std::vector<int>& sz, double rho1, double rho2) : sizes(&sz) {
    s2 = 1.0 - rho1 - rho2;
    if (s2 <= 0.0) throw std::runtime_error("working correlation not positive definite");
    double qn = 0.0;
    for (int n : sz) {
      const double denom = s2 + n * rho2;
      if (denom <= 0.0) throw std::runtime_error("working correlation not positive definite");
      b.push_back(rho2 / (s2 * denom));
      q.push_back(1.0 / denom);
      qn += n / denom;
    }
    const double cden = 1.0 + rho1 * qn;
    if (cden <= 0.0) throw std::runtime_error("working correlation not positive definite");
    c = rho1 / cden;
  }

  void apply(const Eigen::VectorXd& v, Eigen::VectorXd& out) const {
    out.resize(v.size());
    double qv = 0.0;
    long off = 0;
    for (std::size_t j = 0; j < sizes->size(); ++j) {
      const int n = (*sizes)[j];
      if (n == 0) continue;
      const double bsum = v.segment(off, n).sum();
      out.segment(off, n) = v.segment(off, n).array() / s2 - b[j] * bsum;
      qv += q[j] * bsum;
      off += n;
    }
    if (c != 0.0) {
      off = 0;
      for (std::size_t j = 0; j < sizes->size(); ++j) {
        const int n = (*sizes)[j];
        if (n == 0) continue;
        out.segment(off, n).array() -= c * qv * q[j];
        off += n;
      }
    }
  }
};

bool correlation_pd(const std::vector<ClusterDesign>& clusters, double rho1, double rho2) {
  const double s2 = 1.0 - rho1 - rho2;
  if (s2 <= 1e-10) return false;
  for (const auto& cl : clusters) {
    double qn = 0.0;
    for (int n : cl.sizes) {
      const double denom = s2 + n * rho2;
      if (denom <= 1e-12) return false;
      qn += n / denom;
    }
    if (1.0 + rho1 * qn <= 1e-12) return false;
  }
  return true;
}

std::string stacked_fingerprint(const DesignSet& designs) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  mix(static_cast<std::uint64_t>(designs.clusters.size()));
  mix(static_cast<std::uint64_t>(designs.total_rows()));
  double ysum = 0.0, ysq = 0.0;
  for (const auto& c : designs.clusters) {
    ysum += c.y.sum();
    ysq += c.y.squaredNorm();
  }
  std::uint64_t bits;
  std::memcpy(&bits, &ysum, sizeof(bits));
  mix(bits);
  std::memcpy(&bits, &ysq, sizeof(bits));
  mix(bits);
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace

ResidualMoments residual_moments(const std::vector<int>& sizes, const Eigen::VectorXd& pearson) {
  ResidualMoments m;
  m.n = pearson.size();
  double total = 0.0, sum_block_sq = 0.0, sum_block_ssq = 0.0;
  long off = 0, nn = 0;
  for (int n : sizes) {
    if (n == 0) continue;
    const double bs = pearson.segment(off, n).sum();
    const double bss = pearson.segment(off, n).squaredNorm();
    total += bs;
    sum_block_sq += bs * bs;
    sum_block_ssq += bss;
    m.within_sum += 0.5 * (bs * bs - bss);
    m.within_pairs += 0.5 * n * (n - 1.0);
    nn += n;
    off += n;
  }
  m.ssq = sum_block_ssq;
  m.cross_sum = 0.5 * (total * total - sum_block_sq);
  m.cross_pairs = 0.5 * (static_cast<double>(nn) * nn - [&sizes] {
                    double s = 0.0;
                    for (int n : sizes) s += static_cast<double>(n) * n;
                    return s;
                  }());
  return m;
}

std::pair<double, double> moment_correlations(const std::vector<ResidualMoments>& moments,
                                              double dispersion) {
  double cs = 0.0, cp = 0.0, ws = 0.0, wp = 0.0;
  for (const auto& m : moments) {
    cs += m.cross_sum;
    cp += m.cross_pairs;
    ws += m.within_sum;
    wp += m.within_pairs;
  }
  const double rho1 = (cp > 0.0 && dispersion > 0.0) ? cs / (cp * dispersion) : 0.0;
  const double within = (wp > 0.0 && dispersion > 0.0) ? ws / (wp * dispersion) : 0.0;
  return {rho1, within - rho1};
}

GeeFit fit_gee(const DesignSet& designs, WorkingCorr corr, Link link,
               const GeeOptions& options) {
  const auto& clusters = designs.clusters;
  const int q = designs.layout.cols();

  GeeFit fit;
  fit.layout = designs.layout;
  fit.link = link;
  fit.corr = corr;
  fit.data_fingerprint = stacked_fingerprint(designs);
  fit.rho_estimated = !options.fixed_rho.has_value() && corr != WorkingCorr::Independence;
  if (options.fixed_rho) {
    fit.rho1 = options.fixed_rho->first;
    fit.rho2 = options.fixed_rho->second;
    if (corr == WorkingCorr::Independence && (fit.rho1 != 0.0 || fit.rho2 != 0.0)) {
      throw std::invalid_argument("independence working correlation requires rho = 0");
    }
    if (corr == WorkingCorr::ExchangeableWithinPeriodOnly && fit.rho1 != 0.0) {
      throw std::invalid_argument("within-period working correlation pins rho1 = 0");
    }
  }

  // Starting values: exact least squares for the identity link, zero
  // otherwise (Fisher scoring from zero is standard IRLS).
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
  if (link == Link::Identity) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(q, q);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(q);
    for (const auto& c : clusters) {
      A.noalias() += c.Q.transpose() * c.Q;
      b.noalias() += c.Q.transpose() * c.y;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    const double max_ev = es.eigenvalues().maxCoeff();
    if (max_ev <= 0.0 || es.eigenvalues()(0) <= 1e-10 * max_ev) {
      int worst = 0;
      es.eigenvectors().col(0).cwiseAbs().maxCoeff(&worst);
      throw std::runtime_error("design matrix rank-deficient: coefficient '" +
                               designs.layout.column_label(worst) + "' is not identified");
    }
    beta = A.ldlt().solve(b);
  }

  std::vector<ResidualMoments> moments(clusters.size());
  auto refresh_moments = [&](const Eigen::VectorXd& bb) {
    double ssq = 0.0;
    long n = 0;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      const auto& c = clusters[i];
      if (c.M() == 0) {
        moments[i] = ResidualMoments{};
        continue;
      }
      Eigen::VectorXd e(c.M());
      for (long r = 0; r < c.M(); ++r) {
        const double mu = ginv(link, c.Q.row(r).dot(bb));
        e(r) = (c.y(r) - mu) / std::sqrt(variance_function(link, mu));
      }
      moments[i] = residual_moments(c.sizes, e);
      ssq += moments[i].ssq;
      n += moments[i].n;
    }
    return n > 0 ? ssq / static_cast<double>(n) : 1.0;
  };

  bool converged = false;
  for (int iter = 0; iter < options.max_iterations && !converged; ++iter) {
    if (fit.rho_estimated) {
      fit.dispersion = refresh_moments(beta);
      auto [r1, r2] = moment_correlations(moments, fit.dispersion);
      if (corr == WorkingCorr::ExchangeableWithinPeriodOnly) {
        // rho1 pinned at zero; within-period pairs alone identify rho2
        double wsum = 0.0, wpairs = 0.0;
        for (const auto& m : moments) {
          wsum += m.within_sum;
          wpairs += m.within_pairs;
        }
        r1 = 0.0;
        r2 = (wpairs > 0.0 && fit.dispersion > 0.0) ? wsum / (wpairs * fit.dispersion) : 0.0;
      }
      double cross_pairs = 0.0;
      for (const auto& m : moments) cross_pairs += m.cross_pairs;
      if (cross_pairs == 0.0 && corr == WorkingCorr::NestedExchangeable) {
        fit.warnings.push_back("no cross-period pairs: rho1 set to 0");
      }
      while (!correlation_pd(clusters, r1, r2)) {
        r1 *= 0.9;
        r2 *= 0.9;
        fit.rho_projected = true;
        if (std::abs(r1) < 1e-12 && std::abs(r2) < 1e-12) break;
      }
      if (fit.rho_projected && fit.warnings.empty()) {
        fit.warnings.push_back("moment correlations projected into the PD region");
      }
      fit.rho1 = r1;
      fit.rho2 = r2;
    }

    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(q, q);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(q);
    for (const auto& c : clusters) {
      if (c.M() == 0) continue;
      const CorrInverse rin(c.sizes, fit.rho1, fit.rho2);
      Eigen::VectorXd e(c.M()), sv(c.M());
      for (long r = 0; r < c.M(); ++r) {
        const double mu = ginv(link, c.Q.row(r).dot(beta));
        const double v = variance_function(link, mu);
        sv(r) = std::sqrt(v);
        e(r) = (c.y(r) - mu) / sv(r);
      }
      Eigen::VectorXd tmp;
      rin.apply(e, tmp);
      score.noalias() += c.Q.transpose() * sv.cwiseProduct(tmp);
      Eigen::MatrixXd SQ = sv.asDiagonal() * c.Q;
      Eigen::MatrixXd RSQ(c.M(), q);
      for (int k = 0; k < q; ++k) {
        rin.apply(SQ.col(k), tmp);
        RSQ.col(k) = tmp;
      }
      info.noalias() += SQ.transpose() * RSQ;
    }
    const Eigen::VectorXd delta = info.ldlt().solve(score);
    if (!delta.allFinite()) throw std::runtime_error("GEE update produced non-finite step");
    beta += delta;
    converged = delta.cwiseAbs().maxCoeff() < options.beta_tol;
  }
  if (!converged) {
    throw std::runtime_error("GEE did not converge in " +
                             std::to_string(options.max_iterations) + " iterations");
  }
  fit.beta = beta;
  fit.converged = true;
  fit.dispersion = refresh_moments(beta);

  // Which of the robustness conditions holds for this specification.
  if (fit.rho1 == 0.0 && fit.rho2 == 0.0) {
    fit.robustness_condition = 1;
  } else if (link == Link::Identity) {
    fit.robustness_condition = 2;
  } else if (fit.rho1 == 0.0) {
    bool cluster_level = true;
    const int p = designs.layout.n_cov;
    const int off = designs.layout.cov_offset();
    for (const auto& c : clusters) {
      for (int k = 0; k < p && cluster_level; ++k) {
        const auto col = c.Q.col(off + k);
        if (c.M() > 0 && (col.maxCoeff() - col.minCoeff()) > 1e-12) cluster_level = false;
      }
    }
    fit.robustness_condition = cluster_level ? 3 : 0;
  } else {
    fit.robustness_condition = 0;
  }
  if (fit.robustness_condition == 0) {
    fit.warnings.push_back(
        "none of the robustness conditions (independence, identity link, or "
        "within-period-only correlation with cluster-level covariates) holds; "
        "estimand consistency is not guaranteed under misspecification");
  }
  return fit;
}

double g_compute_mu(const DesignLayout& layout, const std::vector<ClusterDesign>& clusters,
                    Link link, const Eigen::VectorXd& beta, int period_j, double b) {
  if (period_j < 1 || period_j > layout.retained) {
    throw std::invalid_argument("g_compute_mu: period out of the retained range");
  }
  const int p = layout.n_cov;
  const int off = layout.cov_offset();
  const double beta0j = beta(period_j - 1);
  double num = 0.0;
  long den = 0;
  for (const auto& c : clusters) {
    for (long r = 0; r < c.M(); ++r) {
      double eta = beta0j + b;
      for (int k = 0; k < p; ++k) eta += c.Q(r, off + k) * beta(off + k);
      num += ginv(link, eta);
    }
    den += c.M();
  }
  if (den == 0) throw std::runtime_error("g_compute_mu: no enrolled individuals");
  return num / static_cast<double>(den);
}

double g_compute_mu(const GeeFit& fit, const DesignSet& designs, int period_j, double b) {
  return g_compute_mu(fit.layout, designs.clusters, fit.link, fit.beta, period_j, b);
}

double lambda_weight(const std::vector<int>& sizes, const std::vector<double>& pis,
                     double rho1, double rho2, int j) {
  const int J = static_cast<int>(sizes.size());
  if (j < 1 || j > J) throw std::invalid_argument("lambda_weight: period out of range");
  if (static_cast<int>(pis.size()) != J) {
    throw std::invalid_argument("lambda_weight: cumulative probabilities of wrong length");
  }
  const double pj = pis[static_cast<std::size_t>(j - 1)];
  double s = 0.0, t = 0.0;
  for (int l = 1; l <= J; ++l) {
    const double nl = sizes[static_cast<std::size_t>(l - 1)];
    const double dl = 1.0 + nl * rho2;
    const double pl = pis[static_cast<std::size_t>(l - 1)];
    s += nl * rho1 / dl;
    t += nl * (pis[static_cast<std::size_t>(std::min(j, l) - 1)] - pj * pl) / dl;
  }
  return (pj * (1.0 - pj) - rho1 / (1.0 + s) * t) / (1.0 + sizes[static_cast<std::size_t>(j - 1)] * rho2);
}

Eigen::MatrixXd duration_weight_matrix(int adoption, const std::vector<int>& sizes,
                                       const std::vector<double>& probs, double rho1,
                                       double rho2, int d) {
  const int J = static_cast<int>(sizes.size());
  if (d < 1 || d > J) throw std::invalid_argument("duration_weight_matrix: d out of range");
  if (static_cast<int>(probs.size()) != J) {
    throw std::invalid_argument("duration_weight_matrix: probabilities of wrong length");
  }
  // Both factors are period-constant, so the kernel collapses to J x J:
  // K = diag{g_j} - c g g^T with g_j = N_j / (1 + N_j rho2).
  Eigen::VectorXd g(J);
  double gsum = 0.0;
  for (int j = 0; j < J; ++j) {
    g(j) = sizes[static_cast<std::size_t>(j)] / (1.0 + sizes[static_cast<std::size_t>(j)] * rho2);
    gsum += g(j);
  }
  const double c = rho1 / (1.0 + rho1 * gsum);

  Eigen::MatrixXd Hdev = Eigen::MatrixXd::Zero(J, J);  // H_Z - E[H_Z]
  for (int j = 1; j <= J; ++j) {
    for (int dd = 1; dd <= j; ++dd) {
      const int z = j - dd + 1;
      Hdev(j - 1, dd - 1) =
          (adoption == z ? 1.0 : 0.0) - probs[static_cast<std::size_t>(z - 1)];
    }
  }
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(J);  // diagonal of Lambda_Z^d
  for (int j = d; j <= J; ++j) {
    if (adoption == j - d + 1) lam(j - 1) = 1.0;
  }

  // (H_Z - E[H_Z])^T (diag g - c g g^T) Lambda_Z^d
  Eigen::MatrixXd out(J, J);
  const Eigen::VectorXd Hg = Hdev.transpose() * g;  // J-vector of column sums against g
  for (int col = 0; col < J; ++col) {
    if (lam(col) == 0.0) {
      out.col(col).setZero();
      continue;
    }
    out.col(col) = Hdev.row(col).transpose() * g(col) - c * g(col) * Hg;
  }
  return out;
}

namespace {

struct MuParam {
  int j = 0;     // 1-based retained period
  int coef = -1; // treatment coefficient index, -1 for b = 0
};

double ratio_transform(EffectScale scale, double x, double y) {
  switch (scale) {
    case EffectScale::Difference:
      return x - y;
    case EffectScale::RiskRatio:
      if (x <= 0.0 || y <= 0.0) {
        throw std::runtime_error("risk ratio undefined: standardized mean not positive");
      }
      return std::log(x) - std::log(y);
    case EffectScale::OddsRatio:
      if (x <= 0.0 || x >= 1.0 || y <= 0.0 || y >= 1.0) {
        throw std::runtime_error("odds ratio undefined: standardized mean outside (0,1)");
      }
      return std::log(x / (1.0 - x)) - std::log(y / (1.0 - y));
  }
  return x - y;
}

}  // namespace

GeeStacked gee_stacked_system(const GeeFit& fit, const DesignSet& designs, EffectScale scale) {
  const auto& L = fit.layout;
  const auto kind = L.spec.kind;
  const int J = L.spec.n_periods;
  const int R = L.retained;
  const int q = L.cols();
  const int m = L.n_treat;
  const auto& clusters = designs.clusters;

  if (scale != EffectScale::Difference && kind != TreatmentEffect::PeriodSpecific &&
      kind != TreatmentEffect::Saturated) {
    throw std::invalid_argument(
        "ratio estimands are defined per period: use the saturated or period-specific "
        "treatment effect structure");
  }

  // g-computation parameter list: one entry per (period, coefficient value).
  std::vector<MuParam> mus;
  std::vector<int> null_index(static_cast<std::size_t>(R) + 1, -1);
  auto mu_index = [&mus](int j, int coef) {
    for (std::size_t k = 0; k < mus.size(); ++k) {
      if (mus[k].j == j && mus[k].coef == coef) return static_cast<int>(k);
    }
    throw std::logic_error("mu parameter not found");
  };
  switch (kind) {
    case TreatmentEffect::Constant:
      for (int j = 1; j <= J; ++j) mus.push_back({j, 0});
      break;
    case TreatmentEffect::DurationSpecific:
      for (int d = 1; d <= m; ++d) {
        for (int j = 1; j <= J; ++j) mus.push_back({j, d - 1});
      }
      break;
    case TreatmentEffect::PeriodSpecific:
      for (int j = 1; j <= R; ++j) mus.push_back({j, j - 1});
      break;
    case TreatmentEffect::Saturated:
      for (int j = 1; j <= R; ++j) {
        for (int d = 1; d <= j; ++d) mus.push_back({j, saturated_index(j, d, J)});
      }
      break;
  }
  for (int j = 1; j <= R; ++j) {
    null_index[static_cast<std::size_t>(j)] = static_cast<int>(mus.size());
    mus.push_back({j, -1});
  }
  const int n_mu = static_cast<int>(mus.size());

  // Point values of every standardized mean.
  Eigen::VectorXd mu_hat(n_mu);
  for (int k = 0; k < n_mu; ++k) {
    const double b = mus[static_cast<std::size_t>(k)].coef < 0
                         ? 0.0
                         : fit.beta(L.treat_offset() + mus[static_cast<std::size_t>(k)].coef);
    mu_hat(k) = g_compute_mu(L, clusters, fit.link, fit.beta,
                             mus[static_cast<std::size_t>(k)].j, b);
  }

  const std::vector<double> pis = designs.randomization.cumulative();
  const std::vector<double>& probs = designs.randomization.probs;

  // Estimand block point estimates.
  Eigen::VectorXd est(m);
  std::vector<std::string> labels(static_cast<std::size_t>(m));
  switch (kind) {
    case TreatmentEffect::Constant: {
      double num = 0.0, den = 0.0;
      for (const auto& c : clusters) {
        for (int j = 1; j <= J; ++j) {
          const double lam = lambda_weight(c.all_sizes, pis, fit.rho1, fit.rho2, j);
          num += lam * (mu_hat(mu_index(j, 0)) - mu_hat(null_index[static_cast<std::size_t>(j)]));
          den += lam;
        }
      }
      if (std::abs(den) < 1e-12) throw std::runtime_error("lambda weights sum to zero");
      est(0) = num / den;
      labels[0] = "Delta";
      break;
    }
    case TreatmentEffect::DurationSpecific: {
      Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(J, J);
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(J);
      for (const auto& c : clusters) {
        for (int d = 1; d <= J; ++d) {
          const Eigen::MatrixXd Lam =
              duration_weight_matrix(c.adoption, c.all_sizes, probs, fit.rho1, fit.rho2, d);
          Eigen::MatrixXd Hd = Eigen::MatrixXd::Zero(J, J);
          Hd.col(d - 1).setOnes();
          lhs.noalias() += Lam * Hd;
          Eigen::VectorXd md(J);
          for (int j = 1; j <= J; ++j) {
            md(j - 1) = mu_hat(mu_index(j, d - 1)) -
                        mu_hat(null_index[static_cast<std::size_t>(j)]);
          }
          rhs.noalias() += Lam * md;
        }
      }
      Eigen::FullPivLU<Eigen::MatrixXd> lu(lhs);
      if (!lu.isInvertible()) {
        throw std::runtime_error("duration weighting matrix singular (empty duration cell?)");
      }
      est = lu.solve(rhs);
      for (int d = 1; d <= J; ++d) labels[static_cast<std::size_t>(d - 1)] = "Delta(" + std::to_string(d) + ")";
      break;
    }
    case TreatmentEffect::PeriodSpecific: {
      for (int j = 1; j <= R; ++j) {
        est(j - 1) = ratio_transform(scale, mu_hat(mu_index(j, j - 1)),
                                     mu_hat(null_index[static_cast<std::size_t>(j)]));
        labels[static_cast<std::size_t>(j - 1)] =
            (scale == EffectScale::Difference ? "Delta_" : "Phi_") + std::to_string(j);
      }
      break;
    }
    case TreatmentEffect::Saturated: {
      for (int j = 1; j <= R; ++j) {
        for (int d = 1; d <= j; ++d) {
          const int k = saturated_index(j, d, J);
          est(k) = ratio_transform(scale, mu_hat(mu_index(j, k)),
                                   mu_hat(null_index[static_cast<std::size_t>(j)]));
          labels[static_cast<std::size_t>(k)] =
              (scale == EffectScale::Difference ? "Delta_" : "Phi_") + std::to_string(j) + "(" +
              std::to_string(d) + ")";
        }
      }
      break;
    }
  }

  const int n_rho = fit.rho_estimated
                        ? (fit.corr == WorkingCorr::ExchangeableWithinPeriodOnly ? 2 : 3)
                        : 0;
  const int dim = m + n_mu + q + n_rho;

  GeeStacked sys;
  sys.labels = labels;
  sys.estimates = est;
  sys.n_estimands = m;
  sys.mu_offset = m;
  sys.beta_offset = m + n_mu;
  sys.rho_offset = n_rho > 0 ? m + n_mu + q : -1;
  sys.theta.resize(dim);
  sys.theta.head(m) = est;
  sys.theta.segment(m, n_mu) = mu_hat;
  sys.theta.segment(m + n_mu, q) = fit.beta;
  if (n_rho == 3) {
    sys.theta(sys.rho_offset) = fit.rho1;
    sys.theta(sys.rho_offset + 1) = fit.rho2;
    sys.theta(sys.rho_offset + 2) = fit.dispersion;
  } else if (n_rho == 2) {
    sys.theta(sys.rho_offset) = fit.rho2;
    sys.theta(sys.rho_offset + 1) = fit.dispersion;
  }

  // Full stacked estimating function for one cluster at an arbitrary theta.
  const auto psi_cluster = [&](const ClusterDesign& c, const Eigen::VectorXd& th,
                               Eigen::VectorXd& out) {
    out.setZero(dim);
    const auto estv = th.head(m);
    const auto muv = th.segment(m, n_mu);
    const auto bv = th.segment(m + n_mu, q);
    double r1 = fit.rho1, r2 = fit.rho2, phi = fit.dispersion;
    if (n_rho == 3) {
      r1 = th(sys.rho_offset);
      r2 = th(sys.rho_offset + 1);
      phi = th(sys.rho_offset + 2);
    } else if (n_rho == 2) {
      r2 = th(sys.rho_offset);
      phi = th(sys.rho_offset + 1);
    }

    // estimand rows
    switch (kind) {
      case TreatmentEffect::Constant: {
        double acc = 0.0;
        for (int j = 1; j <= J; ++j) {
          const double lam = lambda_weight(c.all_sizes, pis, r1, r2, j);
          acc += lam * (estv(0) - (muv(mu_index(j, 0)) -
                                   muv(null_index[static_cast<std::size_t>(j)])));
        }
        out(0) = acc;
        break;
      }
      case TreatmentEffect::DurationSpecific: {
        for (int d = 1; d <= J; ++d) {
          const Eigen::MatrixXd Lam =
              duration_weight_matrix(c.adoption, c.all_sizes, probs, r1, r2, d);
          Eigen::VectorXd inner(J);
          for (int j = 1; j <= J; ++j) {
            inner(j - 1) = estv(d - 1) - (muv(mu_index(j, d - 1)) -
                                          muv(null_index[static_cast<std::size_t>(j)]));
          }
          out.head(m).noalias() += Lam * inner;
        }
        break;
      }
      case TreatmentEffect::PeriodSpecific: {
        for (int j = 1; j <= R; ++j) {
          out(j - 1) = estv(j - 1) - ratio_transform(scale, muv(mu_index(j, j - 1)),
                                                     muv(null_index[static_cast<std::size_t>(j)]));
        }
        break;
      }
      case TreatmentEffect::Saturated: {
        for (int j = 1; j <= R; ++j) {
          for (int d = 1; d <= j; ++d) {
            const int k = saturated_index(j, d, J);
            out(k) = estv(k) - ratio_transform(scale, muv(mu_index(j, k)),
                                               muv(null_index[static_cast<std::size_t>(j)]));
          }
        }
        break;
      }
    }

    if (c.M() == 0) return;

    // g-computation rows: M_i mu_j(b) - sum over enrolled individuals
    const int p = L.n_cov;
    const int off = L.cov_offset();
    Eigen::VectorXd covdot = Eigen::VectorXd::Zero(c.M());
    if (p > 0) {
      covdot = c.Q.middleCols(off, p) * bv.segment(off, p);
    }
    for (int k = 0; k < n_mu; ++k) {
      const auto& mp = mus[static_cast<std::size_t>(k)];
      const double b = mp.coef < 0 ? 0.0 : bv(L.treat_offset() + mp.coef);
      const double base = bv(mp.j - 1) + b;
      double s = 0.0;
      for (long r = 0; r < c.M(); ++r) s += ginv(fit.link, base + covdot(r));
      out(m + k) = static_cast<double>(c.M()) * muv(k) - s;
    }

    // GEE score rows
    const CorrInverse rin(c.sizes, r1, r2);
    Eigen::VectorXd e(c.M()), sv(c.M());
    for (long r = 0; r < c.M(); ++r) {
      const double mu = ginv(fit.link, c.Q.row(r).dot(bv));
      const double v = variance_function(fit.link, mu);
      sv(r) = std::sqrt(v);
      e(r) = (c.y(r) - mu) / sv(r);
    }
    Eigen::VectorXd tmp;
    rin.apply(e, tmp);
    out.segment(m + n_mu, q) = c.Q.transpose() * sv.cwiseProduct(tmp);

    // correlation / dispersion moment rows
    if (n_rho > 0) {
      const ResidualMoments mo = residual_moments(c.sizes, e);
      if (n_rho == 3) {
        out(sys.rho_offset) = mo.cross_sum - r1 * phi * mo.cross_pairs;
        out(sys.rho_offset + 1) = mo.within_sum - (r1 + r2) * phi * mo.within_pairs;
        out(sys.rho_offset + 2) = mo.ssq - phi * static_cast<double>(mo.n);
      } else {
        out(sys.rho_offset) = mo.within_sum - r2 * phi * mo.within_pairs;
        out(sys.rho_offset + 1) = mo.ssq - phi * static_cast<double>(mo.n);
      }
    }
  };

  const int I = static_cast<int>(clusters.size());
  sys.psi.resize(dim, I);
  Eigen::VectorXd tmp;
  for (int i = 0; i < I; ++i) {
    psi_cluster(clusters[static_cast<std::size_t>(i)], sys.theta, tmp);
    sys.psi.col(i) = tmp;
  }

  const auto total_psi = [&](const Eigen::VectorXd& th) {
    Eigen::VectorXd total = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd one;
    for (const auto& c : clusters) {
      psi_cluster(c, th, one);
      total += one;
    }
    return total;
  };
  sys.jacobian.resize(dim, dim);
  const Eigen::VectorXd psi_at = total_psi(sys.theta);
  for (int k = 0; k < dim; ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(sys.theta(k)));
    Eigen::VectorXd up = sys.theta, dn = sys.theta;
    up(k) += h;
    dn(k) -= h;
    try {
      sys.jacobian.col(k) = (total_psi(up) - total_psi(dn)) / (2.0 * h);
    } catch (const std::exception&) {
      // perturbation left the PD region; fall back to a one-sided step
      sys.jacobian.col(k) = (total_psi(up) - psi_at) / h;
    }
  }

  Eigen::FullPivLU<Eigen::MatrixXd> lu(sys.jacobian);
  if (!lu.isInvertible()) throw std::runtime_error("stacked sandwich Jacobian singular");
  const Eigen::MatrixXd meat = sys.psi * sys.psi.transpose();
  Eigen::MatrixXd half = lu.solve(meat);
  Eigen::MatrixXd cov = lu.solve(half.transpose()).transpose();
  sys.sandwich = 0.5 * (cov + cov.transpose());
  return sys;
}

EstimandReport estimate_estimands_gee(
    const GeeFit& fit, const DesignSet& designs, EffectScale scale,
    const std::vector<std::pair<std::string, Eigen::VectorXd>>& extra_summaries) {
  const GeeStacked sys = gee_stacked_system(fit, designs, scale);
  const int m = sys.n_estimands;
  const Eigen::MatrixXd V = sys.sandwich.topLeftCorner(m, m);

  EstimandReport report;
  report.estimator = "gee";
  report.structure = to_string(fit.layout.spec.kind);
  report.correlation = to_string(fit.corr);
  report.link = to_string(fit.link);
  report.scale = scale;
  report.data_fingerprint = fit.data_fingerprint;
  report.converged = fit.converged;

  const bool ratio = scale != EffectScale::Difference;
  for (int k = 0; k < m; ++k) {
    EstimandEntry e;
    e.label = sys.labels[static_cast<std::size_t>(k)];
    const double se = std::sqrt(std::max(0.0, V(k, k)));
    if (ratio) {
      // internal log scale; symmetric CI exponentiated for display
      e.estimate = std::exp(sys.estimates(k));
      e.se_robust = e.estimate * se;
      e.ci_lo = std::exp(sys.estimates(k) - kZ975 * se);
      e.ci_hi = std::exp(sys.estimates(k) + kZ975 * se);
    } else {
      e.estimate = sys.estimates(k);
      e.se_robust = se;
      e.ci_lo = e.estimate - kZ975 * se;
      e.ci_hi = e.estimate + kZ975 * se;
    }
    report.components.push_back(e);
  }

  std::vector<std::pair<std::string, Eigen::VectorXd>> summaries;
  const int J = fit.layout.spec.n_periods;
  switch (fit.layout.spec.kind) {
    case TreatmentEffect::DurationSpecific:
      summaries.emplace_back("Delta^{D-avg}", summary_weights(SummaryKind::DurationAverage, J));
      break;
    case TreatmentEffect::PeriodSpecific:
      summaries.emplace_back(ratio ? "Phi^{P-avg}" : "Delta^{P-avg}",
                             summary_weights(SummaryKind::PeriodAverage, J));
      break;
    case TreatmentEffect::Saturated:
      summaries.emplace_back(ratio ? "Phi^{S-avg}" : "Delta^{S-avg}",
                             summary_weights(SummaryKind::SaturatedAverage, J));
      break;
    case TreatmentEffect::Constant:
      break;
  }
  summaries.insert(summaries.end(), extra_summaries.begin(), extra_summaries.end());

  for (const auto& [label, w] : summaries) {
    if (w.size() != m) {
      throw std::invalid_argument("summary weight length does not match estimand count");
    }
    EstimandEntry e;
    e.label = label;
    if (ratio) {
      // weighted average of the ratio estimands themselves; delta method
      // through the exponential
      Eigen::VectorXd a(m);
      double val = 0.0;
      for (int k = 0; k < m; ++k) {
        const double phi = std::exp(sys.estimates(k));
        a(k) = w(k) * phi;
        val += w(k) * phi;
      }
      e.estimate = val;
      e.se_robust = std::sqrt(std::max(0.0, double(a.transpose() * V * a)));
      e.ci_lo = e.estimate - kZ975 * e.se_robust;
      e.ci_hi = e.estimate + kZ975 * e.se_robust;
    } else {
      e.estimate = w.dot(sys.estimates);
      e.se_robust = std::sqrt(std::max(0.0, double(w.transpose() * V * w)));
      e.ci_lo = e.estimate - kZ975 * e.se_robust;
      e.ci_hi = e.estimate + kZ975 * e.se_robust;
    }
    report.summaries.push_back(e);
  }
  return report;
}

}  // namespace swedge
