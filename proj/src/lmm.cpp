#include "swedge/lmm.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace swedge {

std::string to_string(Correlation corr) {
  switch (corr) {
    case Correlation::Independence: return "independence";
    case Correlation::Exchangeable: return "exchangeable";
    case Correlation::NestedExchangeable: return "nested";
  }
  return "?";
}

Correlation correlation_from_string(const std::string& s) {
  if (s == "independence") return Correlation::Independence;
  if (s == "exchangeable") return Correlation::Exchangeable;
  if (s == "nested") return Correlation::NestedExchangeable;
  throw std::invalid_argument("unknown correlation structure '" + s + "'");
}

int active_vc_count(Correlation corr) {
  switch (corr) {
    case Correlation::Independence: return 1;
    case Correlation::Exchangeable: return 2;
    case Correlation::NestedExchangeable: return 3;
  }
  return 0;
}

namespace {

VarianceComponents vc_from_active(const Eigen::VectorXd& a, Correlation corr) {
  VarianceComponents vc;
  vc.sigma2 = a(0);
  vc.tau2 = (corr != Correlation::Independence) ? a(1) : 0.0;
  vc.kappa2 = (corr == Correlation::NestedExchangeable) ? a(2) : 0.0;
  return vc;
}

Eigen::VectorXd active_from_vc(const VarianceComponents& vc, Correlation corr) {
  Eigen::VectorXd a(active_vc_count(corr));
  a(0) = vc.sigma2;
  if (corr != Correlation::Independence) a(1) = vc.tau2;
  if (corr == Correlation::NestedExchangeable) a(2) = vc.kappa2;
  return a;
}

// Variance-component block of the per-cluster score, from a precomputed
// residual vector.
Eigen::VectorXd vc_score_res(const std::vector<int>& sizes, const Eigen::VectorXd& r,
                             const VarianceComponents& vc, Correlation corr) {
  const StructuredInverse inv(sizes, vc);
  const Eigen::VectorXd w = inv.apply(r);
  Eigen::VectorXd out(active_vc_count(corr));
  out(0) = 0.5 * (w.squaredNorm() - inv.trace());
  if (corr != Correlation::Independence) {
    const double sw = w.sum();
    out(1) = 0.5 * (sw * sw - inv.one_inv_one());
  }
  if (corr == Correlation::NestedExchangeable) {
    double ss = 0.0;
    for (double s : inv.block_sums(w)) ss += s * s;
    out(2) = 0.5 * (ss - inv.trace_blockdiag_ones());
  }
  return out;
}

Eigen::VectorXd vc_score(const ClusterDesign& cluster, const Eigen::VectorXd& beta,
                         const VarianceComponents& vc, Correlation corr) {
  return vc_score_res(cluster.sizes, cluster.y - cluster.Q * beta, vc, corr);
}

double cluster_loglik_res(const std::vector<int>& sizes, const Eigen::VectorXd& r,
                          const VarianceComponents& vc) {
  const StructuredInverse inv(sizes, vc);
  constexpr double kLog2Pi = 1.8378770664093453;
  return -0.5 * (r.size() * kLog2Pi + inv.logdet() + inv.quadratic_form(r, r));
}

std::string design_fingerprint(const DesignSet& designs) {
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

void check_full_rank(const DesignSet& designs) {
  const int q = designs.layout.cols();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(q, q);
  for (const auto& c : designs.clusters) gram.noalias() += c.Q.transpose() * c.Q;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  const double max_ev = es.eigenvalues().maxCoeff();
  if (max_ev <= 0.0 || es.eigenvalues()(0) <= 1e-10 * max_ev) {
    int worst = 0;
    es.eigenvectors().col(0).cwiseAbs().maxCoeff(&worst);
    throw std::runtime_error("design matrix rank-deficient: coefficient '" +
                             designs.layout.column_label(worst) +
                             "' is not identified (empty treatment cell?)");
  }
}

}  // namespace

Eigen::VectorXd lmm_score(const ClusterDesign& cluster, const Eigen::VectorXd& beta,
                          const VarianceComponents& vc, Correlation corr) {
  const StructuredInverse inv(cluster.sizes, vc);
  const Eigen::VectorXd r = cluster.y - cluster.Q * beta;
  const Eigen::VectorXd w = inv.apply(r);
  const int q = static_cast<int>(cluster.Q.cols());
  Eigen::VectorXd out(q + active_vc_count(corr));
  out.head(q) = cluster.Q.transpose() * w;
  out(q) = 0.5 * (w.squaredNorm() - inv.trace());
  if (corr != Correlation::Independence) {
    const double sw = w.sum();
    out(q + 1) = 0.5 * (sw * sw - inv.one_inv_one());
  }
  if (corr == Correlation::NestedExchangeable) {
    double ss = 0.0;
    for (double s : inv.block_sums(w)) ss += s * s;
    out(q + 2) = 0.5 * (ss - inv.trace_blockdiag_ones());
  }
  return out;
}

double lmm_cluster_loglik(const ClusterDesign& cluster, const Eigen::VectorXd& beta,
                          const VarianceComponents& vc) {
  const StructuredInverse inv(cluster.sizes, vc);
  const Eigen::VectorXd r = cluster.y - cluster.Q * beta;
  constexpr double kLog2Pi = 1.8378770664093453;
  return -0.5 * (cluster.M() * kLog2Pi + inv.logdet() + inv.quadratic_form(r, r));
}

LmmFit fit_lmm(const DesignSet& designs, Correlation corr, const LmmOptions& options) {
  check_full_rank(designs);
  const auto& clusters = designs.clusters;
  const int q = designs.layout.cols();
  const int nv = active_vc_count(corr);
  const long rows = designs.total_rows();
  const double scale = 1.0 + static_cast<double>(rows);
  const double log_floor = std::log(options.vc_floor);

  auto gls_solve = [&clusters, q](const VarianceComponents& vc) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(q, q);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(q);
    for (const auto& c : clusters) {
      if (c.M() == 0) continue;
      const StructuredInverse inv(c.sizes, vc);
      Eigen::MatrixXd WQ(c.M(), q);
      Eigen::VectorXd col;
      for (int k = 0; k < q; ++k) {
        inv.apply(c.Q.col(k), col);
        WQ.col(k) = col;
      }
      A.noalias() += c.Q.transpose() * WQ;
      b.noalias() += WQ.transpose() * c.y;
    }
    return std::pair{A, b};
  };

  // OLS start for beta.
  VarianceComponents vc{1.0, 0.0, 0.0};
  auto [A0, b0] = gls_solve(vc);
  Eigen::VectorXd beta = A0.ldlt().solve(b0);

  // Method-of-moments starting values from the OLS residuals.
  {
    double ss_within = 0.0;
    long n_within = 0;
    std::vector<double> cluster_means;
    std::vector<double> cp_dev;
    for (const auto& c : clusters) {
      if (c.M() == 0) continue;
      const Eigen::VectorXd r = c.y - c.Q * beta;
      const double cmean = r.mean();
      cluster_means.push_back(cmean);
      long off = 0;
      for (int n : c.sizes) {
        if (n == 0) continue;
        const double pmean = r.segment(off, n).mean();
        cp_dev.push_back(pmean - cmean);
        ss_within += (r.segment(off, n).array() - pmean).square().sum();
        n_within += n - 1;
        off += n;
      }
    }
    auto sample_var = [](const std::vector<double>& v) {
      if (v.size() < 2) return 0.0;
      double m = 0.0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double s = 0.0;
      for (double x : v) s += (x - m) * (x - m);
      return s / static_cast<double>(v.size() - 1);
    };
    vc.sigma2 = std::max(n_within > 0 ? ss_within / static_cast<double>(n_within) : 1.0, 1e-4);
    if (corr != Correlation::Independence) vc.tau2 = std::max(sample_var(cluster_means), 1e-4);
    if (corr == Correlation::NestedExchangeable) vc.kappa2 = std::max(sample_var(cp_dev), 1e-4);
  }

  LmmFit fit;
  fit.layout = designs.layout;
  fit.corr = corr;
  fit.n_clusters = static_cast<int>(clusters.size());
  fit.total_rows = rows;
  fit.data_fingerprint = design_fingerprint(designs);

  Eigen::VectorXd u = active_from_vc(vc, corr).array().log();
  bool converged = false;
  std::vector<Eigen::VectorXd> res(clusters.size());

  for (int outer = 0; outer < options.max_outer_iterations && !converged; ++outer) {
    // (a) generalized least squares update of beta given the components
    vc = vc_from_active(u.array().exp(), corr);
    auto [A, b] = gls_solve(vc);
    beta = A.ldlt().solve(b);
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      res[i] = clusters[i].y - clusters[i].Q * beta;
    }

    // (b) quasi-Newton ascent in log variance components given beta
    const auto ll_of = [&](const Eigen::VectorXd& uu) {
      const VarianceComponents v = vc_from_active(uu.array().exp(), corr);
      double ll = 0.0;
      for (std::size_t i = 0; i < clusters.size(); ++i) {
        if (clusters[i].M() > 0) ll += cluster_loglik_res(clusters[i].sizes, res[i], v);
      }
      return ll;
    };
    const auto grad_of = [&](const Eigen::VectorXd& uu) -> Eigen::VectorXd {
      const Eigen::VectorXd a = uu.array().exp();
      const VarianceComponents v = vc_from_active(a, corr);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(nv);
      for (std::size_t i = 0; i < clusters.size(); ++i) {
        if (clusters[i].M() > 0) g += vc_score_res(clusters[i].sizes, res[i], v, corr);
      }
      return g.cwiseProduct(a);
    };
    double ll = ll_of(u);
    for (int inner = 0; inner < 5; ++inner) {
      const Eigen::VectorXd grad = grad_of(u);
      if (grad.cwiseAbs().maxCoeff() < options.score_tol * scale) break;
      Eigen::MatrixXd hess(nv, nv);
      const double h = 1e-4;
      for (int k = 0; k < nv; ++k) {
        Eigen::VectorXd up = u, dn = u;
        up(k) += h;
        dn(k) -= h;
        hess.col(k) = (grad_of(up) - grad_of(dn)) / (2.0 * h);
      }
      hess = 0.5 * (hess + hess.transpose()).eval();
      Eigen::VectorXd du = hess.fullPivLu().solve(-grad);
      if (!du.allFinite() || du.dot(grad) <= 0.0) {
        du = grad / std::max(1.0, grad.cwiseAbs().maxCoeff());
      }
      double step = 1.0;
      bool accepted = false;
      for (int half = 0; half < 12; ++half) {
        Eigen::VectorXd cand = (u + step * du).cwiseMax(log_floor).cwiseMin(std::log(1e10));
        const double cand_ll = ll_of(cand);
        if (std::isfinite(cand_ll) && cand_ll >= ll - 1e-12) {
          u = cand;
          ll = cand_ll;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;
    }

    // Convergence on the scaled score: the beta block is scaled by sigma2
    // (GLS normal-equation residual in outcome units) and the component
    // blocks by the component itself (log-scale gradient); both are
    // normalized by the observation count. Components pinned at the floor
    // with an outward gradient satisfy the boundary condition and are
    // skipped.
    vc = vc_from_active(u.array().exp(), corr);
    Eigen::VectorXd total = Eigen::VectorXd::Zero(q + nv);
    for (const auto& c : clusters) {
      if (c.M() > 0) total += lmm_score(c, beta, vc, corr);
    }
    double worst = vc.sigma2 * total.head(q).cwiseAbs().maxCoeff() / scale;
    const Eigen::VectorXd a = u.array().exp();
    for (int k = 0; k < nv; ++k) {
      const double g_log = a(k) * total(q + k);
      if (u(k) <= log_floor + 1e-9 && total(q + k) < 0.0) continue;
      worst = std::max(worst, std::abs(g_log) / scale);
    }
    converged = worst < options.score_tol;
  }

  // final generalized-least-squares refresh so beta corresponds exactly to
  // the reported variance components
  {
    auto [A, b] = gls_solve(vc);
    beta = A.ldlt().solve(b);
  }
  fit.beta = beta;
  fit.vc = vc;
  fit.converged = converged;
  {
    const Eigen::VectorXd a = active_from_vc(vc, corr);
    for (int k = 0; k < nv; ++k) {
      if (a(k) <= 1e-7) fit.boundary = true;
    }
  }
  fit.loglik = 0.0;
  for (const auto& c : clusters) {
    if (c.M() > 0) fit.loglik += lmm_cluster_loglik(c, beta, vc);
  }
  if (!converged) {
    std::ostringstream os;
    os << "LMM did not converge in " << options.max_outer_iterations
       << " outer iterations (sigma2=" << vc.sigma2 << " tau2=" << vc.tau2
       << " kappa2=" << vc.kappa2 << ")";
    throw std::runtime_error(os.str());
  }

  // Model-based covariance of beta: inverse GLS information.
  {
    auto [A, b] = gls_solve(vc);
    (void)b;
    fit.model_based_cov = A.ldlt().solve(Eigen::MatrixXd::Identity(q, q));
  }

  if (options.compute_sandwich) {
    const int dim = q + nv;
    fit.scores.resize(dim, fit.n_clusters);
    fit.jacobian = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd theta(dim);
    theta.head(q) = beta;
    theta.tail(nv) = active_from_vc(vc, corr);

    for (int i = 0; i < fit.n_clusters; ++i) {
      const auto& c = clusters[static_cast<std::size_t>(i)];
      if (c.M() == 0) {
        fit.scores.col(i).setZero();
        continue;
      }
      fit.scores.col(i) = lmm_score(c, beta, vc, corr);

      const StructuredInverse inv(c.sizes, vc);
      const Eigen::VectorXd r = c.y - c.Q * beta;
      const Eigen::VectorXd w = inv.apply(r);
      Eigen::MatrixXd WQ(c.M(), q);
      Eigen::VectorXd col;
      for (int k = 0; k < q; ++k) {
        inv.apply(c.Q.col(k), col);
        WQ.col(k) = col;
      }
      // beta rows, analytic in all parameters
      fit.jacobian.topLeftCorner(q, q).noalias() -= c.Q.transpose() * WQ;
      fit.jacobian.block(0, q, q, 1).noalias() -= c.Q.transpose() * inv.apply(w);
      if (corr != Correlation::Independence) {
        const Eigen::VectorXd inv_one = inv.apply(Eigen::VectorXd::Ones(c.M()));
        fit.jacobian.block(0, q + 1, q, 1).noalias() -=
            (c.Q.transpose() * inv_one) * w.sum();
      }
      if (corr == Correlation::NestedExchangeable) {
        const auto sums = inv.block_sums(w);
        Eigen::VectorXd expanded(c.M());
        long off = 0;
        for (std::size_t j = 0; j < c.sizes.size(); ++j) {
          const int n = c.sizes[j];
          if (n == 0) continue;
          expanded.segment(off, n).setConstant(sums[j]);
          off += n;
        }
        fit.jacobian.block(0, q + 2, q, 1).noalias() -= c.Q.transpose() * inv.apply(expanded);
      }
      // variance-component rows by central differences of the analytic
      // score; a component resting at the floor gets a forward difference
      // so the perturbed covariance stays valid
      const Eigen::VectorXd s_at = vc_score(c, beta, vc, corr);
      for (int k = 0; k < dim; ++k) {
        const double h = 1e-6 * std::max(1.0, std::abs(theta(k)));
        Eigen::VectorXd tp = theta;
        tp(k) += h;
        const Eigen::VectorXd sp =
            vc_score(c, tp.head(q), vc_from_active(tp.tail(nv), corr), corr);
        if (k >= q && theta(k) - h <= 0.0) {
          fit.jacobian.block(q, k, nv, 1) += (sp - s_at) / h;
        } else {
          Eigen::VectorXd tm = theta;
          tm(k) -= h;
          const Eigen::VectorXd sm =
              vc_score(c, tm.head(q), vc_from_active(tm.tail(nv), corr), corr);
          fit.jacobian.block(q, k, nv, 1) += (sp - sm) / (2.0 * h);
        }
      }
    }
    fit.sandwich_cov = sandwich_from_scores(fit.scores, fit.jacobian);
  }
  return fit;
}

Eigen::MatrixXd sandwich_from_scores(const Eigen::MatrixXd& scores,
                                     const Eigen::MatrixXd& jacobian) {
  const Eigen::MatrixXd bread = jacobian;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(bread);
  if (!lu.isInvertible()) throw std::runtime_error("sandwich Jacobian singular");
  const Eigen::MatrixXd meat = scores * scores.transpose();
  Eigen::MatrixXd half = lu.solve(meat);
  Eigen::MatrixXd cov = lu.solve(half.transpose()).transpose();
  return 0.5 * (cov + cov.transpose());
}

Eigen::VectorXd min_variance_weights(const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  Eigen::VectorXd v = es.eigenvectors().col(0);
  const double s = v.sum();
  if (std::abs(s) < 1e-12) throw std::runtime_error("degenerate minimum-variance weights");
  return v / s;
}

EstimandReport extract_estimands(const LmmFit& fit,
                                 const std::vector<SummaryRequest>& extra_summaries) {
  const int q0 = fit.layout.treat_offset();
  const int m = fit.layout.n_treat;
  EstimandReport report;
  report.estimator = "lmm";
  report.structure = to_string(fit.layout.spec.kind);
  report.correlation = to_string(fit.corr);
  report.link = "identity";
  report.scale = EffectScale::Difference;
  report.data_fingerprint = fit.data_fingerprint;
  report.converged = fit.converged;
  report.boundary = fit.boundary;

  const Eigen::MatrixXd rob = fit.sandwich_cov.block(q0, q0, m, m);
  const Eigen::MatrixXd mb = fit.model_based_cov.block(q0, q0, m, m);
  for (int k = 0; k < m; ++k) {
    EstimandEntry e;
    e.label = fit.layout.spec.coef_label(k);
    e.estimate = fit.beta(q0 + k);
    e.se_robust = std::sqrt(std::max(0.0, rob(k, k)));
    e.se_model = std::sqrt(std::max(0.0, mb(k, k)));
    e.ci_lo = e.estimate - kZ975 * e.se_robust;
    e.ci_hi = e.estimate + kZ975 * e.se_robust;
    report.components.push_back(e);
  }

  std::vector<SummaryRequest> summaries;
  const int J = fit.layout.spec.n_periods;
  switch (fit.layout.spec.kind) {
    case TreatmentEffect::DurationSpecific:
      if (fit.layout.n_treat == J) {
        summaries.push_back({"Delta^{D-avg}", summary_weights(SummaryKind::DurationAverage, J)});
      }
      break;
    case TreatmentEffect::PeriodSpecific:
      summaries.push_back({"Delta^{P-avg}", summary_weights(SummaryKind::PeriodAverage, J)});
      break;
    case TreatmentEffect::Saturated:
      summaries.push_back({"Delta^{S-avg}", summary_weights(SummaryKind::SaturatedAverage, J)});
      break;
    case TreatmentEffect::Constant:
      break;
  }
  summaries.insert(summaries.end(), extra_summaries.begin(), extra_summaries.end());

  const Eigen::VectorXd treat = fit.beta.segment(q0, m);
  for (const auto& s : summaries) {
    if (s.weights.size() != m) {
      throw std::invalid_argument("summary weight length " + std::to_string(s.weights.size()) +
                                  " does not match " + std::to_string(m) + " coefficients");
    }
    EstimandEntry e;
    e.label = s.label;
    e.estimate = s.weights.dot(treat);
    e.se_robust = std::sqrt(std::max(0.0, double(s.weights.transpose() * rob * s.weights)));
    e.se_model = std::sqrt(std::max(0.0, double(s.weights.transpose() * mb * s.weights)));
    e.ci_lo = e.estimate - kZ975 * e.se_robust;
    e.ci_hi = e.estimate + kZ975 * e.se_robust;
    report.summaries.push_back(e);
  }
  return report;
}

LrtResult lrt_structures(const LmmFit& restricted, const LmmFit& general) {
  if (restricted.corr != general.corr) {
    throw std::invalid_argument("LRT requires the same working correlation structure");
  }
  if (restricted.layout.retained != general.layout.retained) {
    throw std::invalid_argument(
        "LRT requires both models on the same retained periods; re-fit the restricted "
        "model on the general model's retained periods");
  }
  if (restricted.data_fingerprint != general.data_fingerprint) {
    throw std::invalid_argument("LRT requires both fits on the same data");
  }
  const auto rk = restricted.layout.spec.kind;
  const auto gk = general.layout.spec.kind;
  const bool nested =
      rk == gk || rk == TreatmentEffect::Constant ||
      (rk == TreatmentEffect::DurationSpecific && gk == TreatmentEffect::Saturated) ||
      (rk == TreatmentEffect::PeriodSpecific && gk == TreatmentEffect::Saturated);
  if (!nested) {
    throw std::invalid_argument("LRT models are not nested (" + to_string(rk) + " vs " +
                                to_string(gk) + ")");
  }
  LrtResult out;
  out.df = general.layout.n_treat - restricted.layout.n_treat;
  out.statistic = std::max(0.0, -2.0 * (restricted.loglik - general.loglik));
  if (out.df <= 0) {
    out.p_value = 1.0;
    return out;
  }
  boost::math::chi_squared dist(out.df);
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
  return out;
}

}  // namespace swedge
