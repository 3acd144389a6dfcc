#include "swedge/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace swedge {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::string to_string(SimDesign design) {
  switch (design) {
    case SimDesign::A1: return "A1";
    case SimDesign::A2: return "A2";
    case SimDesign::B1: return "B1";
    case SimDesign::B2: return "B2";
    case SimDesign::C1: return "C1";
    case SimDesign::C2: return "C2";
  }
  return "?";
}

SimDesign sim_design_from_string(const std::string& s) {
  if (s == "A1") return SimDesign::A1;
  if (s == "A2") return SimDesign::A2;
  if (s == "B1") return SimDesign::B1;
  if (s == "B2") return SimDesign::B2;
  if (s == "C1") return SimDesign::C1;
  if (s == "C2") return SimDesign::C2;
  throw std::invalid_argument("unknown simulation design '" + s + "'");
}

namespace {
bool is_c_design(SimDesign d) { return d == SimDesign::C1 || d == SimDesign::C2; }
bool is_scen2(SimDesign d) { return d == SimDesign::A2 || d == SimDesign::B2; }
bool is_b_design(SimDesign d) { return d == SimDesign::B1 || d == SimDesign::B2; }
}  // namespace

int GeneratorConfig::periods() const {
  if (n_periods > 0) return n_periods;
  return is_c_design(design) ? 3 : 5;
}

int GeneratorConfig::source() const {
  if (source_size > 0) return source_size;
  return is_c_design(design) ? 5000 : 1000;
}

namespace {

std::string cluster_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "c%05d", i + 1);
  return buf;
}

std::vector<int> balanced_adoptions(int I, int J, Rng& rng, bool strict) {
  if (strict && I % J != 0) {
    throw std::invalid_argument("cluster count " + std::to_string(I) +
                                " is not divisible by the number of periods " +
                                std::to_string(J));
  }
  if (I < J) throw std::invalid_argument("need at least one cluster per adoption step");
  // non-strict: distribute the remainder over the earliest steps
  std::vector<int> z;
  z.reserve(static_cast<std::size_t>(I));
  for (int j = 1; j <= J; ++j) {
    const int count = I / J + (j <= I % J ? 1 : 0);
    for (int r = 0; r < count; ++r) z.push_back(j);
  }
  std::shuffle(z.begin(), z.end(), rng.engine());
  return z;
}

// Gamma centered to mean zero with the requested variance, at shape 1.
double centered_gamma(Rng& rng, double variance) {
  const double scale = std::sqrt(variance);
  return rng.gamma(1.0, scale) - scale;
}

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

GeneratedTrial generate_ab(const GeneratorConfig& config, Rng& rng) {
  const int J = config.periods();
  const int I = config.n_clusters;
  const int N = config.source();
  const bool scen2 = is_scen2(config.design);
  const bool b_design = is_b_design(config.design);
  const bool cov_eff = config.covariate_effects && !config.zero_noise;
  const bool het = config.treatment_heterogeneity && !config.zero_noise;
  const bool noise = !config.zero_noise;

  GeneratedTrial out;
  out.data.covariate_names = {"x1", "x2", "x3", "x4"};
  const std::vector<int> adoption = balanced_adoptions(I, J, rng, true);

  std::vector<double> X1(static_cast<std::size_t>(N)), X2(X1.size()), X3(X1.size()),
      X4(X1.size());
  std::vector<int> pool(static_cast<std::size_t>(N));
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<int> chosen;

  for (int i = 0; i < I; ++i) {
    const std::string cid = cluster_name(i);
    out.data.clusters[cid].adoption_time = adoption[static_cast<std::size_t>(i)];

    const double alpha = noise ? (scen2 ? centered_gamma(rng, config.noise.gamma_cluster_var)
                                        : rng.normal(0.0, std::sqrt(0.1)))
                               : 0.0;
    const double beta_i = (scen2 && het) ? rng.normal(0.0, std::sqrt(0.25)) : 0.0;
    // x4 carries a shared cluster component; x3's extra term is drawn per
    // individual (same N(0, 0.5) marginal, no cluster correlation), which
    // is what the published bias/efficiency values imply
    const double e4 = noise ? rng.normal(0.0, std::sqrt(0.1)) : 0.0;

    double sum1 = 0.0, sum33 = 0.0;
    for (int k = 0; k < N; ++k) {
      X1[static_cast<std::size_t>(k)] = rng.bernoulli(0.5) ? 1.0 : 0.0;
      X2[static_cast<std::size_t>(k)] = rng.bernoulli(0.8) ? 1.0 : 0.0;
      X3[static_cast<std::size_t>(k)] =
          (noise ? rng.normal(0.0, std::sqrt(0.1)) : 0.0) + rng.normal(0.0, std::sqrt(0.4));
      X4[static_cast<std::size_t>(k)] = e4 + rng.normal(0.0, std::sqrt(0.9));
      sum1 += X1[static_cast<std::size_t>(k)];
      sum33 += std::pow(X3[static_cast<std::size_t>(k)], 3);
    }
    const double xbar1 = sum1 / N;
    const double xbar33 = sum33 / N;

    // Treatment term for an individual at exposure duration d in period j.
    const auto te = [&](int j, int d, int k) {
      if (d <= 0) return 0.0;
      const double dev1 = X1[static_cast<std::size_t>(k)] - xbar1;
      const double dev3 = std::pow(X3[static_cast<std::size_t>(k)], 3) - xbar33;
      if (!b_design) {
        if (!scen2) return 2.0 + (het ? 0.5 * dev1 + dev3 : 0.0);
        return 2.0 + (het ? (j + 1) * dev1 / 2.0 + (j + 1) * dev3 / (J + 1.0) + beta_i : 0.0);
      }
      const double base = (1.0 + d) * (0.5 + (het ? dev1 / 8.0 + dev3 / 4.0 : 0.0));
      return base + (scen2 && het ? beta_i : 0.0);
    };

    for (int j = 1; j <= J; ++j) {
      const double gam =
          (noise && scen2) ? centered_gamma(rng, config.noise.gamma_cluster_period_var) : 0.0;
      const int nij = rng.uniform_int(config.enroll_min, config.enroll_max);
      chosen.clear();
      std::sample(pool.begin(), pool.end(), std::back_inserter(chosen), nij, rng.engine());
      for (int k : chosen) {
        const double eps = noise ? (scen2 ? rng.poisson(config.noise.poisson_rate) -
                                                config.noise.poisson_rate
                                          : rng.normal(0.0, std::sqrt(0.9)))
                                 : 0.0;
        const double common =
            0.25 + 0.004 * j +
            (cov_eff ? 3.0 * (j + 1) / 2.0 * X1[static_cast<std::size_t>(k)] +
                           X2[static_cast<std::size_t>(k)] +
                           6.0 * (j + 1) / (J + 1.0) *
                               std::pow(X3[static_cast<std::size_t>(k)], 2) +
                           X4[static_cast<std::size_t>(k)]
                     : 0.0) +
            alpha + gam + eps;
        const int z = adoption[static_cast<std::size_t>(i)];
        const int d_obs = (z <= j) ? j - z + 1 : 0;
        ObsRecord rec;
        rec.cluster_id = cid;
        rec.period = j;
        rec.individual_key = "k" + std::to_string(k);
        rec.outcome = common + te(j, d_obs, k);
        rec.covariates = {X1[static_cast<std::size_t>(k)], X2[static_cast<std::size_t>(k)],
                          X3[static_cast<std::size_t>(k)], X4[static_cast<std::size_t>(k)]};
        if (config.emit_potential_outcomes) {
          PotentialRow row;
          row.record_index = static_cast<int>(out.data.records.size());
          row.y_of_z.push_back(common);  // z = 0: never treated by period j
          for (int zz = 1; zz <= j; ++zz) row.y_of_z.push_back(common + te(j, j - zz + 1, k));
          out.potential.push_back(std::move(row));
        }
        out.data.records.push_back(std::move(rec));
      }
    }
  }
  finalize_trial_data(out.data);

  if (b_design) {
    double avg = 0.0;
    for (int d = 1; d <= J; ++d) {
      const double truth = (1.0 + d) / 2.0;
      out.truths["Delta(" + std::to_string(d) + ")"] = truth;
      avg += truth / J;
    }
    out.truths["Delta^{D-avg}"] = avg;
    out.truths["Delta"] = avg;  // the constant-structure target is the average effect
  } else {
    out.truths["Delta"] = 2.0;
  }
  return out;
}

GeneratedTrial generate_c(const GeneratorConfig& config, Rng& rng) {
  const int J = config.periods();
  const int I = config.n_clusters;
  const int N = config.source();
  const bool cov_eff = config.covariate_effects && !config.zero_noise;
  const bool het = config.treatment_heterogeneity && !config.zero_noise;
  const bool noise = !config.zero_noise;
  const double vb = config.design == SimDesign::C1 ? 0.25 : 0.04;

  GeneratedTrial out;
  out.data.covariate_names = {"x1", "x2"};
  const std::vector<int> adoption = balanced_adoptions(I, J, rng, false);

  std::vector<double> X1(static_cast<std::size_t>(N)), X2(X1.size());
  std::vector<int> pool(static_cast<std::size_t>(N));
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<int> chosen;

  for (int i = 0; i < I; ++i) {
    const std::string cid = cluster_name(i);
    out.data.clusters[cid].adoption_time = adoption[static_cast<std::size_t>(i)];

    const double alpha = noise ? rng.normal(0.0, std::sqrt(0.015)) : 0.0;
    const double beta_i = het ? rng.normal(0.0, std::sqrt(vb)) : 0.0;
    const double e2 = noise ? rng.normal(0.0, std::sqrt(0.025)) : 0.0;

    double sum1 = 0.0, sum22 = 0.0;
    for (int k = 0; k < N; ++k) {
      X1[static_cast<std::size_t>(k)] = rng.bernoulli(0.05) ? 1.0 : 0.0;
      X2[static_cast<std::size_t>(k)] = e2 + rng.normal(0.0, std::sqrt(0.1));
      sum1 += X1[static_cast<std::size_t>(k)];
      sum22 += X2[static_cast<std::size_t>(k)] * X2[static_cast<std::size_t>(k)];
    }
    const double xbar1 = sum1 / N;
    const double xbar22 = sum22 / N;

    const auto linpred = [&](int j, int d, int k) {
      const double x1 = X1[static_cast<std::size_t>(k)];
      const double x22 = X2[static_cast<std::size_t>(k)] * X2[static_cast<std::size_t>(k)];
      double lp = 0.08 + 0.02 * j + (cov_eff ? x1 + (static_cast<double>(j) / J) * x22 : 0.0);
      if (d > 0) {
        lp += 0.72 + 0.18 * d +
              (het ? 0.25 * (x1 - xbar1) + (d / 10.0) * (x22 - xbar22) + beta_i : 0.0);
      }
      return lp;
    };

    for (int j = 1; j <= J; ++j) {
      const double gam = noise ? rng.normal(0.0, std::sqrt(0.01)) : 0.0;
      const int nij = rng.uniform_int(config.enroll_min, config.enroll_max);
      chosen.clear();
      std::sample(pool.begin(), pool.end(), std::back_inserter(chosen), nij, rng.engine());
      const int z = adoption[static_cast<std::size_t>(i)];
      for (int k : chosen) {
        ObsRecord rec;
        rec.cluster_id = cid;
        rec.period = j;
        rec.individual_key = "k" + std::to_string(k);
        rec.covariates = {X1[static_cast<std::size_t>(k)], X2[static_cast<std::size_t>(k)]};
        if (config.emit_potential_outcomes) {
          // independent draws per assignment; the observed value is the one
          // selected by the realized adoption time
          PotentialRow row;
          row.record_index = static_cast<int>(out.data.records.size());
          for (int zz = 0; zz <= j; ++zz) {
            const int d = zz == 0 ? 0 : j - zz + 1;
            row.y_of_z.push_back(
                rng.bernoulli(expit(linpred(j, d, k) + alpha + gam)) ? 1.0 : 0.0);
          }
          rec.outcome = (z <= j) ? row.y_of_z[static_cast<std::size_t>(z)] : row.y_of_z[0];
          out.potential.push_back(std::move(row));
        } else {
          const int d_obs = (z <= j) ? j - z + 1 : 0;
          rec.outcome = rng.bernoulli(expit(linpred(j, d_obs, k) + alpha + gam)) ? 1.0 : 0.0;
        }
        out.data.records.push_back(std::move(rec));
      }
    }
  }
  finalize_trial_data(out.data);
  out.truths = design_c_true_estimands(config.design);
  return out;
}

}  // namespace

GeneratedTrial generate_trial(const GeneratorConfig& config, Rng& rng) {
  return is_c_design(config.design) ? generate_c(config, rng) : generate_ab(config, rng);
}

GeneratedTrial generate_design_a(SimDesign scenario, int n_clusters, std::uint64_t seed) {
  if (scenario != SimDesign::A1 && scenario != SimDesign::A2) {
    throw std::invalid_argument("generate_design_a expects scenario A1 or A2");
  }
  GeneratorConfig config;
  config.design = scenario;
  config.n_clusters = n_clusters;
  Rng rng(seed);
  return generate_trial(config, rng);
}

GeneratedTrial generate_design_b(SimDesign scenario, int n_clusters, std::uint64_t seed) {
  if (scenario != SimDesign::B1 && scenario != SimDesign::B2) {
    throw std::invalid_argument("generate_design_b expects scenario B1 or B2");
  }
  GeneratorConfig config;
  config.design = scenario;
  config.n_clusters = n_clusters;
  Rng rng(seed);
  return generate_trial(config, rng);
}

GeneratedTrial generate_design_c(SimDesign scenario, int n_clusters, std::uint64_t seed) {
  if (scenario != SimDesign::C1 && scenario != SimDesign::C2) {
    throw std::invalid_argument("generate_design_c expects scenario C1 or C2");
  }
  GeneratorConfig config;
  config.design = scenario;
  config.n_clusters = n_clusters;
  Rng rng(seed);
  return generate_trial(config, rng);
}

namespace {

// Gauss-Hermite nodes/weights by Golub-Welsch: integrates f against
// exp(-x^2).
std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite(int n) {
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double v = std::sqrt(i / 2.0);
    T(i, i - 1) = v;
    T(i - 1, i) = v;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
  Eigen::VectorXd nodes = es.eigenvalues();
  Eigen::VectorXd weights(n);
  const double sqrt_pi = std::sqrt(M_PI);
  for (int k = 0; k < n; ++k) {
    weights(k) = sqrt_pi * es.eigenvectors()(0, k) * es.eigenvectors()(0, k);
  }
  return {nodes, weights};
}

}  // namespace

double design_c_truth_quadrature(SimDesign scenario, int j, int d, int points) {
  if (!is_c_design(scenario)) throw std::invalid_argument("quadrature is for designs C1/C2");
  const int J = 3;
  const double vb = scenario == SimDesign::C1 ? 0.25 : 0.04;
  const double su = std::sqrt(0.015 + 0.01);  // cluster + cluster-period effects combined
  const double se = std::sqrt(0.025);
  const double sf = std::sqrt(0.1);
  const double sb = std::sqrt(vb);
  auto [t, w] = gauss_hermite(points);
  const double inv_sqrt_pi = 1.0 / std::sqrt(M_PI);
  const double sqrt2 = std::sqrt(2.0);

  // E[Y] at duration dd, marginalizing (u, beta_i, e, f, X1); the
  // within-cluster source means are replaced by their exact expectations.
  const auto mean_at = [&](int dd) {
    double outer = 0.0;
    for (int a = 0; a < points; ++a) {
      const double e = sqrt2 * se * t(a);
      double acc_e = 0.0;
      for (int b = 0; b < points; ++b) {
        const double f = sqrt2 * sf * t(b);
        const double x22_dev = 2.0 * e * f + f * f - sf * sf;
        const double x22 = (e + f) * (e + f);
        double acc_f = 0.0;
        for (int c = 0; c < points; ++c) {
          const double u = sqrt2 * su * t(c);
          const double base0 = 0.08 + 0.02 * j + (static_cast<double>(j) / J) * x22 + u;
          if (dd == 0) {
            acc_f += w(c) * (0.95 * expit(base0) + 0.05 * expit(base0 + 1.0));
          } else {
            double acc_u = 0.0;
            for (int g = 0; g < points; ++g) {
              const double bi = sqrt2 * sb * t(g);
              const double te0 =
                  0.72 + 0.18 * dd + 0.25 * (0.0 - 0.05) + (dd / 10.0) * x22_dev + bi;
              const double te1 =
                  0.72 + 0.18 * dd + 0.25 * (1.0 - 0.05) + (dd / 10.0) * x22_dev + bi;
              acc_u += w(g) * (0.95 * expit(base0 + te0) + 0.05 * expit(base0 + 1.0 + te1));
            }
            acc_f += w(c) * acc_u * inv_sqrt_pi;
          }
        }
        acc_e += w(b) * acc_f * inv_sqrt_pi;
      }
      outer += w(a) * acc_e * inv_sqrt_pi;
    }
    return outer * inv_sqrt_pi;
  };

  const double p1 = mean_at(d);
  const double p0 = mean_at(0);
  return (p1 / (1.0 - p1)) / (p0 / (1.0 - p0));
}

std::map<std::string, double> design_c_true_estimands(SimDesign scenario) {
  // Frozen from tools/true_estimands (40-point Gauss-Hermite quadrature).
  if (scenario == SimDesign::C1) {
    return {{"Phi_1(1)", 2.2878167938},
            {"Phi_2(1)", 2.2780178482},
            {"Phi_2(2)", 2.6968912619}};
  }
  if (scenario == SimDesign::C2) {
    return {{"Phi_1(1)", 2.3913055633},
            {"Phi_2(1)", 2.3856348426},
            {"Phi_2(2)", 2.8419726586}};
  }
  throw std::invalid_argument("true marginal odds ratios exist only for designs C1/C2");
}

MetricRow aggregate_metrics(const std::string& model, const std::string& estimand,
                            double truth, const std::vector<EstimateRecord>& records,
                            const std::vector<EstimateRecord>* reference_records) {
  MetricRow row;
  row.model = model;
  row.estimand = estimand;
  row.truth = truth;
  row.n_used = static_cast<int>(records.size());
  if (records.empty()) {
    row.bias = row.ese = row.ase_rob = row.ecp_rob = kNaN;
    row.ase_mb = row.ecp_mb = row.re = kNaN;
    return row;
  }
  const double n = static_cast<double>(records.size());
  double mean = 0.0;
  for (const auto& r : records) mean += r.estimate;
  mean /= n;
  row.bias = mean - truth;

  double ss = 0.0;
  for (const auto& r : records) ss += (r.estimate - mean) * (r.estimate - mean);
  row.ese = records.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;

  double ase = 0.0, hits = 0.0;
  for (const auto& r : records) {
    ase += r.se_robust;
    if (truth >= r.ci_lo && truth <= r.ci_hi) hits += 1.0;
  }
  row.ase_rob = ase / n;
  row.ecp_rob = hits / n;

  double ase_mb = 0.0, hits_mb = 0.0;
  long n_mb = 0;
  for (const auto& r : records) {
    if (!r.se_model) continue;
    ++n_mb;
    ase_mb += *r.se_model;
    if (r.mb_ci_lo && r.mb_ci_hi && truth >= *r.mb_ci_lo && truth <= *r.mb_ci_hi) {
      hits_mb += 1.0;
    }
  }
  row.ase_mb = n_mb > 0 ? ase_mb / static_cast<double>(n_mb) : kNaN;
  row.ecp_mb = n_mb > 0 ? hits_mb / static_cast<double>(n_mb) : kNaN;

  if (reference_records != nullptr && reference_records->size() > 1) {
    double rmean = 0.0;
    for (const auto& r : *reference_records) rmean += r.estimate;
    rmean /= static_cast<double>(reference_records->size());
    double rss = 0.0;
    for (const auto& r : *reference_records) rss += (r.estimate - rmean) * (r.estimate - rmean);
    const double rese2 = rss / (static_cast<double>(reference_records->size()) - 1.0);
    row.re = (row.ese > 0.0) ? rese2 / (row.ese * row.ese) : kNaN;
  } else {
    row.re = 1.0;
  }
  return row;
}

namespace {

struct ReplicateOutcome {
  // model name -> estimand label -> record
  std::map<std::string, std::map<std::string, EstimateRecord>> by_model;
  std::map<std::string, bool> failed;
};

std::map<std::string, double> truths_for(const GeneratorConfig& config) {
  if (is_c_design(config.design)) return design_c_true_estimands(config.design);
  std::map<std::string, double> truths;
  if (is_b_design(config.design)) {
    const int J = config.periods();
    double avg = 0.0;
    for (int d = 1; d <= J; ++d) {
      truths["Delta(" + std::to_string(d) + ")"] = (1.0 + d) / 2.0;
      avg += (1.0 + d) / 2.0 / J;
    }
    truths["Delta^{D-avg}"] = avg;
    truths["Delta"] = avg;
  } else {
    truths["Delta"] = 2.0;
  }
  return truths;
}

WorkingCorr lmm_corr_to_working(Correlation corr) {
  return corr == Correlation::Independence ? WorkingCorr::Independence
                                           : WorkingCorr::NestedExchangeable;
}

void record_report(const EstimandReport& report, std::map<std::string, EstimateRecord>& into) {
  auto add = [&into](const EstimandEntry& e) {
    EstimateRecord rec;
    rec.estimate = e.estimate;
    rec.se_robust = e.se_robust;
    rec.se_model = e.se_model;
    rec.ci_lo = e.ci_lo;
    rec.ci_hi = e.ci_hi;
    if (e.se_model) {
      rec.mb_ci_lo = e.estimate - kZ975 * *e.se_model;
      rec.mb_ci_hi = e.estimate + kZ975 * *e.se_model;
    }
    into[e.label] = rec;
  };
  for (const auto& e : report.components) add(e);
  for (const auto& e : report.summaries) add(e);
}

}  // namespace

StudyMetrics run_study(const StudyConfig& config) {
  const int reps = config.replicates;
  if (reps < 1) throw std::invalid_argument("replicates must be >= 1");
  std::vector<ReplicateOutcome> results(static_cast<std::size_t>(reps));

  std::atomic<int> next{0};
  const auto worker = [&]() {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= reps) break;
      Rng rng(split_seed(config.seed, static_cast<std::uint64_t>(r)));
      GeneratedTrial trial;
      try {
        trial = generate_trial(config.generator, rng);
      } catch (const std::exception&) {
        for (const auto& arm : config.models) results[static_cast<std::size_t>(r)].failed[arm.name] = true;
        continue;
      }
      for (const auto& arm : config.models) {
        try {
          TreatmentEffectSpec spec{arm.structure, trial.data.n_periods};
          const DesignSet designs = build_designs(trial.data, spec, arm.adjust);
          EstimandReport report;
          if (arm.estimator == "lmm" && arm.scale == EffectScale::Difference) {
            const LmmFit fit = fit_lmm(designs, arm.lmm_corr);
            report = extract_estimands(fit);
          } else if (arm.estimator == "lmm") {
            // ratio estimands through the identity-link working model
            const GeeFit fit =
                fit_gee(designs, lmm_corr_to_working(arm.lmm_corr), Link::Identity);
            report = estimate_estimands_gee(fit, designs, arm.scale);
          } else {
            const GeeFit fit = fit_gee(designs, arm.gee_corr, arm.link);
            report = estimate_estimands_gee(fit, designs, arm.scale);
          }
          record_report(report, results[static_cast<std::size_t>(r)].by_model[arm.name]);
        } catch (const std::exception&) {
          results[static_cast<std::size_t>(r)].failed[arm.name] = true;
        }
      }
    }
  };

  const int n_threads = std::max(1, config.threads);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  const std::map<std::string, double> truths = truths_for(config.generator);

  StudyMetrics metrics;
  metrics.replicates = reps;
  for (const auto& arm : config.models) metrics.failures_by_model[arm.name] = 0;
  for (const auto& res : results) {
    for (const auto& [name, failed] : res.failed) {
      if (failed) {
        ++metrics.failures;
        ++metrics.failures_by_model[name];
      }
    }
  }

  // Collect per (model, estimand) series in replicate order.
  std::map<std::string, std::map<std::string, std::vector<EstimateRecord>>> series;
  for (const auto& res : results) {
    for (const auto& [model, ests] : res.by_model) {
      for (const auto& [label, rec] : ests) {
        if (truths.count(label) == 0) continue;
        series[model][label].push_back(rec);
      }
    }
  }

  for (const auto& arm : config.models) {
    auto it = series.find(arm.name);
    if (it == series.end()) continue;
    for (const auto& [label, records] : it->second) {
      const std::vector<EstimateRecord>* ref = nullptr;
      if (!arm.re_reference.empty()) {
        auto rit = series.find(arm.re_reference);
        if (rit != series.end()) {
          auto lit = rit->second.find(label);
          if (lit != rit->second.end()) ref = &lit->second;
        }
      }
      metrics.rows.push_back(
          aggregate_metrics(arm.name, label, truths.at(label), records, ref));
    }
  }
  return metrics;
}

std::string metrics_to_csv(const StudyMetrics& metrics) {
  std::ostringstream os;
  os << "model,estimand,truth,bias,ese,re,ase_mb,ase_rob,ecp_mb,ecp_rob,n_used\n";
  os.precision(6);
  os << std::fixed;
  for (const auto& r : metrics.rows) {
    os << r.model << ',' << r.estimand << ',' << r.truth << ',' << r.bias << ',' << r.ese << ','
       << r.re << ',' << r.ase_mb << ',' << r.ase_rob << ',' << r.ecp_mb << ',' << r.ecp_rob
       << ',' << r.n_used << '\n';
  }
  return os.str();
}

std::string metrics_to_json(const StudyMetrics& metrics, const StudyConfig& config) {
  nlohmann::json j;
  j["schema"] = "swedge-metrics/1";
  j["design"] = to_string(config.generator.design);
  j["clusters"] = config.generator.n_clusters;
  j["replicates"] = metrics.replicates;
  j["seed"] = config.seed;
  j["failures"] = metrics.failures;
  j["failures_by_model"] = metrics.failures_by_model;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : metrics.rows) {
    j["rows"].push_back({{"model", r.model},
                         {"estimand", r.estimand},
                         {"truth", r.truth},
                         {"bias", r.bias},
                         {"ese", r.ese},
                         {"re", r.re},
                         {"ase_mb", r.ase_mb},
                         {"ase_rob", r.ase_rob},
                         {"ecp_mb", r.ecp_mb},
                         {"ecp_rob", r.ecp_rob},
                         {"n_used", r.n_used}});
  }
  return j.dump(2);
}

namespace {

StudyConfig build_config(const nlohmann::json& j) {
  StudyConfig config;
  config.generator.design = sim_design_from_string(j.at("design").get<std::string>());
  config.generator.n_clusters = j.at("clusters").get<int>();
  config.replicates = j.at("replicates").get<int>();
  config.seed = j.at("seed").get<std::uint64_t>();
  config.threads = j.value("threads", 1);
  config.generator.n_periods = j.value("J", 0);
  config.generator.source_size = j.value("source_size", 0);
  config.generator.enroll_min = j.value("enroll_min", 5);
  config.generator.enroll_max = j.value("enroll_max", 50);
  config.generator.covariate_effects = j.value("covariate_effects", true);
  config.generator.treatment_heterogeneity = j.value("treatment_heterogeneity", true);
  config.generator.zero_noise = j.value("zero_noise", false);
  if (j.contains("noise")) {
    config.generator.noise.gamma_cluster_var =
        j["noise"].value("gamma_cluster_var", 0.1);
    config.generator.noise.gamma_cluster_period_var =
        j["noise"].value("gamma_cluster_period_var", 0.1);
    config.generator.noise.poisson_rate = j["noise"].value("poisson_rate", 0.9);
  }
  if (!j.contains("models") || !j["models"].is_array() || j["models"].empty()) {
    throw std::runtime_error("study config needs a non-empty models array");
  }
  for (const auto& m : j["models"]) {
    ModelArm arm;
    arm.name = m.at("name").get<std::string>();
    arm.estimator = m.value("estimator", "lmm");
    arm.structure = treatment_effect_from_string(m.value("structure", "constant"));
    const std::string corr = m.value("correlation", arm.estimator == "lmm" ? "exchangeable"
                                                                           : "independence");
    if (arm.estimator == "lmm") {
      arm.lmm_corr = correlation_from_string(corr);
    } else if (arm.estimator == "gee") {
      arm.gee_corr = working_corr_from_string(corr);
    } else {
      throw std::runtime_error("unknown estimator '" + arm.estimator + "'");
    }
    arm.link = link_from_string(m.value("link", "identity"));
    arm.scale = effect_scale_from_string(m.value("scale", "difference"));
    if (m.contains("adjust")) {
      for (const auto& a : m["adjust"]) arm.adjust.push_back(a.get<std::string>());
    }
    arm.re_reference = m.value("re_reference", "");
    config.models.push_back(std::move(arm));
  }
  return config;
}

// Minimal flat TOML reader: top-level `key = value` lines, [section]
// headers folded into nested objects, [[models]] starting a new model
// table. Values: strings, booleans, integers, floats, flat arrays.
nlohmann::json toml_value(const std::string& raw) {
  std::string s = raw;
  auto trim = [](std::string& x) {
    const auto b = x.find_first_not_of(" \t");
    const auto e = x.find_last_not_of(" \t");
    x = (b == std::string::npos) ? std::string() : x.substr(b, e - b + 1);
  };
  trim(s);
  if (s.empty()) throw std::runtime_error("empty TOML value");
  if (s.front() == '"') {
    const auto end = s.find('"', 1);
    if (end == std::string::npos) throw std::runtime_error("unterminated string in TOML");
    return s.substr(1, end - 1);
  }
  if (s.front() == '[') {
    if (s.back() != ']') throw std::runtime_error("unterminated array in TOML");
    nlohmann::json arr = nlohmann::json::array();
    std::string inner = s.substr(1, s.size() - 2);
    std::string item;
    int depth = 0;
    bool in_str = false;
    for (char ch : inner) {
      if (ch == '"') in_str = !in_str;
      if (ch == ',' && depth == 0 && !in_str) {
        trim(item);
        if (!item.empty()) arr.push_back(toml_value(item));
        item.clear();
      } else {
        item.push_back(ch);
      }
    }
    trim(item);
    if (!item.empty()) arr.push_back(toml_value(item));
    return arr;
  }
  if (s == "true") return true;
  if (s == "false") return false;
  if (s.find_first_of(".eE") != std::string::npos &&
      s.find_first_not_of("+-0123456789.eE") == std::string::npos) {
    return std::stod(s);
  }
  if (s.find_first_not_of("+-0123456789") == std::string::npos) return std::stoll(s);
  throw std::runtime_error("cannot parse TOML value '" + s + "'");
}

}  // namespace

StudyConfig parse_study_config_json(const std::string& text) {
  return build_config(nlohmann::json::parse(text));
}

StudyConfig parse_study_config_toml(const std::string& text) {
  nlohmann::json doc = nlohmann::json::object();
  doc["models"] = nlohmann::json::array();
  nlohmann::json* target = &doc;

  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    // strip comments outside strings
    bool in_str = false;
    std::string clean;
    for (char ch : line) {
      if (ch == '"') in_str = !in_str;
      if (ch == '#' && !in_str) break;
      clean.push_back(ch);
    }
    const auto b = clean.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = clean.find_last_not_of(" \t\r");
    clean = clean.substr(b, e - b + 1);

    if (clean.rfind("[[", 0) == 0) {
      const std::string name = clean.substr(2, clean.size() - 4);
      if (name != "models") {
        throw std::runtime_error("unsupported TOML table array '" + name + "'");
      }
      doc["models"].push_back(nlohmann::json::object());
      target = &doc["models"].back();
      continue;
    }
    if (clean.front() == '[') {
      const std::string name = clean.substr(1, clean.size() - 2);
      if (name == "noise") {
        doc["noise"] = nlohmann::json::object();
        target = &doc["noise"];
      } else if (name == "study" || name == "generator") {
        target = &doc;  // folded into the top level
      } else {
        throw std::runtime_error("unsupported TOML section '" + name + "'");
      }
      continue;
    }
    const auto eq = clean.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("TOML line " + std::to_string(line_no) + " has no '='");
    }
    std::string key = clean.substr(0, eq);
    const auto kb = key.find_first_not_of(" \t");
    const auto ke = key.find_last_not_of(" \t");
    key = key.substr(kb, ke - kb + 1);
    (*target)[key] = toml_value(clean.substr(eq + 1));
  }
  return build_config(doc);
}

StudyConfig load_study_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open study config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const auto dot = path.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "json") return parse_study_config_json(text);
  if (ext == "toml") return parse_study_config_toml(text);
  // sniff: JSON starts with '{'
  for (char ch : text) {
    if (ch == ' ' || ch == '\n' || ch == '\t' || ch == '\r') continue;
    return ch == '{' ? parse_study_config_json(text) : parse_study_config_toml(text);
  }
  throw std::runtime_error("empty study config");
}

}  // namespace swedge
