#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "swedge/design.hpp"
#include "swedge/rng.hpp"
#include "swedge/structured_cov.hpp"
#include "swedge/trial_data.hpp"

namespace swedge::testutil {

struct ClusterSpec {
  int adoption = 1;
  std::vector<int> sizes;  // N_i1..N_iJ
};

// Builds a trial from explicit cluster-period layouts; outcomes and
// covariates come from the supplied callback (cluster index, period,
// individual index).
inline TrialData make_trial(
    const std::vector<ClusterSpec>& clusters, int n_covariates,
    const std::function<double(int, int, int, std::vector<double>&)>& fill) {
  TrialData data;
  for (int p = 0; p < n_covariates; ++p) data.covariate_names.push_back("x" + std::to_string(p + 1));
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "c%03zu", i + 1);
    data.clusters[buf].adoption_time = clusters[i].adoption;
    for (int j = 1; j <= static_cast<int>(clusters[i].sizes.size()); ++j) {
      for (int k = 0; k < clusters[i].sizes[static_cast<std::size_t>(j - 1)]; ++k) {
        ObsRecord rec;
        rec.cluster_id = buf;
        rec.period = j;
        rec.individual_key = "k" + std::to_string(k);
        rec.covariates.assign(static_cast<std::size_t>(n_covariates), 0.0);
        rec.outcome = fill(static_cast<int>(i), j, k, rec.covariates);
        data.records.push_back(std::move(rec));
      }
    }
  }
  finalize_trial_data(data);
  return data;
}

// Random continuous-outcome trial with an additive linear signal plus
// cluster, cluster-period, and residual noise.
inline TrialData random_trial(Rng& rng, int I, int J, int p, int max_cell = 6) {
  std::vector<ClusterSpec> specs;
  for (int i = 0; i < I; ++i) {
    ClusterSpec cs;
    cs.adoption = rng.uniform_int(1, J);
    for (int j = 0; j < J; ++j) cs.sizes.push_back(rng.uniform_int(1, max_cell));
    specs.push_back(cs);
  }
  std::vector<double> alpha;
  std::vector<std::vector<double>> gamma(static_cast<std::size_t>(I));
  for (int i = 0; i < I; ++i) {
    alpha.push_back(rng.normal(0.0, 0.5));
    for (int j = 0; j < J; ++j) gamma[static_cast<std::size_t>(i)].push_back(rng.normal(0.0, 0.35));
  }
  return make_trial(specs, p, [&](int i, int j, int k, std::vector<double>& x) {
    (void)k;
    for (auto& v : x) v = rng.normal(0.0, 1.0);
    double y = 0.3 * j + alpha[static_cast<std::size_t>(i)] +
               gamma[static_cast<std::size_t>(i)][static_cast<std::size_t>(j - 1)] +
               rng.normal(0.0, 0.8);
    const int z = specs[static_cast<std::size_t>(i)].adoption;
    if (z <= j) y += 1.0 + 0.2 * (j - z);
    for (double v : x) y += 0.3 * v;
    return y;
  });
}

inline Eigen::MatrixXd dense_inverse(const std::vector<int>& sizes,
                                     const VarianceComponents& vc) {
  return dense_observed_cov(sizes, vc).inverse();
}

}  // namespace swedge::testutil
