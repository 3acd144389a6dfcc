// Recomputes the design C true marginal odds ratios by Gauss-Hermite
// quadrature and, optionally, cross-checks them with a plug-in Monte Carlo
// draw. The quadrature values are the ones frozen in the library.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

#include "swedge/rng.hpp"
#include "swedge/simulation.hpp"

namespace {

// Plug-in Monte Carlo estimate of Phi_j(d): clusters of `per_cluster`
// individuals until `total` individuals are drawn, averaging the Bernoulli
// means for duration d and 0.
double plugin_mc(swedge::SimDesign scenario, int j, int d, long total, int per_cluster,
                 std::uint64_t seed) {
  const double vb = scenario == swedge::SimDesign::C1 ? 0.25 : 0.04;
  const int J = 3;
  swedge::Rng rng(seed);
  double sum1 = 0.0, sum0 = 0.0;
  long n = 0;
  while (n < total) {
    const double alpha = rng.normal(0.0, std::sqrt(0.015));
    const double gam = rng.normal(0.0, std::sqrt(0.01));
    const double bi = rng.normal(0.0, std::sqrt(vb));
    const double e2 = rng.normal(0.0, std::sqrt(0.025));
    std::vector<double> x1(per_cluster), x22(per_cluster);
    double m1 = 0.0, m22 = 0.0;
    for (int k = 0; k < per_cluster; ++k) {
      x1[k] = rng.bernoulli(0.05) ? 1.0 : 0.0;
      const double x2 = e2 + rng.normal(0.0, std::sqrt(0.1));
      x22[k] = x2 * x2;
      m1 += x1[k];
      m22 += x22[k];
    }
    m1 /= per_cluster;
    m22 /= per_cluster;
    for (int k = 0; k < per_cluster; ++k) {
      const double base = 0.08 + 0.02 * j + x1[k] + (static_cast<double>(j) / J) * x22[k] +
                          alpha + gam;
      const double te = 0.72 + 0.18 * d + 0.25 * (x1[k] - m1) + (d / 10.0) * (x22[k] - m22) + bi;
      sum1 += 1.0 / (1.0 + std::exp(-(base + te)));
      sum0 += 1.0 / (1.0 + std::exp(-base));
    }
    n += per_cluster;
  }
  const double p1 = sum1 / static_cast<double>(n);
  const double p0 = sum0 / static_cast<double>(n);
  return (p1 / (1.0 - p1)) / (p0 / (1.0 - p0));
}

}  // namespace

int main(int argc, char** argv) {
  const bool with_mc = argc > 1 && std::strcmp(argv[1], "--mc") == 0;
  const int pairs[3][2] = {{1, 1}, {2, 1}, {2, 2}};
  for (auto scenario : {swedge::SimDesign::C1, swedge::SimDesign::C2}) {
    std::printf("scenario %s\n", swedge::to_string(scenario).c_str());
    for (const auto& jd : pairs) {
      const double q = swedge::design_c_truth_quadrature(scenario, jd[0], jd[1], 40);
      std::printf("  Phi_%d(%d) quadrature %.10f", jd[0], jd[1], q);
      if (with_mc) {
        const double mc = plugin_mc(scenario, jd[0], jd[1], 10'000'000, 100, 424242);
        std::printf("  plugin-mc(1e7) %.4f", mc);
      }
      std::printf("\n");
    }
  }
  return 0;
}
