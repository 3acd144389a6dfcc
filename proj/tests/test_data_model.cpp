#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "swedge/trial_data.hpp"

using namespace swedge;

namespace {

TrialData from_string(const std::string& csv) {
  std::istringstream in(csv);
  return parse_trial_csv(in);
}

}  // namespace

TEST_CASE("loads a minimal two-cluster trial") {
  const auto data = from_string(
      "cluster,period,id,y,z\n"
      "a,1,p1,1.0,1\n"
      "a,2,p1,1.5,1\n"
      "b,1,p1,0.3,2\n"
      "b,2,p1,0.9,2\n");
  CHECK(data.n_periods == 2);
  CHECK(data.clusters.at("a").period_sizes == std::vector<int>{1, 1});
  CHECK(data.clusters.at("b").total == 2);
  REQUIRE(data.randomization.probs.size() == 2);
  CHECK(data.randomization.probs[0] == doctest::Approx(0.5));
  CHECK(data.randomization.probs[0] + data.randomization.probs[1] == 1.0);
  CHECK(data.randomization.source == ProbSource::Empirical);
  CHECK(validate(data).empty());
}

TEST_CASE("rejects malformed input") {
  CHECK_THROWS_WITH_AS(from_string("cluster,period,id,y,z\na,0,p1,1.0,1\n"),
                       doctest::Contains("period out of range"), std::runtime_error);
  CHECK_THROWS_WITH_AS(from_string("cluster,id,y,z\na,p1,1.0,1\n"),
                       doctest::Contains("missing column"), std::runtime_error);
  CHECK_THROWS_WITH_AS(from_string("cluster,period,id,y,z\na,1,p1,abc,1\n"),
                       doctest::Contains("non-numeric"), std::runtime_error);
  CHECK_THROWS_WITH_AS(from_string("cluster,period,id,y,z\na,1,p1,1.0,1\na,2,p1,1.0,2\n"),
                       doctest::Contains("inconsistent adoption_time"), std::runtime_error);
  // adoption time outside 1..J
  CHECK_THROWS(from_string("cluster,period,id,y,z\na,1,p1,1.0,1\nb,1,p1,1.0,3\n"));
}

TEST_CASE("validate flags degenerate designs and non-baseline covariates") {
  SUBCASE("all clusters adopting at period 1") {
    const auto data = from_string(
        "cluster,period,id,y,z\n"
        "a,1,p1,1.0,1\n"
        "a,2,p1,1.0,1\n"
        "b,1,p1,1.0,1\n"
        "b,2,p1,1.0,1\n");
    const auto diags = validate(data);
    CHECK(has_errors(diags));
    bool found = false;
    for (const auto& d : diags) {
      if (d.message.find("no untreated contrast") != std::string::npos) found = true;
    }
    CHECK(found);
  }
  SUBCASE("covariate changing across periods") {
    const auto data = from_string(
        "cluster,period,id,y,z,age\n"
        "a,1,p1,1.0,1,30\n"
        "a,2,p1,1.0,1,31\n"
        "b,1,p1,1.0,2,40\n"
        "b,2,p1,1.0,2,40\n");
    const auto diags = validate(data);
    bool found = false;
    for (const auto& d : diags) {
      if (d.message.find("non-baseline covariate") != std::string::npos) found = true;
    }
    CHECK(found);
  }
  SUBCASE("duplicate key") {
    const auto data = from_string(
        "cluster,period,id,y,z\n"
        "a,1,p1,1.0,1\n"
        "a,1,p1,2.0,1\n"
        "a,2,p1,1.0,1\n"
        "b,1,p1,1.0,2\n"
        "b,2,p1,1.0,2\n");
    CHECK(has_errors(validate(data)));
  }
}

TEST_CASE("round-trips through CSV") {
  const auto data = from_string(
      "cluster,period,id,y,z,age,sex\n"
      "a,1,p1,1.25,1,30,1\n"
      "a,2,p2,-0.5,1,41,0\n"
      "b,1,p1,0.125,2,28,1\n"
      "b,2,p3,3.75,2,55,0\n");
  std::ostringstream out;
  write_trial_csv(data, out);
  std::istringstream in(out.str());
  const auto again = parse_trial_csv(in);
  REQUIRE(again.records.size() == data.records.size());
  auto key = [](const ObsRecord& r) {
    return std::tuple{r.cluster_id, r.period, r.individual_key, r.outcome, r.covariates};
  };
  auto a = data.records, b = again.records;
  std::sort(a.begin(), a.end(), [&](auto& x, auto& y) { return key(x) < key(y); });
  std::sort(b.begin(), b.end(), [&](auto& x, auto& y) { return key(x) < key(y); });
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(key(a[i]) == key(b[i]));
  CHECK(again.covariate_names == data.covariate_names);
}

TEST_CASE("cluster totals add up and design probabilities can override") {
  // 18 clusters, 3 steps, equal randomization
  std::ostringstream csv;
  csv << "cluster,period,id,y,z\n";
  for (int i = 0; i < 18; ++i) {
    const int z = i % 3 + 1;
    for (int j = 1; j <= 3; ++j) {
      for (int k = 0; k < 4; ++k) {
        csv << "hc" << i << ',' << j << ",p" << k << ',' << (0.1 * k) << ',' << z << '\n';
      }
    }
  }
  auto data = from_string(csv.str());
  CHECK(data.n_periods == 3);
  double total_prob = 0.0;
  for (double p : data.randomization.probs) {
    CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    total_prob += p;
  }
  CHECK(total_prob == 1.0);
  for (const auto& [cid, info] : data.clusters) {
    long sum = 0;
    for (int n : info.period_sizes) sum += n;
    CHECK(sum == info.total);
  }
  const auto cum = data.randomization.cumulative();
  CHECK(cum.back() == 1.0);

  finalize_trial_data(data, std::vector<double>{0.2, 0.3, 0.5});
  CHECK(data.randomization.source == ProbSource::Design);
  CHECK(data.randomization.probs[2] == doctest::Approx(0.5));
  CHECK_THROWS(finalize_trial_data(data, std::vector<double>{0.5, 0.5}));
}
