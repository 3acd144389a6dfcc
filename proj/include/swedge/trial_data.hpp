#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace swedge {

// One observed individual-period record. A record exists iff the
// individual was enrolled in that cluster-period.
struct ObsRecord {
  std::string cluster_id;
  int period = 0;  // 1..J
  std::string individual_key;
  double outcome = 0.0;
  std::vector<double> covariates;
};

struct ClusterInfo {
  int adoption_time = 0;          // Z_i, first treated period, 1..J
  std::vector<int> period_sizes;  // N_i1..N_iJ, counted from records
  long total = 0;                 // M_i = sum_j N_ij
};

enum class ProbSource { Design, Empirical };

// Randomization probabilities pi_1..pi_J and their running sums; the
// cumulative pi^s_j is the proportion of clusters treated by period j.
struct RandomizationSpec {
  std::vector<double> probs;
  ProbSource source = ProbSource::Empirical;

  std::vector<double> cumulative() const;
};

struct Diagnostic {
  enum class Severity { Error, Warning };
  Severity severity = Severity::Error;
  std::string message;
};

struct TrialData {
  std::vector<ObsRecord> records;
  std::map<std::string, ClusterInfo> clusters;
  int n_periods = 0;  // J
  std::vector<std::string> covariate_names;
  RandomizationSpec randomization;

  // Short content hash used as report provenance.
  std::string fingerprint() const;
};

// Column-name map for the long-format CSV. An empty covariate list means
// "every column that is not one of the five core columns, in header order".
struct CsvSchema {
  std::string cluster = "cluster";
  std::string period = "period";
  std::string id = "id";
  std::string outcome = "y";
  std::string adoption = "z";
  std::vector<std::string> covariates;
};

TrialData load_trial_csv(const std::string& path, const CsvSchema& schema = {});
TrialData parse_trial_csv(std::istream& in, const CsvSchema& schema = {});
void write_trial_csv(const TrialData& data, std::ostream& out);
void write_trial_csv(const TrialData& data, const std::string& path);

// Re-derives cluster sizes and empirical randomization probabilities from
// the record set. Design probabilities, when supplied, must have length J.
void finalize_trial_data(TrialData& data,
                         const std::optional<std::vector<double>>& design_probs = std::nullopt);

// Returns every invariant violation and warning; never throws.
std::vector<Diagnostic> validate(const TrialData& data);

bool has_errors(const std::vector<Diagnostic>& diagnostics);

}  // namespace swedge
