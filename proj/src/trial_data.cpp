#include "swedge/trial_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace swedge {

std::vector<double> RandomizationSpec::cumulative() const {
  std::vector<double> cum(probs.size());
  double run = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    run += probs[j];
    cum[j] = run;
  }
  if (!cum.empty()) cum.back() = 1.0;
  return cum;
}

std::string TrialData::fingerprint() const {
  // FNV-1a over the sorted numeric content; stable across record order.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  mix(static_cast<std::uint64_t>(records.size()));
  mix(static_cast<std::uint64_t>(n_periods));
  double ysum = 0.0, ysq = 0.0;
  for (const auto& r : records) {
    ysum += r.outcome;
    ysq += r.outcome * r.outcome;
  }
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(ysum));
  std::memcpy(&bits, &ysum, sizeof(bits));
  mix(bits);
  std::memcpy(&bits, &ysq, sizeof(bits));
  mix(bits);
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  out.push_back(field);
  for (auto& f : out) {
    auto b = f.find_first_not_of(" \t");
    auto e = f.find_last_not_of(" \t");
    f = (b == std::string::npos) ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

double parse_double(const std::string& s, const std::string& what, long line_no) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("non-numeric " + what + " '" + s + "' at line " +
                             std::to_string(line_no));
  }
}

int parse_int(const std::string& s, const std::string& what, long line_no) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::runtime_error("non-integer " + what + " '" + s + "' at line " +
                             std::to_string(line_no));
  }
  return v;
}

}  // namespace

TrialData parse_trial_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty CSV: header row required");
  const std::vector<std::string> header = split_csv_line(line);

  auto col_of = [&header](const std::string& name) -> int {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };

  const int c_cluster = col_of(schema.cluster);
  const int c_period = col_of(schema.period);
  const int c_id = col_of(schema.id);
  const int c_y = col_of(schema.outcome);
  const int c_z = col_of(schema.adoption);
  for (auto [idx, name] : {std::pair{c_cluster, schema.cluster},
                           {c_period, schema.period},
                           {c_id, schema.id},
                           {c_y, schema.outcome},
                           {c_z, schema.adoption}}) {
    if (idx < 0) throw std::runtime_error("missing column '" + name + "'");
  }

  std::vector<std::string> cov_names = schema.covariates;
  if (cov_names.empty()) {
    for (int i = 0; i < static_cast<int>(header.size()); ++i) {
      if (i == c_cluster || i == c_period || i == c_id || i == c_y || i == c_z) continue;
      cov_names.push_back(header[i]);
    }
  }
  std::vector<int> cov_cols;
  for (const auto& name : cov_names) {
    int idx = col_of(name);
    if (idx < 0) throw std::runtime_error("missing covariate column '" + name + "'");
    cov_cols.push_back(idx);
  }

  TrialData data;
  data.covariate_names = cov_names;
  std::unordered_map<std::string, int> adoption_seen;

  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < header.size()) {
      throw std::runtime_error("too few fields at line " + std::to_string(line_no));
    }
    ObsRecord rec;
    rec.cluster_id = fields[c_cluster];
    rec.period = parse_int(fields[c_period], "period", line_no);
    rec.individual_key = fields[c_id];
    rec.outcome = parse_double(fields[c_y], "outcome", line_no);
    if (!std::isfinite(rec.outcome)) {
      throw std::runtime_error("non-finite outcome at line " + std::to_string(line_no));
    }
    const int z = parse_int(fields[c_z], "adoption_time", line_no);
    rec.covariates.reserve(cov_cols.size());
    for (int c : cov_cols) {
      double v = parse_double(fields[c], "covariate " + header[c], line_no);
      if (!std::isfinite(v)) {
        throw std::runtime_error("non-finite covariate at line " + std::to_string(line_no));
      }
      rec.covariates.push_back(v);
    }

    auto [it, inserted] = adoption_seen.emplace(rec.cluster_id, z);
    if (!inserted && it->second != z) {
      throw std::runtime_error("cluster '" + rec.cluster_id +
                               "' has inconsistent adoption_time across rows");
    }
    data.records.push_back(std::move(rec));
  }

  for (const auto& [cid, z] : adoption_seen) {
    data.clusters[cid].adoption_time = z;
  }
  finalize_trial_data(data);
  return data;
}

TrialData load_trial_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file '" + path + "'");
  return parse_trial_csv(in, schema);
}

void finalize_trial_data(TrialData& data,
                         const std::optional<std::vector<double>>& design_probs) {
  // J is the number of observed outcome periods; adoption times must fall
  // inside it.
  int J = 0;
  for (const auto& rec : data.records) {
    if (rec.period < 1) {
      throw std::runtime_error("period out of range: " + std::to_string(rec.period) +
                               " (cluster '" + rec.cluster_id + "')");
    }
    J = std::max(J, rec.period);
  }
  if (J == 0) throw std::runtime_error("trial has no records");
  data.n_periods = J;

  for (const auto& rec : data.records) {
    if (rec.period < 1 || rec.period > J) {
      throw std::runtime_error("period out of range: " + std::to_string(rec.period) +
                               " (cluster '" + rec.cluster_id + "')");
    }
    if (data.clusters.find(rec.cluster_id) == data.clusters.end()) {
      throw std::runtime_error("record references unknown cluster '" + rec.cluster_id + "'");
    }
  }

  for (auto& [cid, info] : data.clusters) {
    if (info.adoption_time < 1 || info.adoption_time > J) {
      throw std::runtime_error("cluster '" + cid + "' has adoption_time " +
                               std::to_string(info.adoption_time) + " outside 1.." +
                               std::to_string(J));
    }
    info.period_sizes.assign(J, 0);
    info.total = 0;
  }
  for (const auto& rec : data.records) {
    auto& info = data.clusters[rec.cluster_id];
    ++info.period_sizes[rec.period - 1];
    ++info.total;
  }

  if (design_probs) {
    if (static_cast<int>(design_probs->size()) != J) {
      throw std::runtime_error("design probabilities must have length J=" + std::to_string(J));
    }
    double sum = 0.0;
    for (double p : *design_probs) {
      if (p <= 0.0) throw std::runtime_error("design probabilities must be positive");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-8) {
      throw std::runtime_error("design probabilities must sum to 1");
    }
    data.randomization.probs = *design_probs;
    data.randomization.source = ProbSource::Design;
  } else {
    std::vector<long> counts(J, 0);
    for (const auto& [cid, info] : data.clusters) ++counts[info.adoption_time - 1];
    const double total = static_cast<double>(data.clusters.size());
    data.randomization.probs.assign(J, 0.0);
    double partial = 0.0;
    for (int j = 0; j + 1 < J; ++j) {
      data.randomization.probs[j] = counts[j] / total;
      partial += data.randomization.probs[j];
    }
    // Last entry absorbs rounding so the probabilities sum to 1 exactly.
    if (J >= 1) data.randomization.probs[J - 1] = 1.0 - partial;
    data.randomization.source = ProbSource::Empirical;
  }
}

void write_trial_csv(const TrialData& data, std::ostream& out) {
  out << "cluster,period,id,y,z";
  for (const auto& name : data.covariate_names) out << ',' << name;
  out << '\n';
  out.precision(17);
  for (const auto& rec : data.records) {
    const auto& info = data.clusters.at(rec.cluster_id);
    out << rec.cluster_id << ',' << rec.period << ',' << rec.individual_key << ','
        << rec.outcome << ',' << info.adoption_time;
    for (double v : rec.covariates) out << ',' << v;
    out << '\n';
  }
}

void write_trial_csv(const TrialData& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file '" + path + "'");
  write_trial_csv(data, out);
}

std::vector<Diagnostic> validate(const TrialData& data) {
  std::vector<Diagnostic> diags;
  auto error = [&diags](std::string msg) {
    diags.push_back({Diagnostic::Severity::Error, std::move(msg)});
  };
  auto warning = [&diags](std::string msg) {
    diags.push_back({Diagnostic::Severity::Warning, std::move(msg)});
  };

  const int J = data.n_periods;
  if (J < 2) error("fewer than 2 periods observed (J=" + std::to_string(J) + ")");

  // Per-cluster structural checks.
  std::map<std::string, std::vector<int>> counted;
  for (const auto& rec : data.records) {
    if (rec.period < 1 || rec.period > J) {
      error("record with period out of range in cluster '" + rec.cluster_id + "'");
      continue;
    }
    auto& c = counted[rec.cluster_id];
    c.resize(J, 0);
    ++c[rec.period - 1];
  }
  for (const auto& [cid, info] : data.clusters) {
    if (info.total <= 0) error("cluster '" + cid + "' has no observed records");
    long sum = 0;
    for (int n : info.period_sizes) sum += n;
    if (sum != info.total) {
      error("cluster '" + cid + "' period sizes do not add to its total");
    }
    auto it = counted.find(cid);
    const std::vector<int> empty(J, 0);
    const auto& actual = (it == counted.end()) ? empty : it->second;
    for (int j = 0; j < J; ++j) {
      if (j < static_cast<int>(info.period_sizes.size()) && info.period_sizes[j] != actual[j]) {
        error("cluster '" + cid + "' has stale period size for period " + std::to_string(j + 1));
        break;
      }
    }
  }

  // Duplicate (cluster, period, id) keys.
  std::set<std::tuple<std::string, int, std::string>> keys;
  for (const auto& rec : data.records) {
    if (!keys.emplace(rec.cluster_id, rec.period, rec.individual_key).second) {
      error("duplicate individual key '" + rec.individual_key + "' in cluster '" +
            rec.cluster_id + "' period " + std::to_string(rec.period));
    }
  }

  // Baseline covariates: an individual's covariate vector may not change
  // across periods. Reported once per individual.
  std::map<std::pair<std::string, std::string>, const std::vector<double>*> first_seen;
  std::set<std::pair<std::string, std::string>> flagged;
  for (const auto& rec : data.records) {
    auto key = std::make_pair(rec.cluster_id, rec.individual_key);
    auto it = first_seen.find(key);
    if (it == first_seen.end()) {
      first_seen.emplace(key, &rec.covariates);
    } else if (*it->second != rec.covariates && flagged.insert(key).second) {
      error("non-baseline covariate: individual '" + rec.individual_key + "' in cluster '" +
            rec.cluster_id + "' has covariates that change across periods");
    }
  }

  // Randomization positivity. A treatment sequence with zero clusters makes
  // the empirical pi_j zero and fitting must refuse.
  if (static_cast<int>(data.randomization.probs.size()) == J) {
    for (int j = 0; j < J; ++j) {
      if (data.randomization.probs[j] <= 0.0) {
        error("no clusters adopt at period " + std::to_string(j + 1) +
              ": randomization positivity violated");
      }
    }
    bool all_first = true;
    for (const auto& [cid, info] : data.clusters) {
      if (info.adoption_time != 1) all_first = false;
    }
    if (all_first && !data.clusters.empty()) {
      error("no untreated contrast; randomization positivity violated "
            "(all clusters adopt at period 1)");
    }
    double s = 0.0;
    for (double p : data.randomization.probs) s += p;
    if (std::abs(s - 1.0) > 1e-12) {
      warning("randomization probabilities sum to " + std::to_string(s) + ", not 1");
    }
  } else {
    error("randomization probabilities missing or of wrong length");
  }

  return diags;
}

bool has_errors(const std::vector<Diagnostic>& diagnostics) {
  return std::any_of(diagnostics.begin(), diagnostics.end(), [](const Diagnostic& d) {
    return d.severity == Diagnostic::Severity::Error;
  });
}

}  // namespace swedge
