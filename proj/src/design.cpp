#include "swedge/design.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace swedge {

std::string to_string(TreatmentEffect kind) {
  switch (kind) {
    case TreatmentEffect::Constant: return "constant";
    case TreatmentEffect::DurationSpecific: return "duration";
    case TreatmentEffect::PeriodSpecific: return "period";
    case TreatmentEffect::Saturated: return "saturated";
  }
  return "?";
}

TreatmentEffect treatment_effect_from_string(const std::string& s) {
  if (s == "constant") return TreatmentEffect::Constant;
  if (s == "duration") return TreatmentEffect::DurationSpecific;
  if (s == "period") return TreatmentEffect::PeriodSpecific;
  if (s == "saturated") return TreatmentEffect::Saturated;
  throw std::invalid_argument("unknown treatment effect structure '" + s + "'");
}

int TreatmentEffectSpec::coef_count() const {
  switch (kind) {
    case TreatmentEffect::Constant: return 1;
    case TreatmentEffect::DurationSpecific: return n_periods;
    case TreatmentEffect::PeriodSpecific: return n_periods - 1;
    case TreatmentEffect::Saturated: return (n_periods - 1) * n_periods / 2;
  }
  return 0;
}

std::string TreatmentEffectSpec::coef_label(int idx) const {
  switch (kind) {
    case TreatmentEffect::Constant:
      return "Delta";
    case TreatmentEffect::DurationSpecific:
      return "Delta(" + std::to_string(idx + 1) + ")";
    case TreatmentEffect::PeriodSpecific:
      return "Delta_" + std::to_string(idx + 1);
    case TreatmentEffect::Saturated: {
      auto [j, d] = saturated_from_index(idx, n_periods);
      return "Delta_" + std::to_string(j) + "(" + std::to_string(d) + ")";
    }
  }
  return "?";
}

int saturated_index(int j, int d, int J) {
  if (!(1 <= d && d <= j && j <= J - 1)) {
    throw std::invalid_argument("saturated_index: need 1 <= d <= j <= J-1, got j=" +
                                std::to_string(j) + " d=" + std::to_string(d) +
                                " J=" + std::to_string(J));
  }
  return j * (j - 1) / 2 + (d - 1);
}

std::pair<int, int> saturated_from_index(int idx, int J) {
  const int count = (J - 1) * J / 2;
  if (idx < 0 || idx >= count) {
    throw std::invalid_argument("saturated_from_index: index out of range");
  }
  int j = 1;
  while (j * (j + 1) / 2 <= idx) ++j;
  const int d = idx - j * (j - 1) / 2 + 1;
  return {j, d};
}

Eigen::RowVectorXd treatment_row(int z, int j, const TreatmentEffectSpec& spec) {
  const int J = spec.n_periods;
  // z may exceed the retained window when a model is re-fit on fewer
  // periods; such clusters are simply never treated in the window.
  if (z < 1) throw std::invalid_argument("adoption time out of range");
  if (j < 1 || j > spec.retained_periods()) {
    throw std::invalid_argument("period " + std::to_string(j) + " out of range for spec with " +
                                std::to_string(spec.retained_periods()) + " retained periods");
  }
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(spec.coef_count());
  if (z > j) return row;  // not yet treated
  const int d = j - z + 1;
  switch (spec.kind) {
    case TreatmentEffect::Constant:
      row(0) = 1.0;
      break;
    case TreatmentEffect::DurationSpecific:
      row(d - 1) = 1.0;
      break;
    case TreatmentEffect::PeriodSpecific:
      row(j - 1) = 1.0;
      break;
    case TreatmentEffect::Saturated:
      row(saturated_index(j, d, J)) = 1.0;
      break;
  }
  return row;
}

Eigen::VectorXd summary_weights(SummaryKind kind, int J, const std::vector<double>* custom) {
  switch (kind) {
    case SummaryKind::DurationAverage:
      return Eigen::VectorXd::Constant(J, 1.0 / J);
    case SummaryKind::PeriodAverage:
      return Eigen::VectorXd::Constant(J - 1, 1.0 / (J - 1));
    case SummaryKind::SaturatedAverage: {
      const int m = (J - 1) * J / 2;
      return Eigen::VectorXd::Constant(m, 1.0 / m);
    }
    case SummaryKind::Custom: {
      if (custom == nullptr) throw std::invalid_argument("custom weights required");
      Eigen::VectorXd w(custom->size());
      double sum = 0.0;
      for (std::size_t i = 0; i < custom->size(); ++i) {
        w(static_cast<int>(i)) = (*custom)[i];
        sum += (*custom)[i];
      }
      if (std::abs(sum - 1.0) > 1e-12) {
        throw std::invalid_argument("custom weights must sum to 1 (got " + std::to_string(sum) +
                                    ")");
      }
      return w;
    }
  }
  throw std::invalid_argument("unknown summary kind");
}

std::string DesignLayout::column_label(int idx) const {
  if (idx < retained) return "period_" + std::to_string(idx + 1);
  if (idx < retained + n_treat) return spec.coef_label(idx - retained);
  return covariate_names[static_cast<std::size_t>(idx - retained - n_treat)];
}

long DesignSet::total_rows() const {
  long n = 0;
  for (const auto& c : clusters) n += c.M();
  return n;
}

DesignSet build_designs(const TrialData& data, const TreatmentEffectSpec& spec,
                        const std::vector<std::string>& adjust,
                        std::optional<int> retained_override) {
  if (spec.n_periods != data.n_periods) {
    throw std::invalid_argument("spec.n_periods does not match the data");
  }
  const int J = spec.n_periods;
  const int retained = retained_override.value_or(spec.retained_periods());
  if (retained < 1 || retained > spec.retained_periods()) {
    throw std::invalid_argument("invalid retained period count");
  }

  std::vector<int> cov_idx;
  for (const auto& name : adjust) {
    auto it = std::find(data.covariate_names.begin(), data.covariate_names.end(), name);
    if (it == data.covariate_names.end()) {
      throw std::invalid_argument("unknown covariate '" + name + "'");
    }
    cov_idx.push_back(static_cast<int>(it - data.covariate_names.begin()));
  }

  // Re-fitting on fewer periods shrinks the identifiable coefficient set
  // (e.g. duration d = J is unreachable when period J is dropped), so the
  // treatment block is built from an effective spec whose retained window
  // matches.
  TreatmentEffectSpec eff = spec;
  if (retained != spec.retained_periods()) {
    eff.n_periods = spec.drops_last_period() ? retained + 1 : retained;
  }

  DesignSet set;
  set.layout.spec = eff;
  set.layout.retained = retained;
  set.layout.n_treat = eff.coef_count();
  set.layout.n_cov = static_cast<int>(cov_idx.size());
  set.layout.covariate_names = adjust;
  set.randomization = data.randomization;

  // Group record indices by cluster, then by period, preserving file order.
  std::unordered_map<std::string, std::vector<std::vector<int>>> by_cluster;
  for (int r = 0; r < static_cast<int>(data.records.size()); ++r) {
    const auto& rec = data.records[static_cast<std::size_t>(r)];
    auto& periods = by_cluster[rec.cluster_id];
    periods.resize(J);
    if (rec.period <= retained) periods[rec.period - 1].push_back(r);
  }

  const int cols = set.layout.cols();
  for (const auto& [cid, info] : data.clusters) {
    ClusterDesign cd;
    cd.cluster_id = cid;
    cd.adoption = info.adoption_time;
    cd.all_sizes = info.period_sizes;
    cd.sizes.assign(retained, 0);
    auto it = by_cluster.find(cid);
    long m = 0;
    if (it != by_cluster.end()) {
      for (int j = 0; j < retained; ++j) {
        cd.sizes[j] = static_cast<int>(it->second[j].size());
        m += cd.sizes[j];
      }
    }
    cd.y.resize(m);
    cd.Q = Eigen::MatrixXd::Zero(m, cols);
    long row = 0;
    for (int j = 1; j <= retained; ++j) {
      Eigen::RowVectorXd treat = treatment_row(cd.adoption, j, eff);
      if (it == by_cluster.end()) continue;
      for (int r : it->second[j - 1]) {
        const auto& rec = data.records[static_cast<std::size_t>(r)];
        cd.y(row) = rec.outcome;
        cd.Q(row, j - 1) = 1.0;
        cd.Q.block(row, set.layout.treat_offset(), 1, set.layout.n_treat) = treat;
        for (int k = 0; k < set.layout.n_cov; ++k) {
          cd.Q(row, set.layout.cov_offset() + k) =
              rec.covariates[static_cast<std::size_t>(cov_idx[static_cast<std::size_t>(k)])];
        }
        ++row;
      }
    }
    set.clusters.push_back(std::move(cd));
  }
  return set;
}

Eigen::MatrixXd build_cluster_design(int adoption, const std::vector<int>& sizes,
                                     const Eigen::MatrixXd& covariates,
                                     const TreatmentEffectSpec& spec) {
  const int retained = spec.retained_periods();
  if (static_cast<int>(sizes.size()) < retained) {
    throw std::invalid_argument("sizes must cover the retained periods");
  }
  long m = 0;
  for (int j = 0; j < retained; ++j) m += sizes[static_cast<std::size_t>(j)];
  const int p = static_cast<int>(covariates.cols());
  if (covariates.rows() != m && p > 0) {
    throw std::invalid_argument("covariate rows must match the stacked observation count");
  }
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(m, retained + spec.coef_count() + p);
  long row = 0;
  for (int j = 1; j <= retained; ++j) {
    const Eigen::RowVectorXd treat = treatment_row(adoption, j, spec);
    for (int k = 0; k < sizes[static_cast<std::size_t>(j - 1)]; ++k) {
      Q(row, j - 1) = 1.0;
      Q.block(row, retained, 1, spec.coef_count()) = treat;
      if (p > 0) Q.block(row, retained + spec.coef_count(), 1, p) = covariates.row(row);
      ++row;
    }
  }
  return Q;
}

Eigen::MatrixXd SelectionStructure::dense() const {
  const int J = static_cast<int>(enrolled.size());
  const long M = observed_total();
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(static_cast<long>(source_size) * J, M);
  long col = 0;
  for (int j = 0; j < J; ++j) {
    for (int k : enrolled[static_cast<std::size_t>(j)]) {
      if (k < 0 || k >= source_size) throw std::invalid_argument("enrolled index out of range");
      D(static_cast<long>(j) * source_size + k, col) = 1.0;
      ++col;
    }
  }
  return D;
}

long SelectionStructure::observed_total() const {
  long n = 0;
  for (const auto& e : enrolled) n += static_cast<long>(e.size());
  return n;
}

}  // namespace swedge
