#include "mgf/shap/shapley.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace mgf::shap {

namespace {

constexpr std::size_t kF = FeatureRow::kFeatures;
constexpr std::size_t kCoalitions = std::size_t{1} << kF;

// |S|! (F - |S| - 1)! / F!
double coalition_weight(std::size_t s) {
  auto fact = [](std::size_t n) {
    double r = 1;
    for (std::size_t k = 2; k <= n; ++k) r *= static_cast<double>(k);
    return r;
  };
  return fact(s) * fact(kF - s - 1) / fact(kF);
}

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace

BatchModel regressor_model(const hv::TrainedRegressor& model, const hv::RegressorConfig& config) {
  return [&model, config](const std::vector<FeatureRow>& rows) { return hv::predict(rows, model, config); };
}

ShapleyReport exact_shapley(const BatchModel& model, const FeatureRow& x, const std::vector<FeatureRow>& background) {
  if (background.empty()) throw std::invalid_argument("exact_shapley: empty background");
  const std::size_t nb = background.size();
  std::vector<FeatureRow> batch;
  batch.reserve(kCoalitions * nb + 1);
  for (std::size_t s = 0; s < kCoalitions; ++s)
    for (const FeatureRow& b : background) {
      FeatureRow r = b;
      for (std::size_t f = 0; f < kF; ++f)
        if (s & (std::size_t{1} << f)) r.set_feature(f, x.feature(f));
      batch.push_back(std::move(r));
    }
  batch.push_back(x);
  const std::vector<double> pred = model(batch);
  if (pred.size() != batch.size()) throw std::runtime_error("exact_shapley: model returned the wrong number of values");

  std::array<double, kCoalitions> v{};
  for (std::size_t s = 0; s < kCoalitions; ++s) {
    double sum = 0;
    for (std::size_t k = 0; k < nb; ++k) sum += pred[s * nb + k];
    v[s] = sum / static_cast<double>(nb);
  }

  ShapleyReport rep;
  for (std::size_t i = 0; i < kF; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    for (std::size_t s = 0; s < kCoalitions; ++s) {
      if (s & bit) continue;
      rep.phi[i] += coalition_weight(static_cast<std::size_t>(std::popcount(s))) * (v[s | bit] - v[s]);
    }
  }
  rep.base_value = v[0];
  rep.fx = pred.back();
  double total = 0;
  for (double p : rep.phi) total += p;
  rep.efficiency_residual = rep.fx - rep.base_value - total;
  return rep;
}

std::vector<ShapleyReport> explain_rows(const BatchModel& model, const std::vector<FeatureRow>& rows,
                                        const std::vector<FeatureRow>& background) {
  std::vector<ShapleyReport> out;
  out.reserve(rows.size());
  for (const FeatureRow& r : rows) out.push_back(exact_shapley(model, r, background));
  return out;
}

Ranking importance_ranking(const std::vector<ShapleyReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("importance_ranking: no reports");
  Ranking r;
  for (std::size_t f = 0; f < kF; ++f) {
    double sum = 0;
    for (const ShapleyReport& rep : reports) sum += std::abs(rep.phi[f]);
    r.order.push_back({f, sum / static_cast<double>(reports.size())});
  }
  std::stable_sort(r.order.begin(), r.order.end(),
                   [](const FeatureImportance& a, const FeatureImportance& b) { return a.mean_abs_phi > b.mean_abs_phi; });
  r.degenerate = std::all_of(r.order.begin(), r.order.end(), [](const FeatureImportance& f) { return f.mean_abs_phi == 0; });
  return r;
}

DependenceSeries dependence_series(const std::vector<FeatureRow>& rows, const std::vector<ShapleyReport>& reports,
                                   std::size_t feature) {
  if (rows.size() != reports.size()) throw std::invalid_argument("dependence_series: rows and reports differ in length");
  if (feature >= kF) throw std::invalid_argument("dependence_series: feature index out of range");
  DependenceSeries s{feature, {}};
  for (std::size_t i = 0; i < rows.size(); ++i) s.points.emplace_back(rows[i].feature(feature), reports[i].phi[feature]);
  std::stable_sort(s.points.begin(), s.points.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return s;
}

std::vector<double> critical_values(const DependenceSeries& series) {
  const auto& p = series.points;
  const std::size_t n = p.size();
  std::vector<double> out;
  if (n < 4) return out;
  std::vector<double> smooth(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1, hi = std::min(n - 1, i + 1);
    double sum = 0;
    for (std::size_t k = lo; k <= hi; ++k) sum += p[k].second;
    smooth[i] = sum / static_cast<double>(hi - lo + 1);
  }
  std::size_t last = n;  // last index with a nonzero smoothed value
  for (std::size_t i = 0; i < n; ++i) {
    if (smooth[i] == 0) continue;
    if (last != n && (smooth[last] > 0) != (smooth[i] > 0)) out.push_back(0.5 * (p[last].first + p[i].first));
    last = i;
  }
  return out;
}

void write_shap_rows_json(const std::filesystem::path& path, const std::vector<FeatureRow>& rows,
                          const std::vector<ShapleyReport>& reports) {
  if (rows.size() != reports.size()) throw std::invalid_argument("write_shap_rows_json: rows and reports differ in length");
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    nlohmann::ordered_json phi;
    for (std::size_t f = 0; f < kF; ++f) phi[kFeatureNames[f]] = reports[i].phi[f];
    j.push_back({{"id", rows[i].id},
                 {"base_value", reports[i].base_value},
                 {"prediction", reports[i].fx},
                 {"phi", phi},
                 {"efficiency_residual", reports[i].efficiency_residual}});
  }
  write_json(path, j);
}

void write_shap_summary_json(const std::filesystem::path& path, const Ranking& ranking,
                             const std::array<std::vector<double>, FeatureRow::kFeatures>& thresholds) {
  nlohmann::ordered_json j;
  j["ranking"] = nlohmann::ordered_json::array();
  for (const FeatureImportance& f : ranking.order)
    j["ranking"].push_back({{"feature", kFeatureNames[f.feature]}, {"mean_abs_phi", f.mean_abs_phi}});
  j["degenerate"] = ranking.degenerate;
  for (std::size_t f = 0; f < kF; ++f) j["critical_values"][kFeatureNames[f]] = thresholds[f];
  write_json(path, j);
}

}  // namespace mgf::shap
