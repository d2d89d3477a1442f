#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

#include "mgf/feature_row.hpp"
#include "mgf/hv/regressor.hpp"

namespace mgf::shap {

/// Predicts one value per row. Called with batches, so wrapping a batched model is cheap.
using BatchModel = std::function<std::vector<double>(const std::vector<FeatureRow>&)>;

/// Keeps a reference to `model`, which must outlive the returned function.
BatchModel regressor_model(const hv::TrainedRegressor& model, const hv::RegressorConfig& config);

struct ShapleyReport {
  std::array<double, FeatureRow::kFeatures> phi{};
  double base_value = 0;  // mean prediction over the background
  double fx = 0;
  double efficiency_residual = 0;  // fx - base_value - sum(phi)
};

/// Exact interventional Shapley values over all 16 feature coalitions. v(S) averages the model
/// over background rows with the features in S taken from x. Throws on an empty background.
ShapleyReport exact_shapley(const BatchModel& model, const FeatureRow& x, const std::vector<FeatureRow>& background);
std::vector<ShapleyReport> explain_rows(const BatchModel& model, const std::vector<FeatureRow>& rows,
                                        const std::vector<FeatureRow>& background);

struct FeatureImportance {
  std::size_t feature = 0;
  double mean_abs_phi = 0;
};

struct Ranking {
  std::vector<FeatureImportance> order;  // descending mean |phi|, ties by feature index
  bool degenerate = false;               // every mean |phi| is zero
};

Ranking importance_ranking(const std::vector<ShapleyReport>& reports);

struct DependenceSeries {
  std::size_t feature = 0;
  std::vector<std::pair<double, double>> points;  // (feature value, phi), sorted by value
};

DependenceSeries dependence_series(const std::vector<FeatureRow>& rows, const std::vector<ShapleyReport>& reports,
                                   std::size_t feature);

/// Feature values where a 3-point moving average of phi changes sign, placed midway between
/// the last point of one sign and the first point of the other. Window ends are truncated.
/// Fewer than 4 points give no thresholds.
std::vector<double> critical_values(const DependenceSeries& series);

/// Per-row phi and base value.
void write_shap_rows_json(const std::filesystem::path& path, const std::vector<FeatureRow>& rows,
                          const std::vector<ShapleyReport>& reports);
/// Ranking plus per-feature critical values.
void write_shap_summary_json(const std::filesystem::path& path, const Ranking& ranking,
                             const std::array<std::vector<double>, FeatureRow::kFeatures>& thresholds);

}  // namespace mgf::shap
