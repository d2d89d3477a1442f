#pragma once

#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "mgf/feature_row.hpp"
#include "mgf/ops.hpp"
#include "mgf/params.hpp"

namespace mgf::hv {

enum class TokenMode { feature_tokens, single_token };
std::string_view token_mode_name(TokenMode mode);
TokenMode parse_token_mode(std::string_view name);

struct RegressorConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 3;
  std::size_t n_heads = 4;
  std::size_t ffn_mult = 4;
  TokenMode token_mode = TokenMode::feature_tokens;
  double lr = 1e-3;
  std::size_t epochs = 2000;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t tokens() const { return token_mode == TokenMode::feature_tokens ? FeatureRow::kFeatures : 1; }
  std::size_t head_dim() const { return d_model / n_heads; }
};

/// softmax(q k^T / sqrt(M)) v for q, k: (seq, M) and v: (seq, Mv).
Var attention(const Var& q, const Var& k, const Var& v);

struct MhaParams {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
  Var norm_gamma, norm_beta;
};

/// x holds `rows` groups of `tokens` consecutive d_model vectors, (rows * tokens, d_model).
/// Attention mixes tokens within a group only. Pre-norm residual: returns x + MHA(layer_norm(x)).
Var multi_head_attention(const Var& x, std::size_t tokens, const MhaParams& p, std::size_t n_heads);

struct FfnParams {
  Var w1, b1, w2, b2;
  Var norm_gamma, norm_beta;
};

/// x + W2 relu(W1 layer_norm(x) + b1) + b2, row-wise.
Var feed_forward(const Var& x, const FfnParams& p);

/// Per-feature token = value * direction[f] + bias[f]. x: (rows, F); direction, bias: (F, D).
/// Returns (rows * F, D).
Var feature_tokens(const Var& x, const Var& direction, const Var& bias);

/// Mean over each group of `tokens` rows: (rows * tokens, D) -> (rows, D).
Var mean_pool(const Var& x, std::size_t tokens);

class HvTransformer {
 public:
  explicit HvTransformer(RegressorConfig config);
  const RegressorConfig& config() const { return cfg_; }

  void init(ParamStore& store, Rng& rng) const;
  /// (rows * tokens, d_model) tokens of standardized feature rows x: (rows, 4).
  Var embed(const Var& x, const ParamStore& store) const;
  Var encode(const Var& tokens, const ParamStore& store) const;
  /// Mean-pools tokens and maps them to one value per row, (rows, 1).
  Var decode(const Var& encoded, const ParamStore& store) const;
  Var forward(const Var& x, const ParamStore& store) const;

 private:
  RegressorConfig cfg_;
};

struct Metrics {
  double mae = 0;
  double mse = 0;
  double rmse = 0;
  double r2 = 0;
};

/// R^2 = 1 - SSres / SStot. Throws std::domain_error for constant y, std::invalid_argument
/// for mismatched lengths or fewer than two values.
Metrics regression_metrics(std::span<const double> y, std::span<const double> yhat);

/// Z-scores fitted on training rows. The target uses a unit scale when the labels are constant.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;
  double target_mean = 0;
  double target_std = 1;

  /// Throws std::invalid_argument on a constant feature column or a row without hv.
  static Standardizer fit(const std::vector<FeatureRow>& rows);
  bool fitted() const { return mean.size() == FeatureRow::kFeatures; }
  Tensor features(const std::vector<FeatureRow>& rows) const;
  double to_target(double hv) const { return (hv - target_mean) / target_std; }
  double from_target(double z) const { return z * target_std + target_mean; }
};

struct TrainedRegressor {
  ParamStore params;
  Standardizer stats;
  std::vector<double> loss_curve;  // full-batch MSE on standardized targets, one entry per epoch
};

/// Throws std::invalid_argument with fewer than two labelled rows.
TrainedRegressor train_regressor(const std::vector<FeatureRow>& rows, const RegressorConfig& config);
std::vector<double> predict(const std::vector<FeatureRow>& rows, const TrainedRegressor& model,
                            const RegressorConfig& config);
double predict(const FeatureRow& row, const TrainedRegressor& model, const RegressorConfig& config);

struct LoocvResult {
  std::vector<double> predictions;  // held-out prediction of row i
  Metrics pooled;
  std::vector<std::vector<double>> loss_curves;
};

/// Seed of the fold that holds out row `fold`.
std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold);
/// Held-out prediction of one fold; loocv() runs exactly this per row.
double loocv_fold(const std::vector<FeatureRow>& rows, std::size_t fold, const RegressorConfig& config,
                  std::vector<double>* loss_curve = nullptr);
/// Throws std::invalid_argument with fewer than three labelled rows.
LoocvResult loocv(const std::vector<FeatureRow>& rows, const RegressorConfig& config);

void write_predictions_csv(const std::filesystem::path& path, const std::vector<FeatureRow>& rows,
                           std::span<const double> predictions);
void write_metrics_json(const std::filesystem::path& path, const Metrics& m);

/// Weights in the MGF1 layout plus a JSON sidecar holding the standardizer and config.
void save_regressor(const std::filesystem::path& weights, const std::filesystem::path& sidecar,
                    const TrainedRegressor& model, const RegressorConfig& config);
TrainedRegressor load_regressor(const std::filesystem::path& weights, const std::filesystem::path& sidecar,
                                RegressorConfig& config);

}  // namespace mgf::hv
