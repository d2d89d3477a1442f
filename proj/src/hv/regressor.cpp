#include "mgf/hv/regressor.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "mgf/losses.hpp"

namespace mgf::hv {

namespace {

// Per-feature biases dominate value * direction at init, so the layer norms inside each
// branch respond smoothly to a feature value instead of switching on its sign.
constexpr double kEmbedBiasScale = 10.0;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::string layer_key(std::size_t l) { return "layer" + std::to_string(l); }

const Var& param(const ParamStore& store, const std::string& name) {
  if (!store.contains(name)) throw std::invalid_argument("hv regressor: missing parameter '" + name + "'");
  return store.get(name);
}

void add_linear(ParamStore& store, const std::string& key, std::size_t in, std::size_t out, Rng& rng) {
  store.add(key + ".w", uniform_init({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  store.add(key + ".b", Tensor({out}));
}

// Residual branches start at zero, so the untrained encoder passes tokens through unchanged.
void add_residual_out(ParamStore& store, const std::string& key, std::size_t in, std::size_t out) {
  store.add(key + ".w", Tensor({out, in}));
  store.add(key + ".b", Tensor({out}));
}

void add_norm(ParamStore& store, const std::string& key, std::size_t d) {
  store.add(key + ".gamma", Tensor({d}, 1.0));
  store.add(key + ".beta", Tensor({d}));
}

std::vector<FeatureRow> labelled(const std::vector<FeatureRow>& rows, const char* what) {
  for (const FeatureRow& r : rows)
    if (!r.hv) throw std::invalid_argument(std::string(what) + ": row '" + r.id + "' has no hv label");
  return rows;
}

}  // namespace

std::string_view token_mode_name(TokenMode mode) {
  return mode == TokenMode::feature_tokens ? "feature_tokens" : "single_token";
}

TokenMode parse_token_mode(std::string_view name) {
  if (name == "feature_tokens") return TokenMode::feature_tokens;
  if (name == "single_token") return TokenMode::single_token;
  throw std::invalid_argument("unknown token mode '" + std::string(name) + "'");
}

void RegressorConfig::validate() const {
  require(d_model >= 1 && n_heads >= 1, "hv regressor: d_model and n_heads must be >= 1");
  require(d_model % n_heads == 0, "hv regressor: d_model " + std::to_string(d_model) + " is not divisible by " +
                                      std::to_string(n_heads) + " heads");
  require(ffn_mult >= 1, "hv regressor: ffn_mult must be >= 1");
  require(lr > 0, "hv regressor: lr must be > 0");
}

Var attention(const Var& q, const Var& k, const Var& v) {
  require(q.value().rank() == 2 && k.value().rank() == 2 && v.value().rank() == 2, "attention: q, k, v must be 2-D");
  require(q.dim(1) == k.dim(1) && q.dim(1) > 0, "attention: q and k need the same positive width");
  require(k.dim(0) == v.dim(0), "attention: k and v need the same sequence length");
  Var scores = scale(matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(q.dim(1))));
  return matmul(softmax(scores, -1), v);
}

Var multi_head_attention(const Var& x, std::size_t tokens, const MhaParams& p, std::size_t n_heads) {
  require(x.value().rank() == 2, "multi_head_attention: x must be (rows * tokens, d_model)");
  const std::size_t d = x.dim(1);
  require(n_heads >= 1 && d % n_heads == 0, "multi_head_attention: d_model " + std::to_string(d) +
                                                " is not divisible by " + std::to_string(n_heads) + " heads");
  require(tokens >= 1 && x.dim(0) % tokens == 0, "multi_head_attention: row count is not a multiple of tokens");
  const std::size_t rows = x.dim(0) / tokens, m = d / n_heads;
  // (rows * tokens, d) -> (rows * heads, tokens, m)
  auto split = [&](const Var& t) {
    return reshape(permute(reshape(t, {rows, tokens, n_heads, m}), {0, 2, 1, 3}), {rows * n_heads, tokens, m});
  };
  Var xn = layer_norm(x, p.norm_gamma, p.norm_beta);
  Var q = split(linear(xn, p.wq, p.bq));
  Var k = split(linear(xn, p.wk, p.bk));
  Var v = split(linear(xn, p.wv, p.bv));
  Var scores = scale(batched_matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(m)));
  Var heads = batched_matmul(softmax(scores, -1), v);
  Var merged = reshape(permute(reshape(heads, {rows, n_heads, tokens, m}), {0, 2, 1, 3}), {rows * tokens, d});
  return add(x, linear(merged, p.wo, p.bo));
}

Var feed_forward(const Var& x, const FfnParams& p) {
  Var h = linear(relu(linear(layer_norm(x, p.norm_gamma, p.norm_beta), p.w1, p.b1)), p.w2, p.b2);
  return add(x, h);
}

Var feature_tokens(const Var& x, const Var& direction, const Var& bias) {
  require(x.value().rank() == 2 && direction.value().rank() == 2, "feature_tokens: x and direction must be 2-D");
  const std::size_t rows = x.dim(0), f = x.dim(1), d = direction.dim(1);
  require(direction.dim(0) == f && bias.shape() == direction.shape(),
          "feature_tokens: direction and bias must be (features, d_model)");
  Tensor out({rows * f, d});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < f; ++i) {
      const double xv = x.value().at(r, i);
      double* o = out.ptr() + (r * f + i) * d;
      for (std::size_t j = 0; j < d; ++j) o[j] = xv * direction.value().at(i, j) + bias.value().at(i, j);
    }
  return Var::make(std::move(out), {x, direction, bias}, [rows, f, d](detail::Node& node) {
    detail::Node& nx = *node.inputs[0];
    detail::Node& nd = *node.inputs[1];
    detail::Node& nb = *node.inputs[2];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < f; ++i) {
        const double* g = node.grad.ptr() + (r * f + i) * d;
        const double xv = nx.value.at(r, i);
        if (nd.requires_grad) {
          double* dd = nd.grad_buffer().ptr() + i * d;
          for (std::size_t j = 0; j < d; ++j) dd[j] += xv * g[j];
        }
        if (nb.requires_grad) {
          double* db = nb.grad_buffer().ptr() + i * d;
          for (std::size_t j = 0; j < d; ++j) db[j] += g[j];
        }
        if (nx.requires_grad) {
          double s = 0;
          for (std::size_t j = 0; j < d; ++j) s += nd.value.at(i, j) * g[j];
          nx.grad_buffer().at(r, i) += s;
        }
      }
  });
}

Var mean_pool(const Var& x, std::size_t tokens) {
  require(x.value().rank() == 2 && tokens >= 1 && x.dim(0) % tokens == 0,
          "mean_pool: x must be (rows * tokens, d)");
  const std::size_t rows = x.dim(0) / tokens;
  Tensor pool({rows, rows * tokens});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < tokens; ++t) pool.at(r, r * tokens + t) = 1.0 / static_cast<double>(tokens);
  return matmul(Var(std::move(pool)), x);
}

HvTransformer::HvTransformer(RegressorConfig config) : cfg_(config) { cfg_.validate(); }

void HvTransformer::init(ParamStore& store, Rng& rng) const {
  const std::size_t d = cfg_.d_model, f = FeatureRow::kFeatures;
  if (cfg_.token_mode == TokenMode::feature_tokens) {
    store.add("embed.direction", uniform_init({f, d}, 1.0, rng));
    store.add("embed.bias", uniform_init({f, d}, kEmbedBiasScale, rng));
  } else {
    add_linear(store, "embed", f, d, rng);
  }
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string lk = layer_key(l);
    for (const char* proj : {"q", "k", "v"}) add_linear(store, lk + ".attn." + proj, d, d, rng);
    add_residual_out(store, lk + ".attn.o", d, d);
    add_norm(store, lk + ".attn.norm", d);
    add_linear(store, lk + ".ffn.fc1", d, d * cfg_.ffn_mult, rng);
    add_residual_out(store, lk + ".ffn.fc2", d * cfg_.ffn_mult, d);
    add_norm(store, lk + ".ffn.norm", d);
  }
  add_linear(store, "decode", d, 1, rng);
}

Var HvTransformer::embed(const Var& x, const ParamStore& store) const {
  require(x.value().rank() == 2 && x.dim(1) == FeatureRow::kFeatures, "hv regressor: input must be (rows, 4)");
  if (cfg_.token_mode == TokenMode::feature_tokens)
    return feature_tokens(x, param(store, "embed.direction"), param(store, "embed.bias"));
  return linear(x, param(store, "embed.w"), param(store, "embed.b"));
}

Var HvTransformer::encode(const Var& tokens, const ParamStore& store) const {
  Var h = tokens;
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string a = layer_key(l) + ".attn.", f = layer_key(l) + ".ffn.";
    MhaParams mp{param(store, a + "q.w"), param(store, a + "q.b"), param(store, a + "k.w"), param(store, a + "k.b"),
                 param(store, a + "v.w"), param(store, a + "v.b"), param(store, a + "o.w"), param(store, a + "o.b"),
                 param(store, a + "norm.gamma"), param(store, a + "norm.beta")};
    h = multi_head_attention(h, cfg_.tokens(), mp, cfg_.n_heads);
    FfnParams fp{param(store, f + "fc1.w"), param(store, f + "fc1.b"), param(store, f + "fc2.w"),
                 param(store, f + "fc2.b"), param(store, f + "norm.gamma"), param(store, f + "norm.beta")};
    h = feed_forward(h, fp);
  }
  return h;
}

Var HvTransformer::decode(const Var& encoded, const ParamStore& store) const {
  return linear(mean_pool(encoded, cfg_.tokens()), param(store, "decode.w"), param(store, "decode.b"));
}

Var HvTransformer::forward(const Var& x, const ParamStore& store) const {
  return decode(encode(embed(x, store), store), store);
}

Metrics regression_metrics(std::span<const double> y, std::span<const double> yhat) {
  require(y.size() == yhat.size(), "regression_metrics: " + std::to_string(y.size()) + " targets vs " +
                                       std::to_string(yhat.size()) + " predictions");
  require(y.size() >= 2, "regression_metrics: need at least two values");
  const double n = static_cast<double>(y.size());
  double mean = 0;
  for (double v : y) mean += v;
  mean /= n;
  double abs = 0, ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - yhat[i];
    abs += std::abs(e);
    ss_res += e * e;
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  if (ss_tot == 0) throw std::domain_error("regression_metrics: r2 is undefined for constant targets");
  Metrics m;
  m.mae = abs / n;
  m.mse = ss_res / n;
  m.rmse = std::sqrt(m.mse);
  m.r2 = 1.0 - ss_res / ss_tot;
  return m;
}

Standardizer Standardizer::fit(const std::vector<FeatureRow>& rows) {
  require(!rows.empty(), "standardizer: no rows");
  labelled(rows, "standardizer");
  const double n = static_cast<double>(rows.size());
  Standardizer s;
  s.mean.assign(FeatureRow::kFeatures, 0.0);
  s.std.assign(FeatureRow::kFeatures, 0.0);
  for (std::size_t f = 0; f < FeatureRow::kFeatures; ++f) {
    for (const FeatureRow& r : rows) s.mean[f] += r.feature(f);
    s.mean[f] /= n;
    for (const FeatureRow& r : rows) s.std[f] += (r.feature(f) - s.mean[f]) * (r.feature(f) - s.mean[f]);
    s.std[f] = std::sqrt(s.std[f] / n);
    if (!(s.std[f] > 0))
      throw std::invalid_argument(std::string("standardizer: feature '") + kFeatureNames[f] + "' is constant");
  }
  double ym = 0, yv = 0;
  for (const FeatureRow& r : rows) ym += *r.hv;
  ym /= n;
  for (const FeatureRow& r : rows) yv += (*r.hv - ym) * (*r.hv - ym);
  s.target_mean = ym;
  s.target_std = yv > 0 ? std::sqrt(yv / n) : 1.0;
  return s;
}

Tensor Standardizer::features(const std::vector<FeatureRow>& rows) const {
  if (!fitted()) throw std::logic_error("standardizer: not fitted");
  Tensor x({rows.size(), FeatureRow::kFeatures});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t f = 0; f < FeatureRow::kFeatures; ++f) x.at(r, f) = (rows[r].feature(f) - mean[f]) / std[f];
  return x;
}

TrainedRegressor train_regressor(const std::vector<FeatureRow>& rows, const RegressorConfig& config) {
  require(rows.size() >= 2, "train_regressor: need at least two labelled rows");
  HvTransformer net(config);
  TrainedRegressor out;
  out.stats = Standardizer::fit(rows);
  Rng rng = Rng::derive(config.seed, 0);
  net.init(out.params, rng);

  const Var x(out.stats.features(rows));
  Tensor y({rows.size(), 1});
  for (std::size_t r = 0; r < rows.size(); ++r) y[r] = out.stats.to_target(*rows[r].hv);
  const AdamOptions adam{.lr = config.lr};
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    out.params.zero_grad();
    Var loss = mse_loss(net.forward(x, out.params), y);
    backward(loss);
    out.params.adam_step(adam);
    out.loss_curve.push_back(loss.value().item());
  }
  return out;
}

std::vector<double> predict(const std::vector<FeatureRow>& rows, const TrainedRegressor& model,
                            const RegressorConfig& config) {
  if (!model.stats.fitted()) throw std::logic_error("predict: standardizer is not fitted");
  if (rows.empty()) return {};
  HvTransformer net(config);
  NoGradGuard guard;
  Var z = net.forward(Var(model.stats.features(rows)), model.params);
  std::vector<double> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = model.stats.from_target(z.value()[r]);
  return out;
}

double predict(const FeatureRow& row, const TrainedRegressor& model, const RegressorConfig& config) {
  return predict(std::vector<FeatureRow>{row}, model, config)[0];
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) { return Rng::derive(seed, fold + 1).next_u64(); }

double loocv_fold(const std::vector<FeatureRow>& rows, std::size_t fold, const RegressorConfig& config,
                  std::vector<double>* loss_curve) {
  require(fold < rows.size(), "loocv: fold index out of range");
  std::vector<FeatureRow> train;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (i != fold) train.push_back(rows[i]);
  RegressorConfig cfg = config;
  cfg.seed = fold_seed(config.seed, fold);
  TrainedRegressor model = train_regressor(train, cfg);
  if (loss_curve) *loss_curve = model.loss_curve;
  return predict(rows[fold], model, cfg);
}

LoocvResult loocv(const std::vector<FeatureRow>& rows, const RegressorConfig& config) {
  require(rows.size() >= 3, "loocv: need at least three labelled rows");
  labelled(rows, "loocv");
  LoocvResult out;
  out.loss_curves.resize(rows.size());
  std::vector<double> actual;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.predictions.push_back(loocv_fold(rows, i, config, &out.loss_curves[i]));
    actual.push_back(*rows[i].hv);
  }
  out.pooled = regression_metrics(actual, out.predictions);
  return out;
}

void write_predictions_csv(const std::filesystem::path& path, const std::vector<FeatureRow>& rows,
                           std::span<const double> predictions) {
  require(rows.size() == predictions.size(), "write_predictions_csv: one prediction per row");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "id,actual_hv,predicted_hv,abs_error\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << rows[i].id << ',';
    if (rows[i].hv) out << format_double(*rows[i].hv);
    out << ',' << format_double(predictions[i]) << ',';
    if (rows[i].hv) out << format_double(std::abs(*rows[i].hv - predictions[i]));
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_metrics_json(const std::filesystem::path& path, const Metrics& m) {
  nlohmann::ordered_json j;
  j["mae"] = m.mae;
  j["mse"] = m.mse;
  j["rmse"] = m.rmse;
  j["r2"] = m.r2;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void save_regressor(const std::filesystem::path& weights, const std::filesystem::path& sidecar,
                    const TrainedRegressor& model, const RegressorConfig& config) {
  save_tensors(weights, model.params.values());
  nlohmann::ordered_json j;
  j["d_model"] = config.d_model;
  j["n_layers"] = config.n_layers;
  j["n_heads"] = config.n_heads;
  j["ffn_mult"] = config.ffn_mult;
  j["token_mode"] = token_mode_name(config.token_mode);
  j["feature_mean"] = model.stats.mean;
  j["feature_std"] = model.stats.std;
  j["target_mean"] = model.stats.target_mean;
  j["target_std"] = model.stats.target_std;
  std::ofstream out(sidecar);
  if (!out) throw std::runtime_error("cannot write " + sidecar.string());
  out << j.dump(2) << '\n';
}

TrainedRegressor load_regressor(const std::filesystem::path& weights, const std::filesystem::path& sidecar,
                                RegressorConfig& config) {
  std::ifstream in(sidecar);
  if (!in) throw std::runtime_error("cannot read " + sidecar.string());
  TrainedRegressor model;
  try {
    const auto j = nlohmann::json::parse(in);
    config.d_model = j.at("d_model").get<std::size_t>();
    config.n_layers = j.at("n_layers").get<std::size_t>();
    config.n_heads = j.at("n_heads").get<std::size_t>();
    config.ffn_mult = j.at("ffn_mult").get<std::size_t>();
    config.token_mode = parse_token_mode(j.at("token_mode").get<std::string>());
    model.stats.mean = j.at("feature_mean").get<std::vector<double>>();
    model.stats.std = j.at("feature_std").get<std::vector<double>>();
    model.stats.target_mean = j.at("target_mean").get<double>();
    model.stats.target_std = j.at("target_std").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(sidecar.string() + ": " + e.what());
  }
  if (!model.stats.fitted() || model.stats.std.size() != FeatureRow::kFeatures)
    throw std::runtime_error(sidecar.string() + ": expected " + std::to_string(FeatureRow::kFeatures) +
                             " feature statistics");
  HvTransformer net(config);
  Rng rng(0);
  net.init(model.params, rng);
  model.params.load_values(load_tensors(weights));
  return model;
}

}  // namespace mgf::hv
