#include "mgf/seg/unetpp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mgf/losses.hpp"

namespace mgf::seg {

namespace {

constexpr double kInputMean = 0.5;
constexpr double kInputStd = 0.25;
constexpr double kBnMomentum = 0.1;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::string node_key(std::size_t i, std::size_t j) { return "x" + std::to_string(i) + "_" + std::to_string(j); }

std::string head_key(const UnetPPConfig& cfg, std::size_t j) {
  return cfg.deep_supervision ? "head" + std::to_string(j) : "head";
}

const Var& param(const SegModel& model, const std::string& name) {
  if (!model.params.contains(name)) throw std::invalid_argument("unet++: missing parameter '" + name + "'");
  return model.params.get(name);
}

void add_conv_block(SegModel& model, const std::string& key, std::size_t in, std::size_t out, Rng& rng) {
  for (int u = 1; u <= 2; ++u) {
    const std::string k = key + ".conv" + std::to_string(u);
    const std::size_t cin = u == 1 ? in : out;
    model.params.add(k + ".w", he_normal({out, cin, 3, 3}, cin * 9, rng));
    model.params.add(key + ".bn" + std::to_string(u) + ".gamma", Tensor({out}, 1.0));
    model.params.add(key + ".bn" + std::to_string(u) + ".beta", Tensor({out}));
    model.bn[key + ".bn" + std::to_string(u)] = {Tensor({out}, 0.0), Tensor({out}, 1.0)};
  }
}

}  // namespace

void UnetPPConfig::validate() const {
  require(depth >= 1, "unet++: depth must be >= 1");
  require(base_channels >= 1, "unet++: base_channels must be >= 1");
}

std::size_t UnetPPConfig::in_channels(std::size_t i, std::size_t j) const {
  if (j == 0) return i == 0 ? 1 : channels(i - 1);
  return j * channels(i) + channels(i + 1);
}

std::vector<NodeInput> node_inputs(const UnetPPConfig& config, std::size_t i, std::size_t j) {
  require(i + j <= config.depth, "unet++: node (" + std::to_string(i) + ", " + std::to_string(j) + ") is outside the grid");
  std::vector<NodeInput> in;
  if (j == 0) {
    if (i > 0) in.push_back({i - 1, 0, NodeInput::Via::pooled});
    return in;
  }
  for (std::size_t k = 0; k < j; ++k) in.push_back({i, k, NodeInput::Via::direct});
  in.push_back({i + 1, j - 1, NodeInput::Via::upsampled});
  return in;
}

std::map<std::string, Tensor> SegModel::tensors() const {
  std::map<std::string, Tensor> out = params.values();
  for (const auto& [k, s] : bn) {
    out[k + ".running_mean"] = s.running_mean;
    out[k + ".running_var"] = s.running_var;
  }
  return out;
}

void SegModel::load(const std::map<std::string, Tensor>& tensors) {
  std::map<std::string, Tensor> values;
  for (const auto& [k, t] : tensors) {
    auto strip = [&](std::string_view suffix) -> std::string {
      return k.size() > suffix.size() && k.ends_with(suffix) ? k.substr(0, k.size() - suffix.size()) : std::string();
    };
    if (auto b = strip(".running_mean"); !b.empty()) {
      bn[b].running_mean = t;
    } else if (auto v = strip(".running_var"); !v.empty()) {
      bn[v].running_var = t;
    } else {
      values.emplace(k, t);
    }
  }
  if (params.size() == 0) {
    for (auto& [k, t] : values) params.add(k, std::move(t));
  } else {
    params.load_values(values);
  }
}

Var conv_block(const Var& x, SegModel& model, const std::string& key, bool training) {
  Var h = x;
  for (int u = 1; u <= 2; ++u) {
    const std::string bk = key + ".bn" + std::to_string(u);
    auto state = model.bn.find(bk);
    if (state == model.bn.end()) throw std::invalid_argument("unet++: missing batch-norm state '" + bk + "'");
    h = conv2d(h, param(model, key + ".conv" + std::to_string(u) + ".w"), std::nullopt, {.padding = 1});
    h = relu(batch_norm2d(h, param(model, bk + ".gamma"), param(model, bk + ".beta"), state->second, training,
                          kBnMomentum));
  }
  return h;
}

UnetPP::UnetPP(UnetPPConfig config) : cfg_(config) { cfg_.validate(); }

void UnetPP::init(SegModel& model, Rng& rng) const {
  for (std::size_t j = 0; j <= cfg_.depth; ++j)
    for (std::size_t i = 0; i + j <= cfg_.depth; ++i)
      add_conv_block(model, node_key(i, j), cfg_.in_channels(i, j), cfg_.channels(i), rng);
  const std::size_t c0 = cfg_.channels(0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(c0));
  for (std::size_t j = cfg_.deep_supervision ? 1 : cfg_.depth; j <= cfg_.depth; ++j) {
    model.params.add(head_key(cfg_, j) + ".w", uniform_init({1, c0, 1, 1}, bound, rng));
    model.params.add(head_key(cfg_, j) + ".b", Tensor({1}));
  }
}

Var UnetPP::forward(const Var& x, SegModel& model, bool training) const {
  require(x.value().rank() == 4 && x.dim(1) == 1, "unet++: input must be (N, 1, H, W), got " + shape_str(x.shape()));
  require(x.dim(2) >= cfg_.min_side() && x.dim(3) >= cfg_.min_side(),
          "unet++: input " + shape_str(x.shape()) + " is smaller than 2^depth = " + std::to_string(cfg_.min_side()));
  const std::size_t d = cfg_.depth;
  std::vector<std::vector<Var>> node(d + 1, std::vector<Var>(d + 1));
  for (std::size_t j = 0; j <= d; ++j)
    for (std::size_t i = 0; i + j <= d; ++i) {
      std::vector<Var> parts;
      for (const NodeInput& in : node_inputs(cfg_, i, j)) {
        const Var& src = node[in.level][in.column];
        switch (in.via) {
          case NodeInput::Via::direct: parts.push_back(src); break;
          case NodeInput::Via::pooled: parts.push_back(max_pool2x2(src)); break;
          case NodeInput::Via::upsampled:
            parts.push_back(bilinear_resize(src, node[i][0].dim(2), node[i][0].dim(3)));
            break;
        }
      }
      Var input = parts.empty() ? shift_scale(x, kInputMean, 1.0 / kInputStd)
                                : parts.size() == 1 ? parts[0] : concat(parts, 1);
      node[i][j] = conv_block(input, model, node_key(i, j), training);
    }

  auto head = [&](std::size_t j) {
    return sigmoid(conv2d(node[0][j], param(model, head_key(cfg_, j) + ".w"), param(model, head_key(cfg_, j) + ".b")));
  };
  if (!cfg_.deep_supervision) return head(d);
  Var total = head(1);
  for (std::size_t j = 2; j <= d; ++j) total = add(total, head(j));
  return scale(total, 1.0 / static_cast<double>(d));
}

namespace {

Tensor stack(const std::vector<SegSample>& data, const std::vector<std::size_t>& idx, bool masks) {
  const std::size_t h = data[idx[0]].image.height(), w = data[idx[0]].image.width();
  Tensor t({idx.size(), 1, h, w});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const SegSample& s = data[idx[i]];
    require(s.image.height() == h && s.image.width() == w, "train_segmenter: samples in a batch must share one size");
    for (std::size_t k = 0; k < h * w; ++k) t[i * h * w + k] = masks ? (s.phase[k] ? 1.0 : 0.0) : s.image[k];
  }
  return t;
}

}  // namespace

SegTrainResult train_segmenter(const std::vector<SegSample>& data, const UnetPPConfig& config,
                               const SegTrainOptions& opt) {
  require(!data.empty(), "train_segmenter: empty dataset");
  require(opt.batch_size >= 1, "train_segmenter: batch_size must be >= 1");
  for (const SegSample& s : data)
    require(s.image.same_size(s.phase), "train_segmenter: image and phase mask sizes differ");
  UnetPP net(config);
  SegTrainResult result;
  Rng init_rng = Rng::derive(opt.seed, 0);
  net.init(result.model, init_rng);
  Rng order_rng = Rng::derive(opt.seed, 1);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                   order.begin() + static_cast<long>(std::min(order.size(), start + opt.batch_size)));
      Var x(stack(data, idx, false));
      const Tensor y = stack(data, idx, true);
      result.model.params.zero_grad();
      Var loss = bce_loss(net.forward(x, result.model, true), y);
      backward(loss);
      result.model.params.adam_step(opt.adam);
      total += loss.value().item();
      ++batches;
    }
    result.loss_curve.push_back(total / static_cast<double>(batches));
  }
  return result;
}

ProbMap phase_probability(const GrayImage& image, SegModel& model, const UnetPPConfig& config) {
  UnetPP net(config);
  NoGradGuard guard;
  const std::size_t h = image.height(), w = image.width();
  Var p = net.forward(Var(Tensor({1, 1, h, w}, image.data())), model, false);
  ProbMap out(h, w);
  std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin());
  return out;
}

BinaryMask segment_phase(const GrayImage& image, SegModel& model, const UnetPPConfig& config, double threshold) {
  return phase_probability(image, model, config).threshold(threshold);
}

SegMetrics seg_metrics(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_size(pred, gt, "seg_metrics");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
    tn += !p && !g;
  }
  auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  SegMetrics m;
  m.accuracy = ratio(tp + tn, pred.size());
  m.precision = ratio(tp, tp + fp);
  m.iou_foreground = ratio(tp, tp + fp + fn);
  m.iou_background = ratio(tn, tn + fp + fn);
  m.miou = 0.5 * (m.iou_foreground + m.iou_background);
  return m;
}

BinaryMask threshold_segment(const GrayImage& image, double threshold) {
  BinaryMask out(image.height(), image.width());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = image[i] < threshold;
  return out;
}

double fit_threshold(const std::vector<SegSample>& data) {
  require(!data.empty(), "fit_threshold: empty dataset");
  double best_t = 0, best = -1;
  for (int k = 0; k <= 256; ++k) {
    const double t = k / 256.0;
    double iou = 0;
    for (const SegSample& s : data) iou += seg_metrics(threshold_segment(s.image, t), s.phase).iou_foreground;
    if (iou > best) {
      best = iou;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace mgf::seg
