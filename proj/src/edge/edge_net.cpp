#include "mgf/edge/edge_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mgf/losses.hpp"

namespace mgf::edge {

namespace {

constexpr double kInputMean = 0.5;
constexpr double kInputStd = 0.25;
// Fused logits span [-k S / 2, k S / 2] over side probabilities in [0, 1].
constexpr double kFuseInit = 4.0;

std::string stage_key(std::size_t s) { return "stage" + std::to_string(s + 1); }

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

const Var& param(const ParamStore& store, const std::string& name) {
  if (!store.contains(name)) throw std::invalid_argument("edge net: missing parameter '" + name + "'");
  return store.get(name);
}

void expect_shape(const Var& v, const Shape& s, const std::string& name) {
  require(v.shape() == s, "edge net: parameter '" + name + "' has shape " + shape_str(v.shape()) + ", expected " +
                              shape_str(s));
}

}  // namespace

PdcKind EdgeNetConfig::block_kind(std::size_t stage, std::size_t block) const {
  if (!pdc_schedule.empty()) return pdc_schedule.at(stage * blocks_per_stage + block);
  static constexpr PdcKind cycle[4] = {PdcKind::cpdc, PdcKind::apdc, PdcKind::rpdc, PdcKind::vanilla};
  return cycle[block % 4];
}

void EdgeNetConfig::validate() const {
  require(stages >= 1, "edge net: stages must be >= 1");
  require(stage_channels.size() == stages, "edge net: stage_channels needs one entry per stage");
  require(pdc_schedule.empty() || pdc_schedule.size() == stages * blocks_per_stage,
          "edge net: pdc_schedule length must equal stages x blocks_per_stage");
  require(!cpcm_dilations.empty(), "edge net: cpcm needs at least one branch");
  require(cpcm_reduction >= 1, "edge net: cpcm_reduction must be >= 1");
  for (std::size_t c : stage_channels)
    require(c >= cpcm_reduction && c % cpcm_reduction == 0,
            "edge net: stage channels must be a positive multiple of cpcm_reduction");
  require(lka.kernel % 2 == 1 && lka.dilated_kernel % 2 == 1 && lka.dilation >= 1, "edge net: lka kernels must be odd");
}

Var pdc_block(const Var& x, const PdcBlockParams& p, PdcKind kind) {
  const std::size_t c = x.dim(1);
  require(p.pdc_w.dim(0) == c && p.proj_w.dim(0) == c && p.proj_w.dim(1) == c,
          "pdc_block: channel mismatch, input has " + std::to_string(c));
  Var h = relu(pdc_conv2d(x, p.pdc_w, kind, c));
  return add(x, conv2d(h, p.proj_w, p.proj_b));
}

Var cpcm(const Var& x, const CpcmParams& p, const std::vector<std::size_t>& dilations) {
  const std::size_t c = x.dim(1), r = p.reduce_w.dim(0);
  require(p.reduce_w.dim(1) == c && c >= 4 * r, "cpcm: needs input channels >= 4 x output channels, got " +
                                                     std::to_string(c) + " -> " + std::to_string(r));
  require(p.branch_w.size() == dilations.size() && p.branch_b.size() == dilations.size(),
          "cpcm: one weight per branch");
  Var h = conv2d(x, p.reduce_w, p.reduce_b);
  Var acc;
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    Var y = conv2d(pad_replicate(h, dilations[i]), p.branch_w[i], p.branch_b[i], {.dilation = dilations[i]});
    acc = acc.defined() ? add(acc, y) : y;
  }
  return acc;
}

Var lka(const Var& x, const LkaParams& p, const LkaSpec& spec) {
  const std::size_t c = x.dim(1);
  Var a = conv2d(x, p.dw_w, p.dw_b, {.padding = spec.kernel / 2, .groups = c});
  a = conv2d(a, p.dwd_w, p.dwd_b, {.padding = spec.dilation * (spec.dilated_kernel / 2), .dilation = spec.dilation, .groups = c});
  a = conv2d(a, p.pw_w, p.pw_b);
  return mul(x, a);
}

Var side_output(const Var& x, const Var& w, const Var& b, std::size_t out_h, std::size_t out_w) {
  Var logit = conv2d(x, w, b);
  if (logit.dim(2) != out_h || logit.dim(3) != out_w) logit = bilinear_resize(logit, out_h, out_w);
  return sigmoid(logit);
}

Var fuse(const std::vector<Var>& maps, const Var& w, const Var& b) {
  require(!maps.empty(), "fuse: no maps");
  for (const Var& m : maps)
    require(m.shape() == maps[0].shape() && m.dim(1) == 1, "fuse: maps must be single-channel and equally sized");
  require(w.dim(1) == maps.size(), "fuse: weight expects " + std::to_string(w.dim(1)) + " maps");
  return sigmoid(conv2d(concat(maps, 1), w, b));
}

EdgeNet::EdgeNet(EdgeNetConfig config) : cfg_(std::move(config)) { cfg_.validate(); }

void EdgeNet::init(ParamStore& store, Rng& rng) const {
  std::size_t in = 1;
  for (std::size_t s = 0; s < cfg_.stages; ++s) {
    const std::string sk = stage_key(s);
    const std::size_t c = cfg_.stage_channels[s], r = c / cfg_.cpcm_reduction;
    store.add(sk + ".entry.w", he_normal({c, in, 3, 3}, in * 9, rng));
    store.add(sk + ".entry.b", Tensor({c}));
    for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
      const std::string bk = sk + ".block" + std::to_string(b);
      const std::size_t k = pdc_kernel_size(cfg_.block_kind(s, b));
      store.add(bk + ".pdc.w", he_normal({c, 1, k, k}, k * k, rng));
      store.add(bk + ".proj.w", uniform_init({c, c, 1, 1}, 1.0 / std::sqrt(static_cast<double>(c)), rng));
      store.add(bk + ".proj.b", Tensor({c}));
    }
    store.add(sk + ".cpcm.reduce.w", he_normal({r, c, 1, 1}, c, rng));
    store.add(sk + ".cpcm.reduce.b", Tensor({r}));
    for (std::size_t i = 0; i < cfg_.cpcm_dilations.size(); ++i) {
      const std::string ik = sk + ".cpcm.branch" + std::to_string(i);
      store.add(ik + ".w", he_normal({r, r, 3, 3}, r * 9 * cfg_.cpcm_dilations.size(), rng));
      store.add(ik + ".b", Tensor({r}));
    }
    const std::size_t k1 = cfg_.lka.kernel, k2 = cfg_.lka.dilated_kernel;
    store.add(sk + ".lka.dw.w", uniform_init({r, 1, k1, k1}, 1.0 / static_cast<double>(k1), rng));
    store.add(sk + ".lka.dw.b", Tensor({r}));
    store.add(sk + ".lka.dwd.w", uniform_init({r, 1, k2, k2}, 1.0 / static_cast<double>(k2), rng));
    store.add(sk + ".lka.dwd.b", Tensor({r}));
    store.add(sk + ".lka.pw.w", uniform_init({r, r, 1, 1}, 1.0 / std::sqrt(static_cast<double>(r)), rng));
    store.add(sk + ".lka.pw.b", Tensor({r}, 1.0));  // attention starts near identity
    store.add(sk + ".side.w", uniform_init({1, r, 1, 1}, 1.0 / std::sqrt(static_cast<double>(r)), rng));
    store.add(sk + ".side.b", Tensor({1}));
    in = c;
  }
  store.add("fuse.w", Tensor({1, cfg_.stages, 1, 1}, kFuseInit));
  store.add("fuse.b", Tensor({1}, -0.5 * kFuseInit * static_cast<double>(cfg_.stages)));
}

EdgeNetOutput EdgeNet::forward(const Var& x, const ParamStore& store) const {
  require(x.value().rank() == 4 && x.dim(1) == 1, "edge net: input must be (N, 1, H, W), got " + shape_str(x.shape()));
  const std::size_t h = x.dim(2), w = x.dim(3);
  auto get = [&](const std::string& name, const Shape& s) -> Var {
    const Var& v = param(store, name);
    expect_shape(v, s, name);
    return v;
  };

  EdgeNetOutput out;
  Var feat = shift_scale(x, kInputMean, 1.0 / kInputStd);
  std::size_t in = 1;
  for (std::size_t s = 0; s < cfg_.stages; ++s) {
    const std::string sk = stage_key(s);
    const std::size_t c = cfg_.stage_channels[s], r = c / cfg_.cpcm_reduction;
    feat = relu(conv2d(feat, get(sk + ".entry.w", {c, in, 3, 3}), get(sk + ".entry.b", {c}),
                       {.stride = s == 0 ? 1u : 2u, .padding = 1}));
    for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
      const std::string bk = sk + ".block" + std::to_string(b);
      const PdcKind kind = cfg_.block_kind(s, b);
      const std::size_t k = pdc_kernel_size(kind);
      feat = pdc_block(feat, {get(bk + ".pdc.w", {c, 1, k, k}), get(bk + ".proj.w", {c, c, 1, 1}), get(bk + ".proj.b", {c})},
                       kind);
    }
    CpcmParams cp{get(sk + ".cpcm.reduce.w", {r, c, 1, 1}), get(sk + ".cpcm.reduce.b", {r}), {}, {}};
    for (std::size_t i = 0; i < cfg_.cpcm_dilations.size(); ++i) {
      const std::string ik = sk + ".cpcm.branch" + std::to_string(i);
      cp.branch_w.push_back(get(ik + ".w", {r, r, 3, 3}));
      cp.branch_b.push_back(get(ik + ".b", {r}));
    }
    const std::size_t k1 = cfg_.lka.kernel, k2 = cfg_.lka.dilated_kernel;
    LkaParams lp{get(sk + ".lka.dw.w", {r, 1, k1, k1}), get(sk + ".lka.dw.b", {r}), get(sk + ".lka.dwd.w", {r, 1, k2, k2}),
                 get(sk + ".lka.dwd.b", {r}), get(sk + ".lka.pw.w", {r, r, 1, 1}), get(sk + ".lka.pw.b", {r})};
    Var refined = lka(cpcm(feat, cp, cfg_.cpcm_dilations), lp, cfg_.lka);
    out.sides.push_back(side_output(refined, get(sk + ".side.w", {1, r, 1, 1}), get(sk + ".side.b", {1}), h, w));
    in = c;
  }
  out.fused = fuse(out.sides, get("fuse.w", {1, cfg_.stages, 1, 1}), get("fuse.b", {1}));
  return out;
}

Var deep_supervision_loss(const EdgeNetOutput& out, const Tensor& target, const std::vector<bool>& supervised) {
  require(supervised.empty() || supervised.size() == out.sides.size(), "deep_supervision_loss: one flag per stage");
  Var total = dice_loss(out.fused, target);
  for (std::size_t s = 0; s < out.sides.size(); ++s)
    if (supervised.empty() || supervised[s]) total = add(total, dice_loss(out.sides[s], target));
  return total;
}

namespace {

Tensor stack_images(const std::vector<EdgeSample>& data, const std::vector<std::size_t>& idx, bool masks) {
  const auto& first = data[idx[0]].image;
  const std::size_t h = first.height(), w = first.width();
  Tensor t({idx.size(), 1, h, w});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const EdgeSample& s = data[idx[i]];
    require(s.image.height() == h && s.image.width() == w && s.boundary.same_size(s.image),
            "train_edge_detector: samples in a batch must share one size");
    for (std::size_t k = 0; k < h * w; ++k) t[i * h * w + k] = masks ? (s.boundary[k] ? 1.0 : 0.0) : s.image[k];
  }
  return t;
}

}  // namespace

EdgeTrainResult train_edge_detector(const std::vector<EdgeSample>& data, const EdgeNetConfig& config,
                                    const EdgeTrainOptions& opt) {
  require(!data.empty(), "train_edge_detector: empty dataset");
  require(opt.batch_size >= 1, "train_edge_detector: batch_size must be >= 1");
  EdgeNet net(config);
  EdgeTrainResult result;
  Rng init_rng = Rng::derive(opt.seed, 0);
  net.init(result.params, init_rng);
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
      Var x(stack_images(data, idx, false));
      const Tensor y = stack_images(data, idx, true);
      result.params.zero_grad();
      Var loss = deep_supervision_loss(net.forward(x, result.params), y);
      backward(loss);
      result.params.adam_step(opt.adam);
      total += loss.value().item();
      ++batches;
    }
    result.loss_curve.push_back(total / static_cast<double>(batches));
  }
  return result;
}

EdgeDetection detect_edges(const GrayImage& image, const ParamStore& params, const EdgeNetConfig& config) {
  EdgeNet net(config);
  NoGradGuard guard;
  const std::size_t h = image.height(), w = image.width();
  EdgeNetOutput out = net.forward(Var(Tensor({1, 1, h, w}, image.data())), params);
  auto to_map = [&](const Var& v) {
    ProbMap m(h, w);
    std::copy(v.value().data().begin(), v.value().data().end(), m.data().begin());
    return m;
  };
  EdgeDetection det{to_map(out.fused), {}};
  for (const Var& s : out.sides) det.stages.push_back(to_map(s));
  return det;
}

}  // namespace mgf::edge
