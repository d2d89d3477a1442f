#pragma once

#include <string>
#include <vector>

#include "mgf/edge/pdc.hpp"
#include "mgf/image.hpp"
#include "mgf/params.hpp"

namespace mgf::edge {

struct LkaSpec {
  std::size_t kernel = 5;
  std::size_t dilated_kernel = 7;
  std::size_t dilation = 3;
};

struct EdgeNetConfig {
  std::size_t stages = 3;
  std::size_t blocks_per_stage = 4;
  std::vector<std::size_t> stage_channels{16, 32, 64};
  /// One kind per block, stage-major. Empty means [cpdc, apdc, rpdc, vanilla] repeated.
  std::vector<PdcKind> pdc_schedule;
  std::vector<std::size_t> cpcm_dilations{1, 2, 4, 8};
  std::size_t cpcm_reduction = 4;
  LkaSpec lka;

  PdcKind block_kind(std::size_t stage, std::size_t block) const;
  /// Throws std::invalid_argument describing the first inconsistency.
  void validate() const;
};

// Building blocks. Each takes its parameters explicitly so they can be exercised alone.

struct PdcBlockParams {
  Var pdc_w;   // (C, 1, k, k), depthwise
  Var proj_w;  // (C, C, 1, 1)
  Var proj_b;  // (C)
};
/// y = x + conv1x1(relu(pdc(x))).
Var pdc_block(const Var& x, const PdcBlockParams& p, PdcKind kind);

struct CpcmParams {
  Var reduce_w, reduce_b;                 // (C/r, C, 1, 1), (C/r)
  std::vector<Var> branch_w, branch_b;    // (C/r, C/r, 3, 3), (C/r)
};
/// 1x1 reduction followed by parallel dilated 3x3 branches, summed.
Var cpcm(const Var& x, const CpcmParams& p, const std::vector<std::size_t>& dilations);

struct LkaParams {
  Var dw_w, dw_b;    // (C, 1, k, k)
  Var dwd_w, dwd_b;  // (C, 1, kd, kd), dilated
  Var pw_w, pw_b;    // (C, C, 1, 1)
};
/// x * conv1x1(dwconv_dilated(dwconv(x))).
Var lka(const Var& x, const LkaParams& p, const LkaSpec& spec);

/// sigmoid(bilinear_resize(conv1x1(x))) with a single output channel.
Var side_output(const Var& x, const Var& w, const Var& b, std::size_t out_h, std::size_t out_w);
/// sigmoid(conv1x1(concat(maps))) over (N, 1, H, W) maps.
Var fuse(const std::vector<Var>& maps, const Var& w, const Var& b);

struct EdgeNetOutput {
  std::vector<Var> sides;  // per stage, (N, 1, H, W)
  Var fused;
};

class EdgeNet {
 public:
  explicit EdgeNet(EdgeNetConfig config = {});
  const EdgeNetConfig& config() const { return cfg_; }

  /// Registers every parameter in `store` with a fresh initialization.
  void init(ParamStore& store, Rng& rng) const;
  /// x: (N, 1, H, W) intensities in [0, 1]. Throws if `store` lacks a parameter or a shape differs.
  EdgeNetOutput forward(const Var& x, const ParamStore& store) const;

 private:
  EdgeNetConfig cfg_;
};

/// Sum of per-stage Dice losses plus the fused Dice loss. `supervised` (optional, one flag per
/// stage) drops a stage's term.
Var deep_supervision_loss(const EdgeNetOutput& out, const Tensor& target, const std::vector<bool>& supervised = {});

struct EdgeSample {
  GrayImage image;
  BinaryMask boundary;
};

struct EdgeTrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  AdamOptions adam{.lr = 3e-3};
  std::uint64_t seed = 1;
};

struct EdgeTrainResult {
  ParamStore params;
  std::vector<double> loss_curve;  // mean batch loss per epoch
};

/// Samples in one batch must share a size. Throws std::invalid_argument on an empty dataset.
EdgeTrainResult train_edge_detector(const std::vector<EdgeSample>& data, const EdgeNetConfig& config,
                                    const EdgeTrainOptions& opt);

struct EdgeDetection {
  ProbMap fused;
  std::vector<ProbMap> stages;
};

EdgeDetection detect_edges(const GrayImage& image, const ParamStore& params, const EdgeNetConfig& config = {});

}  // namespace mgf::edge
