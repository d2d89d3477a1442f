#pragma once

#include <map>
#include <string>
#include <vector>

#include "mgf/image.hpp"
#include "mgf/ops.hpp"
#include "mgf/params.hpp"

namespace mgf::seg {

/// Nested U-Net. Node x(i, j) sits at encoder level i (resolution / 2^i) and column j,
/// for i + j <= depth.
struct UnetPPConfig {
  std::size_t depth = 4;
  std::size_t base_channels = 16;
  /// Average the sigmoid heads on x(0, 1..depth) instead of using x(0, depth) only.
  bool deep_supervision = false;

  void validate() const;
  std::size_t node_count() const { return (depth + 1) * (depth + 2) / 2; }
  std::size_t channels(std::size_t level) const { return base_channels << level; }
  /// Input channels of node (i, j).
  std::size_t in_channels(std::size_t i, std::size_t j) const;
  /// Smallest input side the encoder accepts (2^depth).
  std::size_t min_side() const { return std::size_t{1} << depth; }
};

struct NodeInput {
  std::size_t level;
  std::size_t column;
  enum class Via { direct, pooled, upsampled } via;
};

/// Inputs of node (i, j) in concatenation order: the pooled x(i-1, 0) for an encoder node
/// (nothing for x(0, 0), which reads the image), otherwise x(i, 0..j-1) then the upsampled
/// x(i+1, j-1).
std::vector<NodeInput> node_inputs(const UnetPPConfig& config, std::size_t i, std::size_t j);

/// Trainable parameters plus batch-norm running statistics.
struct SegModel {
  ParamStore params;
  std::map<std::string, BatchNormState> bn;

  /// Flattened for weight files: running stats appear as "<bn>.running_mean" / "<bn>.running_var".
  std::map<std::string, Tensor> tensors() const;
  /// Fills an empty model, or overwrites an initialized one whose names and shapes match.
  void load(const std::map<std::string, Tensor>& tensors);
};

/// Two 3x3 conv -> batch norm -> ReLU units at padding 1.
Var conv_block(const Var& x, SegModel& model, const std::string& key, bool training);

class UnetPP {
 public:
  explicit UnetPP(UnetPPConfig config);
  const UnetPPConfig& config() const { return cfg_; }

  void init(SegModel& model, Rng& rng) const;
  /// x: (N, 1, H, W) with H, W >= 2^depth; returns probabilities (N, 1, H, W). Training mode
  /// normalizes with batch statistics and updates the running estimates.
  Var forward(const Var& x, SegModel& model, bool training) const;

 private:
  UnetPPConfig cfg_;
};

struct SegSample {
  GrayImage image;
  BinaryMask phase;
};

struct SegTrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  AdamOptions adam{.lr = 3e-3};
  std::uint64_t seed = 1;
};

struct SegTrainResult {
  SegModel model;
  std::vector<double> loss_curve;  // mean batch BCE per epoch
};

/// Throws std::invalid_argument on an empty dataset or mismatched image/mask sizes.
SegTrainResult train_segmenter(const std::vector<SegSample>& data, const UnetPPConfig& config,
                               const SegTrainOptions& opt);

ProbMap phase_probability(const GrayImage& image, SegModel& model, const UnetPPConfig& config);
BinaryMask segment_phase(const GrayImage& image, SegModel& model, const UnetPPConfig& config, double threshold = 0.5);

struct SegMetrics {
  double accuracy = 0;
  double precision = 0;
  double miou = 0;
  double iou_foreground = 0;
  double iou_background = 0;
};

/// Precision is 1 when nothing is predicted positive; an IoU with an empty union is 1.
SegMetrics seg_metrics(const BinaryMask& pred, const BinaryMask& gt);

/// Intensity baseline: pixels darker than `threshold` are phase.
BinaryMask threshold_segment(const GrayImage& image, double threshold);
/// Threshold on a 1/256 grid maximizing mean foreground IoU over the samples.
double fit_threshold(const std::vector<SegSample>& data);

}  // namespace mgf::seg
