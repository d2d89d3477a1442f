#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgf/edge/augment.hpp"
#include "mgf/edge/edge_net.hpp"
#include "mgf/features/features.hpp"
#include "mgf/hv/regressor.hpp"
#include "mgf/repair/repair.hpp"
#include "mgf/seg/unetpp.hpp"
#include "mgf/synth/synth.hpp"

namespace mgf::pipeline {

struct PathsSection {
  std::string out = "out";
  /// Real micrographs. Empty means the synthetic demo set is generated instead.
  std::string images;
  /// CSV `id,gd_at_pct[,hv]` for the real images, keyed by file stem.
  std::string labels;
  /// Pretrained weights; required with real images, optional otherwise.
  std::string edge_weights;
  std::string seg_weights;
};

struct SynthSection {
  synth::SynthSpec spec;
  std::size_t train_images = 50;
  std::size_t test_images = 21;
  double gd_min = 0.08;
  double gd_max = 2.9;
};

struct AugmentSection {
  edge::AugmentSpec spec;
  /// Keep every n-th augmented sample (1 keeps all).
  std::size_t keep_every = 1;
};

struct EdgeSection {
  edge::EdgeNetConfig net;
  edge::EdgeTrainOptions train;
  double threshold = 0.5;
  int tolerance_px = 2;
};

struct SegSection {
  seg::UnetPPConfig net;
  seg::SegTrainOptions train;
  double threshold = 0.5;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  PathsSection paths;
  SynthSection synth;
  AugmentSection augment;
  EdgeSection edge;
  repair::RepairParams repair;
  SegSection segmenter;
  features::InterceptSpec intercept;
  hv::RegressorConfig regressor;

  /// Throws ConfigError on values no module accepts.
  void validate() const;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Grammar, one item per line:
///   [section]
///   key = value      # comment
/// Lists are comma separated, booleans are true/false, blank lines and '#' comments are
/// ignored. Keys may repeat; the last value wins. Omitted keys keep their defaults. Throws
/// ConfigError naming the line for syntax errors and listing every unknown key.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);

/// Every section and key in a fixed order with canonical value spelling.
std::string serialize_config(const PipelineConfig& config);

}  // namespace mgf::pipeline
