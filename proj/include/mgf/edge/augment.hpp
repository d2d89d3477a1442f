#pragma once

#include <vector>

#include "mgf/image.hpp"

namespace mgf::edge {

/// Crop geometry for augmentation; a zero crop extent keeps the full transformed image.
struct AugmentSpec {
  std::size_t crop_h = 0;
  std::size_t crop_w = 0;
  std::size_t stride = 0;  // 0 means non-overlapping (stride = crop size)
};

enum class Flip { none, horizontal, vertical };

struct Augmented {
  std::vector<GrayImage> images;
  std::vector<BinaryMask> masks;
  double expansion_factor = 0.0;  // outputs per input
};

/// Rotates clockwise by quarter turns: (r, c) -> (c, H - 1 - r) per turn.
template <class G>
G rotate90(const G& g, int quarter_turns);
template <class G>
G flip(const G& g, Flip f);
template <class G>
G crop(const G& g, std::size_t top, std::size_t left, std::size_t h, std::size_t w);

/// Enumerates {0, 90, 180, 270} x {none, h-flip, v-flip} x sliding crops, in that nesting
/// order, applying identical geometry to image and mask. Throws std::invalid_argument if the
/// lists disagree or a crop exceeds a transformed image.
Augmented augment(const std::vector<GrayImage>& images, const std::vector<BinaryMask>& masks, const AugmentSpec& spec);

}  // namespace mgf::edge
