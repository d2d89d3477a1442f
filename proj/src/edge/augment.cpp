#include "mgf/edge/augment.hpp"

#include <stdexcept>
#include <string>

namespace mgf::edge {

namespace {

template <class G>
G blank_like(const G& g, std::size_t h, std::size_t w) {
  G out(h, w);
  if constexpr (std::is_same_v<G, GrayImage>) out.set_pixel_scale_um(g.pixel_scale_um());
  return out;
}

std::vector<std::size_t> offsets(std::size_t full, std::size_t size, std::size_t stride) {
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + size <= full; o += stride) out.push_back(o);
  return out;
}

}  // namespace

template <class G>
G rotate90(const G& g, int quarter_turns) {
  const int q = ((quarter_turns % 4) + 4) % 4;
  G cur = g;
  for (int t = 0; t < q; ++t) {
    const std::size_t h = cur.height(), w = cur.width();
    G next = blank_like(cur, w, h);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) next(c, h - 1 - r) = cur(r, c);
    cur = std::move(next);
  }
  return cur;
}

template <class G>
G flip(const G& g, Flip f) {
  if (f == Flip::none) return g;
  const std::size_t h = g.height(), w = g.width();
  G out = blank_like(g, h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      out(r, c) = f == Flip::horizontal ? g(r, w - 1 - c) : g(h - 1 - r, c);
  return out;
}

template <class G>
G crop(const G& g, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  if (top + h > g.height() || left + w > g.width()) throw std::invalid_argument("crop: window exceeds image");
  G out = blank_like(g, h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = g(top + r, left + c);
  return out;
}

template GrayImage rotate90(const GrayImage&, int);
template BinaryMask rotate90(const BinaryMask&, int);
template GrayImage flip(const GrayImage&, Flip);
template BinaryMask flip(const BinaryMask&, Flip);
template GrayImage crop(const GrayImage&, std::size_t, std::size_t, std::size_t, std::size_t);
template BinaryMask crop(const BinaryMask&, std::size_t, std::size_t, std::size_t, std::size_t);

Augmented augment(const std::vector<GrayImage>& images, const std::vector<BinaryMask>& masks, const AugmentSpec& spec) {
  if (images.size() != masks.size()) throw std::invalid_argument("augment: image and mask counts differ");
  Augmented out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_size(images[i], masks[i], "augment");
    for (int rot = 0; rot < 4; ++rot)
      for (Flip f : {Flip::none, Flip::horizontal, Flip::vertical}) {
        GrayImage img = flip(rotate90(images[i], rot), f);
        BinaryMask msk = flip(rotate90(masks[i], rot), f);
        const std::size_t ch = spec.crop_h ? spec.crop_h : img.height();
        const std::size_t cw = spec.crop_w ? spec.crop_w : img.width();
        if (ch > img.height() || cw > img.width())
          throw std::invalid_argument("augment: crop " + std::to_string(ch) + "x" + std::to_string(cw) +
                                      " larger than image " + std::to_string(img.height()) + "x" +
                                      std::to_string(img.width()));
        const std::size_t sh = spec.stride ? spec.stride : ch, sw = spec.stride ? spec.stride : cw;
        for (std::size_t top : offsets(img.height(), ch, sh))
          for (std::size_t left : offsets(img.width(), cw, sw)) {
            out.images.push_back(crop(img, top, left, ch, cw));
            out.masks.push_back(crop(msk, top, left, ch, cw));
          }
      }
  }
  out.expansion_factor = images.empty() ? 0.0 : static_cast<double>(out.images.size()) / static_cast<double>(images.size());
  return out;
}

}  // namespace mgf::edge
