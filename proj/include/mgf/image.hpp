#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgf {

/// Row-major 2-D grid.
template <class T>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t h, std::size_t w, T fill = T{}) : h_(h), w_(w), px_(h * w, fill) {}

  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  std::size_t size() const noexcept { return px_.size(); }
  bool empty() const noexcept { return px_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return px_[r * w_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return px_[r * w_ + c]; }
  T& operator[](std::size_t i) { return px_[i]; }
  const T& operator[](std::size_t i) const { return px_[i]; }

  bool in_bounds(long r, long c) const noexcept {
    return r >= 0 && c >= 0 && r < static_cast<long>(h_) && c < static_cast<long>(w_);
  }
  template <class U>
  bool same_size(const Grid<U>& o) const noexcept {
    return h_ == o.height() && w_ == o.width();
  }

  std::vector<T>& data() noexcept { return px_; }
  const std::vector<T>& data() const noexcept { return px_; }

  friend bool operator==(const Grid& a, const Grid& b) { return a.h_ == b.h_ && a.w_ == b.w_ && a.px_ == b.px_; }

 private:
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  std::vector<T> px_;
};

/// Grayscale micrograph, intensities in [0, 1], with the physical size of one pixel.
class GrayImage : public Grid<double> {
 public:
  GrayImage() = default;
  GrayImage(std::size_t h, std::size_t w, double fill = 0.0, double pixel_scale_um = 1.0);
  double pixel_scale_um() const noexcept { return scale_; }
  void set_pixel_scale_um(double s);

 private:
  double scale_ = 1.0;
};

/// Hard segmentation; 1 = boundary / foreground.
class BinaryMask : public Grid<std::uint8_t> {
 public:
  using Grid::Grid;
  std::size_t count() const;
  bool on(long r, long c) const { return in_bounds(r, c) && (*this)(static_cast<std::size_t>(r), static_cast<std::size_t>(c)); }
};

/// Soft per-pixel map with values in [0, 1].
class ProbMap : public Grid<double> {
 public:
  using Grid::Grid;
  BinaryMask threshold(double t = 0.5) const;
};

void require_same_size(std::size_t h1, std::size_t w1, std::size_t h2, std::size_t w2, const char* what);

template <class A, class B>
void require_same_size(const Grid<A>& a, const Grid<B>& b, const char* what) {
  require_same_size(a.height(), a.width(), b.height(), b.width(), what);
}

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b);
std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b);

// File I/O. Grayscale reads accept 8-bit PGM (P5) and PNG; masks are P5 with {0, 255}
// (anything above 127 reads as on).
GrayImage read_gray(const std::filesystem::path& path, double pixel_scale_um = 1.0);
BinaryMask read_mask(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Grid<double>& img);
void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask);
void write_png(const std::filesystem::path& path, const Grid<double>& img);

}  // namespace mgf
