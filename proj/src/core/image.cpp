#include "mgf/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

namespace mgf {

GrayImage::GrayImage(std::size_t h, std::size_t w, double fill, double pixel_scale_um) : Grid(h, w, fill) {
  set_pixel_scale_um(pixel_scale_um);
}

void GrayImage::set_pixel_scale_um(double s) {
  if (!(s > 0.0)) throw std::invalid_argument("image: pixel scale must be positive");
  scale_ = s;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(data().begin(), data().end(), [](std::uint8_t v) { return v != 0; }));
}

BinaryMask ProbMap::threshold(double t) const {
  BinaryMask m(height(), width());
  for (std::size_t i = 0; i < size(); ++i) m[i] = (*this)[i] >= t ? 1 : 0;
  return m;
}

void require_same_size(std::size_t h1, std::size_t w1, std::size_t h2, std::size_t w2, const char* what) {
  if (h1 != h2 || w1 != w2)
    throw std::invalid_argument(std::string(what) + ": size mismatch " + std::to_string(h1) + "x" + std::to_string(w1) +
                                " vs " + std::to_string(h2) + "x" + std::to_string(w2));
}

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
  require_same_size(a, b, "mask_union");
  BinaryMask out(a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] || b[i]) ? 1 : 0;
  return out;
}

std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
  require_same_size(a, b, "intersection_count");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += (a[i] && b[i]) ? 1 : 0;
  return n;
}

namespace {

struct Raw8 {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> px;
};

void skip_pgm_space(std::istream& is) {
  while (true) {
    int ch = is.peek();
    if (ch == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      return;
    }
  }
}

Raw8 read_pgm8(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  is >> magic;
  if (magic != "P5") throw std::runtime_error(path.string() + ": not a binary PGM (P5) file");
  std::size_t w = 0, h = 0;
  int maxval = 0;
  skip_pgm_space(is);
  is >> w;
  skip_pgm_space(is);
  is >> h;
  skip_pgm_space(is);
  is >> maxval;
  if (!is || w == 0 || h == 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error(path.string() + ": unsupported PGM header (8-bit grayscale only)");
  is.get();
  Raw8 raw{h, w, std::vector<std::uint8_t>(h * w)};
  if (!is.read(reinterpret_cast<char*>(raw.px.data()), static_cast<std::streamsize>(raw.px.size())))
    throw std::runtime_error(path.string() + ": truncated PGM data");
  if (maxval != 255)
    for (auto& v : raw.px) v = static_cast<std::uint8_t>(std::lround(255.0 * v / maxval));
  return raw;
}

Raw8 read_png8(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw std::runtime_error(path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  Raw8 raw{image.height, image.width, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, raw.px.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error(path.string() + ": " + image.message);
  }
  return raw;
}

Raw8 read_any8(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("cannot open " + path.string());
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  if (probe.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png8(path);
  return read_pgm8(path);
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void write_pgm8(const std::filesystem::path& path, std::size_t h, std::size_t w, const std::vector<std::uint8_t>& px) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

GrayImage read_gray(const std::filesystem::path& path, double pixel_scale_um) {
  const Raw8 raw = read_any8(path);
  GrayImage img(raw.h, raw.w, 0.0, pixel_scale_um);
  for (std::size_t i = 0; i < raw.px.size(); ++i) img[i] = raw.px[i] / 255.0;
  return img;
}

BinaryMask read_mask(const std::filesystem::path& path) {
  const Raw8 raw = read_any8(path);
  BinaryMask m(raw.h, raw.w);
  for (std::size_t i = 0; i < raw.px.size(); ++i) m[i] = raw.px[i] > 127 ? 1 : 0;
  return m;
}

void write_pgm(const std::filesystem::path& path, const Grid<double>& img) {
  std::vector<std::uint8_t> px(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) px[i] = to_byte(img[i]);
  write_pgm8(path, img.height(), img.width(), px);
}

void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> px(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) px[i] = mask[i] ? 255 : 0;
  write_pgm8(path, mask.height(), mask.width(), px);
}

void write_png(const std::filesystem::path& path, const Grid<double>& img) {
  std::vector<std::uint8_t> px(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) px[i] = to_byte(img[i]);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, px.data(), 0, nullptr))
    throw std::runtime_error(path.string() + ": " + image.message);
}

}  // namespace mgf
