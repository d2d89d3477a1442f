#include "mgf/pipeline/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mgf/feature_row.hpp"

namespace mgf::pipeline {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view v, const char* what) {
  throw std::invalid_argument("'" + std::string(v) + "' is not " + what);
}

void parse_into(std::size_t& out, std::string_view v) {
  std::uint64_t x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(v, "a non-negative integer");
  out = static_cast<std::size_t>(x);
}

void parse_into(int& out, std::string_view v) {
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(v, "an integer");
}

void parse_into(double& out, std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    bad_value(v, "a number");
  }
  if (used != s.size()) bad_value(v, "a number");
}

void parse_into(bool& out, std::string_view v) {
  if (v == "true") out = true;
  else if (v == "false") out = false;
  else bad_value(v, "true or false");
}

void parse_into(std::string& out, std::string_view v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  out = std::string(v);
}

void parse_into(hv::TokenMode& out, std::string_view v) { out = hv::parse_token_mode(v); }
void parse_into(edge::PdcKind& out, std::string_view v) { out = edge::parse_pdc_kind(v); }

template <class T>
void parse_into(std::vector<T>& out, std::string_view v) {
  out.clear();
  if (trim(v).empty()) return;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = v.find(',', start);
    T item{};
    parse_into(item, trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
}

std::string format_value(std::size_t v) { return std::to_string(v); }
std::string format_value(int v) { return std::to_string(v); }
std::string format_value(double v) { return format_double(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(hv::TokenMode v) { return std::string(hv::token_mode_name(v)); }
std::string format_value(edge::PdcKind v) { return std::string(edge::pdc_name(v)); }

template <class T>
std::string format_value(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_value(v[i]);
  return s;
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(PipelineConfig&, std::string_view)> parse;
  std::function<std::string(const PipelineConfig&)> format;
};

#define MGF_FIELD(section, key, member)                                                          \
  Field {                                                                                       \
    section, key, [](PipelineConfig& c, std::string_view v) { parse_into(c.member, v); },        \
        [](const PipelineConfig& c) { return format_value(c.member); }                           \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      MGF_FIELD("run", "seed", seed),

      MGF_FIELD("paths", "out", paths.out),
      MGF_FIELD("paths", "images", paths.images),
      MGF_FIELD("paths", "labels", paths.labels),
      MGF_FIELD("paths", "edge_weights", paths.edge_weights),
      MGF_FIELD("paths", "seg_weights", paths.seg_weights),

      MGF_FIELD("synth", "height", synth.spec.height),
      MGF_FIELD("synth", "width", synth.spec.width),
      MGF_FIELD("synth", "n_grains", synth.spec.n_grains),
      MGF_FIELD("synth", "weak_boundary_fraction", synth.spec.weak_boundary_fraction),
      MGF_FIELD("synth", "particle_count", synth.spec.particle_count),
      MGF_FIELD("synth", "particle_radius_min", synth.spec.particle_radius_min),
      MGF_FIELD("synth", "particle_radius_max", synth.spec.particle_radius_max),
      MGF_FIELD("synth", "scratch_count", synth.spec.scratch_count),
      MGF_FIELD("synth", "scratch_length_min", synth.spec.scratch_length_min),
      MGF_FIELD("synth", "scratch_length_max", synth.spec.scratch_length_max),
      MGF_FIELD("synth", "noise_sigma", synth.spec.noise_sigma),
      MGF_FIELD("synth", "pixel_scale_um", synth.spec.pixel_scale_um),
      MGF_FIELD("synth", "train_images", synth.train_images),
      MGF_FIELD("synth", "test_images", synth.test_images),
      MGF_FIELD("synth", "gd_min", synth.gd_min),
      MGF_FIELD("synth", "gd_max", synth.gd_max),

      MGF_FIELD("augment", "crop_h", augment.spec.crop_h),
      MGF_FIELD("augment", "crop_w", augment.spec.crop_w),
      MGF_FIELD("augment", "stride", augment.spec.stride),
      MGF_FIELD("augment", "keep_every", augment.keep_every),

      MGF_FIELD("edge", "blocks_per_stage", edge.net.blocks_per_stage),
      MGF_FIELD("edge", "stage_channels", edge.net.stage_channels),
      MGF_FIELD("edge", "pdc_schedule", edge.net.pdc_schedule),
      MGF_FIELD("edge", "cpcm_dilations", edge.net.cpcm_dilations),
      MGF_FIELD("edge", "cpcm_reduction", edge.net.cpcm_reduction),
      MGF_FIELD("edge", "epochs", edge.train.epochs),
      MGF_FIELD("edge", "batch_size", edge.train.batch_size),
      MGF_FIELD("edge", "lr", edge.train.adam.lr),
      MGF_FIELD("edge", "threshold", edge.threshold),
      MGF_FIELD("edge", "tolerance_px", edge.tolerance_px),

      MGF_FIELD("repair", "edge_threshold", repair.edge_threshold),
      MGF_FIELD("repair", "min_area_px", repair.min_area_px),
      MGF_FIELD("repair", "similarity_tol", repair.grow.similarity_tol),
      MGF_FIELD("repair", "max_fill", repair.grow.max_fill),

      MGF_FIELD("segmenter", "depth", segmenter.net.depth),
      MGF_FIELD("segmenter", "base_channels", segmenter.net.base_channels),
      MGF_FIELD("segmenter", "deep_supervision", segmenter.net.deep_supervision),
      MGF_FIELD("segmenter", "epochs", segmenter.train.epochs),
      MGF_FIELD("segmenter", "batch_size", segmenter.train.batch_size),
      MGF_FIELD("segmenter", "lr", segmenter.train.adam.lr),
      MGF_FIELD("segmenter", "threshold", segmenter.threshold),

      MGF_FIELD("intercept", "n_h_lines", intercept.n_h_lines),
      MGF_FIELD("intercept", "n_v_lines", intercept.n_v_lines),
      MGF_FIELD("intercept", "margin_px", intercept.margin_px),

      MGF_FIELD("regressor", "d_model", regressor.d_model),
      MGF_FIELD("regressor", "n_layers", regressor.n_layers),
      MGF_FIELD("regressor", "n_heads", regressor.n_heads),
      MGF_FIELD("regressor", "ffn_mult", regressor.ffn_mult),
      MGF_FIELD("regressor", "token_mode", regressor.token_mode),
      MGF_FIELD("regressor", "lr", regressor.lr),
      MGF_FIELD("regressor", "epochs", regressor.epochs),
  };
  return all;
}

#undef MGF_FIELD

const Field* find_field(std::string_view section, std::string_view key) {
  for (const Field& f : fields())
    if (section == f.section && key == f.key) return &f;
  return nullptr;
}

bool known_section(std::string_view section) {
  return std::any_of(fields().begin(), fields().end(), [&](const Field& f) { return section == f.section; });
}

}  // namespace

void PipelineConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  try {
    synth.spec.validate();
    edge.net.validate();
    segmenter.net.validate();
    regressor.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  check(synth.gd_min <= synth.gd_max, "synth.gd_min must not exceed synth.gd_max");
  check(augment.keep_every >= 1, "augment.keep_every must be >= 1");
  check(edge.train.batch_size >= 1 && segmenter.train.batch_size >= 1, "batch_size must be >= 1");
  check(edge.tolerance_px >= 0, "edge.tolerance_px must be >= 0");
  check(!paths.out.empty(), "paths.out must not be empty");
  check(paths.images.empty() || (!paths.edge_weights.empty() && !paths.seg_weights.empty() && !paths.labels.empty()),
        "paths.images needs paths.labels, paths.edge_weights and paths.seg_weights");
}

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::vector<std::string> unknown;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const auto hash = line.find('#');
    const std::string s = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (s.empty()) continue;
    const std::string where = "config line " + std::to_string(no) + ": ";
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) throw ConfigError(where + "malformed section header '" + s + "'");
      section = trim(s.substr(1, s.size() - 2));
      if (!known_section(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + s + "'");
    const std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key");
    if (section.empty()) throw ConfigError(where + "key '" + key + "' appears before any [section]");
    const Field* f = find_field(section, key);
    if (f == nullptr) {
      unknown.push_back(section + "." + key);
      continue;
    }
    try {
      f->parse(cfg, value);
    } catch (const std::exception& e) {
      throw ConfigError(where + section + "." + key + ": " + e.what());
    }
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("config: unknown key(s): " + list);
  }
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const PipelineConfig& config) {
  std::string out, section;
  for (const Field& f : fields()) {
    if (section != f.section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.format(config) + "\n";
  }
  return out;
}

}  // namespace mgf::pipeline
