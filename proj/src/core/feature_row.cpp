#include "mgf/feature_row.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mgf {

double FeatureRow::feature(std::size_t i) const {
  switch (i) {
    case 0: return gd_at_pct;
    case 1: return grain_size_um;
    case 2: return phase_area_fraction;
    case 3: return phase_ecd_um;
  }
  throw std::out_of_range("FeatureRow: feature index " + std::to_string(i));
}

void FeatureRow::set_feature(std::size_t i, double v) {
  switch (i) {
    case 0: gd_at_pct = v; return;
    case 1: grain_size_um = v; return;
    case 2: phase_area_fraction = v; return;
    case 3: phase_ecd_um = v; return;
  }
  throw std::out_of_range("FeatureRow: feature index " + std::to_string(i));
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_feature_csv(const std::filesystem::path& path, const std::vector<FeatureRow>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << kFeatureCsvHeader << '\n';
  for (const FeatureRow& r : rows) {
    os << r.id;
    for (std::size_t i = 0; i < FeatureRow::kFeatures; ++i) os << ',' << format_double(r.feature(i));
    os << ',';
    if (r.hv) os << format_double(*r.hv);
    os << '\n';
  }
}

namespace {

double parse_double(const std::string& s, const std::string& where) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error(where + ": not a number: '" + s + "'");
  return v;
}

}  // namespace

std::vector<FeatureRow> read_feature_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kFeatureCsvHeader) throw std::runtime_error(path.string() + ":1: unexpected header '" + line + "'");
  std::vector<FeatureRow> rows;
  for (std::size_t lineno = 2; std::getline(is, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != 6) throw std::runtime_error(where + ": expected 6 fields, got " + std::to_string(cells.size()));
    FeatureRow r;
    r.id = cells[0];
    for (std::size_t i = 0; i < FeatureRow::kFeatures; ++i) r.set_feature(i, parse_double(cells[i + 1], where));
    if (!cells[5].empty()) r.hv = parse_double(cells[5], where);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace mgf
