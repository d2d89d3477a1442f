#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mgf {

/// One regression sample: composition plus the three measured microstructure features.
struct FeatureRow {
  std::string id;
  double gd_at_pct = 0;
  double grain_size_um = 0;
  double phase_area_fraction = 0;
  double phase_ecd_um = 0;
  std::optional<double> hv;

  static constexpr std::size_t kFeatures = 4;
  double feature(std::size_t i) const;
  void set_feature(std::size_t i, double v);
};

inline constexpr const char* kFeatureNames[FeatureRow::kFeatures] = {"gd_at_pct", "grain_size_um",
                                                                    "phase_area_fraction", "phase_ecd_um"};
inline constexpr const char* kFeatureCsvHeader = "id,gd_at_pct,grain_size_um,phase_area_fraction,phase_ecd_um,hv";

/// Shortest round-trip decimal form.
std::string format_double(double v);

void write_feature_csv(const std::filesystem::path& path, const std::vector<FeatureRow>& rows);
/// Throws std::runtime_error naming the line on a malformed file.
std::vector<FeatureRow> read_feature_csv(const std::filesystem::path& path);

}  // namespace mgf
