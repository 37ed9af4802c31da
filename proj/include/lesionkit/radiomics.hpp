#pragma once

// Engineered lesion features: first-order intensity statistics and 3D GLCM
// Haralick texture per modality, plus three global shape/intensity features.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lesionkit/preprocess.hpp"
#include "lesionkit/volgrid.hpp"

namespace lesionkit::radiomics {

inline constexpr int kDefaultLevels = 32;
inline constexpr int kNumDirections = 13;
inline constexpr int kNumFeatures = 87;
inline constexpr double kFallbackRadiusMm = 5.0;

/// floor(ng * (v - min) / (max - min + 1e-12)), clamped to ng - 1.
std::vector<int> quantize(std::span<const double> values, int ng = kDefaultLevels);

/// The 13 offsets of the 26-neighbourhood with a positive leading component
/// (dz > 0, or dz == 0 and dy > 0, or dz == dy == 0 and dx > 0), as (dx, dy, dz).
const std::array<std::array<int, 3>, kNumDirections>& glcm_directions();

struct Glcm {
  int ng = 0;
  std::vector<double> p;  // ng x ng row-major, normalized to sum 1
  double pairs = 0.0;     // symmetric pair count before normalization

  double operator()(int i, int j) const { return p[static_cast<std::size_t>(i) * ng + j]; }
};

/// `levels` covers a dims[0] x dims[1] x dims[2] grid (x fastest); entries < 0
/// are outside the region. Counts every in-region pair (v, v + d) over the 13
/// directions, adds the transpose and normalizes. NoValidPairs if none exist.
Glcm glcm_3d(const std::array<int, 3>& dims, std::span<const int> levels, int ng = kDefaultLevels);

inline constexpr int kNumHaralick = 15;
const std::array<const char*, kNumHaralick>& haralick_names();

/// Standard Haralick definitions with 1-based gray levels and base-2 logs.
/// Correlation is 0 when the marginal variance is 0; IMC1 is 0 when both
/// marginal entropies are 0.
std::array<double, kNumHaralick> haralick(const Glcm& glcm);

inline constexpr int kNumFirstOrder = 6;
const std::array<const char*, kNumFirstOrder>& first_order_names();

/// mean, population std, min, max, skewness, Pearson kurtosis (two-pass).
/// Skewness and kurtosis are 0 for constant inputs.
std::array<double, kNumFirstOrder> first_order(std::span<const double> values);

/// The 87 feature names in manifest order.
const std::vector<std::string>& feature_names();
/// Canonical JSON manifest (the file shipped as data/feature_manifest.json).
std::string manifest_json();

/// Voxels of `grid` whose centers lie within radius_mm of `center`.
preprocess::LesionMask ball_mask(const volgrid::Volume& grid, const volgrid::Vec3& center,
                                 double radius_mm = kFallbackRadiusMm);

/// Features for one lesion. The mask lives on the grid of its source modality;
/// other modalities are resampled onto it when their geometry differs. An
/// empty mask is replaced by a 5 mm ball around the finding.
std::vector<double> extract_features(const volgrid::CaseBundle& bundle, const volgrid::Finding& finding,
                                     const preprocess::LesionMask& mask, int ng = kDefaultLevels);

struct FeatureRow {
  std::string case_id;
  int finding_id = 0;
  std::optional<int> label;
  std::vector<double> values;
};

/// Region-grown DWI mask per finding, then extract_features. Rows follow
/// (case_id, finding_id) order.
std::vector<FeatureRow> extract_all(const std::map<std::string, volgrid::CaseBundle>& bundles,
                                    const std::vector<volgrid::Finding>& findings,
                                    const preprocess::GrowParams& grow = {}, int jobs = 1,
                                    int ng = kDefaultLevels);

/// Header `case_id,finding_id,label,<names>`.
void write_feature_csv(const std::vector<FeatureRow>& rows, const std::vector<std::string>& names,
                       const std::filesystem::path& path);
std::vector<FeatureRow> read_feature_csv(const std::filesystem::path& path, std::vector<std::string>* names = nullptr);

}  // namespace lesionkit::radiomics
