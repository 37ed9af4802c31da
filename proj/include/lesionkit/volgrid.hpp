#pragma once

// Volumes on physical grids: geometry, trilinear sampling, resampling and
// the native on-disk volume format.

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lesionkit::volgrid {

using Vec3 = std::array<double, 3>;
/// Row-major 3x3 matrix.
using Mat3 = std::array<double, 9>;

inline constexpr Mat3 kIdentity3 = {1, 0, 0, 0, 1, 0, 0, 0, 1};

struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 spacing{1.0, 1.0, 1.0};
  /// World position (mm) of the center of voxel (0,0,0).
  Vec3 origin{0.0, 0.0, 0.0};
  /// Columns map index axes to world axes.
  Mat3 direction = kIdentity3;
  /// x-fastest, then y, then z.
  std::vector<float> data;

  Volume() = default;
  Volume(std::array<int, 3> dims, Vec3 spacing, Vec3 origin = {0, 0, 0}, Mat3 direction = kIdentity3);

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
  }
  std::size_t linear_index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
  }
  bool contains_index(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  }
  float at(int i, int j, int k) const { return data[linear_index(i, j, k)]; }
  float& at(int i, int j, int k) { return data[linear_index(i, j, k)]; }

  /// Throws MalformedHeader / LengthMismatch when an invariant is broken.
  void validate() const;
};

Vec3 index_to_world(const Volume& vol, const Vec3& index);
Vec3 world_to_index(const Volume& vol, const Vec3& world);

/// True when the continuous index of `world` lies within the voxel-center hull.
bool inside_bounds(const Volume& vol, const Vec3& world);

/// Trilinear blend of the 8 surrounding voxels; voxels outside the grid count as 0.
double trilinear_sample(const Volume& vol, const Vec3& world);

inline constexpr std::size_t kDefaultVoxelBudget = std::size_t{512} * 512 * 512;

Volume resample_isotropic(const Volume& vol, double target_spacing = 1.0,
                          std::size_t voxel_budget = kDefaultVoxelBudget);

/// Geometric alignment onto `ref`'s grid (dims, spacing, origin, direction).
Volume resample_to_reference(const Volume& vol, const Volume& ref);

/// `header_path` names the `<name>.nvol.json` file; the payload is written
/// next to it as `<name>.nvol.raw`.
void write_volume(const Volume& vol, const std::filesystem::path& header_path);
Volume read_volume(const std::filesystem::path& header_path);

enum class Modality { DWI, ADC, KTRANS, T2 };

inline constexpr std::array<Modality, 4> kAllModalities = {Modality::DWI, Modality::ADC, Modality::KTRANS,
                                                           Modality::T2};

const char* modality_name(Modality m);  // "dwi", "adc", "ktrans", "t2"
Modality parse_modality(const std::string& name);

struct Finding {
  std::string case_id;
  int finding_id = 0;
  Vec3 pos_world{0, 0, 0};
  std::optional<int> label;

  bool operator==(const Finding&) const = default;
};

struct CaseBundle {
  std::string case_id;
  std::map<Modality, Volume> channels;
  std::vector<Finding> findings;

  const Volume& channel(Modality m) const;
  bool has(Modality m) const { return channels.count(m) != 0; }
};

std::vector<Finding> read_findings_csv(const std::filesystem::path& path);
void write_findings_csv(const std::vector<Finding>& findings, const std::filesystem::path& path);

/// Case directory layout: `<dir>/<modality>.nvol.json` per available modality.
CaseBundle read_case(const std::filesystem::path& case_dir, const std::string& case_id);
void write_case(const CaseBundle& bundle, const std::filesystem::path& case_dir);

}  // namespace lesionkit::volgrid
