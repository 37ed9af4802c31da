#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lesionkit/volgrid.hpp"

namespace lesionkit::preprocess {

using Index3 = std::array<int, 3>;

/// Voxel set on a volume grid. `voxels` holds linear (x-fastest) indices in
/// ascending order.
struct LesionMask {
  std::array<int, 3> volume_dims{0, 0, 0};
  std::vector<std::int64_t> voxels;
  Index3 seed{0, 0, 0};
  volgrid::Modality source_modality = volgrid::Modality::DWI;

  bool empty() const { return voxels.empty(); }
  std::size_t size() const { return voxels.size(); }
  bool contains(const Index3& ijk) const;
  Index3 unravel(std::int64_t linear) const;
  std::int64_t ravel(const Index3& ijk) const;
};

struct GrowParams {
  double rel_threshold = 0.5;
  double max_radius_mm = 15.0;
  int morph_radius_vox = 1;
};

/// 26-connected flood fill from the voxel nearest `seed_world`, admitting voxels
/// with value >= rel_threshold * seed value within max_radius_mm of the seed.
/// A seed whose own value is not positive fails the criterion (EmptyRegion).
LesionMask region_grow(const volgrid::Volume& vol, const volgrid::Vec3& seed_world, double rel_threshold = 0.5,
                       double max_radius_mm = 15.0);

/// Binary closing then opening with a (2r+1)^3 cube, keeping the 26-connected
/// component that contains the seed (or the one nearest to it).
LesionMask morph_close_open(const LesionMask& mask, int radius_vox = 1);

/// Unweighted mean of the voxel world centers.
volgrid::Vec3 mask_centroid(const volgrid::Volume& grid, const LesionMask& mask);

/// Total: falls back to the finding's position when any stage yields EmptyRegion.
volgrid::Vec3 refine_lesion_center(const volgrid::Volume& dwi, const volgrid::Finding& finding,
                                   const GrowParams& params = {});

/// The refined mask used by `refine_lesion_center`, or an empty mask on fallback.
LesionMask lesion_mask(const volgrid::Volume& dwi, const volgrid::Vec3& seed_world, const GrowParams& params = {});

struct SplitPlan {
  std::uint64_t seed = 0;
  std::vector<std::string> train_case_ids;  // sorted
  std::vector<std::string> val_case_ids;    // sorted

  bool operator==(const SplitPlan&) const = default;
};

/// Case-level split stratified on "case has a significant finding".
SplitPlan stratified_split(const std::vector<volgrid::Finding>& findings, double val_fraction, std::uint64_t seed);

void write_split(const SplitPlan& plan, const std::filesystem::path& path);
SplitPlan read_split(const std::filesystem::path& path);

/// One case id per line; blank lines and surrounding whitespace ignored.
std::vector<std::string> read_exclusion_list(const std::filesystem::path& path);

}  // namespace lesionkit::preprocess
