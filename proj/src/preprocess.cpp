#include "lesionkit/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lesionkit/error.hpp"
#include "lesionkit/util.hpp"

namespace lesionkit::preprocess {

using volgrid::Vec3;
using volgrid::Volume;

bool LesionMask::contains(const Index3& ijk) const {
  for (int a = 0; a < 3; ++a) {
    if (ijk[a] < 0 || ijk[a] >= volume_dims[a]) return false;
  }
  return std::binary_search(voxels.begin(), voxels.end(), ravel(ijk));
}

Index3 LesionMask::unravel(std::int64_t linear) const {
  const std::int64_t nx = volume_dims[0], ny = volume_dims[1];
  return {static_cast<int>(linear % nx), static_cast<int>((linear / nx) % ny), static_cast<int>(linear / (nx * ny))};
}

std::int64_t LesionMask::ravel(const Index3& ijk) const {
  return ijk[0] + static_cast<std::int64_t>(volume_dims[0]) * (ijk[1] + static_cast<std::int64_t>(volume_dims[1]) * ijk[2]);
}

namespace {

Index3 nearest_voxel(const Volume& vol, const Vec3& world) {
  const Vec3 f = volgrid::world_to_index(vol, world);
  Index3 ijk{};
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(f[a]) || std::abs(f[a]) > 1e9) fail(ErrorCode::SeedOutOfBounds, "seed is not finite");
    ijk[a] = static_cast<int>(std::lround(f[a]));
  }
  return ijk;
}

}  // namespace

LesionMask region_grow(const Volume& vol, const Vec3& seed_world, double rel_threshold, double max_radius_mm) {
  if (!(rel_threshold > 0.0 && rel_threshold <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "rel_threshold must lie in (0, 1]");
  }
  const Index3 seed = nearest_voxel(vol, seed_world);
  if (!vol.contains_index(seed[0], seed[1], seed[2])) fail(ErrorCode::SeedOutOfBounds, "seed lies outside the volume");

  const double seed_value = vol.at(seed[0], seed[1], seed[2]);
  if (!(seed_value > 0.0)) fail(ErrorCode::EmptyRegion, "seed voxel is not brighter than background");
  const double threshold = rel_threshold * seed_value;
  const double r2 = max_radius_mm * max_radius_mm;

  LesionMask mask;
  mask.volume_dims = vol.dims;
  mask.seed = seed;

  std::vector<std::uint8_t> visited(vol.voxel_count(), 0);
  std::deque<Index3> queue;
  queue.push_back(seed);
  visited[vol.linear_index(seed[0], seed[1], seed[2])] = 1;
  while (!queue.empty()) {
    const Index3 cur = queue.front();
    queue.pop_front();
    mask.voxels.push_back(mask.ravel(cur));
    for (int dz = -1; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          const Index3 n{cur[0] + dx, cur[1] + dy, cur[2] + dz};
          if (!vol.contains_index(n[0], n[1], n[2])) continue;
          const std::size_t li = vol.linear_index(n[0], n[1], n[2]);
          if (visited[li]) continue;
          visited[li] = 1;
          double d2 = 0.0;
          for (int a = 0; a < 3; ++a) {
            const double d = (n[a] - seed[a]) * vol.spacing[a];
            d2 += d * d;
          }
          if (d2 > r2 || vol.data[li] < threshold) continue;
          queue.push_back(n);
        }
      }
    }
  }
  std::sort(mask.voxels.begin(), mask.voxels.end());
  return mask;
}

namespace {

// Dense binary grid over an axis-aligned box in (unbounded) index space.
struct Box {
  Index3 lo{};
  Index3 size{};
  std::vector<std::uint8_t> bits;

  std::size_t at(int x, int y, int z) const {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(size[0]) * (y + static_cast<std::size_t>(size[1]) * z);
  }
};

// Separable running max (dilate) / min (erode) with a cube of half-width r.
// Cells outside the box are background.
void cube_filter(Box& box, int r, bool dilate) {
  std::vector<std::uint8_t> line, out;
  for (int axis = 0; axis < 3; ++axis) {
    const int n = box.size[axis];
    line.resize(n);
    out.resize(n);
    const int o1 = (axis + 1) % 3, o2 = (axis + 2) % 3;
    for (int b = 0; b < box.size[o2]; ++b) {
      for (int a = 0; a < box.size[o1]; ++a) {
        Index3 p{};
        p[o1] = a;
        p[o2] = b;
        for (int t = 0; t < n; ++t) {
          p[axis] = t;
          line[t] = box.bits[box.at(p[0], p[1], p[2])];
        }
        for (int t = 0; t < n; ++t) {
          std::uint8_t v = dilate ? 0 : 1;
          for (int s = t - r; s <= t + r; ++s) {
            const std::uint8_t x = (s >= 0 && s < n) ? line[s] : 0;
            v = dilate ? std::max(v, x) : std::min(v, x);
          }
          out[t] = v;
        }
        for (int t = 0; t < n; ++t) {
          p[axis] = t;
          box.bits[box.at(p[0], p[1], p[2])] = out[t];
        }
      }
    }
  }
}

}  // namespace

LesionMask morph_close_open(const LesionMask& mask, int radius_vox) {
  if (radius_vox < 0) fail(ErrorCode::InvalidArgument, "radius must be >= 0");
  if (mask.empty()) fail(ErrorCode::EmptyRegion, "mask is empty");

  Index3 lo{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), std::numeric_limits<int>::max()};
  Index3 hi{std::numeric_limits<int>::min(), std::numeric_limits<int>::min(), std::numeric_limits<int>::min()};
  for (auto li : mask.voxels) {
    const Index3 p = mask.unravel(li);
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  const int pad = 2 * radius_vox + 1;
  Box box;
  for (int a = 0; a < 3; ++a) {
    box.lo[a] = lo[a] - pad;
    box.size[a] = hi[a] - lo[a] + 1 + 2 * pad;
  }
  box.bits.assign(static_cast<std::size_t>(box.size[0]) * box.size[1] * box.size[2], 0);
  for (auto li : mask.voxels) {
    const Index3 p = mask.unravel(li);
    box.bits[box.at(p[0] - box.lo[0], p[1] - box.lo[1], p[2] - box.lo[2])] = 1;
  }

  cube_filter(box, radius_vox, true);   // closing
  cube_filter(box, radius_vox, false);
  cube_filter(box, radius_vox, false);  // opening
  cube_filter(box, radius_vox, true);

  // keep in-volume voxels only
  for (int z = 0; z < box.size[2]; ++z)
    for (int y = 0; y < box.size[1]; ++y)
      for (int x = 0; x < box.size[0]; ++x) {
        const Index3 p{x + box.lo[0], y + box.lo[1], z + box.lo[2]};
        bool in = true;
        for (int a = 0; a < 3; ++a) in = in && p[a] >= 0 && p[a] < mask.volume_dims[a];
        if (!in) box.bits[box.at(x, y, z)] = 0;
      }

  // Pick the start voxel: the seed if it survived, otherwise the nearest survivor.
  const Index3 seed_local{mask.seed[0] - box.lo[0], mask.seed[1] - box.lo[1], mask.seed[2] - box.lo[2]};
  bool seed_in_box = true;
  for (int a = 0; a < 3; ++a) seed_in_box = seed_in_box && seed_local[a] >= 0 && seed_local[a] < box.size[a];
  Index3 start{-1, -1, -1};
  if (seed_in_box && box.bits[box.at(seed_local[0], seed_local[1], seed_local[2])]) {
    start = seed_local;
  } else {
    std::int64_t best_d2 = std::numeric_limits<std::int64_t>::max();
    std::int64_t best_linear = std::numeric_limits<std::int64_t>::max();
    for (int z = 0; z < box.size[2]; ++z)
      for (int y = 0; y < box.size[1]; ++y)
        for (int x = 0; x < box.size[0]; ++x) {
          if (!box.bits[box.at(x, y, z)]) continue;
          const std::int64_t dx = x - seed_local[0], dy = y - seed_local[1], dz = z - seed_local[2];
          const std::int64_t d2 = dx * dx + dy * dy + dz * dz;
          const std::int64_t linear = mask.ravel({x + box.lo[0], y + box.lo[1], z + box.lo[2]});
          if (d2 < best_d2 || (d2 == best_d2 && linear < best_linear)) {
            best_d2 = d2;
            best_linear = linear;
            start = {x, y, z};
          }
        }
  }
  if (start[0] < 0) fail(ErrorCode::EmptyRegion, "opening removed the whole region");

  LesionMask out;
  out.volume_dims = mask.volume_dims;
  out.seed = mask.seed;
  out.source_modality = mask.source_modality;
  std::vector<std::uint8_t> seen(box.bits.size(), 0);
  std::deque<Index3> queue{start};
  seen[box.at(start[0], start[1], start[2])] = 1;
  while (!queue.empty()) {
    const Index3 cur = queue.front();
    queue.pop_front();
    out.voxels.push_back(out.ravel({cur[0] + box.lo[0], cur[1] + box.lo[1], cur[2] + box.lo[2]}));
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const Index3 n{cur[0] + dx, cur[1] + dy, cur[2] + dz};
          if (n[0] < 0 || n[1] < 0 || n[2] < 0 || n[0] >= box.size[0] || n[1] >= box.size[1] || n[2] >= box.size[2]) {
            continue;
          }
          const std::size_t li = box.at(n[0], n[1], n[2]);
          if (!box.bits[li] || seen[li]) continue;
          seen[li] = 1;
          queue.push_back(n);
        }
  }
  std::sort(out.voxels.begin(), out.voxels.end());
  return out;
}

Vec3 mask_centroid(const Volume& grid, const LesionMask& mask) {
  if (mask.empty()) fail(ErrorCode::EmptyRegion, "centroid of an empty mask");
  Vec3 acc{0, 0, 0};
  for (auto li : mask.voxels) {
    const Index3 p = mask.unravel(li);
    const Vec3 w = volgrid::index_to_world(grid, {double(p[0]), double(p[1]), double(p[2])});
    for (int a = 0; a < 3; ++a) acc[a] += w[a];
  }
  for (double& x : acc) x /= static_cast<double>(mask.size());
  return acc;
}

LesionMask lesion_mask(const Volume& dwi, const Vec3& seed_world, const GrowParams& params) {
  try {
    return morph_close_open(region_grow(dwi, seed_world, params.rel_threshold, params.max_radius_mm),
                            params.morph_radius_vox);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptyRegion) throw;
  }
  LesionMask empty;
  empty.volume_dims = dwi.dims;
  return empty;
}

Vec3 refine_lesion_center(const Volume& dwi, const volgrid::Finding& finding, const GrowParams& params) {
  const LesionMask mask = lesion_mask(dwi, finding.pos_world, params);
  if (mask.empty()) return finding.pos_world;
  return mask_centroid(dwi, mask);
}

SplitPlan stratified_split(const std::vector<volgrid::Finding>& findings, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) fail(ErrorCode::InvalidArgument, "val_fraction must lie in (0, 1)");
  std::map<std::string, bool> positive;  // case -> has significant finding
  for (const auto& f : findings) {
    if (!f.label) fail(ErrorCode::InvalidArgument, "finding " + f.case_id + "/" + std::to_string(f.finding_id) + " is unlabeled");
    positive[f.case_id] = positive[f.case_id] || *f.label == 1;
  }
  std::array<std::vector<std::string>, 2> strata;  // [0] = no significant finding, [1] = has one
  for (const auto& [id, pos] : positive) strata[pos ? 1 : 0].push_back(id);
  for (const auto& s : strata) {
    if (s.size() < 2) fail(ErrorCode::TooFewCases, "a stratum has fewer than 2 cases");
  }

  // Largest-remainder apportionment so the total matches round(N * fraction).
  const std::size_t total_cases = strata[0].size() + strata[1].size();
  const auto total_val = static_cast<std::size_t>(std::llround(static_cast<double>(total_cases) * val_fraction));
  std::array<std::size_t, 2> take{};
  std::array<double, 2> remainder{};
  std::size_t assigned = 0;
  for (int s = 0; s < 2; ++s) {
    const double exact = static_cast<double>(strata[s].size()) * val_fraction;
    take[s] = static_cast<std::size_t>(std::floor(exact));
    remainder[s] = exact - static_cast<double>(take[s]);
    assigned += take[s];
  }
  while (assigned < total_val) {
    const int s = remainder[1] > remainder[0] ? 1 : 0;
    take[s] += 1;
    remainder[s] = -1.0;
    ++assigned;
  }

  SplitPlan plan;
  plan.seed = seed;
  Rng rng(seed);
  for (int s = 0; s < 2; ++s) {
    auto ids = strata[s];
    rng.shuffle(ids);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      (i < take[s] ? plan.val_case_ids : plan.train_case_ids).push_back(ids[i]);
    }
  }
  std::sort(plan.train_case_ids.begin(), plan.train_case_ids.end());
  std::sort(plan.val_case_ids.begin(), plan.val_case_ids.end());
  return plan;
}

void write_split(const SplitPlan& plan, const std::filesystem::path& path) {
  nlohmann::json j;
  j["seed"] = plan.seed;
  j["train_case_ids"] = plan.train_case_ids;
  j["val_case_ids"] = plan.val_case_ids;
  write_text_file(path, j.dump(2) + "\n");
}

SplitPlan read_split(const std::filesystem::path& path) {
  try {
    const auto j = nlohmann::json::parse(read_text_file(path));
    SplitPlan plan;
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.train_case_ids = j.at("train_case_ids").get<std::vector<std::string>>();
    plan.val_case_ids = j.at("val_case_ids").get<std::vector<std::string>>();
    return plan;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
}

std::vector<std::string> read_exclusion_list(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    ids.push_back(line.substr(b, e - b + 1));
  }
  return ids;
}

}  // namespace lesionkit::preprocess
