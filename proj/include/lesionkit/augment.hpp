#pragma once

// Multi-view slicing augmentation: 2D 32x32 three-channel patches cut through
// a lesion center at several 3D orientations, in-plane rotations, shears and
// +-1 pixel translations.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lesionkit/volgrid.hpp"

namespace lesionkit::augment {

using volgrid::Modality;

enum class ChannelCode { DAK, DAT, AKT, DKT };

struct ChannelSet {
  ChannelCode code = ChannelCode::DAK;
  std::array<Modality, 3> modalities{Modality::DWI, Modality::ADC, Modality::KTRANS};

  static ChannelSet from_code(ChannelCode code);
  static ChannelSet parse(const std::string& name);  // "DAK", "DAT", "AKT", "DKT"
  std::string name() const;
};

inline constexpr std::array<ChannelCode, 4> kAllChannelCodes = {ChannelCode::DAK, ChannelCode::DAT, ChannelCode::AKT,
                                                                ChannelCode::DKT};

inline constexpr int kPatchSize = 32;
inline constexpr int kChannels = 3;
inline constexpr int kSampleFloats = kChannels * kPatchSize * kPatchSize;
inline constexpr int kNumOrientations = 7;

struct ViewSpec {
  int orientation_id = 0;
  double inplane_rotation_deg = 0.0;
  double shear = 0.0;
  int dx = 0;
  int dy = 0;
  bool mirror = false;

  bool operator==(const ViewSpec&) const = default;
};

/// Slicing-plane basis (columns: in-plane u, in-plane v, normal).
/// 0 axial, 1 sagittal, 2 coronal, 3/4 axial tilted +-45 deg about world x,
/// 5/6 axial tilted +-45 deg about world y.
volgrid::Mat3 orientation_basis(int orientation_id);

/// Full grid: orientations x rotations (evenly spaced from 0) x shears (evenly
/// spaced over [-0.1, 0.1], or {0} for one) x 9 translations. Mirror is off.
std::vector<ViewSpec> enumerate_views(int rotations_per_orientation = 4, int shears = 3);

/// Seeded random views: per orientation, `per_orientation` draws with a
/// uniform angle, uniform shear in [-0.1, 0.1] and random +-1 translations.
std::vector<ViewSpec> random_views(int per_orientation, std::uint64_t seed);

struct IntensityWindow {
  double lo = 0.0;
  double hi = 1.0;
};
using CaseWindows = std::map<Modality, IntensityWindow>;

/// Robust per-modality window: the 1st and 99th percentiles of the voxels in
/// the central box (middle half of each axis) of each volume.
CaseWindows compute_windows(const volgrid::CaseBundle& bundle, double lo_percentile = 1.0,
                            double hi_percentile = 99.0);

struct SampleTensor {
  /// Channel-major: data[c * 1024 + row * 32 + col].
  std::vector<float> data = std::vector<float>(kSampleFloats, 0.0f);
  std::optional<int> label;
  std::string case_id;
  int finding_id = 0;
  int view_index = 0;
  ViewSpec view;
  ChannelCode channels = ChannelCode::DAK;
};

void mirror_horizontal(std::span<float> sample);

/// Samples the three channels on the view's plane around `center_world`.
/// With `windows` absent the raw interpolated intensities are returned.
SampleTensor extract_slice(const volgrid::CaseBundle& bundle, const std::optional<CaseWindows>& windows,
                           const volgrid::Vec3& center_world, const ViewSpec& view, const ChannelSet& chans);

/// Convenience form that derives the case windows first.
SampleTensor extract_slice(const volgrid::CaseBundle& bundle, const volgrid::Vec3& center_world,
                           const ViewSpec& view, const ChannelSet& chans);

struct SampleRecord {
  std::string case_id;
  int finding_id = 0;
  int view_index = 0;
  std::optional<int> label;
  std::uint64_t offset = 0;  // bytes into the payload
};

/// In-memory sample archive. `payload` is empty for metadata-only archives.
struct SampleArchive {
  ChannelSet channels;
  std::vector<ViewSpec> views;
  std::vector<SampleRecord> records;
  std::vector<float> payload;

  std::span<const float> sample(std::size_t i) const {
    return std::span<const float>(payload).subspan(i * kSampleFloats, kSampleFloats);
  }
};

struct BuildOptions {
  int jobs = 1;
  bool metadata_only = false;
  bool normalize = true;
};

/// Extracts every (finding, view) sample in (case_id, finding_id, view) order
/// and writes the archive to `out_path` (manifest) plus `<out_path>.raw`.
/// Returns the number of samples.
std::size_t build_dataset(const std::map<std::string, volgrid::CaseBundle>& bundles,
                          const std::vector<volgrid::Finding>& findings, const std::vector<ViewSpec>& views,
                          const ChannelSet& chans, const std::filesystem::path& out_path,
                          const BuildOptions& options = {});

SampleArchive build_archive(const std::map<std::string, volgrid::CaseBundle>& bundles,
                            const std::vector<volgrid::Finding>& findings, const std::vector<ViewSpec>& views,
                            const ChannelSet& chans, const BuildOptions& options = {});

void write_archive(const SampleArchive& archive, const std::filesystem::path& manifest_path);
SampleArchive read_archive(const std::filesystem::path& manifest_path);

}  // namespace lesionkit::augment
