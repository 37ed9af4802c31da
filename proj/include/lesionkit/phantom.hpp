#pragma once

// Synthetic mpMRI phantoms: smooth background tissue with Gaussian-blob
// lesions whose Ktrans, ADC and texture depend on the label in proportion to
// contrast_gap.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lesionkit/volgrid.hpp"

namespace lesionkit::phantom {

struct PhantomSpec {
  int n_cases = 40;
  int lesions_min = 2;
  int lesions_max = 4;
  double significant_fraction = 0.5;
  double contrast_gap = 1.0;
  double noise_sigma = 0.05;  // relative to each modality's tissue level
  std::array<int, 3> dims{48, 48, 24};
  volgrid::Vec3 spacing{1.0, 1.0, 2.0};
  std::uint64_t seed = 0;

  void validate() const;  // InvalidArgument
};

struct PhantomSet {
  std::map<std::string, volgrid::CaseBundle> bundles;
  std::vector<volgrid::Finding> findings;  // (case_id, finding_id) order
};

/// Label counts are exact: round(fraction * total findings) positives,
/// placed by a seeded permutation. Image draws never depend on the labels,
/// so contrast_gap 0 makes labels independent of the images.
PhantomSet generate(const PhantomSpec& spec, int jobs = 1);

/// Writes `<out>/cases/<case_id>/<modality>.nvol.json` and `<out>/findings.csv`.
PhantomSet generate_to_disk(const PhantomSpec& spec, const std::filesystem::path& out_dir, int jobs = 1);

}  // namespace lesionkit::phantom
