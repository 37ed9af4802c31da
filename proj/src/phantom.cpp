#include "lesionkit/phantom.hpp"

#include <cmath>
#include <numbers>

#include "lesionkit/error.hpp"
#include "lesionkit/util.hpp"

namespace lesionkit::phantom {

using volgrid::Modality;
using volgrid::Vec3;
using volgrid::Volume;

namespace {

constexpr double kMinLesionDistanceMm = 12.0;
constexpr double kBorderMm = 10.0;

struct Lesion {
  Vec3 center;
  double sigma_mm;
  double amplitude;
  double sign = 0.0;  // label, applied later through contrast_gap
};

struct Tissue {
  double level;      // background value
  double lesion;     // label-independent blob contrast
  double gap;        // extra blob contrast per unit contrast_gap for significant lesions
  double roughness;  // label-independent texture amplitude inside lesions
  double rough_gap;  // extra texture per unit contrast_gap for significant lesions
};

// Ktrans rises and ADC falls with significance; T2 carries texture only.
Tissue tissue(Modality m) {
  switch (m) {
    case Modality::DWI: return {100.0, 120.0, 0.0, 3.0, 0.0};
    case Modality::ADC: return {1.0, -0.25, -0.30, 0.02, 0.10};
    case Modality::KTRANS: return {0.1, 0.10, 0.25, 0.005, 0.03};
    case Modality::T2: return {1.0, -0.15, 0.0, 0.02, 0.15};
  }
  return {};
}

std::string case_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "Phantom-%04d", i);
  return buf;
}

std::vector<Lesion> place_lesions(int count, const PhantomSpec& spec, Rng& rng) {
  std::vector<Lesion> out;
  Vec3 extent;
  for (int a = 0; a < 3; ++a) extent[a] = (spec.dims[a] - 1) * spec.spacing[a];
  for (int i = 0; i < count; ++i) {
    Lesion l{};
    for (int attempt = 0; attempt < 200; ++attempt) {
      for (int a = 0; a < 3; ++a) {
        const double lo = std::min(kBorderMm, extent[a] / 2), hi = std::max(lo, extent[a] - kBorderMm);
        l.center[a] = rng.uniform(lo, hi);
      }
      bool clear = true;
      for (const auto& o : out) {
        double d2 = 0;
        for (int a = 0; a < 3; ++a) d2 += (o.center[a] - l.center[a]) * (o.center[a] - l.center[a]);
        clear = clear && d2 >= kMinLesionDistanceMm * kMinLesionDistanceMm;
      }
      if (clear) break;
    }
    l.sigma_mm = rng.uniform(2.0, 3.5);
    l.amplitude = rng.uniform(0.85, 1.15);
    out.push_back(l);
  }
  return out;
}

volgrid::CaseBundle render_case(const PhantomSpec& spec, const std::string& id, const std::vector<Lesion>& lesions,
                                std::uint64_t seed) {
  Rng rng(seed);
  volgrid::CaseBundle b;
  b.case_id = id;
  for (Modality m : volgrid::kAllModalities) {
    const Tissue t = tissue(m);
    Volume v(spec.dims, spec.spacing);
    // a few low-frequency waves give the background some structure
    std::array<double, 9> wave;
    for (double& w : wave) w = rng.uniform(0, 2 * std::numbers::pi);
    for (int k = 0; k < spec.dims[2]; ++k)
      for (int j = 0; j < spec.dims[1]; ++j)
        for (int i = 0; i < spec.dims[0]; ++i) {
          const Vec3 p{i * spec.spacing[0], j * spec.spacing[1], k * spec.spacing[2]};
          const double bg = std::sin(p[0] / 9.0 + wave[0]) * std::cos(p[1] / 11.0 + wave[1]) +
                            0.5 * std::sin(p[2] / 7.0 + wave[2] + p[0] / 13.0);
          double value = t.level * (1.0 + 0.08 * bg);
          const double white = rng.normal(), grain = rng.normal();
          for (const auto& l : lesions) {
            double d2 = 0;
            for (int a = 0; a < 3; ++a) d2 += (p[a] - l.center[a]) * (p[a] - l.center[a]);
            const double blob = std::exp(-d2 / (2 * l.sigma_mm * l.sigma_mm));
            if (blob < 1e-6) continue;
            const double gap = spec.contrast_gap * l.sign;
            value += l.amplitude * blob * (t.lesion + t.gap * gap);
            value += blob * (t.roughness + t.rough_gap * gap) * grain;
          }
          value += spec.noise_sigma * std::abs(t.level) * white;
          v.at(i, j, k) = static_cast<float>(std::max(0.0, value));
        }
    b.channels[m] = std::move(v);
  }
  return b;
}

}  // namespace

void PhantomSpec::validate() const {
  if (n_cases < 1) fail(ErrorCode::InvalidArgument, "n_cases must be >= 1");
  if (lesions_min < 1 || lesions_max < lesions_min) fail(ErrorCode::InvalidArgument, "need 1 <= lesions_min <= lesions_max");
  if (!(significant_fraction > 0 && significant_fraction < 1))
    fail(ErrorCode::InvalidArgument, "significant_fraction must lie in (0, 1)");
  if (!(contrast_gap >= 0)) fail(ErrorCode::InvalidArgument, "contrast_gap must be >= 0");
  if (!(noise_sigma >= 0)) fail(ErrorCode::InvalidArgument, "noise_sigma must be >= 0");
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 4) fail(ErrorCode::InvalidArgument, "phantom dims must be >= 4");
    if (!(spacing[a] > 0)) fail(ErrorCode::InvalidArgument, "phantom spacing must be positive");
  }
}

PhantomSet generate(const PhantomSpec& spec, int jobs) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<std::vector<Lesion>> lesions(spec.n_cases);
  std::vector<std::uint64_t> case_seeds(spec.n_cases);
  int total = 0;
  for (int c = 0; c < spec.n_cases; ++c) {
    const int count = spec.lesions_min + static_cast<int>(rng.below(spec.lesions_max - spec.lesions_min + 1));
    lesions[c] = place_lesions(count, spec, rng);
    case_seeds[c] = rng.next_u64();
    total += count;
  }
  std::vector<int> labels(total, 0);
  const int positives = static_cast<int>(std::lround(spec.significant_fraction * total));
  for (int i = 0; i < positives; ++i) labels[i] = 1;
  rng.shuffle(labels);

  PhantomSet set;
  int next = 0;
  for (int c = 0; c < spec.n_cases; ++c) {
    for (std::size_t i = 0; i < lesions[c].size(); ++i) {
      auto& l = lesions[c][i];
      l.sign = labels[next++];
      Vec3 pos = l.center;
      for (double& p : pos) p += rng.uniform(-1.0, 1.0);  // reader's click is slightly off-center
      set.findings.push_back({case_name(c), static_cast<int>(i) + 1, pos, l.sign > 0 ? 1 : 0});
    }
  }
  std::vector<volgrid::CaseBundle> bundles(spec.n_cases);
  parallel_for(spec.n_cases, jobs,
               [&](std::size_t c) { bundles[c] = render_case(spec, case_name(static_cast<int>(c)), lesions[c], case_seeds[c]); });
  for (auto& b : bundles) {
    const std::string id = b.case_id;
    set.bundles.emplace(id, std::move(b));
  }
  return set;
}

PhantomSet generate_to_disk(const PhantomSpec& spec, const std::filesystem::path& out_dir, int jobs) {
  auto set = generate(spec, jobs);
  for (const auto& [id, b] : set.bundles) volgrid::write_case(b, out_dir / "cases" / id);
  volgrid::write_findings_csv(set.findings, out_dir / "findings.csv");
  return set;
}

}  // namespace lesionkit::phantom
