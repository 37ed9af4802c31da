#include "lesionkit/augment.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "lesionkit/error.hpp"
#include "lesionkit/util.hpp"

namespace lesionkit::augment {

using volgrid::Mat3;
using volgrid::Vec3;

ChannelSet ChannelSet::from_code(ChannelCode code) {
  switch (code) {
    case ChannelCode::DAK: return {code, {Modality::DWI, Modality::ADC, Modality::KTRANS}};
    case ChannelCode::DAT: return {code, {Modality::DWI, Modality::ADC, Modality::T2}};
    case ChannelCode::AKT: return {code, {Modality::ADC, Modality::KTRANS, Modality::T2}};
    case ChannelCode::DKT: return {code, {Modality::DWI, Modality::KTRANS, Modality::T2}};
  }
  fail(ErrorCode::InvalidArgument, "unknown channel code");
}

ChannelSet ChannelSet::parse(const std::string& name) {
  for (ChannelCode c : kAllChannelCodes) {
    if (from_code(c).name() == name) return from_code(c);
  }
  fail(ErrorCode::InvalidArgument, "unknown channel set '" + name + "'");
}

std::string ChannelSet::name() const {
  switch (code) {
    case ChannelCode::DAK: return "DAK";
    case ChannelCode::DAT: return "DAT";
    case ChannelCode::AKT: return "AKT";
    case ChannelCode::DKT: return "DKT";
  }
  return "?";
}

namespace {

constexpr double kPi = 3.14159265358979323846;

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k)
      for (int col = 0; col < 3; ++col) c[3 * r + col] += a[3 * r + k] * b[3 * k + col];
  return c;
}

// cos/sin with exact values on multiples of 90 degrees
std::pair<double, double> cos_sin_deg(double deg) {
  double d = std::fmod(deg, 360.0);
  if (d < 0) d += 360.0;
  if (d == 0.0) return {1.0, 0.0};
  if (d == 90.0) return {0.0, 1.0};
  if (d == 180.0) return {-1.0, 0.0};
  if (d == 270.0) return {0.0, -1.0};
  const double r = d * kPi / 180.0;
  return {std::cos(r), std::sin(r)};
}

Mat3 rot_x(double deg) {
  const auto [c, s] = cos_sin_deg(deg);
  return {1, 0, 0, 0, c, -s, 0, s, c};
}

Mat3 rot_y(double deg) {
  const auto [c, s] = cos_sin_deg(deg);
  return {c, 0, s, 0, 1, 0, -s, 0, c};
}

}  // namespace

Mat3 orientation_basis(int orientation_id) {
  switch (orientation_id) {
    case 0: return volgrid::kIdentity3;
    case 1: return {0, 0, 1, 1, 0, 0, 0, 1, 0};  // u = y, v = z, normal = x
    case 2: return rot_x(90.0);                   // u = x, v = z, normal = -y
    case 3: return rot_x(45.0);
    case 4: return rot_x(-45.0);
    case 5: return rot_y(45.0);
    case 6: return rot_y(-45.0);
    default: fail(ErrorCode::InvalidArgument, "orientation id must lie in [0, 7)");
  }
}

std::vector<ViewSpec> enumerate_views(int rotations_per_orientation, int shears) {
  if (rotations_per_orientation < 1 || shears < 1) fail(ErrorCode::InvalidArgument, "view counts must be >= 1");
  std::vector<ViewSpec> out;
  out.reserve(static_cast<std::size_t>(kNumOrientations) * rotations_per_orientation * shears * 9);
  for (int o = 0; o < kNumOrientations; ++o) {
    for (int r = 0; r < rotations_per_orientation; ++r) {
      const double angle = 360.0 * r / rotations_per_orientation;
      for (int s = 0; s < shears; ++s) {
        const double shear = shears == 1 ? 0.0 : -0.1 + 0.2 * s / (shears - 1);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) out.push_back({o, angle, shear, dx, dy, false});
        }
      }
    }
  }
  return out;
}

std::vector<ViewSpec> random_views(int per_orientation, std::uint64_t seed) {
  if (per_orientation < 1) fail(ErrorCode::InvalidArgument, "view count must be >= 1");
  Rng rng(seed);
  std::vector<ViewSpec> out;
  for (int o = 0; o < kNumOrientations; ++o) {
    for (int i = 0; i < per_orientation; ++i) {
      ViewSpec v;
      v.orientation_id = o;
      v.inplane_rotation_deg = rng.uniform(0.0, 360.0);
      v.shear = rng.uniform(-0.1, 0.1);
      v.dx = static_cast<int>(rng.below(3)) - 1;
      v.dy = static_cast<int>(rng.below(3)) - 1;
      out.push_back(v);
    }
  }
  return out;
}

namespace {

double percentile(std::vector<float>& values, double pct) {
  // linear interpolation between closest ranks
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  const double b = hi == lo ? a : *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return a + (pos - static_cast<double>(lo)) * (b - a);
}

}  // namespace

CaseWindows compute_windows(const volgrid::CaseBundle& bundle, double lo_percentile, double hi_percentile) {
  CaseWindows out;
  for (const auto& [m, vol] : bundle.channels) {
    std::vector<float> values;
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      lo[a] = vol.dims[a] / 4;
      hi[a] = std::max(lo[a] + 1, vol.dims[a] - vol.dims[a] / 4);
    }
    for (int k = lo[2]; k < hi[2]; ++k)
      for (int j = lo[1]; j < hi[1]; ++j)
        for (int i = lo[0]; i < hi[0]; ++i) values.push_back(vol.at(i, j, k));
    const double a = percentile(values, lo_percentile);
    const double b = percentile(values, hi_percentile);
    out[m] = {a, b};
  }
  return out;
}

void mirror_horizontal(std::span<float> sample) {
  if (sample.size() != static_cast<std::size_t>(kSampleFloats)) fail(ErrorCode::ShapeMismatch, "sample size");
  for (int c = 0; c < kChannels; ++c) {
    for (int row = 0; row < kPatchSize; ++row) {
      float* line = sample.data() + c * kPatchSize * kPatchSize + row * kPatchSize;
      std::reverse(line, line + kPatchSize);
    }
  }
}

SampleTensor extract_slice(const volgrid::CaseBundle& bundle, const std::optional<CaseWindows>& windows,
                           const Vec3& center_world, const ViewSpec& view, const ChannelSet& chans) {
  if (view.orientation_id < 0 || view.orientation_id >= kNumOrientations) {
    fail(ErrorCode::InvalidArgument, "orientation id out of range");
  }
  const auto [c, s] = cos_sin_deg(view.inplane_rotation_deg);
  const Mat3 rz{c, -s, 0, s, c, 0, 0, 0, 1};
  const Mat3 shear{1, view.shear, 0, 0, 1, 0, 0, 0, 1};
  const Mat3 m = matmul(orientation_basis(view.orientation_id), matmul(rz, shear));
  const Vec3 du{m[0], m[3], m[6]};
  const Vec3 dv{m[1], m[4], m[7]};

  SampleTensor out;
  out.case_id = bundle.case_id;
  out.view = view;
  out.channels = chans.code;
  for (int ch = 0; ch < kChannels; ++ch) {
    const volgrid::Volume& vol = bundle.channel(chans.modalities[ch]);
    std::optional<IntensityWindow> win;
    if (windows) {
      const auto it = windows->find(chans.modalities[ch]);
      if (it == windows->end()) fail(ErrorCode::MissingModality, "no intensity window for a channel");
      win = it->second;
    }
    for (int row = 0; row < kPatchSize; ++row) {
      const double v = row - kPatchSize / 2 + view.dy;
      for (int col = 0; col < kPatchSize; ++col) {
        const double u = col - kPatchSize / 2 + view.dx;
        const Vec3 p{center_world[0] + u * du[0] + v * dv[0], center_world[1] + u * du[1] + v * dv[1],
                     center_world[2] + u * du[2] + v * dv[2]};
        double value = volgrid::trilinear_sample(vol, p);
        if (win) {
          const double range = win->hi - win->lo;
          value = range > 1e-12 ? std::clamp((value - win->lo) / range, 0.0, 1.0) : 0.0;
        }
        out.data[ch * kPatchSize * kPatchSize + row * kPatchSize + col] = static_cast<float>(value);
      }
    }
  }
  if (view.mirror) mirror_horizontal(out.data);
  return out;
}

SampleTensor extract_slice(const volgrid::CaseBundle& bundle, const Vec3& center_world, const ViewSpec& view,
                           const ChannelSet& chans) {
  return extract_slice(bundle, compute_windows(bundle), center_world, view, chans);
}

namespace {

std::vector<volgrid::Finding> sorted_findings(std::vector<volgrid::Finding> findings) {
  std::sort(findings.begin(), findings.end(), [](const auto& a, const auto& b) {
    return std::tie(a.case_id, a.finding_id) < std::tie(b.case_id, b.finding_id);
  });
  return findings;
}

}  // namespace

SampleArchive build_archive(const std::map<std::string, volgrid::CaseBundle>& bundles,
                            const std::vector<volgrid::Finding>& findings, const std::vector<ViewSpec>& views,
                            const ChannelSet& chans, const BuildOptions& options) {
  const auto ordered = sorted_findings(findings);
  SampleArchive archive;
  archive.channels = chans;
  archive.views = views;
  archive.records.reserve(ordered.size() * views.size());
  std::uint64_t offset = 0;
  for (const auto& f : ordered) {
    for (std::size_t v = 0; v < views.size(); ++v) {
      archive.records.push_back({f.case_id, f.finding_id, static_cast<int>(v), f.label, offset});
      offset += kSampleFloats * sizeof(float);
    }
  }
  if (options.metadata_only) return archive;

  for (const auto& f : ordered) {
    if (!bundles.count(f.case_id)) fail(ErrorCode::MissingModality, "no volumes for case " + f.case_id);
  }
  archive.payload.assign(archive.records.size() * kSampleFloats, 0.0f);
  // windows per case, computed once
  std::map<std::string, CaseWindows> windows;
  for (const auto& f : ordered) {
    if (options.normalize && !windows.count(f.case_id)) windows[f.case_id] = compute_windows(bundles.at(f.case_id));
  }
  parallel_for(ordered.size(), options.jobs, [&](std::size_t fi) {
    const auto& f = ordered[fi];
    const auto& bundle = bundles.at(f.case_id);
    std::optional<CaseWindows> win;
    if (options.normalize) win = windows.at(f.case_id);
    for (std::size_t v = 0; v < views.size(); ++v) {
      SampleTensor t;
      try {
        t = extract_slice(bundle, win, f.pos_world, views[v], chans);
      } catch (const Error& e) {
        fail(e.code(), "case " + f.case_id + " finding " + std::to_string(f.finding_id) + " view " +
                           std::to_string(v) + ": " + e.what());
      }
      std::copy(t.data.begin(), t.data.end(),
                archive.payload.begin() + static_cast<std::ptrdiff_t>((fi * views.size() + v) * kSampleFloats));
    }
  });
  return archive;
}

std::size_t build_dataset(const std::map<std::string, volgrid::CaseBundle>& bundles,
                          const std::vector<volgrid::Finding>& findings, const std::vector<ViewSpec>& views,
                          const ChannelSet& chans, const std::filesystem::path& out_path, const BuildOptions& options) {
  const SampleArchive archive = build_archive(bundles, findings, views, chans, options);
  write_archive(archive, out_path);
  return archive.records.size();
}

namespace {

nlohmann::ordered_json view_to_json(const ViewSpec& v) {
  return {{"orientation_id", v.orientation_id}, {"inplane_rotation_deg", v.inplane_rotation_deg},
          {"shear", v.shear}, {"dx", v.dx}, {"dy", v.dy}, {"mirror", v.mirror}};
}

ViewSpec view_from_json(const nlohmann::json& j) {
  ViewSpec v;
  v.orientation_id = j.at("orientation_id").get<int>();
  v.inplane_rotation_deg = j.at("inplane_rotation_deg").get<double>();
  v.shear = j.at("shear").get<double>();
  v.dx = j.at("dx").get<int>();
  v.dy = j.at("dy").get<int>();
  v.mirror = j.at("mirror").get<bool>();
  return v;
}

std::filesystem::path payload_name(const std::filesystem::path& manifest_path) {
  return manifest_path.filename().string() + ".raw";
}

}  // namespace

void write_archive(const SampleArchive& archive, const std::filesystem::path& manifest_path) {
  nlohmann::ordered_json j;
  j["channel_set"] = archive.channels.name();
  j["count"] = archive.records.size();
  j["tensor_shape"] = {kPatchSize, kPatchSize, kChannels};
  j["layout"] = "channel-major";
  j["dtype"] = "f32le";
  j["payload_file"] = archive.payload.empty() ? nlohmann::ordered_json(nullptr)
                                              : nlohmann::ordered_json(payload_name(manifest_path).string());
  auto& views = j["views"] = nlohmann::ordered_json::array();
  for (const auto& v : archive.views) views.push_back(view_to_json(v));
  auto& records = j["records"] = nlohmann::ordered_json::array();
  for (const auto& r : archive.records) {
    records.push_back({{"case_id", r.case_id},
                       {"finding_id", r.finding_id},
                       {"view_index", r.view_index},
                       {"label", r.label ? nlohmann::ordered_json(*r.label) : nlohmann::ordered_json(nullptr)},
                       {"offset", r.offset}});
  }
  write_text_file(manifest_path, j.dump(1) + "\n");
  if (!archive.payload.empty()) write_f32le(manifest_path.parent_path() / payload_name(manifest_path), archive.payload);
}

SampleArchive read_archive(const std::filesystem::path& manifest_path) {
  SampleArchive archive;
  std::string payload_file;
  try {
    const auto j = nlohmann::json::parse(read_text_file(manifest_path));
    if (j.at("dtype").get<std::string>() != "f32le") fail(ErrorCode::UnsupportedDtype, "sample archive dtype");
    if (j.at("tensor_shape") != nlohmann::json{kPatchSize, kPatchSize, kChannels}) {
      fail(ErrorCode::ShapeMismatch, "sample archive tensor shape");
    }
    archive.channels = ChannelSet::parse(j.at("channel_set").get<std::string>());
    for (const auto& v : j.at("views")) archive.views.push_back(view_from_json(v));
    for (const auto& r : j.at("records")) {
      SampleRecord rec;
      rec.case_id = r.at("case_id").get<std::string>();
      rec.finding_id = r.at("finding_id").get<int>();
      rec.view_index = r.at("view_index").get<int>();
      if (!r.at("label").is_null()) rec.label = r.at("label").get<int>();
      rec.offset = r.at("offset").get<std::uint64_t>();
      archive.records.push_back(std::move(rec));
    }
    if (j.at("count").get<std::size_t>() != archive.records.size()) {
      fail(ErrorCode::LengthMismatch, "record count differs from manifest count");
    }
    if (!j.at("payload_file").is_null()) payload_file = j.at("payload_file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedHeader, manifest_path.string() + ": " + e.what());
  }
  if (!payload_file.empty()) {
    archive.payload = read_f32le(manifest_path.parent_path() / payload_file);
    if (archive.payload.size() != archive.records.size() * kSampleFloats) {
      fail(ErrorCode::LengthMismatch, "sample payload size does not match the record count");
    }
  }
  return archive;
}

}  // namespace lesionkit::augment
