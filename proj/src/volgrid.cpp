#include "lesionkit/volgrid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lesionkit/error.hpp"
#include "lesionkit/util.hpp"

namespace lesionkit::volgrid {

using nlohmann::json;

Volume::Volume(std::array<int, 3> dims_, Vec3 spacing_, Vec3 origin_, Mat3 direction_)
    : dims(dims_), spacing(spacing_), origin(origin_), direction(direction_) {
  for (int d : dims) {
    if (d <= 0) fail(ErrorCode::MalformedHeader, "volume dims must be positive");
  }
  data.assign(voxel_count(), 0.0f);
}

void Volume::validate() const {
  for (int d : dims) {
    if (d <= 0) fail(ErrorCode::MalformedHeader, "volume dims must be positive");
  }
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) fail(ErrorCode::MalformedHeader, "spacing must be finite and > 0");
  }
  for (double o : origin) {
    if (!std::isfinite(o)) fail(ErrorCode::MalformedHeader, "origin must be finite");
  }
  // |R^T R - I|_inf < 1e-6
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += direction[3 * k + r] * direction[3 * k + c];
      if (std::abs(dot - (r == c ? 1.0 : 0.0)) >= 1e-6) {
        fail(ErrorCode::MalformedHeader, "direction matrix is not orthonormal");
      }
    }
  }
  if (data.size() != voxel_count()) {
    fail(ErrorCode::LengthMismatch, "payload holds " + std::to_string(data.size()) + " scalars, header dims need " +
                                        std::to_string(voxel_count()));
  }
  for (float v : data) {
    if (!std::isfinite(v)) fail(ErrorCode::MalformedHeader, "volume holds a non-finite scalar");
  }
}

Vec3 index_to_world(const Volume& vol, const Vec3& index) {
  Vec3 out = vol.origin;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out[r] += vol.direction[3 * r + c] * vol.spacing[c] * index[c];
  }
  return out;
}

Vec3 world_to_index(const Volume& vol, const Vec3& world) {
  const Vec3 d = {world[0] - vol.origin[0], world[1] - vol.origin[1], world[2] - vol.origin[2]};
  Vec3 out{};
  for (int c = 0; c < 3; ++c) {
    double acc = 0.0;
    for (int r = 0; r < 3; ++r) acc += vol.direction[3 * r + c] * d[r];
    out[c] = acc / vol.spacing[c];
  }
  return out;
}

bool inside_bounds(const Volume& vol, const Vec3& world) {
  const Vec3 idx = world_to_index(vol, world);
  for (int a = 0; a < 3; ++a) {
    if (idx[a] < -0.5 || idx[a] > vol.dims[a] - 0.5) return false;
  }
  return true;
}

namespace {

// Index coordinates within this distance of an integer are treated as exact
// grid hits, so sampling at voxel centers reproduces stored values bitwise.
constexpr double kSnap = 1e-9;

double snap(double f) {
  const double r = std::round(f);
  return std::abs(f - r) < kSnap ? r : f;
}

}  // namespace

double trilinear_sample(const Volume& vol, const Vec3& world) {
  const Vec3 idx = world_to_index(vol, world);
  int base[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    const double f = snap(idx[a]);
    if (!std::isfinite(f)) return 0.0;
    const double fl = std::floor(f);
    if (fl < -2.0 || fl > vol.dims[a] + 1.0) return 0.0;
    base[a] = static_cast<int>(fl);
    frac[a] = f - fl;
  }
  double acc = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    double w = 1.0;
    int ijk[3];
    for (int a = 0; a < 3; ++a) {
      const int bit = (corner >> a) & 1;
      w *= bit ? frac[a] : 1.0 - frac[a];
      ijk[a] = base[a] + bit;
    }
    if (w == 0.0 || !vol.contains_index(ijk[0], ijk[1], ijk[2])) continue;
    acc += w * static_cast<double>(vol.at(ijk[0], ijk[1], ijk[2]));
  }
  return acc;
}

Volume resample_isotropic(const Volume& vol, double target_spacing, std::size_t voxel_budget) {
  vol.validate();
  if (!(target_spacing > 0.0)) fail(ErrorCode::InvalidArgument, "target spacing must be > 0");
  std::array<int, 3> dims{};
  std::size_t total = 1;
  for (int a = 0; a < 3; ++a) {
    const double extent = vol.dims[a] * vol.spacing[a];
    const double n = std::ceil(extent / target_spacing - 1e-9);
    if (n > static_cast<double>(voxel_budget)) fail(ErrorCode::OversizeGrid, "resampled grid exceeds voxel budget");
    dims[a] = std::max(1, static_cast<int>(n));
    total *= static_cast<std::size_t>(dims[a]);
    if (total > voxel_budget) fail(ErrorCode::OversizeGrid, "resampled grid exceeds voxel budget");
  }
  Volume out(dims, {target_spacing, target_spacing, target_spacing}, vol.origin, vol.direction);
  return resample_to_reference(vol, out);
}

Volume resample_to_reference(const Volume& vol, const Volume& ref) {
  Volume out(ref.dims, ref.spacing, ref.origin, ref.direction);
  for (int k = 0; k < ref.dims[2]; ++k) {
    for (int j = 0; j < ref.dims[1]; ++j) {
      for (int i = 0; i < ref.dims[0]; ++i) {
        const Vec3 w = index_to_world(ref, {double(i), double(j), double(k)});
        out.at(i, j, k) = static_cast<float>(trilinear_sample(vol, w));
      }
    }
  }
  return out;
}

namespace {

std::filesystem::path payload_path_for(const std::filesystem::path& header_path) {
  std::string name = header_path.filename().string();
  const std::string suffix = ".json";
  if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
    name.resize(name.size() - suffix.size());
  }
  return name + ".raw";
}

template <std::size_t N>
std::array<double, N> read_doubles(const json& header, const char* key) {
  const auto it = header.find(key);
  if (it == header.end() || !it->is_array() || it->size() != N) {
    fail(ErrorCode::MalformedHeader, std::string("key '") + key + "' must be an array of " + std::to_string(N));
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!(*it)[i].is_number()) fail(ErrorCode::MalformedHeader, std::string("key '") + key + "' must be numeric");
    out[i] = (*it)[i].get<double>();
  }
  return out;
}

}  // namespace

void write_volume(const Volume& vol, const std::filesystem::path& header_path) {
  vol.validate();
  const auto payload = payload_path_for(header_path);
  json header;
  header["dims"] = vol.dims;
  header["spacing_mm"] = vol.spacing;
  header["origin_mm"] = vol.origin;
  header["direction"] = vol.direction;
  header["dtype"] = "f32le";
  header["data_file"] = payload.string();
  write_text_file(header_path, header.dump(2) + "\n");
  write_f32le(header_path.parent_path() / payload, vol.data);
}

Volume read_volume(const std::filesystem::path& header_path) {
  json header;
  try {
    header = json::parse(read_text_file(header_path));
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedHeader, header_path.string() + ": " + e.what());
  }
  if (!header.is_object()) fail(ErrorCode::MalformedHeader, "header must be a JSON object");

  const auto dtype = header.find("dtype");
  if (dtype == header.end() || !dtype->is_string()) fail(ErrorCode::MalformedHeader, "missing dtype");
  if (dtype->get<std::string>() != "f32le") fail(ErrorCode::UnsupportedDtype, dtype->get<std::string>());

  Volume vol;
  const auto dims = read_doubles<3>(header, "dims");
  for (int a = 0; a < 3; ++a) {
    if (dims[a] != std::floor(dims[a]) || dims[a] < 1 || dims[a] > 1e9) {
      fail(ErrorCode::MalformedHeader, "dims must be positive integers");
    }
    vol.dims[a] = static_cast<int>(dims[a]);
  }
  vol.spacing = read_doubles<3>(header, "spacing_mm");
  vol.origin = read_doubles<3>(header, "origin_mm");
  vol.direction = read_doubles<9>(header, "direction");

  const auto data_file = header.find("data_file");
  if (data_file == header.end() || !data_file->is_string()) fail(ErrorCode::MalformedHeader, "missing data_file");
  vol.data = read_f32le(header_path.parent_path() / data_file->get<std::string>());
  vol.validate();
  return vol;
}

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::DWI: return "dwi";
    case Modality::ADC: return "adc";
    case Modality::KTRANS: return "ktrans";
    case Modality::T2: return "t2";
  }
  return "?";
}

Modality parse_modality(const std::string& name) {
  for (Modality m : kAllModalities) {
    if (name == modality_name(m)) return m;
  }
  fail(ErrorCode::InvalidArgument, "unknown modality '" + name + "'");
}

const Volume& CaseBundle::channel(Modality m) const {
  const auto it = channels.find(m);
  if (it == channels.end()) {
    fail(ErrorCode::MissingModality, "case " + case_id + " has no " + modality_name(m) + " volume");
  }
  return it->second;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_number(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::MalformedHeader, "bad " + what + " '" + s + "'");
  }
}

}  // namespace

std::vector<Finding> read_findings_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::MalformedHeader, path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "case_id,finding_id,x_mm,y_mm,z_mm,label") {
    fail(ErrorCode::MalformedHeader, "unexpected findings header '" + line + "'");
  }
  std::vector<Finding> findings;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) fail(ErrorCode::MalformedHeader, "findings row needs 6 fields: '" + line + "'");
    Finding finding;
    finding.case_id = f[0];
    finding.finding_id = static_cast<int>(parse_number(f[1], "finding_id"));
    for (int a = 0; a < 3; ++a) finding.pos_world[a] = parse_number(f[2 + a], "coordinate");
    if (!f[5].empty()) {
      const double label = parse_number(f[5], "label");
      if (label != 0.0 && label != 1.0) fail(ErrorCode::MalformedHeader, "label must be 0 or 1");
      finding.label = static_cast<int>(label);
    }
    findings.push_back(std::move(finding));
  }
  return findings;
}

void write_findings_csv(const std::vector<Finding>& findings, const std::filesystem::path& path) {
  std::string out = "case_id,finding_id,x_mm,y_mm,z_mm,label\n";
  for (const auto& f : findings) {
    out += f.case_id + "," + std::to_string(f.finding_id);
    for (double c : f.pos_world) out += "," + format_double(c);
    out += ",";
    if (f.label) out += std::to_string(*f.label);
    out += "\n";
  }
  write_text_file(path, out);
}

CaseBundle read_case(const std::filesystem::path& case_dir, const std::string& case_id) {
  CaseBundle bundle;
  bundle.case_id = case_id;
  for (Modality m : kAllModalities) {
    const auto header = case_dir / (std::string(modality_name(m)) + ".nvol.json");
    if (std::filesystem::exists(header)) bundle.channels.emplace(m, read_volume(header));
  }
  return bundle;
}

void write_case(const CaseBundle& bundle, const std::filesystem::path& case_dir) {
  for (const auto& [m, vol] : bundle.channels) {
    write_volume(vol, case_dir / (std::string(modality_name(m)) + ".nvol.json"));
  }
}

}  // namespace lesionkit::volgrid
