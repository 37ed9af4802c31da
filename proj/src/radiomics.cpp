#include "lesionkit/radiomics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>
#include <tuple>

#include "lesionkit/error.hpp"
#include "lesionkit/util.hpp"

namespace lesionkit::radiomics {

using volgrid::Modality;
using volgrid::Volume;

std::vector<int> quantize(std::span<const double> values, int ng) {
  if (ng < 2) fail(ErrorCode::InvalidArgument, "quantize needs at least 2 gray levels");
  std::vector<int> out(values.size(), 0);
  if (values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, range = *hi_it - *lo_it + 1e-12;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double q = std::floor(ng * (values[i] - lo) / range);
    out[i] = std::clamp(static_cast<int>(q), 0, ng - 1);
  }
  return out;
}

const std::array<std::array<int, 3>, kNumDirections>& glcm_directions() {
  static const auto dirs = [] {
    std::array<std::array<int, 3>, kNumDirections> d{};
    int n = 0;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const bool leading = dz > 0 || (dz == 0 && dy > 0) || (dz == 0 && dy == 0 && dx > 0);
          if (leading) d[n++] = {dx, dy, dz};
        }
    return d;
  }();
  return dirs;
}

Glcm glcm_3d(const std::array<int, 3>& dims, std::span<const int> levels, int ng) {
  const std::size_t nx = dims[0], ny = dims[1], nz = dims[2];
  if (levels.size() != nx * ny * nz) fail(ErrorCode::ShapeMismatch, "level grid does not match dims");
  Glcm g;
  g.ng = ng;
  std::vector<double> counts(static_cast<std::size_t>(ng) * ng, 0.0);
  double total = 0.0;
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        const int a = levels[x + nx * (y + ny * z)];
        if (a < 0) continue;
        if (a >= ng) fail(ErrorCode::InvalidArgument, "gray level outside [0, ng)");
        for (const auto& d : glcm_directions()) {
          const long qx = static_cast<long>(x) + d[0], qy = static_cast<long>(y) + d[1],
                     qz = static_cast<long>(z) + d[2];
          if (qx < 0 || qy < 0 || qz < 0 || qx >= static_cast<long>(nx) || qy >= static_cast<long>(ny) ||
              qz >= static_cast<long>(nz))
            continue;
          const int b = levels[qx + nx * (qy + ny * qz)];
          if (b < 0) continue;
          if (b >= ng) fail(ErrorCode::InvalidArgument, "gray level outside [0, ng)");
          counts[static_cast<std::size_t>(a) * ng + b] += 1.0;
          counts[static_cast<std::size_t>(b) * ng + a] += 1.0;
          total += 2.0;
        }
      }
  if (total == 0.0) fail(ErrorCode::NoValidPairs, "region has no neighbouring voxel pairs");
  g.pairs = total;
  g.p.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) g.p[i] = counts[i] / total;
  return g;
}

const std::array<const char*, kNumHaralick>& haralick_names() {
  static const std::array<const char*, kNumHaralick> names = {
      "energy",       "contrast",     "correlation", "variance",           "homogeneity",
      "sum_average",  "sum_variance", "sum_entropy", "entropy",            "difference_variance",
      "difference_entropy", "imc1",   "imc2",        "autocorrelation",    "dissimilarity"};
  return names;
}

std::array<double, kNumHaralick> haralick(const Glcm& glcm) {
  const int ng = glcm.ng;
  if (ng < 1 || glcm.p.size() != static_cast<std::size_t>(ng) * ng) {
    fail(ErrorCode::ShapeMismatch, "GLCM storage does not match its level count");
  }
  auto plog = [](double v) { return v > 0.0 ? v * std::log2(v) : 0.0; };

  std::vector<double> px(ng, 0.0), py(ng, 0.0), psum(2 * ng - 1, 0.0), pdiff(ng, 0.0);
  double energy = 0, contrast = 0, homogeneity = 0, entropy = 0, autocorr = 0, dissim = 0;
  for (int i = 0; i < ng; ++i) {
    for (int j = 0; j < ng; ++j) {
      const double p = glcm(i, j);
      const double gi = i + 1, gj = j + 1;
      px[i] += p;
      py[j] += p;
      psum[i + j] += p;
      pdiff[std::abs(i - j)] += p;
      energy += p * p;
      contrast += (gi - gj) * (gi - gj) * p;
      homogeneity += p / (1.0 + (gi - gj) * (gi - gj));
      entropy -= plog(p);
      autocorr += gi * gj * p;
      dissim += std::abs(gi - gj) * p;
    }
  }
  double mx = 0, my = 0;
  for (int i = 0; i < ng; ++i) {
    mx += (i + 1) * px[i];
    my += (i + 1) * py[i];
  }
  double vx = 0, vy = 0, hx = 0, hy = 0;
  for (int i = 0; i < ng; ++i) {
    vx += (i + 1 - mx) * (i + 1 - mx) * px[i];
    vy += (i + 1 - my) * (i + 1 - my) * py[i];
    hx -= plog(px[i]);
    hy -= plog(py[i]);
  }
  const double sx = std::sqrt(vx), sy = std::sqrt(vy);
  const double correlation = (sx > 0 && sy > 0) ? (autocorr - mx * my) / (sx * sy) : 0.0;

  double sum_avg = 0, sum_ent = 0;
  for (int k = 0; k < 2 * ng - 1; ++k) {
    sum_avg += (k + 2) * psum[k];
    sum_ent -= plog(psum[k]);
  }
  double sum_var = 0;
  for (int k = 0; k < 2 * ng - 1; ++k) sum_var += (k + 2 - sum_avg) * (k + 2 - sum_avg) * psum[k];

  double diff_avg = 0, diff_ent = 0;
  for (int k = 0; k < ng; ++k) {
    diff_avg += k * pdiff[k];
    diff_ent -= plog(pdiff[k]);
  }
  double diff_var = 0;
  for (int k = 0; k < ng; ++k) diff_var += (k - diff_avg) * (k - diff_avg) * pdiff[k];

  double hxy1 = 0, hxy2 = 0;
  for (int i = 0; i < ng; ++i) {
    for (int j = 0; j < ng; ++j) {
      const double q = px[i] * py[j];
      if (q <= 0) continue;
      hxy1 -= glcm(i, j) * std::log2(q);
      hxy2 -= q * std::log2(q);
    }
  }
  const double hmax = std::max(hx, hy);
  const double imc1 = hmax > 0 ? (entropy - hxy1) / hmax : 0.0;
  const double imc2 = std::sqrt(std::max(0.0, 1.0 - std::exp(-2.0 * (hxy2 - entropy))));

  return {energy,  contrast, correlation, vx,       homogeneity, sum_avg,  sum_var, sum_ent,
          entropy, diff_var, diff_ent,    imc1,     imc2,        autocorr, dissim};
}

const std::array<const char*, kNumFirstOrder>& first_order_names() {
  static const std::array<const char*, kNumFirstOrder> names = {"mean", "std", "min", "max", "skewness",
                                                                "kurtosis"};
  return names;
}

std::array<double, kNumFirstOrder> first_order(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::EmptyRegion, "first-order statistics of an empty region");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  // Exactly constant input: summation noise would otherwise leak into skew/kurtosis.
  if (*lo == *hi) return {*lo, 0.0, *lo, *hi, 0.0, 0.0};
  const double n = static_cast<double>(values.size());
  double sum = 0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double v : values) {
    const double d = v - mean, d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  const double skew = m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
  const double kurt = m2 > 0 ? m4 / (m2 * m2) : 0.0;
  return {mean, std::sqrt(m2), *lo, *hi, skew, kurt};
}

const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (Modality m : volgrid::kAllModalities) {
      const std::string prefix = std::string(volgrid::modality_name(m)) + "_";
      for (const char* f : first_order_names()) n.push_back(prefix + f);
      for (const char* f : haralick_names()) n.push_back(prefix + f);
    }
    n.push_back("lesion_volume_mm3");
    n.push_back("surface_to_volume");
    n.push_back("adc_t2_ratio");
    return n;
  }();
  return names;
}

std::string manifest_json() {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["gray_levels"] = kDefaultLevels;
  j["gray_level_origin"] = 1;
  j["glcm_directions"] = kNumDirections;
  j["glcm_distance"] = 1;
  j["log_base"] = 2;
  j["fallback_radius_mm"] = kFallbackRadiusMm;
  auto& feats = j["features"] = nlohmann::ordered_json::array();
  const auto& names = feature_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    nlohmann::ordered_json f;
    f["index"] = i;
    f["name"] = names[i];
    if (i < 84) {
      f["modality"] = volgrid::modality_name(volgrid::kAllModalities[i / 21]);
      f["group"] = (i % 21) < kNumFirstOrder ? "first_order" : "glcm";
    } else {
      f["modality"] = nullptr;
      f["group"] = "global";
    }
    feats.push_back(std::move(f));
  }
  return j.dump(2) + "\n";
}

preprocess::LesionMask ball_mask(const Volume& grid, const volgrid::Vec3& center, double radius_mm) {
  preprocess::LesionMask mask;
  mask.volume_dims = grid.dims;
  const volgrid::Vec3 c = volgrid::world_to_index(grid, center);
  mask.seed = {static_cast<int>(std::lround(c[0])), static_cast<int>(std::lround(c[1])),
               static_cast<int>(std::lround(c[2]))};
  int lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    const double reach = radius_mm / grid.spacing[a] + 1.0;
    lo[a] = std::max(0, static_cast<int>(std::floor(c[a] - reach)));
    hi[a] = std::min(grid.dims[a] - 1, static_cast<int>(std::ceil(c[a] + reach)));
  }
  const double r2 = radius_mm * radius_mm;
  for (int k = lo[2]; k <= hi[2]; ++k)
    for (int j = lo[1]; j <= hi[1]; ++j)
      for (int i = lo[0]; i <= hi[0]; ++i) {
        const auto w = volgrid::index_to_world(grid, {double(i), double(j), double(k)});
        const double d2 = (w[0] - center[0]) * (w[0] - center[0]) + (w[1] - center[1]) * (w[1] - center[1]) +
                          (w[2] - center[2]) * (w[2] - center[2]);
        if (d2 <= r2) mask.voxels.push_back(static_cast<std::int64_t>(grid.linear_index(i, j, k)));
      }
  return mask;
}

namespace {

bool same_grid(const Volume& a, const Volume& b) {
  return a.dims == b.dims && a.spacing == b.spacing && a.origin == b.origin && a.direction == b.direction;
}

std::array<double, kNumHaralick> constant_haralick(int ng) {
  Glcm g;
  g.ng = ng;
  g.p.assign(static_cast<std::size_t>(ng) * ng, 0.0);
  g.p[0] = 1.0;
  return haralick(g);
}

}  // namespace

std::vector<double> extract_features(const volgrid::CaseBundle& bundle, const volgrid::Finding& finding,
                                     const preprocess::LesionMask& mask_in, int ng) {
  preprocess::LesionMask mask = mask_in;
  const Volume& ref = bundle.channel(mask.empty() ? Modality::DWI : mask.source_modality);
  if (mask.empty()) {
    mask = ball_mask(ref, finding.pos_world);
    mask.source_modality = Modality::DWI;
    if (mask.empty()) fail(ErrorCode::EmptyRegion, "fallback ball around the finding holds no voxels");
  }
  if (mask.volume_dims != ref.dims) fail(ErrorCode::ShapeMismatch, "mask grid differs from its source volume");
  std::sort(mask.voxels.begin(), mask.voxels.end());
  mask.voxels.erase(std::unique(mask.voxels.begin(), mask.voxels.end()), mask.voxels.end());

  // Bounding box of the region, used for the level grid.
  std::array<int, 3> lo{ref.dims}, hi{-1, -1, -1};
  std::vector<std::array<int, 3>> ijk;
  ijk.reserve(mask.voxels.size());
  for (auto v : mask.voxels) {
    if (v < 0 || static_cast<std::size_t>(v) >= ref.voxel_count()) fail(ErrorCode::ShapeMismatch, "mask voxel off grid");
    const auto p = mask.unravel(v);
    ijk.push_back(p);
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  const std::array<int, 3> box{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
  auto box_index = [&](const std::array<int, 3>& p) {
    return static_cast<std::size_t>(p[0] - lo[0]) +
           static_cast<std::size_t>(box[0]) *
               (static_cast<std::size_t>(p[1] - lo[1]) + static_cast<std::size_t>(box[1]) * (p[2] - lo[2]));
  };

  std::vector<double> out;
  out.reserve(kNumFeatures);
  std::map<Modality, double> means;
  for (Modality m : volgrid::kAllModalities) {
    const Volume& src = bundle.channel(m);
    Volume resampled;
    const Volume* vol = &src;
    if (!same_grid(src, ref)) {
      resampled = volgrid::resample_to_reference(src, ref);
      vol = &resampled;
    }
    std::vector<double> values(mask.voxels.size());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = vol->data[static_cast<std::size_t>(mask.voxels[i])];

    const auto fo = first_order(values);
    means[m] = fo[0];
    out.insert(out.end(), fo.begin(), fo.end());

    const auto levels = quantize(values, ng);
    std::vector<int> grid(static_cast<std::size_t>(box[0]) * box[1] * box[2], -1);
    for (std::size_t i = 0; i < ijk.size(); ++i) grid[box_index(ijk[i])] = levels[i];
    std::array<double, kNumHaralick> h;
    try {
      h = haralick(glcm_3d(box, grid, ng));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoValidPairs) throw;
      h = constant_haralick(ng);
    }
    out.insert(out.end(), h.begin(), h.end());
  }

  const double sx = ref.spacing[0], sy = ref.spacing[1], sz = ref.spacing[2];
  const double volume = static_cast<double>(mask.voxels.size()) * sx * sy * sz;
  const double face_area[3] = {sy * sz, sx * sz, sx * sy};
  double area = 0.0;
  for (const auto& p : ijk) {
    for (int a = 0; a < 3; ++a) {
      for (int s : {-1, 1}) {
        auto q = p;
        q[a] += s;
        const bool inside = q[0] >= 0 && q[1] >= 0 && q[2] >= 0 && q[0] < ref.dims[0] && q[1] < ref.dims[1] &&
                            q[2] < ref.dims[2] && mask.contains(q);
        if (!inside) area += face_area[a];
      }
    }
  }
  out.push_back(volume);
  out.push_back(area / volume);
  const double t2 = means[Modality::T2];
  out.push_back(t2 != 0.0 ? means[Modality::ADC] / t2 : 0.0);
  return out;
}

std::vector<FeatureRow> extract_all(const std::map<std::string, volgrid::CaseBundle>& bundles,
                                    const std::vector<volgrid::Finding>& findings, const preprocess::GrowParams& grow,
                                    int jobs, int ng) {
  auto ordered = findings;
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    return std::tie(a.case_id, a.finding_id) < std::tie(b.case_id, b.finding_id);
  });
  for (const auto& f : ordered) {
    if (!bundles.count(f.case_id)) fail(ErrorCode::MissingModality, "no volumes for case " + f.case_id);
  }
  std::vector<FeatureRow> rows(ordered.size());
  parallel_for(ordered.size(), jobs, [&](std::size_t i) {
    const auto& f = ordered[i];
    const auto& bundle = bundles.at(f.case_id);
    try {
      const auto mask = preprocess::lesion_mask(bundle.channel(Modality::DWI), f.pos_world, grow);
      rows[i] = {f.case_id, f.finding_id, f.label, extract_features(bundle, f, mask, ng)};
    } catch (const Error& e) {
      fail(e.code(), "case " + f.case_id + " finding " + std::to_string(f.finding_id) + ": " + e.what());
    }
  });
  return rows;
}

void write_feature_csv(const std::vector<FeatureRow>& rows, const std::vector<std::string>& names,
                       const std::filesystem::path& path) {
  std::string out = "case_id,finding_id,label";
  for (const auto& n : names) out += "," + n;
  out += "\n";
  for (const auto& r : rows) {
    if (r.values.size() != names.size()) fail(ErrorCode::FeatureCountMismatch, "row width differs from header");
    out += r.case_id + "," + std::to_string(r.finding_id) + ",";
    if (r.label) out += std::to_string(*r.label);
    for (double v : r.values) out += "," + format_double(v);
    out += "\n";
  }
  write_text_file(path, out);
}

std::vector<FeatureRow> read_feature_csv(const std::filesystem::path& path, std::vector<std::string>* names_out) {
  std::istringstream in(read_text_file(path));
  auto split = [](const std::string& line) {
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return f;
  };
  auto number = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorCode::MalformedHeader, path.string() + ": bad number '" + s + "'");
  };
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::MalformedHeader, path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  if (header.size() < 4 || header[0] != "case_id" || header[1] != "finding_id" || header[2] != "label") {
    fail(ErrorCode::MalformedHeader, path.string() + ": expected case_id,finding_id,label,<features>");
  }
  const std::vector<std::string> names(header.begin() + 3, header.end());
  std::vector<FeatureRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) {
      fail(ErrorCode::FeatureCountMismatch, path.string() + ": row has " + std::to_string(f.size()) +
                                                " fields, header has " + std::to_string(header.size()));
    }
    FeatureRow r;
    r.case_id = f[0];
    r.finding_id = static_cast<int>(number(f[1]));
    if (!f[2].empty()) r.label = static_cast<int>(number(f[2]));
    for (std::size_t i = 3; i < f.size(); ++i) r.values.push_back(number(f[i]));
    rows.push_back(std::move(r));
  }
  if (names_out) *names_out = names;
  return rows;
}

}  // namespace lesionkit::radiomics
