#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "lesionkit/error.hpp"
#include "lesionkit/util.hpp"
#include "lesionkit/volgrid.hpp"
#include "test_support.hpp"

using namespace lesionkit;
using namespace lesionkit::volgrid;

namespace {

Mat3 random_rotation(Rng& rng) {
  // Gram-Schmidt on random vectors, then fix handedness.
  Vec3 a{rng.normal(), rng.normal(), rng.normal()};
  Vec3 b{rng.normal(), rng.normal(), rng.normal()};
  auto norm = [](Vec3& v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (double& x : v) x /= n;
  };
  norm(a);
  const double d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  for (int i = 0; i < 3; ++i) b[i] -= d * a[i];
  norm(b);
  const Vec3 c{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
  return {a[0], b[0], c[0], a[1], b[1], c[1], a[2], b[2], c[2]};
}

Volume random_volume(Rng& rng, std::array<int, 3> dims) {
  Volume v(dims, {rng.uniform(0.3, 3.0), rng.uniform(0.3, 3.0), rng.uniform(0.3, 3.0)},
           {rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)}, random_rotation(rng));
  for (float& x : v.data) x = static_cast<float>(rng.uniform(-10, 10));
  return v;
}

// Independent corner expansion: enumerate the 8 integer corners explicitly.
double corner_oracle(const Volume& vol, const Vec3& world) {
  const Vec3 f = world_to_index(vol, world);
  const int i0 = static_cast<int>(std::floor(f[0]));
  const int j0 = static_cast<int>(std::floor(f[1]));
  const int k0 = static_cast<int>(std::floor(f[2]));
  const double tx = f[0] - i0, ty = f[1] - j0, tz = f[2] - k0;
  auto v = [&](int i, int j, int k) -> double { return vol.contains_index(i, j, k) ? vol.at(i, j, k) : 0.0; };
  return v(i0, j0, k0) * (1 - tx) * (1 - ty) * (1 - tz) + v(i0 + 1, j0, k0) * tx * (1 - ty) * (1 - tz) +
         v(i0, j0 + 1, k0) * (1 - tx) * ty * (1 - tz) + v(i0 + 1, j0 + 1, k0) * tx * ty * (1 - tz) +
         v(i0, j0, k0 + 1) * (1 - tx) * (1 - ty) * tz + v(i0 + 1, j0, k0 + 1) * tx * (1 - ty) * tz +
         v(i0, j0 + 1, k0 + 1) * (1 - tx) * ty * tz + v(i0 + 1, j0 + 1, k0 + 1) * tx * ty * tz;
}

}  // namespace

TEST_CASE("world_to_index basics") {
  Volume v({4, 4, 4}, {1, 1, 1});
  const Vec3 idx = world_to_index(v, {3, 4, 5});
  CHECK(idx[0] == 3.0);
  CHECK(idx[1] == 4.0);
  CHECK(idx[2] == 5.0);

  Rng rng(7);
  Volume w = random_volume(rng, {3, 3, 3});
  const Vec3 at_origin = world_to_index(w, w.origin);
  for (double x : at_origin) CHECK(x == 0.0);
}

TEST_CASE("world/index round trip on random affines") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Volume v = random_volume(rng, {2, 2, 2});
    for (int n = 0; n < 100; ++n) {
      const Vec3 p{rng.uniform(-200, 200), rng.uniform(-200, 200), rng.uniform(-200, 200)};
      const Vec3 back = index_to_world(v, world_to_index(v, p));
      for (int a = 0; a < 3; ++a) CHECK(std::abs(back[a] - p[a]) < 1e-9);
    }
  }
}

TEST_CASE("trilinear_sample") {
  Volume v({3, 3, 3}, {1, 1, 1});
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i) * 0.5f + 1.0f;

  SUBCASE("voxel centers are exact") {
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) CHECK(trilinear_sample(v, {double(i), double(j), double(k)}) == v.at(i, j, k));
  }
  SUBCASE("midpoint is the average") {
    const double a = v.at(1, 1, 1), b = v.at(2, 1, 1);
    CHECK(trilinear_sample(v, {1.5, 1, 1}) == doctest::Approx((a + b) / 2).epsilon(1e-12));
  }
  SUBCASE("matches corner oracle on random affine grids") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      Volume r = random_volume(rng, {5, 4, 6});
      for (int n = 0; n < 50; ++n) {
        const Vec3 idx{rng.uniform(-1.5, 5.5), rng.uniform(-1.5, 4.5), rng.uniform(-1.5, 6.5)};
        const Vec3 p = index_to_world(r, idx);
        CHECK(std::abs(trilinear_sample(r, p) - corner_oracle(r, p)) < 1e-6);
      }
    }
  }
  SUBCASE("exact for affine fields inside the grid") {
    Rng rng(5);
    Volume r = random_volume(rng, {6, 6, 6});
    const double a = 0.3, b = -1.2, c = 2.0, d = 5.0;
    for (int k = 0; k < 6; ++k)
      for (int j = 0; j < 6; ++j)
        for (int i = 0; i < 6; ++i) {
          const Vec3 w = index_to_world(r, {double(i), double(j), double(k)});
          r.at(i, j, k) = static_cast<float>(a * w[0] + b * w[1] + c * w[2] + d);
        }
    for (int n = 0; n < 200; ++n) {
      const Vec3 idx{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5)};
      const Vec3 w = index_to_world(r, idx);
      // grid values carry f32 rounding; compare against the f32-rounded field
      const double expect = a * w[0] + b * w[1] + c * w[2] + d;
      CHECK(std::abs(trilinear_sample(r, w) - expect) <= 1e-5 * std::max(1.0, std::abs(expect)));
    }
  }
}

TEST_CASE("resample_isotropic") {
  SUBCASE("extent arithmetic") {
    Volume v({200, 200, 20}, {0.5, 0.5, 3.0});
    const Volume out = resample_isotropic(v, 1.0);
    CHECK(out.dims == std::array<int, 3>{100, 100, 60});
    CHECK(out.spacing == Vec3{1, 1, 1});
  }
  SUBCASE("1 mm input is unchanged at shared points") {
    Rng rng(1);
    Volume v({7, 5, 4}, {1, 1, 1}, {2, -3, 1});
    for (float& x : v.data) x = static_cast<float>(rng.uniform(0, 100));
    const Volume out = resample_isotropic(v, 1.0);
    CHECK(out.dims == v.dims);
    CHECK(out.data == v.data);
  }
  SUBCASE("constant input stays constant in the interior") {
    Volume v({10, 10, 5}, {0.7, 0.7, 2.5});
    std::fill(v.data.begin(), v.data.end(), 4.25f);
    const Volume out = resample_isotropic(v, 1.0);
    for (int k = 0; k < out.dims[2]; ++k)
      for (int j = 0; j < out.dims[1]; ++j)
        for (int i = 0; i < out.dims[0]; ++i) {
          const Vec3 idx = world_to_index(v, index_to_world(out, {double(i), double(j), double(k)}));
          if (idx[0] <= 9 && idx[1] <= 9 && idx[2] <= 4) CHECK(out.at(i, j, k) == doctest::Approx(4.25).epsilon(1e-6));
        }
  }
  SUBCASE("values stay inside the input range") {
    Rng rng(2);
    Volume v({9, 8, 4}, {0.8, 0.9, 2.2});
    for (float& x : v.data) x = static_cast<float>(rng.uniform(1, 9));
    const Volume out = resample_isotropic(v, 1.0);
    for (float x : out.data) {
      CHECK(x <= 9.0f + 1e-5f);
      CHECK(x >= 0.0f);  // zero padding at the far borders
    }
  }
  SUBCASE("voxel budget") {
    Volume v({10, 10, 10}, {1, 1, 1});
    CHECK_THROWS_AS(resample_isotropic(v, 0.1, 1000), Error);
    try {
      resample_isotropic(v, 0.1, 1000);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::OversizeGrid);
    }
  }
}

TEST_CASE("resample_to_reference") {
  Rng rng(9);
  Volume v({6, 5, 4}, {1.5, 1.5, 2.0}, {10, 20, 30});
  for (float& x : v.data) x = static_cast<float>(rng.uniform(-5, 5));

  SUBCASE("same geometry is bitwise identical") { CHECK(resample_to_reference(v, v).data == v.data); }

  SUBCASE("one-voxel world translation shifts the grid") {
    Volume moved = v;
    moved.origin[0] += v.spacing[0];  // content now sits one voxel further along +x
    const Volume out = resample_to_reference(moved, v);
    for (int k = 0; k < 4; ++k)
      for (int j = 0; j < 5; ++j)
        for (int i = 1; i < 6; ++i) CHECK(out.at(i, j, k) == v.at(i - 1, j, k));
  }

  SUBCASE("disjoint extents give zeros") {
    Volume far = v;
    far.origin = {1000, 1000, 1000};
    const Volume out = resample_to_reference(far, v);
    for (float x : out.data) CHECK(x == 0.0f);
  }
}

TEST_CASE("nvol round trip and errors") {
  test_support::TempDir dir("nvol");
  Rng rng(4);
  Volume v = random_volume(rng, {3, 4, 5});
  v.data[0] = 3.4e38f;
  v.data[1] = -3.4e38f;
  v.data[2] = 1e-45f;  // denormal
  write_volume(v, dir.path() / "a.nvol.json");
  const Volume back = read_volume(dir.path() / "a.nvol.json");
  CHECK(back.dims == v.dims);
  CHECK(back.spacing == v.spacing);
  CHECK(back.origin == v.origin);
  CHECK(back.direction == v.direction);
  CHECK(std::memcmp(back.data.data(), v.data.data(), v.data.size() * sizeof(float)) == 0);

  auto expect_code = [](const std::filesystem::path& p, ErrorCode code) {
    try {
      read_volume(p);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  };

  SUBCASE("length mismatch") {
    write_text_file(dir.path() / "b.nvol.json",
                    R"({"dims":[2,2,2],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],)"
                    R"("direction":[1,0,0,0,1,0,0,0,1],"dtype":"f32le","data_file":"b.nvol.raw"})");
    std::vector<float> seven(7, 1.0f);
    write_f32le(dir.path() / "b.nvol.raw", seven);
    expect_code(dir.path() / "b.nvol.json", ErrorCode::LengthMismatch);
  }
  SUBCASE("zero spacing") {
    write_text_file(dir.path() / "c.nvol.json",
                    R"({"dims":[2,2,2],"spacing_mm":[1,0,1],"origin_mm":[0,0,0],)"
                    R"("direction":[1,0,0,0,1,0,0,0,1],"dtype":"f32le","data_file":"c.nvol.raw"})");
    write_f32le(dir.path() / "c.nvol.raw", std::vector<float>(8, 1.0f));
    expect_code(dir.path() / "c.nvol.json", ErrorCode::MalformedHeader);
  }
  SUBCASE("unsupported dtype") {
    write_text_file(dir.path() / "d.nvol.json",
                    R"({"dims":[2,2,2],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],)"
                    R"("direction":[1,0,0,0,1,0,0,0,1],"dtype":"i16le","data_file":"d.nvol.raw"})");
    expect_code(dir.path() / "d.nvol.json", ErrorCode::UnsupportedDtype);
  }
  SUBCASE("not json") {
    write_text_file(dir.path() / "e.nvol.json", "dims: 2");
    expect_code(dir.path() / "e.nvol.json", ErrorCode::MalformedHeader);
  }
}

TEST_CASE("findings csv") {
  test_support::TempDir dir("findings");
  std::vector<Finding> f = {{"P0001", 1, {1.25, -3.5, 0.1}, 1}, {"P0001", 2, {0, 0, 0}, 0}, {"P0002", 1, {7, 8, 9}, {}}};
  write_findings_csv(f, dir.path() / "f.csv");
  CHECK(read_text_file(dir.path() / "f.csv").rfind("case_id,finding_id,x_mm,y_mm,z_mm,label\n", 0) == 0);
  CHECK(read_findings_csv(dir.path() / "f.csv") == f);
}
