#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <set>

#include "gsmr/trajectory.hpp"
#include "test_util.hpp"

using namespace gsmr;
using testutil::temp_path;

TEST_CASE("golden means solve the cubic and match known digits", "[trajectory]") {
  auto [phi1, phi2] = golden_means();
  CHECK(std::abs(phi2 * phi2 * phi2 + phi2 - 1.0) < 1e-14);
  CHECK(phi1 == Catch::Approx(phi2 * phi2).epsilon(1e-14));
  CHECK(phi2 == Catch::Approx(0.6823278038).epsilon(1e-8));
  CHECK(phi1 == Catch::Approx(0.4655712319).epsilon(1e-8));
}

TEST_CASE("spokes run center-out with unit-normalized extent", "[trajectory]") {
  RadialTrajectory t = golden_angle_trajectory(500, 149, 0.0037);
  REQUIRE(t.n_samples() == 500 * 149);
  for (int m = 0; m < t.n_spokes; ++m) {
    const Vec3& k0 = t.at(m, 0);
    CHECK(k0[0] == 0.0);
    CHECK(k0[1] == 0.0);
    CHECK(k0[2] == 0.0);
    const Vec3& ke = t.at(m, t.samples_per_spoke - 1);
    double r = std::sqrt(ke[0] * ke[0] + ke[1] * ke[1] + ke[2] * ke[2]);
    CHECK(std::abs(r - 0.5) < 1e-12);
  }
  double rmax = 0;
  for (const Vec3& k : t.k)
    rmax = std::max(rmax, std::sqrt(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]));
  CHECK(std::abs(rmax - 0.5) < 1e-12);
}

TEST_CASE("radii are equally spaced along each spoke", "[trajectory]") {
  RadialTrajectory t = golden_angle_trajectory(3, 33, 0.01);
  double step = 0.5 / 32.0;
  for (int s = 0; s < 33; ++s) {
    const Vec3& k = t.at(1, s);
    double r = std::sqrt(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]);
    CHECK(r == Catch::Approx(step * s).margin(1e-14));
  }
}

TEST_CASE("degenerate trajectory arguments are rejected", "[trajectory]") {
  CHECK_THROWS_AS(golden_angle_trajectory(0, 10, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(golden_angle_trajectory(5, 1, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(golden_angle_trajectory(5, 10, 0.0), std::invalid_argument);
  CHECK_NOTHROW(golden_angle_trajectory(1, 2, 0.01));
}

TEST_CASE("spoke times advance by TR", "[trajectory]") {
  RadialTrajectory t = golden_angle_trajectory(4, 8, 0.0037);
  CHECK(t.spoke_time(0) == 0.0);
  CHECK(t.spoke_time(3) == Catch::Approx(3 * 0.0037));
}

TEST_CASE("successive spoke directions do not repeat", "[trajectory]") {
  RadialTrajectory t = golden_angle_trajectory(200, 8, 0.01);
  for (int m = 0; m + 1 < t.n_spokes; ++m) {
    const Vec3& a = t.at(m, t.samples_per_spoke - 1);
    const Vec3& b = t.at(m + 1, t.samples_per_spoke - 1);
    double d = std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
    CHECK(d > 1e-3);
  }
}

namespace {

// Spherical-cap star discrepancy estimate over a fixed family of caps:
// max over (center, height) of |empirical fraction - cap area fraction|.
double cap_discrepancy(const std::vector<Vec3>& dirs) {
  std::mt19937_64 rng(424242);
  std::normal_distribution<double> g;
  double worst = 0;
  for (int c = 0; c < 64; ++c) {
    Vec3 axis{g(rng), g(rng), g(rng)};
    double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    for (int a = 0; a < 3; ++a) axis[a] /= n;
    for (double thr : {-0.5, 0.0, 0.25, 0.5, 0.75}) {
      int inside = 0;
      for (const Vec3& d : dirs)
        if (d[0] * axis[0] + d[1] * axis[1] + d[2] * axis[2] > thr) ++inside;
      double frac = double(inside) / double(dirs.size());
      double area = 0.5 * (1.0 - thr);  // cap fraction of the unit sphere
      worst = std::max(worst, std::abs(frac - area));
    }
  }
  return worst;
}

std::vector<Vec3> trajectory_directions(const RadialTrajectory& t) {
  std::vector<Vec3> dirs(size_t(t.n_spokes));
  for (int m = 0; m < t.n_spokes; ++m) {
    Vec3 k = t.at(m, t.samples_per_spoke - 1);
    for (int a = 0; a < 3; ++a) dirs[size_t(m)][a] = k[a] / 0.5;
  }
  return dirs;
}

}  // namespace

TEST_CASE("golden ordering covers the sphere more evenly than iid directions",
          "[trajectory]") {
  RadialTrajectory t = golden_angle_trajectory(1000, 2, 0.01);
  double d_golden = cap_discrepancy(trajectory_directions(t));

  double d_iid = 0;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    std::vector<Vec3> dirs(1000);
    for (auto& d : dirs) {
      double n;
      do {
        d = {g(rng), g(rng), g(rng)};
        n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
      } while (n < 1e-6);
      for (int a = 0; a < 3; ++a) d[a] /= n;
    }
    d_iid += cap_discrepancy(dirs);
  }
  d_iid /= 20.0;
  CHECK(d_golden < d_iid);
}

TEST_CASE("ramp weights match the quadratic profile", "[trajectory]") {
  RadialTrajectory t = golden_angle_trajectory(10, 33, 0.01);
  std::vector<double> w = ramp_weights(t);
  double r1 = 0.5 / 32.0;
  for (int m = 0; m < t.n_spokes; ++m) {
    // Outermost sample carries the maximum weight 1.
    CHECK(w[size_t(m) * 33 + 32] == Catch::Approx(1.0).margin(1e-14));
    // Half k-max has a quarter of the weight.
    CHECK(w[size_t(m) * 33 + 16] == Catch::Approx(0.25).margin(1e-14));
    // The k = 0 sample is backed off to half the first radial step.
    CHECK(w[size_t(m) * 33] == Catch::Approx((0.5 * r1) * (0.5 * r1) / 0.25).margin(1e-16));
  }
  std::vector<double> uw = sample_weights(t, KspaceWeighting::none);
  CHECK(std::all_of(uw.begin(), uw.end(), [](double v) { return v == 1.0; }));
}

TEST_CASE("trajectory file round trip", "[trajectory]") {
  RadialTrajectory t = golden_angle_trajectory(17, 9, 0.0037);
  std::string path = temp_path("gsmr_traj_rt.bin");
  write_trajectory(path, t);
  RadialTrajectory r = read_trajectory(path);
  CHECK(r.n_spokes == 17);
  CHECK(r.samples_per_spoke == 9);
  CHECK(r.tr_seconds == Catch::Approx(0.0037).epsilon(1e-6));
  for (size_t i = 0; i < t.k.size(); ++i)
    for (int a = 0; a < 3; ++a)
      CHECK(r.k[i][a] == Catch::Approx(t.k[i][a]).margin(1e-7));
  std::remove(path.c_str());
}

TEST_CASE("k-space file round trip is coil-major", "[trajectory]") {
  RadialKSpace ks;
  ks.n_coils = 2;
  ks.n_spokes = 3;
  ks.samples_per_spoke = 4;
  ks.tr_seconds = 0.0037;
  ks.data = testutil::random_samples(2 * 3 * 4, 5);
  std::string path = temp_path("gsmr_traj_ks.bin");
  write_kspace(path, ks);
  RadialKSpace r = read_kspace(path);
  CHECK(r.n_coils == 2);
  CHECK(r.n_spokes == 3);
  CHECK(r.samples_per_spoke == 4);
  for (size_t i = 0; i < ks.data.size(); ++i) {
    CHECK(r.data[i].real() == Catch::Approx(ks.data[i].real()).margin(1e-6));
    CHECK(r.data[i].imag() == Catch::Approx(ks.data[i].imag()).margin(1e-6));
  }
  CHECK(r.at(1, 2, 3) == r.data.back());
  std::remove(path.c_str());
}

TEST_CASE("coil set file round trip", "[trajectory]") {
  CoilSet cs;
  for (int c = 0; c < 3; ++c) {
    ComplexVolume m({4, 4, 4});
    testutil::fill_random(m, 100 + uint64_t(c));
    for (auto& v : m.data) v = cplx(float(v.real()), float(v.imag()));
    cs.maps.push_back(std::move(m));
  }
  std::string path = temp_path("gsmr_traj_coils.gsmr");
  write_coils(path, cs);
  CoilSet r = read_coils(path);
  REQUIRE(r.n_coils() == 3);
  REQUIRE(r.dims() == cs.dims());
  for (int c = 0; c < 3; ++c)
    for (int64_t i = 0; i < cs.maps[0].size(); ++i)
      CHECK(r.maps[size_t(c)].data[size_t(i)] == cs.maps[size_t(c)].data[size_t(i)]);
  std::remove(path.c_str());
}

TEST_CASE("bin file round trip preserves spoke lists and amplitudes", "[trajectory]") {
  MotionStateBins b;
  b.spokes = {{0, 2, 4}, {1, 3, 5, 6}};
  b.amplitude = {-0.25, 0.75};
  std::string path = temp_path("gsmr_traj_bins.json");
  write_bins(path, b);
  MotionStateBins r = read_bins(path);
  REQUIRE(r.n_states() == 2);
  CHECK(r.spokes[0] == std::vector<int>{0, 2, 4});
  CHECK(r.spokes[1] == std::vector<int>{1, 3, 5, 6});
  CHECK(r.amplitude[0] == Catch::Approx(-0.25));
  CHECK(r.amplitude[1] == Catch::Approx(0.75));
  std::remove(path.c_str());
}
