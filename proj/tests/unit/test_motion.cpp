#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "gsmr/eval.hpp"
#include "gsmr/motion.hpp"
#include "test_util.hpp"

using namespace gsmr;

namespace {

MotionBases random_bases(int nb, const Dims3& cd, uint64_t seed) {
  MotionBases b;
  b.n_bases = nb;
  b.coarse_dims = cd;
  b.f.resize(size_t(nb) * 3 * size_t(voxel_count(cd)));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  for (double& v : b.f) v = d(rng);
  return b;
}

VectorField random_dvf(const Dims3& d, uint64_t seed, double scale) {
  VectorField u(d);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> r(-scale, scale);
  for (int c = 0; c < 3; ++c)
    for (double& v : u.comp[c].data) v = r(rng);
  return u;
}

double field_loss(const VectorField& u, const VectorField& coeff) {
  double s = 0;
  for (int c = 0; c < 3; ++c)
    for (int64_t j = 0; j < u.size(); ++j) s += coeff.comp[c].data[j] * u.comp[c].data[j];
  return s;
}

}  // namespace

TEST_CASE("state composition is linear in the coefficients", "[motion]") {
  Dims3 cd{4, 4, 4};
  MotionBases b = random_bases(3, cd, 1);
  StateCoefficients co;
  co.n_bases = 3;
  co.alpha = {0.3, -0.7};
  co.beta = {0.5, -0.2, 0.0, 1.1};  // state-major, 2 per state

  VectorField u0 = compose_dvf(b, co, 0);
  for (int c = 0; c < 3; ++c)
    for (int64_t j = 0; j < u0.size(); ++j) {
      double expect = 0.3 * b.comp(0, c)[j] + 0.5 * b.comp(1, c)[j] - 0.2 * b.comp(2, c)[j];
      CHECK(u0.comp[c].data[j] == Catch::Approx(expect).margin(1e-14));
    }

  // zero coefficients give the zero field
  StateCoefficients zero;
  zero.n_bases = 3;
  zero.alpha = {0.0};
  zero.beta = {0.0, 0.0};
  VectorField uz = compose_dvf(b, zero, 0);
  for (int c = 0; c < 3; ++c)
    for (double v : uz.comp[c].data) CHECK(v == 0.0);

  // with beta = 0 the field is exactly alpha * basis0
  StateCoefficients a_only;
  a_only.n_bases = 3;
  a_only.alpha = {2.0};
  a_only.beta = {0.0, 0.0};
  VectorField ua = compose_dvf(b, a_only, 0);
  for (int c = 0; c < 3; ++c)
    for (int64_t j = 0; j < ua.size(); ++j)
      CHECK(ua.comp[c].data[j] == Catch::Approx(2.0 * b.comp(0, c)[j]).margin(1e-14));

  CHECK_THROWS_AS(compose_dvf(b, co, 2), std::out_of_range);
}

TEST_CASE("direct-grid model starts from zero bases and coefficients", "[motion]") {
  MotionModel m = make_motion_model(DvfGenerator::direct_grid, 2, {0.0, 0.4, 1.0},
                                    {4, 4, 4}, 8.0, 7);
  CHECK(m.grids.size() == size_t(2 * 3 * 64));
  for (double v : m.grids) CHECK(v == 0.0);
  CHECK(m.coeff.beta == std::vector<double>(3, 0.0));
  CHECK(m.coeff.alpha == std::vector<double>{0.0, 0.4, 1.0});
  MotionBases b = generate_bases(m);
  for (double v : b.f) CHECK(v == 0.0);
  for (int t = 0; t < 3; ++t) {
    VectorField u = compose_dvf(b, m.coeff, t);
    for (int c = 0; c < 3; ++c)
      for (double v : u.comp[c].data) CHECK(v == 0.0);
  }
}

TEST_CASE("decoder emits a tanh-bounded field of the right shape", "[motion]") {
  Dims3 out{16, 16, 16};
  ConvDecoder dec = make_conv_decoder(out, 6, 8.0, 11, 8, 16, 16);
  std::vector<double> y = decoder_forward(dec, nullptr);
  REQUIRE(y.size() == size_t(6) * voxel_count(out));
  for (double v : y) {
    CHECK(v < 8.0);
    CHECK(v > -8.0);
  }
  // one upsample stage: 8 -> 16
  int n_up = 0;
  for (const auto& l : dec.layers)
    if (l.kind == DecoderLayer::Kind::upsample) ++n_up;
  CHECK(n_up == 1);

  // 64^3 output from an 8^3 latent needs three doublings
  ConvDecoder big = make_conv_decoder({64, 64, 64}, 6, 8.0, 11);
  int big_up = 0;
  for (const auto& l : big.layers)
    if (l.kind == DecoderLayer::Kind::upsample) ++big_up;
  CHECK(big_up == 3);
  CHECK_THROWS_AS(make_conv_decoder({24, 24, 24}, 6, 8.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(make_conv_decoder({16, 16, 8}, 6, 8.0, 1), std::invalid_argument);
}

TEST_CASE("decoder construction is deterministic in the seed", "[motion]") {
  ConvDecoder a = make_conv_decoder({8, 8, 8}, 6, 8.0, 5, 8, 8, 8);
  ConvDecoder b = make_conv_decoder({8, 8, 8}, 6, 8.0, 5, 8, 8, 8);
  ConvDecoder c = make_conv_decoder({8, 8, 8}, 6, 8.0, 6, 8, 8, 8);
  CHECK(a.theta == b.theta);
  CHECK(a.latent == b.latent);
  CHECK(a.theta != c.theta);
  std::vector<double> ya = decoder_forward(a, nullptr);
  std::vector<double> yb = decoder_forward(b, nullptr);
  CHECK(ya == yb);
}

TEST_CASE("upsampling maps constants to scaled constants", "[motion]") {
  Dims3 cd{4, 4, 4}, fd{16, 16, 16};
  VectorField u(cd);
  for (int c = 0; c < 3; ++c)
    for (double& v : u.comp[c].data) v = 0.5 * (c + 1);
  VectorField f = upsample_dvf(u, fd);
  REQUIRE(f.dims() == fd);
  for (int c = 0; c < 3; ++c)
    for (double v : f.comp[c].data)
      CHECK(v == Catch::Approx(4.0 * 0.5 * (c + 1)).margin(1e-13));

  VectorField z(cd);
  VectorField fz = upsample_dvf(z, fd);
  for (int c = 0; c < 3; ++c)
    for (double v : fz.comp[c].data) CHECK(v == 0.0);

  CHECK_THROWS_AS(upsample_dvf(u, {8, 16, 16}), std::invalid_argument);
}

TEST_CASE("upsampling preserves linear ramps away from the borders", "[motion]") {
  Dims3 cd{4, 4, 4}, fd{16, 16, 16};
  VectorField u(cd);
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y)
      for (int z = 0; z < 4; ++z)
        u.comp[0].data[size_t(linear_index(cd, x, y, z))] = double(x);
  VectorField f = upsample_dvf(u, fd);
  // align-corners-false: fine x maps to coarse (x + 0.5)/4 - 0.5, values x4
  for (int x = 2; x < 14; ++x)
    for (int y = 0; y < 16; ++y)
      for (int z = 0; z < 16; ++z)
        CHECK(f.comp[0].data[size_t(linear_index(fd, x, y, z))] ==
              Catch::Approx(4.0 * ((x + 0.5) / 4.0 - 0.5)).margin(1e-12));
}

TEST_CASE("upsample adjoint satisfies the inner product identity", "[motion]") {
  Dims3 cd{4, 4, 4}, fd{16, 16, 16};
  VectorField u = random_dvf(cd, 3, 1.0);
  VectorField g = random_dvf(fd, 4, 1.0);
  VectorField up = upsample_dvf(u, fd);
  VectorField adj = upsample_dvf_adjoint(g, cd);
  double lhs = field_loss(up, g);
  double rhs = field_loss(u, adj);
  CHECK(lhs == Catch::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("warping with zero displacement is the identity", "[motion]") {
  Dims3 d{8, 8, 8};
  ComplexVolume v(d);
  testutil::fill_random(v, 2);
  VectorField u(d);
  ComplexVolume w = warp(v, u);
  for (int64_t j = 0; j < v.size(); ++j) CHECK(w.data[j] == v.data[j]);
}

TEST_CASE("integer displacement shifts the sampled volume exactly", "[motion]") {
  Dims3 d{8, 8, 8};
  ComplexVolume v(d);
  testutil::fill_random(v, 5);
  VectorField u(d);
  for (double& x : u.comp[0].data) x = 2.0;  // out(j) = v(x + 2, y, z)
  ComplexVolume w = warp(v, u);
  for (int x = 0; x < 6; ++x)
    for (int y = 0; y < 8; ++y)
      for (int z = 0; z < 8; ++z) CHECK(w.at(x, y, z) == v.at(x + 2, y, z));
}

TEST_CASE("warping commutes with a global phase", "[motion]") {
  Dims3 d{8, 8, 8};
  ComplexVolume v(d);
  testutil::fill_random(v, 6);
  VectorField u = random_dvf(d, 7, 1.5);
  cplx phase = std::polar(1.0, 1.1);
  ComplexVolume vp = v;
  for (auto& x : vp.data) x *= phase;
  ComplexVolume a = warp(vp, u);
  ComplexVolume b = warp(v, u);
  for (int64_t j = 0; j < v.size(); ++j)
    CHECK(std::abs(a.data[j] - phase * b.data[j]) < 1e-12);
}

TEST_CASE("warping is linear in the source volume", "[motion]") {
  Dims3 d{8, 8, 8};
  ComplexVolume a(d), b(d), comb(d);
  testutil::fill_random(a, 8);
  testutil::fill_random(b, 9);
  cplx alpha(1.3, -0.4);
  for (int64_t j = 0; j < a.size(); ++j) comb.data[j] = alpha * a.data[j] + b.data[j];
  VectorField u = random_dvf(d, 10, 1.5);
  ComplexVolume wa = warp(a, u), wb = warp(b, u), wc = warp(comb, u);
  for (int64_t j = 0; j < a.size(); ++j)
    CHECK(std::abs(wc.data[j] - (alpha * wa.data[j] + wb.data[j])) < 1e-12);
}

TEST_CASE("warp gradients match finite differences", "[motion]") {
  Dims3 d{8, 8, 8};
  ComplexVolume v(d);
  testutil::fill_random(v, 11);
  VectorField u = random_dvf(d, 12, 1.2);
  ComplexVolume coeff(d);
  testutil::fill_random(coeff, 13);

  // Trilinear interpolation has derivative kinks at integer coordinates and
  // at the clamp borders; keep every sample position clear of both so the
  // +-h FD stencil stays on one linear piece.
  for (int64_t j = 0; j < voxel_count(d); ++j) {
    int z = int(j % d[2]);
    int y = int((j / d[2]) % d[1]);
    int x = int(j / (int64_t(d[1]) * d[2]));
    int base[3] = {x, y, z};
    for (int c = 0; c < 3; ++c) {
      double& uc = u.comp[c].data[size_t(j)];
      double pos = base[c] + uc;
      pos = std::clamp(pos, 0.05, double(d[c] - 1) - 0.05);
      double fr = pos - std::floor(pos);
      if (fr < 0.01) pos += 0.02;
      if (fr > 0.99) pos -= 0.02;
      uc = pos - base[c];
    }
  }

  auto loss = [&]() {
    ComplexVolume w = warp(v, u);
    double s = 0;
    for (int64_t j = 0; j < w.size(); ++j)
      s += coeff.data[j].real() * w.data[j].real() + coeff.data[j].imag() * w.data[j].imag();
    return s;
  };
  WarpGrads an = warp_backward(v, u, coeff);

  // displacement gradient, all three components
  for (int c = 0; c < 3; ++c) {
    auto r = testutil::compare_fd(std::span<double>(u.comp[c].data),
                                  std::span<const double>(an.u.comp[c].data), loss);
    CHECK(r.max_rel < 1e-4);
  }
  // source gradient via its real and imaginary parts
  std::vector<double> vre(size_t(v.size())), gre(size_t(v.size()));
  for (int64_t j = 0; j < v.size(); ++j) {
    vre[size_t(j)] = v.data[j].real();
    gre[size_t(j)] = an.v.data[j].real();
  }
  auto loss_re = [&]() {
    for (int64_t j = 0; j < v.size(); ++j)
      v.data[j] = cplx(vre[size_t(j)], v.data[j].imag());
    return loss();
  };
  auto rv = testutil::compare_fd(std::span<double>(vre), std::span<const double>(gre), loss_re);
  loss_re();
  CHECK(rv.max_rel < 1e-4);
}

TEST_CASE("clamped warp samples contribute no displacement gradient", "[motion]") {
  Dims3 d{8, 8, 8};
  ComplexVolume v(d);
  testutil::fill_random(v, 14);
  VectorField u(d);
  // voxel (0, 4, 4) pushed past the low x border: clamped in x
  int64_t j = linear_index(d, 0, 4, 4);
  u.comp[0].data[size_t(j)] = -2.5;
  ComplexVolume up(d);
  up.data[size_t(j)] = cplx(1.0, 0.5);
  WarpGrads g = warp_backward(v, u, up);
  CHECK(g.u.comp[0].data[size_t(j)] == 0.0);  // zero slope in the clamp region
}

TEST_CASE("single-conv decoder gradients match finite differences", "[motion]") {
  ConvDecoder dec = make_single_conv_decoder({6, 6, 6}, 2, 3, 4.0, 21);
  std::vector<double> coeff(size_t(3) * voxel_count(dec.out_dims));
  std::mt19937_64 rng(22);
  std::normal_distribution<double> nd;
  for (double& v : coeff) v = nd(rng);

  DecoderCache cache;
  std::vector<double> y = decoder_forward(dec, &cache);
  std::vector<double> gout(coeff);
  std::vector<double> gtheta = decoder_backward(dec, cache, std::move(gout));
  REQUIRE(gtheta.size() == dec.theta.size());

  auto loss = [&]() {
    std::vector<double> out = decoder_forward(dec, nullptr);
    double s = 0;
    for (size_t i = 0; i < out.size(); ++i) s += coeff[i] * out[i];
    return s;
  };
  auto r = testutil::compare_fd(std::span<double>(dec.theta),
                                std::span<const double>(gtheta), loss);
  CHECK(r.max_rel < 1e-4);
}

TEST_CASE("full decoder stack gradients match finite differences", "[motion]") {
  // conv + instance norm + leaky relu + upsample + tanh, small enough for FD
  ConvDecoder dec = make_conv_decoder({4, 4, 4}, 3, 5.0, 31, 2, 3, 4);
  std::vector<double> coeff(size_t(3) * voxel_count(dec.out_dims));
  std::mt19937_64 rng(32);
  std::normal_distribution<double> nd;
  for (double& v : coeff) v = nd(rng);

  DecoderCache cache;
  decoder_forward(dec, &cache);
  std::vector<double> gtheta = decoder_backward(dec, cache, std::vector<double>(coeff));

  auto loss = [&]() {
    std::vector<double> out = decoder_forward(dec, nullptr);
    double s = 0;
    for (size_t i = 0; i < out.size(); ++i) s += coeff[i] * out[i];
    return s;
  };
  auto r = testutil::compare_fd(std::span<double>(dec.theta),
                                std::span<const double>(gtheta), loss, 1e-5);
  CHECK(r.max_rel < 1e-3);
}

TEST_CASE("zero upstream gradient produces zero parameter gradient", "[motion]") {
  ConvDecoder dec = make_single_conv_decoder({4, 4, 4}, 2, 3, 4.0, 41);
  DecoderCache cache;
  decoder_forward(dec, &cache);
  std::vector<double> zero(size_t(3) * voxel_count(dec.out_dims), 0.0);
  std::vector<double> g = decoder_backward(dec, cache, std::move(zero));
  REQUIRE(g.size() == dec.theta.size());  // latent is frozen: theta grads only
  for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("fine state field is a superposition of upsampled bases", "[motion]") {
  Dims3 cd{4, 4, 4}, fd{16, 16, 16};
  MotionModel m = make_motion_model(DvfGenerator::direct_grid, 2, {0.2, 0.9}, cd, 8.0, 3);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  for (double& v : m.grids) v = 0.3 * nd(rng);
  m.coeff.beta = {0.4, -0.6};

  MotionBases b = generate_bases(m);
  for (int t = 0; t < 2; ++t) {
    VectorField coarse = compose_dvf(b, m.coeff, t);
    VectorField fine = upsample_dvf(coarse, fd);
    // superposition computed basis by basis must agree
    VectorField b0(cd), b1(cd);
    for (int c = 0; c < 3; ++c)
      for (int64_t j = 0; j < voxel_count(cd); ++j) {
        b0.comp[c].data[j] = b.comp(0, c)[j];
        b1.comp[c].data[j] = b.comp(1, c)[j];
      }
    VectorField f0 = upsample_dvf(b0, fd), f1 = upsample_dvf(b1, fd);
    double c0 = m.coeff.coeff(t, 0), c1 = m.coeff.coeff(t, 1);
    for (int c = 0; c < 3; ++c)
      for (int64_t j = 0; j < voxel_count(fd); ++j)
        CHECK(fine.comp[c].data[j] ==
              Catch::Approx(c0 * f0.comp[c].data[j] + c1 * f1.comp[c].data[j]).margin(1e-10));
  }
}

TEST_CASE("motion checkpoint round trips both generator kinds", "[motion]") {
  Dims3 cd{4, 4, 4};
  MotionModel m = make_motion_model(DvfGenerator::direct_grid, 2, {0.1, 0.7, 1.0}, cd, 6.5, 3);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  for (double& v : m.grids) v = nd(rng);
  m.coeff.beta = {0.1, -0.2, 0.3};
  std::string path = testutil::temp_path("gsmr_motion_direct.gsmm");
  write_motion_model(path, m);
  MotionModel r = read_motion_model(path);
  CHECK(r.kind == DvfGenerator::direct_grid);
  CHECK(r.n_bases == 2);
  CHECK(r.coarse_dims == cd);
  CHECK(r.max_displacement == 6.5);
  CHECK(r.coeff.alpha == m.coeff.alpha);
  CHECK(r.coeff.beta == m.coeff.beta);
  CHECK(r.grids == m.grids);  // float64 payload is exact
  std::remove(path.c_str());

  MotionModel c = make_motion_model(DvfGenerator::conv_decoder, 2, {0.0, 1.0}, {8, 8, 8},
                                    8.0, 9);
  c.coeff.beta = {0.05, -0.15};
  std::string cpath = testutil::temp_path("gsmr_motion_conv.gsmm");
  write_motion_model(cpath, c);
  MotionModel cr = read_motion_model(cpath);
  CHECK(cr.kind == DvfGenerator::conv_decoder);
  CHECK(cr.decoder.theta == c.decoder.theta);
  CHECK(cr.decoder.latent == c.decoder.latent);
  CHECK(cr.coeff.beta == c.coeff.beta);
  MotionBases ba = generate_bases(c), bb = generate_bases(cr);
  CHECK(ba.f == bb.f);
  std::remove(cpath.c_str());
}

TEST_CASE("analytic warp field reproduces moved phantom states inside moving interiors",
          "[motion]") {
  Dims3 d{32, 32, 32};
  PhantomScene scene = desk_scene(32, 4.0, 0.25, BreathingWaveform::sinusoid);
  ComplexVolume ref = render_phantom(scene, 0.0, d).volume;
  std::vector<RoiSpec> specs = desk_roi_specs(scene);
  for (double a : {0.35, 1.0}) {
    ComplexVolume tgt = render_phantom(scene, a, d).volume;
    ComplexVolume moved = warp(ref, warp_field_between(scene, 0.0, a, d));
    // the field is defined on moving matter; vacated background is out of scope
    RealVolume interior(d);
    for (const RoiSpec& s : specs) {
      if (s.motion_amplitude == Vec3{0, 0, 0}) continue;
      RealVolume m = roi_mask(s, d, a);
      for (size_t i = 0; i < m.data.size(); ++i)
        if (m.data[i] != 0.0) interior.data[i] = 1.0;
    }
    REQUIRE_FALSE(mask_empty(interior));
    CHECK(nrmse(moved, tgt, &interior) < 0.05);
  }
}

TEST_CASE("upsampling is homogeneous in the field", "[motion]") {
  Dims3 cd{4, 4, 4}, fd{16, 16, 16};
  VectorField u = random_dvf(cd, 21, 1.0);
  VectorField su = u;
  double a = -1.7;
  for (int c = 0; c < 3; ++c)
    for (double& x : su.comp[size_t(c)].data) x *= a;
  VectorField fu = upsample_dvf(u, fd), fsu = upsample_dvf(su, fd);
  for (int c = 0; c < 3; ++c)
    for (int64_t i = 0; i < fu.comp[size_t(c)].size(); ++i)
      CHECK(std::abs(fsu.comp[size_t(c)].data[size_t(i)] -
                     a * fu.comp[size_t(c)].data[size_t(i)]) < 1e-12);
}
