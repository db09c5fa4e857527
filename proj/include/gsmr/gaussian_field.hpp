#pragma once

// Anisotropic complex 3D Gaussian representation of the reference volume:
// covariance construction, truncated voxelization with analytic gradients,
// and the three initialization strategies.
//
// Parameterization per point: fixed position p, complex density rho, scales
// stored as logs, rotation as an unnormalized quaternion (normalized before
// every covariance evaluation). Sigma = R S S^T R^T.

#include "gsmr/core.hpp"
#include "gsmr/nufft.hpp"
#include "gsmr/trajectory.hpp"

namespace gsmr {

struct GaussianPoint {
  Vec3 p{0, 0, 0};
  cplx rho{0, 0};
  Vec3 log_s{0, 0, 0};
  Quat q{1, 0, 0, 0};
};

struct GaussianCloud {
  Dims3 grid_dims{0, 0, 0};
  std::vector<GaussianPoint> pts;

  int64_t size() const { return int64_t(pts.size()); }
};

struct CloudGrads {
  std::vector<cplx> rho;
  std::vector<Vec3> log_s;
  std::vector<Quat> q;

  explicit CloudGrads(size_t m = 0) : rho(m), log_s(m, Vec3{}), q(m, Quat{}) {}
};

// ---------------------------------------------------------------------------
// Rotation and covariance

inline std::array<double, 9> rotation_matrix(const Quat& q) {
  double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (n == 0) throw std::invalid_argument("zero quaternion");
  double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
          2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)};
}

// Sigma = R diag(s^2) R^T, s = exp(log_s).
inline std::array<double, 9> covariance(const GaussianPoint& g) {
  auto r = rotation_matrix(g.q);
  double s2[3] = {std::exp(2 * g.log_s[0]), std::exp(2 * g.log_s[1]),
                  std::exp(2 * g.log_s[2])};
  std::array<double, 9> out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0;
      for (int c = 0; c < 3; ++c) acc += r[i * 3 + c] * s2[c] * r[j * 3 + c];
      out[i * 3 + j] = acc;
    }
  return out;
}

namespace detail {

// Per-Gaussian evaluation frame: local axes, inverse scales and the clipped
// world bounding box of the truncated support. The support is the local box
// |y_a| <= 3 s_a (99.7% mass per axis, < 1.2% total magnitude omitted);
// culling uses the world-axis extent of that rotated box.
struct GaussianFrame {
  Vec3 p;
  double r[9];       // world = R * local
  double s[3], inv_s[3];
  cplx rho;
  int lo[3], hi[3];
  bool empty;

  GaussianFrame(const GaussianPoint& g, const Dims3& dims) {
    auto rm = rotation_matrix(g.q);
    std::copy(rm.begin(), rm.end(), r);
    p = g.p;
    rho = g.rho;
    empty = false;
    for (int d = 0; d < 3; ++d) {
      s[d] = std::exp(g.log_s[d]);
      inv_s[d] = 1.0 / s[d];
    }
    for (int e = 0; e < 3; ++e) {
      double half = 3.0 * (std::abs(r[e * 3]) * s[0] + std::abs(r[e * 3 + 1]) * s[1] +
                           std::abs(r[e * 3 + 2]) * s[2]);
      lo[e] = std::max(0, int(std::ceil(p[e] - half)));
      hi[e] = std::min(dims[e] - 1, int(std::floor(p[e] + half)));
      if (lo[e] > hi[e]) empty = true;
    }
  }

  // Whitened local offset; support test is max_a |z_a| <= 3.
  bool whiten(int x, int y, int z, double z_out[3]) const {
    double d0 = x - p[0], d1 = y - p[1], d2 = z - p[2];
    for (int c = 0; c < 3; ++c) {
      double yc = r[c] * d0 + r[3 + c] * d1 + r[6 + c] * d2;
      double zc = yc * inv_s[c];
      if (std::abs(zc) > 3.0) return false;
      z_out[c] = zc;
    }
    return true;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Voxelization

// Accumulates rho_i exp(-1/2 (j-p)^T Sigma^{-1} (j-p)) over the truncated
// supports. Grid cells are partitioned into x slabs; every slab visits its
// Gaussians in index order, so sums are bit-identical for any thread count.
inline ComplexVolume voxelize(const GaussianCloud& cloud) {
  const Dims3& dims = cloud.grid_dims;
  ComplexVolume vol(dims);
  int64_t m = cloud.size();
  if (m == 0) return vol;

  std::vector<detail::GaussianFrame> frames;
  frames.reserve(size_t(m));
  for (const auto& g : cloud.pts) frames.emplace_back(g, dims);

  int n_slabs = std::min(dims[0], 16);
  std::vector<std::vector<int64_t>> lists(static_cast<size_t>(n_slabs));
  auto slab_x0 = [&](int sl) { return int(int64_t(sl) * dims[0] / n_slabs); };
  for (int64_t i = 0; i < m; ++i) {
    const auto& f = frames[size_t(i)];
    if (f.empty) continue;
    for (int sl = 0; sl < n_slabs; ++sl)
      if (f.lo[0] < slab_x0(sl + 1) && f.hi[0] >= slab_x0(sl)) lists[size_t(sl)].push_back(i);
  }
  parallel_tasks(n_slabs, [&](int sl) {
    int x0 = slab_x0(sl), x1 = slab_x0(sl + 1);
    for (int64_t i : lists[size_t(sl)]) {
      const auto& f = frames[size_t(i)];
      for (int x = std::max(f.lo[0], x0); x <= std::min(f.hi[0], x1 - 1); ++x)
        for (int y = f.lo[1]; y <= f.hi[1]; ++y) {
          cplx* row = &vol.data[linear_index(dims, x, y, 0)];
          for (int z = f.lo[2]; z <= f.hi[2]; ++z) {
            double zc[3];
            if (!f.whiten(x, y, z, zc)) continue;
            double w = std::exp(-0.5 * (zc[0] * zc[0] + zc[1] * zc[1] + zc[2] * zc[2]));
            row[z] += f.rho * w;
          }
        }
    }
  });
  return vol;
}

// Analytic gradients of the voxelization against an upstream volume gradient
// (packed as dL/dre + i dL/dim). Parameters whose support misses every voxel
// receive zero. Parallel over Gaussians: disjoint gradient slots.
inline CloudGrads voxelize_backward(const GaussianCloud& cloud, const ComplexVolume& upstream) {
  if (!same_dims(upstream.dims, cloud.grid_dims))
    throw std::invalid_argument("upstream gradient dims mismatch");
  const Dims3& dims = cloud.grid_dims;
  CloudGrads grads(cloud.pts.size());
  parallel_for(cloud.size(), [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) {
      const GaussianPoint& g = cloud.pts[size_t(i)];
      detail::GaussianFrame f(g, dims);
      if (f.empty) continue;
      cplx g_rho{};
      double g_logs[3] = {0, 0, 0};
      double a[9] = {0};  // dL/dR accumulator
      for (int x = f.lo[0]; x <= f.hi[0]; ++x)
        for (int y = f.lo[1]; y <= f.hi[1]; ++y) {
          const cplx* row = &upstream.data[linear_index(dims, x, y, 0)];
          for (int z = f.lo[2]; z <= f.hi[2]; ++z) {
            double zc[3];
            if (!f.whiten(x, y, z, zc)) continue;
            double w = std::exp(-0.5 * (zc[0] * zc[0] + zc[1] * zc[1] + zc[2] * zc[2]));
            cplx up = row[z];
            g_rho += w * up;
            // real-parameter chain: c = Re(conj(up) rho) w
            double c = (up.real() * f.rho.real() + up.imag() * f.rho.imag()) * w;
            double d[3] = {x - f.p[0], y - f.p[1], z - f.p[2]};
            for (int k = 0; k < 3; ++k) {
              g_logs[k] += c * zc[k] * zc[k];
              double de_dy = -zc[k] * f.inv_s[k];
              for (int rr = 0; rr < 3; ++rr) a[rr * 3 + k] += c * de_dy * d[rr];
            }
          }
        }
      grads.rho[size_t(i)] = g_rho;
      for (int k = 0; k < 3; ++k) grads.log_s[size_t(i)][k] = g_logs[k];

      // Contract dL/dR with dR/dq at the normalized quaternion, then map
      // through the normalization Jacobian (I - qq^T)/|q|.
      double n = std::sqrt(g.q[0] * g.q[0] + g.q[1] * g.q[1] + g.q[2] * g.q[2] +
                           g.q[3] * g.q[3]);
      double w = g.q[0] / n, xx = g.q[1] / n, yy = g.q[2] / n, zz = g.q[3] / n;
      double dr[4][9] = {
          {0, -zz, yy, zz, 0, -xx, -yy, xx, 0},
          {0, yy, zz, yy, -2 * xx, -w, zz, w, -2 * xx},
          {-2 * yy, xx, w, xx, 0, zz, -w, zz, -2 * yy},
          {-2 * zz, -w, xx, w, -2 * zz, yy, xx, yy, 0}};
      double gq_hat[4];
      for (int k = 0; k < 4; ++k) {
        double acc = 0;
        for (int e2 = 0; e2 < 9; ++e2) acc += a[e2] * 2.0 * dr[k][e2];
        gq_hat[k] = acc;
      }
      double qh[4] = {w, xx, yy, zz};
      double dot = gq_hat[0] * qh[0] + gq_hat[1] * qh[1] + gq_hat[2] * qh[2] + gq_hat[3] * qh[3];
      for (int k = 0; k < 4; ++k) grads.q[size_t(i)][k] = (gq_hat[k] - dot * qh[k]) / n;
    }
  }, 1);
  return grads;
}

// ---------------------------------------------------------------------------
// Initialization

inline std::vector<int64_t> foreground_voxels(const ComplexVolume& v, double rel_threshold) {
  double vmax = 0;
  for (const cplx& z : v.data) vmax = std::max(vmax, std::abs(z));
  std::vector<int64_t> fg;
  double thr = rel_threshold * vmax;
  for (int64_t j = 0; j < v.size(); ++j)
    if (std::abs(v.data[j]) >= thr && vmax > 0) fg.push_back(j);
  return fg;
}

// Isotropic scale = multiplier * mean distance to the 3 nearest other points,
// floored at half a voxel (duplicate positions are allowed).
inline void assign_scales_from_neighbors(GaussianCloud& cloud, double multiplier) {
  int64_t m = cloud.size();
  int k = int(std::min<int64_t>(3, m - 1));
  if (k < 1) throw std::invalid_argument("need at least 2 points for neighbor scales");
  parallel_for(m, [&](int64_t b, int64_t e) {
    std::vector<double> d2(static_cast<size_t>(m));
    for (int64_t i = b; i < e; ++i) {
      const Vec3& pi = cloud.pts[size_t(i)].p;
      for (int64_t j = 0; j < m; ++j) {
        const Vec3& pj = cloud.pts[size_t(j)].p;
        double dx = pi[0] - pj[0], dy = pi[1] - pj[1], dz = pi[2] - pj[2];
        d2[size_t(j)] = dx * dx + dy * dy + dz * dz;
      }
      d2[size_t(i)] = std::numeric_limits<double>::infinity();
      std::partial_sort(d2.begin(), d2.begin() + k, d2.end());
      double avg = 0;
      for (int t = 0; t < k; ++t) avg += std::sqrt(d2[size_t(t)]);
      avg /= k;
      double s = std::max(0.5, multiplier * avg);
      double ls = std::log(s);
      cloud.pts[size_t(i)].log_s = {ls, ls, ls};
    }
  }, 16);
}

// Uniform sampling over the foreground (|v| >= 0.05 max), scales from the
// three nearest neighbors, identity rotation, rho read from the seed volume.
inline GaussianCloud init_random(uint64_t seed, int64_t m, const ComplexVolume& seed_volume,
                                 double scale_multiplier = 1.0) {
  if (m < 4) throw std::invalid_argument("random init needs M >= 4");
  auto fg = foreground_voxels(seed_volume, 0.05);
  if (fg.empty()) throw std::invalid_argument("seed volume foreground is empty");
  const Dims3& dims = seed_volume.dims;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, fg.size() - 1);
  GaussianCloud cloud;
  cloud.grid_dims = dims;
  cloud.pts.resize(size_t(m));
  for (int64_t i = 0; i < m; ++i) {
    int64_t j = fg[pick(rng)];
    int z = int(j % dims[2]);
    int y = int((j / dims[2]) % dims[1]);
    int x = int(j / (int64_t(dims[1]) * dims[2]));
    auto& g = cloud.pts[size_t(i)];
    g.p = {double(x), double(y), double(z)};
    g.rho = seed_volume.data[j];
    g.q = {1, 0, 0, 0};
  }
  assign_scales_from_neighbors(cloud, scale_multiplier);
  return cloud;
}

namespace detail {

// Lattice positions with spacing delta (offset delta/2), restricted to the
// foreground, trimmed or cyclically refilled to exactly m points.
inline std::vector<Vec3> equal_space_positions(const std::vector<int64_t>& fg,
                                               const Dims3& dims, int64_t m) {
  if (fg.empty()) throw std::invalid_argument("seed volume foreground is empty");
  std::vector<bool> is_fg(size_t(voxel_count(dims)), false);
  for (int64_t j : fg) is_fg[size_t(j)] = true;
  double delta = std::cbrt(double(fg.size()) / double(m));
  std::vector<Vec3> cand;
  for (double x = delta / 2; x < dims[0]; x += delta)
    for (double y = delta / 2; y < dims[1]; y += delta)
      for (double z = delta / 2; z < dims[2]; z += delta) {
        int xi = std::min(dims[0] - 1, int(std::lround(x)));
        int yi = std::min(dims[1] - 1, int(std::lround(y)));
        int zi = std::min(dims[2] - 1, int(std::lround(z)));
        if (is_fg[size_t(linear_index(dims, xi, yi, zi))]) cand.push_back({x, y, z});
      }
  if (cand.empty()) {
    // degenerate foreground; fall back to foreground voxel centers
    for (int64_t j : fg) {
      int z = int(j % dims[2]);
      int y = int((j / dims[2]) % dims[1]);
      int x = int(j / (int64_t(dims[1]) * dims[2]));
      cand.push_back({double(x), double(y), double(z)});
    }
  }
  int64_t c = int64_t(cand.size());
  std::vector<Vec3> pos;
  pos.reserve(size_t(m));
  if (c >= m) {
    for (int64_t i = 0; i < m; ++i) pos.push_back(cand[size_t(i * c / m)]);
  } else {
    for (int64_t i = 0; i < m; ++i) pos.push_back(cand[size_t(i % c)]);
  }
  return pos;
}

}  // namespace detail

// Lattice spacing Delta = (foreground volume / M)^(1/3); all scales equal.
// scale_override (> 0) replaces the Delta-derived scale (multi-resolution).
inline GaussianCloud init_equal_space(int64_t m, const ComplexVolume& seed_volume,
                                      double scale_multiplier = 1.0,
                                      double scale_override = 0.0) {
  if (m < 1) throw std::invalid_argument("equal-space init needs M >= 1");
  auto fg = foreground_voxels(seed_volume, 0.05);
  if (fg.empty()) throw std::invalid_argument("seed volume foreground is empty");
  const Dims3& dims = seed_volume.dims;
  double delta = std::cbrt(double(fg.size()) / double(m));
  auto pos = detail::equal_space_positions(fg, dims, m);
  double s = std::max(0.5, scale_multiplier * (scale_override > 0 ? scale_override : delta));
  double ls = std::log(s);
  GaussianCloud cloud;
  cloud.grid_dims = dims;
  cloud.pts.resize(size_t(m));
  for (int64_t i = 0; i < m; ++i) {
    auto& g = cloud.pts[size_t(i)];
    g.p = pos[size_t(i)];
    g.rho = sample_trilinear(seed_volume, g.p[0], g.p[1], g.p[2]);
    g.log_s = {ls, ls, ls};
    g.q = {1, 0, 0, 0};
  }
  return cloud;
}

// Level sizes of the six-level pyramid: level l holds 4^l n points with
// n = floor(M / 1365); the remainder goes to the finest level.
inline std::array<int64_t, 6> multi_resolution_counts(int64_t m) {
  if (m < 1365) throw std::invalid_argument("multi-resolution init needs M >= 1365");
  int64_t n = m / 1365;
  std::array<int64_t, 6> counts;
  int64_t total = 0;
  for (int l = 0; l < 6; ++l) {
    counts[size_t(l)] = n << (2 * l);  // 4^l n
    total += counts[size_t(l)];
  }
  counts[5] += m - total;
  return counts;
}

// Density-compensated, coil-combined adjoint: sum_c conj(C_c) F^H (w m_c).
inline ComplexVolume coil_combined_adjoint(const RadialTrajectory& traj,
                                           const std::vector<std::vector<cplx>>& coil_samples,
                                           const CoilSet& coils, KspaceWeighting wkind,
                                           const NufftOptions& opt = {}) {
  if (int(coil_samples.size()) != coils.n_coils())
    throw std::invalid_argument("coil count mismatch");
  std::vector<double> w = sample_weights(traj, wkind);
  const Dims3 dims = coils.dims();
  ComplexVolume acc(dims);
  std::vector<ComplexVolume> per_coil(size_t(coils.n_coils()));
  parallel_tasks(coils.n_coils(), [&](int c) {
    std::vector<cplx> weighted(coil_samples[size_t(c)]);
    if (int64_t(weighted.size()) != traj.n_samples())
      throw std::invalid_argument("sample count mismatch");
    for (size_t i = 0; i < weighted.size(); ++i) weighted[i] *= w[i];
    per_coil[size_t(c)] = nufft_adjoint(weighted, traj, dims, opt);
  });
  for (int c = 0; c < coils.n_coils(); ++c)
    for (int64_t j = 0; j < acc.size(); ++j)
      acc.data[j] += std::conj(coils.maps[size_t(c)].data[j]) * per_coil[size_t(c)].data[j];
  return acc;
}

// Readout samples kept at pyramid level l: every 2^(5-l)-th, center included.
inline std::vector<int> multi_resolution_kept_samples(int samples_per_spoke, int level) {
  if (level < 0 || level > 5) throw std::invalid_argument("pyramid level must be in [0, 5]");
  int step = 1 << (5 - level);
  std::vector<int> kept;
  for (int s = 0; s < samples_per_spoke; s += step) kept.push_back(s);
  return kept;
}

// Six-level pyramid init. Level l keeps every 2^(5-l)-th readout sample
// (center retained), seeds an equal-space cloud from the density-compensated
// adjoint of that filtered k-space, and assigns scale base * 2^(5-l) where
// base is the finest level's lattice spacing.
inline GaussianCloud init_multi_resolution(int64_t m, const RadialTrajectory& traj0,
                                           const std::vector<std::vector<cplx>>& coil_samples,
                                           const CoilSet& coils, KspaceWeighting wkind,
                                           double scale_multiplier = 1.0,
                                           const NufftOptions& opt = {}) {
  auto counts = multi_resolution_counts(m);
  const Dims3 dims = coils.dims();
  int sps = traj0.samples_per_spoke;

  // finest-level lattice spacing fixes the scale ladder
  double base_delta = 0;
  std::array<GaussianCloud, 6> levels;
  for (int l = 5; l >= 0; --l) {
    std::vector<int> kept = multi_resolution_kept_samples(sps, l);
    RadialTrajectory lt;
    lt.n_spokes = traj0.n_spokes;
    lt.samples_per_spoke = int(kept.size());
    lt.tr_seconds = traj0.tr_seconds;
    lt.k.resize(size_t(lt.n_spokes) * kept.size());
    std::vector<std::vector<cplx>> ls(coil_samples.size());
    for (auto& v : ls) v.resize(lt.k.size());
    for (int sp = 0; sp < lt.n_spokes; ++sp)
      for (size_t i = 0; i < kept.size(); ++i) {
        lt.k[size_t(sp) * kept.size() + i] = traj0.k[size_t(sp) * sps + kept[i]];
        for (size_t c = 0; c < coil_samples.size(); ++c)
          ls[c][size_t(sp) * kept.size() + i] = coil_samples[c][size_t(sp) * sps + kept[i]];
      }
    ComplexVolume seed = coil_combined_adjoint(lt, ls, coils, wkind, opt);
    if (l == 5) {
      auto fg = foreground_voxels(seed, 0.05);
      if (fg.empty()) throw std::invalid_argument("seed volume foreground is empty");
      base_delta = std::cbrt(double(fg.size()) / double(counts[5]));
    }
    levels[size_t(l)] = init_equal_space(counts[size_t(l)], seed, scale_multiplier,
                                         base_delta * double(1 << (5 - l)));
  }
  // levels are built fine-to-coarse (the finest fixes base_delta) but stored
  // coarse-first
  GaussianCloud out;
  out.grid_dims = dims;
  for (int l = 0; l < 6; ++l)
    out.pts.insert(out.pts.end(), levels[size_t(l)].pts.begin(), levels[size_t(l)].pts.end());
  return out;
}

// ---------------------------------------------------------------------------
// Cloud checkpoint: magic "GSPC", u32 M, then per-point float32 records
// (3 pos, 2 rho, 3 log_s, 4 q).

inline void write_cloud(const std::string& path, const GaussianCloud& cloud) {
  auto os = open_output(path);
  write_magic(os, "GSPC");
  write_u32(os, uint32_t(cloud.size()));
  for (const auto& g : cloud.pts) {
    for (int d = 0; d < 3; ++d) write_f32(os, float(g.p[d]));
    write_f32(os, float(g.rho.real()));
    write_f32(os, float(g.rho.imag()));
    for (int d = 0; d < 3; ++d) write_f32(os, float(g.log_s[d]));
    for (int d = 0; d < 4; ++d) write_f32(os, float(g.q[d]));
  }
  if (!os) throw std::runtime_error("short write: " + path);
}

inline GaussianCloud read_cloud(const std::string& path, const Dims3& grid_dims) {
  auto is = open_input(path);
  check_magic(is, "GSPC", path);
  uint32_t m = read_u32(is);
  GaussianCloud cloud;
  cloud.grid_dims = grid_dims;
  cloud.pts.resize(m);
  for (auto& g : cloud.pts) {
    for (int d = 0; d < 3; ++d) g.p[d] = read_f32(is);
    float re = read_f32(is), im = read_f32(is);
    g.rho = cplx(re, im);
    for (int d = 0; d < 3; ++d) g.log_s[d] = read_f32(is);
    for (int d = 0; d < 4; ++d) g.q[d] = read_f32(is);
  }
  if (!is) throw std::runtime_error("short read: " + path);
  return cloud;
}

}  // namespace gsmr
