#pragma once

// Breathing phantom: soft-edged ellipsoids with translational motion, smooth
// synthetic coil maps, and the simulated multi-coil radial acquisition used
// to exercise the full pipeline without scanner data.

#include <Eigen/Dense>

#include "gsmr/core.hpp"
#include "gsmr/nufft.hpp"
#include "gsmr/trajectory.hpp"

namespace gsmr {

struct Ellipsoid {
  Vec3 center;            // voxel units
  Vec3 semi_axes;         // voxel units, > 0
  cplx intensity;
  Vec3 motion_amplitude{0, 0, 0};  // displacement at full inspiration, voxels

  bool moving() const {
    return motion_amplitude[0] != 0 || motion_amplitude[1] != 0 || motion_amplitude[2] != 0;
  }
};

struct PhantomScene {
  std::vector<Ellipsoid> ellipsoids;
  double breathing_hz = 0.25;
  BreathingWaveform waveform = BreathingWaveform::sinusoid;
  double diaphragm_amplitude = 8.0;  // voxels at full inspiration

  void validate() const {
    if (!(breathing_hz > 0.05 && breathing_hz < 1.0))
      throw std::invalid_argument("breathing frequency must lie in (0.05, 1.0) Hz");
    for (const auto& e : ellipsoids)
      for (double a : e.semi_axes)
        if (a <= 0) throw std::invalid_argument("ellipsoid semi-axes must be positive");
  }
};

// Torso with a moving liver, a lung compartment above it, a spine rod and a
// small moving vessel; amplitude-1 displacement equals diaphragm_amplitude.
inline PhantomScene desk_scene(int grid_size, double diaphragm_amplitude, double breathing_hz,
                               BreathingWaveform waveform) {
  double n = grid_size;
  double a = diaphragm_amplitude;
  PhantomScene s;
  s.breathing_hz = breathing_hz;
  s.waveform = waveform;
  s.diaphragm_amplitude = a;
  s.ellipsoids = {
      // torso background
      {{0.50 * n, 0.50 * n, 0.50 * n}, {0.42 * n, 0.36 * n, 0.45 * n},
       std::polar(0.35, 0.4), {0, 0, 0}},
      // lung compartment (dim, static)
      {{0.50 * n, 0.50 * n, 0.70 * n}, {0.30 * n, 0.26 * n, 0.20 * n},
       std::polar(0.12, 0.1), {0, 0, 0}},
      // liver (bright, moves with the diaphragm)
      {{0.50 * n, 0.50 * n, 0.30 * n}, {0.30 * n, 0.26 * n, 0.16 * n},
       std::polar(1.0, 0.7), {0, 0, a}},
      // spine rod (static)
      {{0.50 * n, 0.78 * n, 0.50 * n}, {0.06 * n, 0.06 * n, 0.40 * n},
       std::polar(0.8, 0.0), {0, 0, 0}},
      // small vessel riding at half the diaphragm excursion
      {{0.62 * n, 0.44 * n, 0.60 * n}, {0.045 * n, 0.045 * n, 0.045 * n},
       std::polar(1.3, 0.2), {0, 0, 0.5 * a}},
  };
  s.validate();
  return s;
}

// Normalized breathing amplitude in [0, 1]; 0 = end-expiration.
inline double breathing_amplitude(const PhantomScene& s, double t_seconds) {
  double a = 0.5 - 0.5 * std::cos(2.0 * M_PI * s.breathing_hz * t_seconds);
  if (s.waveform == BreathingWaveform::asymmetric) a = a * a;
  return a;
}

struct PhantomFrame {
  ComplexVolume volume;
  VectorField dvf;  // displacement from rest of the material now at each voxel
};

// Voxelizes the scene at one breathing amplitude. Ellipsoid edges are softened
// over roughly one voxel; overlapping intensities sum. The analytic DVF holds
// the displacement of moving ellipsoids on their displaced support (last
// ellipsoid wins on overlap), zero elsewhere.
inline PhantomFrame render_phantom(const PhantomScene& scene, double amplitude,
                                   const Dims3& dims) {
  scene.validate();
  for (int a = 0; a < 3; ++a)
    if (dims[a] < 16) throw std::invalid_argument("phantom dims must be >= 16 per axis");
  PhantomFrame out{ComplexVolume(dims), VectorField(dims)};
  for (const auto& e : scene.ellipsoids) {
    Vec3 c{e.center[0] + amplitude * e.motion_amplitude[0],
           e.center[1] + amplitude * e.motion_amplitude[1],
           e.center[2] + amplitude * e.motion_amplitude[2]};
    double min_ax = std::min({e.semi_axes[0], e.semi_axes[1], e.semi_axes[2]});
    int x0 = std::max(0, int(std::floor(c[0] - e.semi_axes[0] - 1)));
    int x1 = std::min(dims[0] - 1, int(std::ceil(c[0] + e.semi_axes[0] + 1)));
    int y0 = std::max(0, int(std::floor(c[1] - e.semi_axes[1] - 1)));
    int y1 = std::min(dims[1] - 1, int(std::ceil(c[1] + e.semi_axes[1] + 1)));
    int z0 = std::max(0, int(std::floor(c[2] - e.semi_axes[2] - 1)));
    int z1 = std::min(dims[2] - 1, int(std::ceil(c[2] + e.semi_axes[2] + 1)));
    for (int x = x0; x <= x1; ++x)
      for (int y = y0; y <= y1; ++y)
        for (int z = z0; z <= z1; ++z) {
          double rx = (x - c[0]) / e.semi_axes[0];
          double ry = (y - c[1]) / e.semi_axes[1];
          double rz = (z - c[2]) / e.semi_axes[2];
          double r = std::sqrt(rx * rx + ry * ry + rz * rz);
          // ~1 voxel smoothstep edge, expressed in the tightest axis scale
          double t = std::clamp((1.0 - r) * min_ax, 0.0, 1.0);
          if (t <= 0) continue;
          double w = t * t * (3.0 - 2.0 * t);
          int64_t j = linear_index(dims, x, y, z);
          out.volume.data[j] += e.intensity * w;
          if (e.moving() && r <= 1.0)
            for (int d = 0; d < 3; ++d)
              out.dvf.comp[d].data[j] = amplitude * e.motion_amplitude[d];
        }
  }
  return out;
}

// Warp field taking the reference frame (amplitude a_ref) to the frame at
// amplitude a_i under backward warping: at voxels inside a moving ellipsoid's
// state-i support, u(j) = -(a_i - a_ref) * motion_amplitude.
inline VectorField warp_field_between(const PhantomScene& scene, double a_ref, double a_i,
                                      const Dims3& dims) {
  VectorField u(dims);
  for (const auto& e : scene.ellipsoids) {
    if (!e.moving()) continue;
    Vec3 c{e.center[0] + a_i * e.motion_amplitude[0],
           e.center[1] + a_i * e.motion_amplitude[1],
           e.center[2] + a_i * e.motion_amplitude[2]};
    int x0 = std::max(0, int(std::floor(c[0] - e.semi_axes[0])));
    int x1 = std::min(dims[0] - 1, int(std::ceil(c[0] + e.semi_axes[0])));
    int y0 = std::max(0, int(std::floor(c[1] - e.semi_axes[1])));
    int y1 = std::min(dims[1] - 1, int(std::ceil(c[1] + e.semi_axes[1])));
    int z0 = std::max(0, int(std::floor(c[2] - e.semi_axes[2])));
    int z1 = std::min(dims[2] - 1, int(std::ceil(c[2] + e.semi_axes[2])));
    for (int x = x0; x <= x1; ++x)
      for (int y = y0; y <= y1; ++y)
        for (int z = z0; z <= z1; ++z) {
          double rx = (x - c[0]) / e.semi_axes[0];
          double ry = (y - c[1]) / e.semi_axes[1];
          double rz = (z - c[2]) / e.semi_axes[2];
          if (rx * rx + ry * ry + rz * rz > 1.0) continue;
          int64_t j = linear_index(dims, x, y, z);
          for (int d = 0; d < 3; ++d)
            u.comp[d].data[j] = -(a_i - a_ref) * e.motion_amplitude[d];
        }
  }
  return u;
}

// ---------------------------------------------------------------------------
// Coil sensitivities

// Broad Gaussian-windowed complex fields centered on points spread over the
// volume boundary (golden spiral), with smooth linear phase; maps are jointly
// normalized so the peak root-sum-of-squares is 1.
inline CoilSet smooth_coil_maps(int n_coils, const Dims3& dims, uint64_t seed,
                                bool uniform = false) {
  if (n_coils < 1) throw std::invalid_argument("n_coils must be >= 1");
  CoilSet cs;
  if (uniform) {
    for (int c = 0; c < n_coils; ++c) cs.maps.emplace_back(dims, cplx(1, 0));
    return cs;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Vec3 ctr{dims[0] / 2.0, dims[1] / 2.0, dims[2] / 2.0};
  double n = std::max({dims[0], dims[1], dims[2]});
  double golden_az = M_PI * (3.0 - std::sqrt(5.0));
  for (int c = 0; c < n_coils; ++c) {
    double z = (n_coils == 1) ? 0.0 : 1.0 - 2.0 * (c + 0.5) / n_coils;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double az = c * golden_az;
    Vec3 dir{r * std::cos(az), r * std::sin(az), z};
    Vec3 center{ctr[0] + 0.55 * n * dir[0], ctr[1] + 0.55 * n * dir[1],
                ctr[2] + 0.55 * n * dir[2]};
    Vec3 grad{0.3 * (2 * u01(rng) - 1) / n, 0.3 * (2 * u01(rng) - 1) / n,
              0.3 * (2 * u01(rng) - 1) / n};
    double phase0 = 2.0 * M_PI * u01(rng);
    double sigma = 0.6 * n;
    ComplexVolume m(dims);
    for (int x = 0; x < dims[0]; ++x)
      for (int y = 0; y < dims[1]; ++y)
        for (int zz = 0; zz < dims[2]; ++zz) {
          double dx = x - center[0], dy = y - center[1], dz = zz - center[2];
          double mag = std::exp(-0.5 * (dx * dx + dy * dy + dz * dz) / (sigma * sigma));
          double ph = phase0 + 2.0 * M_PI * (grad[0] * (x - ctr[0]) + grad[1] * (y - ctr[1]) +
                                             grad[2] * (zz - ctr[2]));
          m.at(x, y, zz) = std::polar(mag, ph);
        }
    cs.maps.push_back(std::move(m));
  }
  double max_rss = 0;
  for (int64_t j = 0; j < cs.maps[0].size(); ++j) {
    double s = 0;
    for (const auto& m : cs.maps) s += std::norm(m.data[j]);
    max_rss = std::max(max_rss, std::sqrt(s));
  }
  for (auto& m : cs.maps)
    for (auto& v : m.data) v /= max_rss;
  return cs;
}

// ---------------------------------------------------------------------------
// Acquisition simulation

// Per-spoke breathing amplitude, quantized to `levels` steps so spokes with
// equal amplitude share one rendered frame. The quantized series is the
// ground truth the simulated data actually reflects.
inline std::vector<double> spoke_amplitudes(const PhantomScene& scene,
                                            const RadialTrajectory& traj, int levels) {
  if (levels < 1) throw std::invalid_argument("amplitude_levels must be >= 1");
  std::vector<double> a(size_t(traj.n_spokes));
  double q = levels > 1 ? double(levels - 1) : 1.0;
  for (int m = 0; m < traj.n_spokes; ++m) {
    double raw = breathing_amplitude(scene, traj.spoke_time(m));
    a[size_t(m)] = levels > 1 ? std::round(raw * q) / q : raw;
  }
  return a;
}

// Renders each distinct amplitude once, applies coil maps and the gridded
// forward transform per (frame, coil), then adds complex Gaussian noise with
// the given per-component standard deviation. Spoke-atomic motion.
inline RadialKSpace simulate_acquisition(const PhantomScene& scene,
                                         const RadialTrajectory& traj, const CoilSet& coils,
                                         double noise_std, uint64_t seed = 0,
                                         int amplitude_levels = 128) {
  scene.validate();
  const Dims3 dims = coils.dims();
  std::vector<double> amp = spoke_amplitudes(scene, traj, amplitude_levels);

  std::vector<double> levels;  // distinct amplitudes, ascending
  {
    std::vector<double> sorted = amp;
    std::sort(sorted.begin(), sorted.end());
    for (double v : sorted)
      if (levels.empty() || v != levels.back()) levels.push_back(v);
  }
  std::vector<std::vector<int>> groups(levels.size());
  for (int m = 0; m < traj.n_spokes; ++m) {
    size_t g = size_t(std::lower_bound(levels.begin(), levels.end(), amp[size_t(m)]) -
                      levels.begin());
    groups[g].push_back(m);
  }

  RadialKSpace ks;
  ks.n_coils = coils.n_coils();
  ks.n_spokes = traj.n_spokes;
  ks.samples_per_spoke = traj.samples_per_spoke;
  ks.tr_seconds = traj.tr_seconds;
  ks.data.assign(size_t(ks.n_coils) * ks.samples_per_coil(), cplx{});

  parallel_tasks(int(levels.size()), [&](int g) {
    const auto& spokes = groups[size_t(g)];
    if (spokes.empty()) return;
    ComplexVolume frame = render_phantom(scene, levels[size_t(g)], dims).volume;
    RadialTrajectory sub = subset_trajectory(traj, spokes);
    ComplexVolume weighted(dims);
    for (int c = 0; c < ks.n_coils; ++c) {
      for (int64_t j = 0; j < frame.size(); ++j)
        weighted.data[j] = frame.data[j] * coils.maps[size_t(c)].data[j];
      std::vector<cplx> samples = nufft_forward(weighted, sub);
      for (size_t i = 0; i < spokes.size(); ++i)
        for (int s = 0; s < ks.samples_per_spoke; ++s)
          ks.at(c, spokes[i], s) = samples[i * size_t(ks.samples_per_spoke) + s];
    }
  });

  if (noise_std > 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, noise_std);
    for (auto& v : ks.data) {
      double re = nd(rng), im = nd(rng);
      v += cplx(re, im);
    }
  }
  return ks;
}

// ---------------------------------------------------------------------------
// PCA coil compression

struct CoilCompression {
  Eigen::MatrixXcd projection;  // n_virtual x n_coils
};

// Top principal components of the coil covariance over all samples, with a
// deterministic per-component phase fix (largest entry made real positive).
inline CoilCompression compute_coil_compression(const RadialKSpace& ks, int n_virtual) {
  if (n_virtual < 1 || n_virtual > ks.n_coils)
    throw std::invalid_argument("n_virtual must be in [1, n_coils]");
  int nc = ks.n_coils;
  int64_t ns = ks.samples_per_coil();
  // Fixed chunked reduction keeps the sum order independent of thread count.
  const int n_chunks = 64;
  std::vector<Eigen::MatrixXcd> partial(n_chunks, Eigen::MatrixXcd::Zero(nc, nc));
  parallel_tasks(n_chunks, [&](int ch) {
    int64_t b = ns * ch / n_chunks, e = ns * (ch + 1) / n_chunks;
    Eigen::VectorXcd d(nc);
    for (int64_t i = b; i < e; ++i) {
      for (int c = 0; c < nc; ++c) d[c] = ks.data[size_t(c) * ns + i];
      partial[size_t(ch)] += d * d.adjoint();
    }
  });
  Eigen::MatrixXcd cov = Eigen::MatrixXcd::Zero(nc, nc);
  for (const auto& p : partial) cov += p;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(cov);
  CoilCompression cc;
  cc.projection.resize(n_virtual, nc);
  for (int v = 0; v < n_virtual; ++v) {
    Eigen::VectorXcd u = eig.eigenvectors().col(nc - 1 - v);  // descending order
    int imax = 0;
    for (int c = 1; c < nc; ++c)
      if (std::abs(u[c]) > std::abs(u[imax])) imax = c;
    cplx ph = u[imax] == cplx{} ? cplx(1, 0) : std::conj(u[imax]) / std::abs(u[imax]);
    cc.projection.row(v) = (u * ph).adjoint();
  }
  return cc;
}

inline RadialKSpace apply_coil_compression(const CoilCompression& cc, const RadialKSpace& ks) {
  int nv = int(cc.projection.rows());
  RadialKSpace out;
  out.n_coils = nv;
  out.n_spokes = ks.n_spokes;
  out.samples_per_spoke = ks.samples_per_spoke;
  out.tr_seconds = ks.tr_seconds;
  int64_t ns = ks.samples_per_coil();
  out.data.assign(size_t(nv) * ns, cplx{});
  parallel_for(ns, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i)
      for (int v = 0; v < nv; ++v) {
        cplx acc{};
        for (int c = 0; c < ks.n_coils; ++c)
          acc += cc.projection(v, c) * ks.data[size_t(c) * ns + i];
        out.data[size_t(v) * ns + i] = acc;
      }
  });
  return out;
}

inline CoilSet apply_coil_compression(const CoilCompression& cc, const CoilSet& coils) {
  int nv = int(cc.projection.rows());
  CoilSet out;
  for (int v = 0; v < nv; ++v) {
    ComplexVolume m(coils.dims());
    for (int64_t j = 0; j < m.size(); ++j) {
      cplx acc{};
      for (int c = 0; c < coils.n_coils(); ++c)
        acc += cc.projection(v, c) * coils.maps[size_t(c)].data[j];
      m.data[j] = acc;
    }
    out.maps.push_back(std::move(m));
  }
  return out;
}

inline RadialKSpace pca_coil_compress(const RadialKSpace& ks, int n_virtual) {
  return apply_coil_compression(compute_coil_compression(ks, n_virtual), ks);
}

}  // namespace gsmr
