#pragma once

// Non-uniform FFT between a Cartesian volume and radial samples.
//
// Convention (type 2, forward):   S_k = sum_j v_j exp(-2 pi i k . (j - c))
// with c the integer grid center (dims/2) and k in cycles/voxel, |k_d| <= 0.5.
// The adjoint flips the sign of the exponent.
//
// Two paths: a direct summation used as ground truth in tests, and a
// Kaiser-Bessel gridding path (2x oversampling) whose adjoint is the exact
// matrix adjoint of its forward, so adjointness holds to rounding error.

#include <fftw3.h>

#include <map>
#include <memory>

#include "gsmr/core.hpp"
#include "gsmr/trajectory.hpp"

namespace gsmr {

enum class NufftPath { direct, gridding };

struct NufftOptions {
  NufftPath path = NufftPath::gridding;
  int kernel_width = 8;  // even; tested widths 4, 6, 8
};

namespace detail {

inline double bessel_i0(double x) {
  double t = x * x / 4.0, term = 1.0, sum = 1.0;
  for (int k = 1; k < 1000; ++k) {
    term *= t / (double(k) * double(k));
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

struct KbKernel {
  int width = 8;
  double beta = 0;

  // Shape parameter for 2x oversampling; minimizes worst-case aliasing.
  static KbKernel make(int width, double os = 2.0) {
    KbKernel k;
    k.width = width;
    double t = (double(width) / os) * (os - 0.5);
    k.beta = M_PI * std::sqrt(std::max(0.0, t * t - 0.8));
    return k;
  }

  double operator()(double u) const {
    double r = 2.0 * u / width;
    double s = 1.0 - r * r;
    if (s <= 0) return 0.0;
    return bessel_i0(beta * std::sqrt(s));
  }
};

// Fourier transform of the kernel, 2 * int_0^{w/2} C(u) cos(2 pi xi u) du,
// by composite Simpson. Used to undo the kernel rolloff in image space.
class KernelFt {
 public:
  explicit KernelFt(const KbKernel& k) : half_(k.width / 2.0) {
    nodes_.resize(kN + 1);
    for (int i = 0; i <= kN; ++i) nodes_[i] = k(half_ * i / kN);
  }

  double operator()(double xi) const {
    double h = half_ / kN;
    double sum = 0;
    for (int i = 0; i <= kN; ++i) {
      double w = (i == 0 || i == kN) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      sum += w * nodes_[i] * std::cos(2.0 * M_PI * xi * (half_ * i / kN));
    }
    return 2.0 * sum * h / 3.0;
  }

 private:
  static constexpr int kN = 2048;
  double half_;
  std::vector<double> nodes_;
};

struct GriddingPlan {
  Dims3 dims{}, gdims{};
  int width = 8;
  KbKernel kernel;
  std::array<std::vector<double>, 3> apod;  // kernel FT sampled at (j - c)/G
  fftw_plan fwd = nullptr, bwd = nullptr;

  ~GriddingPlan() {
    if (fwd) fftw_destroy_plan(fwd);
    if (bwd) fftw_destroy_plan(bwd);
  }
};

inline GriddingPlan& gridding_plan(const Dims3& dims, int width) {
  static std::map<std::array<int, 4>, std::unique_ptr<GriddingPlan>> cache;
  static std::mutex mutex;
  std::lock_guard<std::mutex> lk(mutex);
  std::array<int, 4> key{dims[0], dims[1], dims[2], width};
  auto it = cache.find(key);
  if (it != cache.end()) return *it->second;

  auto plan = std::make_unique<GriddingPlan>();
  plan->dims = dims;
  plan->gdims = {2 * dims[0], 2 * dims[1], 2 * dims[2]};
  plan->width = width;
  if (width < 2 || width % 2 || width > std::min({dims[0], dims[1], dims[2]}))
    throw std::invalid_argument("kernel_width must be even, >= 2 and <= min(dims)");
  plan->kernel = KbKernel::make(width);
  KernelFt ft(plan->kernel);
  for (int d = 0; d < 3; ++d) {
    int n = dims[d], g = plan->gdims[d], c = n / 2;
    plan->apod[d].resize(n);
    for (int j = 0; j < n; ++j) plan->apod[d][j] = ft(double(j - c) / g);
  }
  std::vector<cplx> dummy(voxel_count(plan->gdims));
  auto* buf = reinterpret_cast<fftw_complex*>(dummy.data());
  unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  plan->fwd = fftw_plan_dft_3d(plan->gdims[0], plan->gdims[1], plan->gdims[2],
                               buf, buf, FFTW_FORWARD, flags);
  plan->bwd = fftw_plan_dft_3d(plan->gdims[0], plan->gdims[1], plan->gdims[2],
                               buf, buf, FFTW_BACKWARD, flags);
  auto& ref = *plan;
  cache.emplace(key, std::move(plan));
  return ref;
}

inline void check_trajectory(const RadialTrajectory& t) {
  for (const Vec3& k : t.k)
    for (int d = 0; d < 3; ++d) {
      if (!std::isfinite(k[d]) || std::abs(k[d]) > 0.5 + 1e-12)
        throw std::invalid_argument("trajectory sample out of range (|k_d| must be <= 0.5)");
    }
}

// Per-sample interpolation stencil on the oversampled grid. The (-1)^m
// factor folds the half-grid image shift into the kernel weights.
struct Stencil {
  int idx[3][16];
  double w[3][16];

  void build(const Vec3& k, const Dims3& g, const KbKernel& kernel) {
    double half = kernel.width / 2.0;
    for (int d = 0; d < 3; ++d) {
      double gd = k[d] * g[d];
      int base = int(std::ceil(gd - half));
      for (int i = 0; i < kernel.width; ++i) {
        int m = base + i;
        double wt = kernel(gd - m);
        if (m & 1) wt = -wt;
        int mi = m % g[d];
        if (mi < 0) mi += g[d];
        idx[d][i] = mi;
        w[d][i] = wt;
      }
    }
  }

  static int base_x(const Vec3& k, const Dims3& g, double half) {
    return int(std::ceil(k[0] * g[0] - half));
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Direct path (reference implementation)

inline std::vector<cplx> nufft_forward_direct(const ComplexVolume& v,
                                              const RadialTrajectory& t) {
  detail::check_trajectory(t);
  const Dims3& d = v.dims;
  int cx = d[0] / 2, cy = d[1] / 2, cz = d[2] / 2;
  std::vector<cplx> out(size_t(t.n_samples()));
  parallel_for(t.n_samples(), [&](int64_t b, int64_t e) {
    std::vector<cplx> px(d[0]), py(d[1]), pz(d[2]);
    for (int64_t s = b; s < e; ++s) {
      const Vec3& k = t.k[size_t(s)];
      for (int x = 0; x < d[0]; ++x) px[x] = std::polar(1.0, -2.0 * M_PI * k[0] * (x - cx));
      for (int y = 0; y < d[1]; ++y) py[y] = std::polar(1.0, -2.0 * M_PI * k[1] * (y - cy));
      for (int z = 0; z < d[2]; ++z) pz[z] = std::polar(1.0, -2.0 * M_PI * k[2] * (z - cz));
      cplx acc{};
      for (int x = 0; x < d[0]; ++x) {
        cplx ax{};
        for (int y = 0; y < d[1]; ++y) {
          cplx ay{};
          const cplx* row = &v.data[linear_index(d, x, y, 0)];
          for (int z = 0; z < d[2]; ++z) ay += pz[z] * row[z];
          ax += py[y] * ay;
        }
        acc += px[x] * ax;
      }
      out[size_t(s)] = acc;
    }
  }, 8);
  return out;
}

inline ComplexVolume nufft_adjoint_direct(std::span<const cplx> samples,
                                          const RadialTrajectory& t, const Dims3& dims) {
  detail::check_trajectory(t);
  if (int64_t(samples.size()) != t.n_samples())
    throw std::invalid_argument("sample count does not match trajectory");
  ComplexVolume out(dims);
  int cx = dims[0] / 2, cy = dims[1] / 2, cz = dims[2] / 2;
  parallel_for(voxel_count(dims), [&](int64_t b, int64_t e) {
    for (int64_t j = b; j < e; ++j) {
      int z = int(j % dims[2]);
      int y = int((j / dims[2]) % dims[1]);
      int x = int(j / (int64_t(dims[1]) * dims[2]));
      cplx acc{};
      for (size_t s = 0; s < samples.size(); ++s) {
        const Vec3& k = t.k[s];
        double ph = 2.0 * M_PI * (k[0] * (x - cx) + k[1] * (y - cy) + k[2] * (z - cz));
        acc += samples[s] * std::polar(1.0, ph);
      }
      out.data[j] = acc;
    }
  }, 64);
  return out;
}

// ---------------------------------------------------------------------------
// Gridding path

inline std::vector<cplx> nufft_forward_gridding(const ComplexVolume& v,
                                                const RadialTrajectory& t, int width) {
  detail::check_trajectory(t);
  auto& plan = detail::gridding_plan(v.dims, width);
  const Dims3& d = plan.dims;
  const Dims3& g = plan.gdims;

  // Deapodize into the center of the padded grid.
  std::vector<cplx> grid(voxel_count(g));
  parallel_for(voxel_count(d), [&](int64_t b, int64_t e) {
    for (int64_t j = b; j < e; ++j) {
      int z = int(j % d[2]);
      int y = int((j / d[2]) % d[1]);
      int x = int(j / (int64_t(d[1]) * d[2]));
      int tx = x - d[0] / 2 + g[0] / 2;
      int ty = y - d[1] / 2 + g[1] / 2;
      int tz = z - d[2] / 2 + g[2] / 2;
      grid[linear_index(g, tx, ty, tz)] =
          v.data[j] / (plan.apod[0][x] * plan.apod[1][y] * plan.apod[2][z]);
    }
  });

  fftw_execute_dft(plan.fwd, reinterpret_cast<fftw_complex*>(grid.data()),
                   reinterpret_cast<fftw_complex*>(grid.data()));

  std::vector<cplx> out(size_t(t.n_samples()));
  parallel_for(t.n_samples(), [&](int64_t b, int64_t e) {
    detail::Stencil st;
    for (int64_t s = b; s < e; ++s) {
      st.build(t.k[size_t(s)], g, plan.kernel);
      cplx acc{};
      for (int ix = 0; ix < plan.width; ++ix) {
        int64_t rx = int64_t(st.idx[0][ix]) * g[1];
        for (int iy = 0; iy < plan.width; ++iy) {
          int64_t rxy = (rx + st.idx[1][iy]) * g[2];
          double wxy = st.w[0][ix] * st.w[1][iy];
          cplx az{};
          for (int iz = 0; iz < plan.width; ++iz)
            az += st.w[2][iz] * grid[rxy + st.idx[2][iz]];
          acc += wxy * az;
        }
      }
      out[size_t(s)] = acc;
    }
  }, 256);
  return out;
}

inline ComplexVolume nufft_adjoint_gridding(std::span<const cplx> samples,
                                            const RadialTrajectory& t, const Dims3& dims,
                                            int width) {
  detail::check_trajectory(t);
  if (int64_t(samples.size()) != t.n_samples())
    throw std::invalid_argument("sample count does not match trajectory");
  auto& plan = detail::gridding_plan(dims, width);
  const Dims3& d = plan.dims;
  const Dims3& g = plan.gdims;
  double half = plan.width / 2.0;

  // Spread with the forward stencil weights (exact adjoint). Output cells are
  // partitioned into x slabs; each slab walks the samples in index order so
  // accumulation order is independent of the thread count.
  std::vector<cplx> grid(voxel_count(g));
  int n_slabs = std::clamp(g[0] / plan.width, 1, 16);
  std::vector<std::vector<int64_t>> slab_samples(static_cast<size_t>(n_slabs));
  auto slab_of = [&](int x) { return std::min<int>(n_slabs - 1, int(int64_t(x) * n_slabs / g[0])); };
  for (int64_t s = 0; s < t.n_samples(); ++s) {
    int bx = detail::Stencil::base_x(t.k[size_t(s)], g, half);
    int last = -1;
    for (int i = 0; i < plan.width; ++i) {
      int x = (bx + i) % g[0];
      if (x < 0) x += g[0];
      int sl = slab_of(x);
      if (sl != last) {
        auto& list = slab_samples[size_t(sl)];
        if (list.empty() || list.back() != s) list.push_back(s);
        last = sl;
      }
    }
  }
  parallel_tasks(n_slabs, [&](int sl) {
    int x0 = int(int64_t(sl) * g[0] / n_slabs);
    int x1 = int(int64_t(sl + 1) * g[0] / n_slabs);
    detail::Stencil st;
    for (int64_t s : slab_samples[size_t(sl)]) {
      st.build(t.k[size_t(s)], g, plan.kernel);
      cplx val = samples[size_t(s)];
      for (int ix = 0; ix < plan.width; ++ix) {
        int x = st.idx[0][ix];
        if (x < x0 || x >= x1) continue;
        int64_t rx = int64_t(x) * g[1];
        for (int iy = 0; iy < plan.width; ++iy) {
          int64_t rxy = (rx + st.idx[1][iy]) * g[2];
          cplx wv = (st.w[0][ix] * st.w[1][iy]) * val;
          for (int iz = 0; iz < plan.width; ++iz)
            grid[rxy + st.idx[2][iz]] += st.w[2][iz] * wv;
        }
      }
    }
  });

  fftw_execute_dft(plan.bwd, reinterpret_cast<fftw_complex*>(grid.data()),
                   reinterpret_cast<fftw_complex*>(grid.data()));

  ComplexVolume out(dims);
  parallel_for(voxel_count(d), [&](int64_t b, int64_t e) {
    for (int64_t j = b; j < e; ++j) {
      int z = int(j % d[2]);
      int y = int((j / d[2]) % d[1]);
      int x = int(j / (int64_t(d[1]) * d[2]));
      int tx = x - d[0] / 2 + g[0] / 2;
      int ty = y - d[1] / 2 + g[1] / 2;
      int tz = z - d[2] / 2 + g[2] / 2;
      out.data[j] = grid[linear_index(g, tx, ty, tz)] /
                    (plan.apod[0][x] * plan.apod[1][y] * plan.apod[2][z]);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Path dispatch

inline std::vector<cplx> nufft_forward(const ComplexVolume& v, const RadialTrajectory& t,
                                       const NufftOptions& opt = {}) {
  if (opt.path == NufftPath::direct) return nufft_forward_direct(v, t);
  return nufft_forward_gridding(v, t, opt.kernel_width);
}

inline ComplexVolume nufft_adjoint(std::span<const cplx> samples, const RadialTrajectory& t,
                                   const Dims3& dims, const NufftOptions& opt = {}) {
  if (opt.path == NufftPath::direct) return nufft_adjoint_direct(samples, t, dims);
  return nufft_adjoint_gridding(samples, t, dims, opt.kernel_width);
}

// Selects the subset of spokes listed in `spokes`, preserving order.
inline RadialTrajectory subset_trajectory(const RadialTrajectory& t,
                                          std::span<const int> spokes) {
  RadialTrajectory out;
  out.n_spokes = int(spokes.size());
  out.samples_per_spoke = t.samples_per_spoke;
  out.tr_seconds = t.tr_seconds;
  out.k.reserve(spokes.size() * size_t(t.samples_per_spoke));
  for (int sp : spokes) {
    if (sp < 0 || sp >= t.n_spokes) throw std::out_of_range("spoke index out of range");
    const Vec3* row = &t.k[size_t(sp) * t.samples_per_spoke];
    out.k.insert(out.k.end(), row, row + t.samples_per_spoke);
  }
  return out;
}

inline std::vector<cplx> subset_samples(std::span<const cplx> coil_samples,
                                        int samples_per_spoke, std::span<const int> spokes) {
  std::vector<cplx> out;
  out.reserve(spokes.size() * size_t(samples_per_spoke));
  for (int sp : spokes) {
    const cplx* row = coil_samples.data() + size_t(sp) * samples_per_spoke;
    out.insert(out.end(), row, row + samples_per_spoke);
  }
  return out;
}

}  // namespace gsmr
