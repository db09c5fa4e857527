#pragma once

// Low-rank motion model: B shared coarse basis fields (quarter resolution)
// combined per state as alpha_i * B_0 + sum_b beta_{i,b} * B_b, generated
// either as directly learnable grids or by a small convolutional decoder from
// a frozen noise latent. The composed coarse field for state i minus that of
// state 0 is trilinearly upsampled (x4, displacements scaled by 4) and drives
// a border-clamped backward warp.

#include "gsmr/core.hpp"

namespace gsmr {

struct MotionBases {
  int n_bases = 0;
  Dims3 coarse_dims{0, 0, 0};
  std::vector<double> f;  // [basis][component][voxel], z-fastest

  int64_t field_size() const { return voxel_count(coarse_dims); }
  double* comp(int b, int c) { return f.data() + (int64_t(b) * 3 + c) * field_size(); }
  const double* comp(int b, int c) const {
    return f.data() + (int64_t(b) * 3 + c) * field_size();
  }
};

// alpha is fixed from the gating amplitudes (basis 0); beta coefficients for
// the remaining bases are learnable, initialized to zero.
struct StateCoefficients {
  int n_bases = 0;
  std::vector<double> alpha;  // n_states
  std::vector<double> beta;   // n_states * (n_bases - 1), state-major

  int n_states() const { return int(alpha.size()); }
  double coeff(int state, int basis) const {
    if (basis == 0) return alpha[size_t(state)];
    return beta[size_t(state) * (n_bases - 1) + basis - 1];
  }
};

inline VectorField compose_dvf(const MotionBases& bases, const StateCoefficients& coeff,
                               int state) {
  if (state < 0 || state >= coeff.n_states()) throw std::out_of_range("state out of range");
  VectorField u(bases.coarse_dims);
  int64_t n = bases.field_size();
  for (int b = 0; b < bases.n_bases; ++b) {
    double c = coeff.coeff(state, b);
    if (c == 0) continue;
    for (int d = 0; d < 3; ++d) {
      const double* src = bases.comp(b, d);
      double* dst = u.comp[d].data.data();
      for (int64_t i = 0; i < n; ++i) dst[i] += c * src[i];
    }
  }
  return u;
}

// ---------------------------------------------------------------------------
// Convolutional decoder (deep-image-prior style generator)

struct DecoderLayer {
  enum class Kind { conv, inorm, lrelu, upsample, tanh_scale };
  Kind kind;
  int cin = 0, cout = 0, ksize = 3;
  size_t w_off = 0, b_off = 0;
};

struct ConvDecoder {
  Dims3 latent_dims{0, 0, 0};
  int latent_channels = 0;
  Dims3 out_dims{0, 0, 0};
  int out_channels = 0;
  double leaky_slope = 0.2;
  double max_displacement = 8.0;
  std::vector<DecoderLayer> layers;
  std::vector<double> latent;  // frozen input, never receives gradients
  std::vector<double> theta;   // all conv weights and biases
};

namespace detail {

constexpr double kInormEps = 1e-5;

inline void conv3d_forward(const double* in, const Dims3& d, int cin, int cout, int k,
                           const double* w, const double* b, double* out) {
  int64_t n = voxel_count(d);
  int r = k / 2;
  parallel_tasks(cout, [&](int co) {
    double* dst = out + int64_t(co) * n;
    const double* wc = w + int64_t(co) * cin * k * k * k;
    for (int x = 0; x < d[0]; ++x)
      for (int y = 0; y < d[1]; ++y)
        for (int z = 0; z < d[2]; ++z) {
          double acc = b[co];
          for (int ci = 0; ci < cin; ++ci) {
            const double* src = in + int64_t(ci) * n;
            const double* wk = wc + int64_t(ci) * k * k * k;
            for (int ox = -r; ox <= r; ++ox) {
              int xx = x + ox;
              if (xx < 0 || xx >= d[0]) continue;
              for (int oy = -r; oy <= r; ++oy) {
                int yy = y + oy;
                if (yy < 0 || yy >= d[1]) continue;
                for (int oz = -r; oz <= r; ++oz) {
                  int zz = z + oz;
                  if (zz < 0 || zz >= d[2]) continue;
                  acc += wk[((ox + r) * k + (oy + r)) * k + (oz + r)] *
                         src[linear_index(d, xx, yy, zz)];
                }
              }
            }
          }
          dst[linear_index(d, x, y, z)] = acc;
        }
  });
}

inline void conv3d_backward(const double* in, const double* gout, const Dims3& d, int cin,
                            int cout, int k, const double* w, double* gw, double* gb,
                            double* gin) {
  int64_t n = voxel_count(d);
  int r = k / 2;
  parallel_tasks(cout, [&](int co) {
    const double* g = gout + int64_t(co) * n;
    double* gwc = gw + int64_t(co) * cin * k * k * k;
    double acc_b = 0;
    for (int64_t i = 0; i < n; ++i) acc_b += g[i];
    gb[co] = acc_b;
    for (int ci = 0; ci < cin; ++ci) {
      const double* src = in + int64_t(ci) * n;
      double* gwk = gwc + int64_t(ci) * k * k * k;
      for (int ox = -r; ox <= r; ++ox)
        for (int oy = -r; oy <= r; ++oy)
          for (int oz = -r; oz <= r; ++oz) {
            double acc = 0;
            for (int x = std::max(0, -ox); x < d[0] - std::max(0, ox); ++x)
              for (int y = std::max(0, -oy); y < d[1] - std::max(0, oy); ++y)
                for (int z = std::max(0, -oz); z < d[2] - std::max(0, oz); ++z)
                  acc += g[linear_index(d, x, y, z)] *
                         src[linear_index(d, x + ox, y + oy, z + oz)];
            gwk[((ox + r) * k + (oy + r)) * k + (oz + r)] = acc;
          }
    }
  });
  parallel_tasks(cin, [&](int ci) {
    double* gi = gin + int64_t(ci) * n;
    std::fill(gi, gi + n, 0.0);
    for (int co = 0; co < cout; ++co) {
      const double* g = gout + int64_t(co) * n;
      const double* wk = w + (int64_t(co) * cin + ci) * k * k * k;
      for (int ox = -r; ox <= r; ++ox)
        for (int oy = -r; oy <= r; ++oy)
          for (int oz = -r; oz <= r; ++oz) {
            double ww = wk[((ox + r) * k + (oy + r)) * k + (oz + r)];
            if (ww == 0) continue;
            for (int x = std::max(0, -ox); x < d[0] - std::max(0, ox); ++x)
              for (int y = std::max(0, -oy); y < d[1] - std::max(0, oy); ++y)
                for (int z = std::max(0, -oz); z < d[2] - std::max(0, oz); ++z)
                  gi[linear_index(d, x + ox, y + oy, z + oz)] +=
                      ww * g[linear_index(d, x, y, z)];
          }
    }
  });
}

}  // namespace detail

// Table-style generator: `stages` double-conv blocks with filter counts
// base_filters / 2^s, nearest x2 upsampling between stages, instance norm +
// LeakyReLU after every 3x3x3 conv, then a 1x1x1 conv to out_channels and
// tanh scaled by max_displacement. Weights use fan-in uniform init; the
// latent is frozen uniform noise on [0, 0.1].
inline ConvDecoder make_conv_decoder(const Dims3& out_dims, int out_channels,
                                     double max_displacement, uint64_t seed,
                                     int latent_size = 8, int latent_channels = 16,
                                     int base_filters = 64, bool instance_norm = true,
                                     double leaky_slope = 0.2) {
  ConvDecoder dec;
  int side = out_dims[0];
  if (out_dims[1] != side || out_dims[2] != side)
    throw std::invalid_argument("decoder output dims must be cubic");
  if (latent_size > side) latent_size = side;
  int n_up = 0, s = latent_size;
  while (s < side) {
    s *= 2;
    ++n_up;
  }
  if (s != side)
    throw std::invalid_argument("decoder output side must be latent side times a power of 2");
  dec.latent_dims = {latent_size, latent_size, latent_size};
  dec.latent_channels = latent_channels;
  dec.out_dims = out_dims;
  dec.out_channels = out_channels;
  dec.leaky_slope = leaky_slope;
  dec.max_displacement = max_displacement;

  int prev = latent_channels;
  size_t off = 0;
  auto push_conv = [&](int cin, int cout, int k) {
    DecoderLayer l;
    l.kind = DecoderLayer::Kind::conv;
    l.cin = cin;
    l.cout = cout;
    l.ksize = k;
    l.w_off = off;
    off += size_t(cout) * cin * k * k * k;
    l.b_off = off;
    off += size_t(cout);
    dec.layers.push_back(l);
  };
  for (int stage = 0; stage <= n_up; ++stage) {
    if (stage > 0) dec.layers.push_back({DecoderLayer::Kind::upsample});
    int f = std::max(base_filters >> stage, 4);
    for (int rep = 0; rep < 2; ++rep) {
      push_conv(prev, f, 3);
      if (instance_norm) {
        DecoderLayer l;
        l.kind = DecoderLayer::Kind::inorm;
        l.cout = f;
        dec.layers.push_back(l);
      }
      dec.layers.push_back({DecoderLayer::Kind::lrelu});
      prev = f;
    }
  }
  push_conv(prev, out_channels, 1);
  dec.layers.push_back({DecoderLayer::Kind::tanh_scale});

  dec.theta.resize(off);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  dec.latent.resize(size_t(latent_channels) * voxel_count(dec.latent_dims));
  for (double& v : dec.latent) v = 0.1 * u01(rng);
  for (const auto& l : dec.layers) {
    if (l.kind != DecoderLayer::Kind::conv) continue;
    double bound = 1.0 / std::sqrt(double(l.cin) * l.ksize * l.ksize * l.ksize);
    for (size_t i = l.w_off; i < l.b_off; ++i) dec.theta[i] = bound * (2 * u01(rng) - 1);
    for (size_t i = l.b_off; i < l.b_off + size_t(l.cout); ++i)
      dec.theta[i] = bound * (2 * u01(rng) - 1);
  }
  return dec;
}

// Minimal decoder (single conv + tanh) for gradient tests.
inline ConvDecoder make_single_conv_decoder(const Dims3& dims, int cin, int cout,
                                            double max_displacement, uint64_t seed) {
  ConvDecoder dec;
  dec.latent_dims = dims;
  dec.latent_channels = cin;
  dec.out_dims = dims;
  dec.out_channels = cout;
  dec.max_displacement = max_displacement;
  DecoderLayer l;
  l.kind = DecoderLayer::Kind::conv;
  l.cin = cin;
  l.cout = cout;
  l.ksize = 3;
  l.w_off = 0;
  l.b_off = size_t(cout) * cin * 27;
  dec.layers.push_back(l);
  dec.layers.push_back({DecoderLayer::Kind::tanh_scale});
  dec.theta.resize(l.b_off + size_t(cout));
  dec.latent.resize(size_t(cin) * voxel_count(dims));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (double& v : dec.latent) v = u(rng);
  for (double& v : dec.theta) v = u(rng);
  return dec;
}

struct DecoderCache {
  std::vector<std::vector<double>> acts;  // acts[0] = latent, acts[i] = after layer i-1
  std::vector<Dims3> dims;
  std::vector<int> chans;
};

inline std::vector<double> decoder_forward(const ConvDecoder& dec, DecoderCache* cache) {
  std::vector<double> cur = dec.latent;
  Dims3 d = dec.latent_dims;
  int ch = dec.latent_channels;
  if (cache) {
    cache->acts.clear();
    cache->dims.clear();
    cache->chans.clear();
    cache->acts.push_back(cur);
    cache->dims.push_back(d);
    cache->chans.push_back(ch);
  }
  for (const auto& l : dec.layers) {
    switch (l.kind) {
      case DecoderLayer::Kind::conv: {
        std::vector<double> out(size_t(l.cout) * voxel_count(d));
        detail::conv3d_forward(cur.data(), d, l.cin, l.cout, l.ksize,
                               dec.theta.data() + l.w_off, dec.theta.data() + l.b_off,
                               out.data());
        cur = std::move(out);
        ch = l.cout;
        break;
      }
      case DecoderLayer::Kind::inorm: {
        int64_t n = voxel_count(d);
        for (int c = 0; c < ch; ++c) {
          double* p = cur.data() + int64_t(c) * n;
          double mu = 0;
          for (int64_t i = 0; i < n; ++i) mu += p[i];
          mu /= double(n);
          double var = 0;
          for (int64_t i = 0; i < n; ++i) var += (p[i] - mu) * (p[i] - mu);
          var /= double(n);
          double inv = 1.0 / std::sqrt(var + detail::kInormEps);
          for (int64_t i = 0; i < n; ++i) p[i] = (p[i] - mu) * inv;
        }
        break;
      }
      case DecoderLayer::Kind::lrelu:
        for (double& v : cur)
          if (v < 0) v *= dec.leaky_slope;
        break;
      case DecoderLayer::Kind::upsample: {
        Dims3 nd{d[0] * 2, d[1] * 2, d[2] * 2};
        std::vector<double> out(size_t(ch) * voxel_count(nd));
        for (int c = 0; c < ch; ++c) {
          const double* src = cur.data() + int64_t(c) * voxel_count(d);
          double* dst = out.data() + int64_t(c) * voxel_count(nd);
          for (int x = 0; x < nd[0]; ++x)
            for (int y = 0; y < nd[1]; ++y)
              for (int z = 0; z < nd[2]; ++z)
                dst[linear_index(nd, x, y, z)] =
                    src[linear_index(d, x / 2, y / 2, z / 2)];
        }
        cur = std::move(out);
        d = nd;
        break;
      }
      case DecoderLayer::Kind::tanh_scale:
        for (double& v : cur) v = std::tanh(v) * dec.max_displacement;
        break;
    }
    if (cache) {
      cache->acts.push_back(cur);
      cache->dims.push_back(d);
      cache->chans.push_back(ch);
    }
  }
  if (!same_dims(d, dec.out_dims) || ch != dec.out_channels)
    throw std::logic_error("decoder output shape mismatch");
  return cur;
}

// Reverse-mode gradient with respect to theta; the latent never receives a
// gradient (it is an input, not a parameter).
inline std::vector<double> decoder_backward(const ConvDecoder& dec, const DecoderCache& cache,
                                            std::vector<double> gout) {
  std::vector<double> gtheta(dec.theta.size(), 0.0);
  for (int li = int(dec.layers.size()) - 1; li >= 0; --li) {
    const auto& l = dec.layers[size_t(li)];
    const auto& in = cache.acts[size_t(li)];
    const auto& out = cache.acts[size_t(li) + 1];
    Dims3 din = cache.dims[size_t(li)];
    int chin = cache.chans[size_t(li)];
    switch (l.kind) {
      case DecoderLayer::Kind::conv: {
        std::vector<double> gin(in.size());
        detail::conv3d_backward(in.data(), gout.data(), din, l.cin, l.cout, l.ksize,
                                dec.theta.data() + l.w_off, gtheta.data() + l.w_off,
                                gtheta.data() + l.b_off, gin.data());
        gout = std::move(gin);
        break;
      }
      case DecoderLayer::Kind::inorm: {
        int64_t n = voxel_count(din);
        for (int c = 0; c < chin; ++c) {
          const double* x = in.data() + int64_t(c) * n;
          const double* y = out.data() + int64_t(c) * n;
          double* g = gout.data() + int64_t(c) * n;
          double mu = 0;
          for (int64_t i = 0; i < n; ++i) mu += x[i];
          mu /= double(n);
          double var = 0;
          for (int64_t i = 0; i < n; ++i) var += (x[i] - mu) * (x[i] - mu);
          var /= double(n);
          double inv = 1.0 / std::sqrt(var + detail::kInormEps);
          double gmean = 0, gymean = 0;
          for (int64_t i = 0; i < n; ++i) {
            gmean += g[i];
            gymean += g[i] * y[i];
          }
          gmean /= double(n);
          gymean /= double(n);
          for (int64_t i = 0; i < n; ++i) g[i] = inv * (g[i] - gmean - y[i] * gymean);
        }
        break;
      }
      case DecoderLayer::Kind::lrelu:
        for (size_t i = 0; i < gout.size(); ++i)
          if (in[i] < 0) gout[i] *= dec.leaky_slope;
        break;
      case DecoderLayer::Kind::upsample: {
        Dims3 dout = cache.dims[size_t(li) + 1];
        std::vector<double> gin(in.size(), 0.0);
        for (int c = 0; c < chin; ++c) {
          double* gi = gin.data() + int64_t(c) * voxel_count(din);
          const double* go = gout.data() + int64_t(c) * voxel_count(dout);
          for (int x = 0; x < dout[0]; ++x)
            for (int y = 0; y < dout[1]; ++y)
              for (int z = 0; z < dout[2]; ++z)
                gi[linear_index(din, x / 2, y / 2, z / 2)] +=
                    go[linear_index(dout, x, y, z)];
        }
        gout = std::move(gin);
        break;
      }
      case DecoderLayer::Kind::tanh_scale:
        for (size_t i = 0; i < gout.size(); ++i) {
          double t = out[i] / dec.max_displacement;
          gout[i] *= dec.max_displacement * (1.0 - t * t);
        }
        break;
    }
  }
  return gtheta;
}

// ---------------------------------------------------------------------------
// Motion model wrapper

struct MotionModel {
  DvfGenerator kind = DvfGenerator::direct_grid;
  int n_bases = 2;
  Dims3 coarse_dims{0, 0, 0};
  double max_displacement = 8.0;
  StateCoefficients coeff;
  std::vector<double> grids;  // direct_grid parameters, [basis][comp][vox]
  ConvDecoder decoder;        // conv_decoder parameters
};

inline MotionModel make_motion_model(DvfGenerator kind, int n_bases,
                                     const std::vector<double>& alphas,
                                     const Dims3& coarse_dims, double max_displacement,
                                     uint64_t seed) {
  if (n_bases < 1) throw std::invalid_argument("n_bases must be >= 1");
  MotionModel m;
  m.kind = kind;
  m.n_bases = n_bases;
  m.coarse_dims = coarse_dims;
  m.max_displacement = max_displacement;
  m.coeff.n_bases = n_bases;
  m.coeff.alpha = alphas;
  m.coeff.beta.assign(alphas.size() * size_t(n_bases - 1), 0.0);
  if (kind == DvfGenerator::direct_grid) {
    m.grids.assign(size_t(n_bases) * 3 * voxel_count(coarse_dims), 0.0);
  } else {
    m.decoder = make_conv_decoder(coarse_dims, 3 * n_bases, max_displacement, seed);
  }
  return m;
}

// cache must outlive the matching decoder_backward call (conv mode).
inline MotionBases generate_bases(const MotionModel& m, DecoderCache* cache = nullptr) {
  MotionBases b;
  b.n_bases = m.n_bases;
  b.coarse_dims = m.coarse_dims;
  if (m.kind == DvfGenerator::direct_grid) {
    b.f = m.grids;
  } else {
    b.f = decoder_forward(m.decoder, cache);
    if (int64_t(b.f.size()) != int64_t(m.n_bases) * 3 * voxel_count(m.coarse_dims))
      throw std::logic_error("decoder emitted wrong channel count");
  }
  return b;
}

// ---------------------------------------------------------------------------
// Upsampling and warping

// Trilinear x4 upsampling (align-corners-false coordinates, border clamp);
// displacement values are scaled by 4 to convert coarse voxels to fine.
inline VectorField upsample_dvf(const VectorField& coarse, const Dims3& target) {
  const Dims3& cd = coarse.dims();
  for (int d = 0; d < 3; ++d)
    if (target[d] != 4 * cd[d])
      throw std::invalid_argument("upsample target must be 4x the coarse dims");
  VectorField fine(target);
  for (int c = 0; c < 3; ++c) {
    const RealVolume& src = coarse.comp[c];
    RealVolume& dst = fine.comp[c];
    parallel_for(voxel_count(target), [&](int64_t b, int64_t e) {
      for (int64_t j = b; j < e; ++j) {
        int z = int(j % target[2]);
        int y = int((j / target[2]) % target[1]);
        int x = int(j / (int64_t(target[1]) * target[2]));
        double cx = (x + 0.5) / 4.0 - 0.5;
        double cy = (y + 0.5) / 4.0 - 0.5;
        double cz = (z + 0.5) / 4.0 - 0.5;
        dst.data[j] = 4.0 * sample_trilinear(src, cx, cy, cz);
      }
    });
  }
  return fine;
}

// Exact adjoint of upsample_dvf (including the x4 value scaling).
inline VectorField upsample_dvf_adjoint(const VectorField& fine_grad, const Dims3& coarse_dims) {
  const Dims3& fd = fine_grad.dims();
  for (int d = 0; d < 3; ++d)
    if (fd[d] != 4 * coarse_dims[d]) throw std::invalid_argument("dims mismatch");
  VectorField out(coarse_dims);
  for (int c = 0; c < 3; ++c) {
    const RealVolume& g = fine_grad.comp[c];
    RealVolume& dst = out.comp[c];
    for (int x = 0; x < fd[0]; ++x)
      for (int y = 0; y < fd[1]; ++y)
        for (int z = 0; z < fd[2]; ++z) {
          TrilinearCell cell(coarse_dims, (x + 0.5) / 4.0 - 0.5, (y + 0.5) / 4.0 - 0.5,
                             (z + 0.5) / 4.0 - 0.5);
          double gv = 4.0 * g.at(x, y, z);
          for (int k = 0; k < 8; ++k)
            dst.data[cell.index(coarse_dims, k)] += cell.weight(k) * gv;
        }
  }
  return out;
}

// Backward warp: out(j) = v(j + u(j)), trilinear on real and imaginary parts,
// border clamp.
inline ComplexVolume warp(const ComplexVolume& v, const VectorField& u) {
  if (!same_dims(v.dims, u.dims())) throw std::invalid_argument("warp dims mismatch");
  const Dims3& d = v.dims;
  ComplexVolume out(d);
  parallel_for(voxel_count(d), [&](int64_t b, int64_t e) {
    for (int64_t j = b; j < e; ++j) {
      int z = int(j % d[2]);
      int y = int((j / d[2]) % d[1]);
      int x = int(j / (int64_t(d[1]) * d[2]));
      out.data[j] = sample_trilinear(v, x + u.comp[0].data[j], y + u.comp[1].data[j],
                                     z + u.comp[2].data[j]);
    }
  });
  return out;
}

struct WarpGrads {
  ComplexVolume v;  // dL/d(source image), packed like the upstream gradient
  VectorField u;    // dL/d(displacement)
};

// Serial scatter keeps the accumulation order fixed; callers parallelize
// across states instead.
inline WarpGrads warp_backward(const ComplexVolume& v, const VectorField& u,
                               const ComplexVolume& upstream) {
  if (!same_dims(v.dims, u.dims()) || !same_dims(v.dims, upstream.dims))
    throw std::invalid_argument("warp_backward dims mismatch");
  const Dims3& d = v.dims;
  WarpGrads g{ComplexVolume(d), VectorField(d)};
  for (int x = 0; x < d[0]; ++x)
    for (int y = 0; y < d[1]; ++y)
      for (int z = 0; z < d[2]; ++z) {
        int64_t j = linear_index(d, x, y, z);
        cplx up = upstream.data[j];
        TrilinearCell cell(d, x + u.comp[0].data[j], y + u.comp[1].data[j],
                           z + u.comp[2].data[j]);
        cplx corner[8];
        for (int k = 0; k < 8; ++k) {
          int64_t idx = cell.index(d, k);
          corner[k] = v.data[idx];
          g.v.data[idx] += cell.weight(k) * up;
        }
        for (int dim = 0; dim < 3; ++dim) {
          if (cell.clamped[dim]) continue;  // clamp region has zero slope
          cplx slope{};
          for (int k = 0; k < 8; ++k) {
            double w = 1.0;
            for (int o = 0; o < 3; ++o) {
              if (o == dim) continue;
              w *= (k >> o & 1) ? cell.f[o] : 1.0 - cell.f[o];
            }
            slope += ((k >> dim & 1) ? w : -w) * corner[k];
          }
          g.u.comp[dim].data[j] =
              up.real() * slope.real() + up.imag() * slope.imag();
        }
      }
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoint: magic "GSMM", version, generator kind, dims, coefficients and
// generator parameters in float64.

inline void write_motion_model(const std::string& path, const MotionModel& m) {
  auto os = open_output(path);
  write_magic(os, "GSMM");
  write_u32(os, 1);
  write_u32(os, m.kind == DvfGenerator::direct_grid ? 0 : 1);
  write_u32(os, uint32_t(m.n_bases));
  write_u32(os, uint32_t(m.coeff.n_states()));
  for (int d = 0; d < 3; ++d) write_u32(os, uint32_t(m.coarse_dims[d]));
  write_f64(os, m.max_displacement);
  for (double a : m.coeff.alpha) write_f64(os, a);
  for (double b : m.coeff.beta) write_f64(os, b);
  if (m.kind == DvfGenerator::direct_grid) {
    write_u32(os, uint32_t(m.grids.size()));
    for (double v : m.grids) write_f64(os, v);
  } else {
    write_u32(os, uint32_t(m.decoder.latent_channels));
    for (int d = 0; d < 3; ++d) write_u32(os, uint32_t(m.decoder.latent_dims[d]));
    write_u32(os, uint32_t(m.decoder.theta.size()));
    write_u32(os, uint32_t(m.decoder.latent.size()));
    for (double v : m.decoder.theta) write_f64(os, v);
    for (double v : m.decoder.latent) write_f64(os, v);
  }
  if (!os) throw std::runtime_error("short write: " + path);
}

inline MotionModel read_motion_model(const std::string& path) {
  auto is = open_input(path);
  check_magic(is, "GSMM", path);
  if (read_u32(is) != 1) throw std::runtime_error("unsupported motion checkpoint version");
  uint32_t kind = read_u32(is);
  MotionModel m;
  m.kind = kind == 0 ? DvfGenerator::direct_grid : DvfGenerator::conv_decoder;
  m.n_bases = int(read_u32(is));
  int n_states = int(read_u32(is));
  for (int d = 0; d < 3; ++d) m.coarse_dims[d] = int(read_u32(is));
  m.max_displacement = read_f64(is);
  m.coeff.n_bases = m.n_bases;
  m.coeff.alpha.resize(size_t(n_states));
  for (double& a : m.coeff.alpha) a = read_f64(is);
  m.coeff.beta.resize(size_t(n_states) * size_t(m.n_bases - 1));
  for (double& b : m.coeff.beta) b = read_f64(is);
  if (m.kind == DvfGenerator::direct_grid) {
    m.grids.resize(read_u32(is));
    for (double& v : m.grids) v = read_f64(is);
  } else {
    int lc = int(read_u32(is));
    Dims3 ld;
    for (int d = 0; d < 3; ++d) ld[d] = int(read_u32(is));
    size_t nt = read_u32(is), nl = read_u32(is);
    m.decoder = make_conv_decoder(m.coarse_dims, 3 * m.n_bases, m.max_displacement, 0,
                                  ld[0], lc);
    if (m.decoder.theta.size() != nt || m.decoder.latent.size() != nl)
      throw std::runtime_error("motion checkpoint shape mismatch");
    for (double& v : m.decoder.theta) v = read_f64(is);
    for (double& v : m.decoder.latent) v = read_f64(is);
  }
  if (!is) throw std::runtime_error("short read: " + path);
  return m;
}

}  // namespace gsmr
