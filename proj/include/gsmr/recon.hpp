#pragma once

// Self-supervised reconstruction: the Gaussian reference volume is warped per
// motion state, pushed through coil-weighted NUFFTs and compared against the
// binned acquisition. Gradient convention throughout: packed complex
// g = dL/d(re) + i dL/d(im), so complex-linear ops backpropagate via their
// adjoints.

#include <cstdio>

#include "gsmr/core.hpp"
#include "gsmr/gating.hpp"
#include "gsmr/gaussian_field.hpp"
#include "gsmr/motion.hpp"
#include "gsmr/nufft.hpp"
#include "gsmr/phantom.hpp"
#include "gsmr/trajectory.hpp"

namespace gsmr {

// ---------------------------------------------------------------------------
// Regularizers

// Isotropic total variation applied to real and imaginary parts separately,
// normalized by voxel count; eps = 1e-8 inside the square root.
inline double tv_loss(const ComplexVolume& v, ComplexVolume* grad = nullptr) {
  constexpr double eps = 1e-8;
  const Dims3& d = v.dims;
  double n = double(voxel_count(d));
  if (grad && !same_dims(grad->dims, d)) throw std::invalid_argument("tv grad dims mismatch");
  double loss = 0;
  int64_t sy = d[2], sx = int64_t(d[1]) * d[2];
  for (int x = 0; x < d[0]; ++x)
    for (int y = 0; y < d[1]; ++y)
      for (int z = 0; z < d[2]; ++z) {
        int64_t j = linear_index(d, x, y, z);
        int64_t nb[3] = {x + 1 < d[0] ? j + sx : -1, y + 1 < d[1] ? j + sy : -1,
                         z + 1 < d[2] ? j + 1 : -1};
        double sre = eps, sim = eps;
        double dre[3] = {0, 0, 0}, dim[3] = {0, 0, 0};
        for (int a = 0; a < 3; ++a) {
          if (nb[a] < 0) continue;
          dre[a] = v.data[nb[a]].real() - v.data[j].real();
          dim[a] = v.data[nb[a]].imag() - v.data[j].imag();
          sre += dre[a] * dre[a];
          sim += dim[a] * dim[a];
        }
        double rre = std::sqrt(sre), rim = std::sqrt(sim);
        loss += rre + rim;
        if (grad) {
          for (int a = 0; a < 3; ++a) {
            if (nb[a] < 0) continue;
            double gre = dre[a] / (rre * n), gim = dim[a] / (rim * n);
            grad->data[nb[a]] += cplx(gre, gim);
            grad->data[j] -= cplx(gre, gim);
          }
        }
      }
  return loss / n;
}

// Sum over states and forward differences of the squared displacement
// difference, averaged over coarse voxels.
inline double spatial_smoothness_loss(const std::vector<VectorField>& us,
                                      std::vector<VectorField>* grads = nullptr) {
  if (us.empty()) return 0;
  const Dims3& d = us.front().dims();
  double n = double(voxel_count(d));
  if (grads) {
    grads->clear();
    for (size_t t = 0; t < us.size(); ++t) grads->emplace_back(d);
  }
  double loss = 0;
  int64_t sy = d[2], sx = int64_t(d[1]) * d[2];
  for (size_t t = 0; t < us.size(); ++t) {
    const VectorField& u = us[t];
    if (!same_dims(u.dims(), d)) throw std::invalid_argument("state DVF dims mismatch");
    for (int x = 0; x < d[0]; ++x)
      for (int y = 0; y < d[1]; ++y)
        for (int z = 0; z < d[2]; ++z) {
          int64_t j = linear_index(d, x, y, z);
          int64_t nb[3] = {x + 1 < d[0] ? j + sx : -1, y + 1 < d[1] ? j + sy : -1,
                           z + 1 < d[2] ? j + 1 : -1};
          for (int a = 0; a < 3; ++a) {
            if (nb[a] < 0) continue;
            for (int c = 0; c < 3; ++c) {
              double diff = u.comp[c].data[nb[a]] - u.comp[c].data[j];
              loss += diff * diff;
              if (grads) {
                double g = 2.0 * diff / n;
                (*grads)[t].comp[c].data[nb[a]] += g;
                (*grads)[t].comp[c].data[j] -= g;
              }
            }
          }
        }
  }
  return loss / n;
}

// Pairwise DVF consistency weighted by amplitude affinity:
//   w_ij = exp(-(s_i - s_j)^2 / (2 sigma^2 + eps)),  w_ii = 0,
//   d2_ij = mean_r |u_i(r) - u_j(r)|^2,
//   loss  = sum_ij w_ij d2_ij / (sum_ij w_ij + eps),
// with sigma the population std of the state amplitudes.
inline double phase_smoothness_loss(const std::vector<VectorField>& us,
                                    const std::vector<double>& amplitudes,
                                    std::vector<VectorField>* grads = nullptr) {
  constexpr double eps = 1e-8;
  size_t ns = us.size();
  if (amplitudes.size() != ns) throw std::invalid_argument("amplitude count mismatch");
  if (grads) {
    grads->clear();
    for (size_t t = 0; t < ns; ++t) grads->emplace_back(us[t].dims());
  }
  if (ns < 2) return 0;
  const Dims3& d = us.front().dims();
  double n = double(voxel_count(d));
  double mean = 0;
  for (double s : amplitudes) mean += s;
  mean /= double(ns);
  double var = 0;
  for (double s : amplitudes) var += (s - mean) * (s - mean);
  var /= double(ns);

  std::vector<double> w(ns * ns, 0.0);
  double wsum = 0;
  for (size_t i = 0; i < ns; ++i)
    for (size_t j = 0; j < ns; ++j) {
      if (i == j) continue;  // w_ii = 0
      double ds = amplitudes[i] - amplitudes[j];
      w[i * ns + j] = std::exp(-ds * ds / (2.0 * var + eps));
      wsum += w[i * ns + j];
    }
  double denom = wsum + eps;

  double num = 0;
  for (size_t i = 0; i < ns; ++i)
    for (size_t j = i + 1; j < ns; ++j) {
      double wij = w[i * ns + j] + w[j * ns + i];  // both ordered pairs
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        const double* a = us[i].comp[c].data.data();
        const double* b = us[j].comp[c].data.data();
        for (int64_t k = 0; k < int64_t(n); ++k) {
          double diff = a[k] - b[k];
          d2 += diff * diff;
        }
      }
      d2 /= n;
      num += wij * d2;
      if (grads) {
        double g = 2.0 * wij / (denom * n);
        for (int c = 0; c < 3; ++c) {
          const double* a = us[i].comp[c].data.data();
          const double* b = us[j].comp[c].data.data();
          double* gi = (*grads)[i].comp[c].data.data();
          double* gj = (*grads)[j].comp[c].data.data();
          for (int64_t k = 0; k < int64_t(n); ++k) {
            double diff = a[k] - b[k];
            gi[k] += g * diff;
            gj[k] -= g * diff;
          }
        }
      }
    }
  return num / denom;
}

// ---------------------------------------------------------------------------
// Data fidelity

// Per-state view of the acquisition: subset trajectory, per-coil samples and
// residual weights, plus the 1/n normalizer (spokes * samples * coils).
struct StateData {
  RadialTrajectory traj;
  std::vector<std::vector<cplx>> coil_samples;
  std::vector<double> weights;
  double norm = 1;
};

inline std::vector<StateData> prepare_state_data(const RadialTrajectory& traj,
                                                 const RadialKSpace& ks,
                                                 const MotionStateBins& bins,
                                                 KspaceWeighting wkind) {
  if (ks.n_spokes != traj.n_spokes || ks.samples_per_spoke != traj.samples_per_spoke)
    throw std::invalid_argument("k-space / trajectory shape mismatch");
  std::vector<StateData> out(size_t(bins.n_states()));
  for (int t = 0; t < bins.n_states(); ++t) {
    StateData& sd = out[size_t(t)];
    const auto& spokes = bins.spokes[size_t(t)];
    if (spokes.empty()) throw std::invalid_argument("state with zero spokes");
    sd.traj = subset_trajectory(traj, spokes);
    sd.weights = sample_weights(sd.traj, wkind);
    sd.coil_samples.resize(size_t(ks.n_coils));
    for (int c = 0; c < ks.n_coils; ++c)
      sd.coil_samples[size_t(c)] = subset_samples(ks.coil(c), ks.samples_per_spoke, spokes);
    sd.norm = double(sd.traj.n_samples()) * double(ks.n_coils);
  }
  return out;
}

// L_t = (1/n_t) sum_c sum_k |w_k (NUFFT(C_c . Y)_k - m_k)|^2. If grad is
// non-null the packed gradient dL/dY is accumulated into it (coils in index
// order, so the result is independent of threading).
inline double data_fidelity_state(const ComplexVolume& y, const StateData& sd,
                                  const CoilSet& coils, const NufftOptions& opt,
                                  ComplexVolume* grad = nullptr) {
  if (!same_dims(y.dims, coils.dims())) throw std::invalid_argument("coil dims mismatch");
  double loss = 0;
  int64_t nv = y.size();
  ComplexVolume weighted(y.dims);
  for (size_t c = 0; c < sd.coil_samples.size(); ++c) {
    for (int64_t j = 0; j < nv; ++j) weighted.data[j] = coils.maps[c].data[j] * y.data[j];
    std::vector<cplx> pred = nufft_forward(weighted, sd.traj, opt);
    const auto& m = sd.coil_samples[c];
    for (size_t k = 0; k < pred.size(); ++k) {
      cplx r = pred[k] - m[k];
      double w2 = sd.weights[k] * sd.weights[k];
      loss += w2 * std::norm(r);
      pred[k] = (2.0 * w2 / sd.norm) * r;  // reuse as upstream sample gradient
    }
    if (grad) {
      ComplexVolume adj = nufft_adjoint(pred, sd.traj, y.dims, opt);
      for (int64_t j = 0; j < nv; ++j)
        grad->data[j] += std::conj(coils.maps[c].data[j]) * adj.data[j];
    }
  }
  return loss / sd.norm;
}

// ---------------------------------------------------------------------------
// Composite objective

struct IterationLosses {
  double total = 0, data = 0, tv = 0, spatial = 0, phase = 0;
  std::vector<double> per_state;
};

struct ObjectiveResult {
  IterationLosses losses;
  CloudGrads cloud;               // per-Gaussian gradients
  std::vector<double> generator;  // grids (direct) or theta (decoder)
  std::vector<double> beta;
};

// One full forward + backward pass of the training objective
//   sum_t L_t(data) + lambda_tv TV(X) + lambda_sp L_spatial + lambda_ph L_phase
// over the current cloud and motion model. active_state = -1 evaluates the
// data term for every state; >= 0 restricts it to that state (regularizers
// always see all states). Deterministic for any thread count: parallel work
// is reduced in fixed index order.
inline ObjectiveResult evaluate_objective(const GaussianCloud& cloud, const MotionModel& motion,
                                          const std::vector<StateData>& states,
                                          const CoilSet& coils,
                                          const std::vector<double>& amplitudes,
                                          double lambda_tv, double lambda_spatial,
                                          double lambda_phase, const NufftOptions& nopt,
                                          int active_state = -1) {
  const Dims3 dims = cloud.grid_dims;
  const Dims3& coarse = motion.coarse_dims;
  int ns = int(states.size());
  if (int(amplitudes.size()) != ns || motion.coeff.n_states() != ns)
    throw std::invalid_argument("state count mismatch");

  ComplexVolume x = voxelize(cloud);
  DecoderCache cache;
  MotionBases bases = generate_bases(
      motion, motion.kind == DvfGenerator::conv_decoder ? &cache : nullptr);
  std::vector<VectorField> compose(static_cast<size_t>(ns)), u(static_cast<size_t>(ns));
  for (int t = 0; t < ns; ++t) compose[size_t(t)] = compose_dvf(bases, motion.coeff, t);
  for (int t = 0; t < ns; ++t) {
    u[size_t(t)] = VectorField(coarse);
    for (int c = 0; c < 3; ++c)
      for (int64_t j = 0; j < voxel_count(coarse); ++j)
        u[size_t(t)].comp[c].data[j] =
            compose[size_t(t)].comp[c].data[j] - compose[0].comp[c].data[j];
  }

  std::vector<int> active;
  if (active_state >= 0)
    active.push_back(active_state);
  else
    for (int t = 0; t < ns; ++t) active.push_back(t);

  // State 0 is the identity warp by construction (u_0 = compose_0 - compose_0).
  std::vector<VectorField> fine(static_cast<size_t>(ns));
  std::vector<ComplexVolume> y(static_cast<size_t>(ns));
  for (int t : active) {
    if (t == 0) {
      y[0] = x;
      continue;
    }
    fine[size_t(t)] = upsample_dvf(u[size_t(t)], dims);
    y[size_t(t)] = warp(x, fine[size_t(t)]);
  }

  // Data fidelity per (state, coil) pair; fixed-order reduction.
  int nc = int(coils.n_coils());
  std::vector<double> pair_loss(active.size() * size_t(nc), 0.0);
  std::vector<ComplexVolume> pair_grad(active.size() * size_t(nc));
  parallel_tasks(int(active.size()) * nc, [&](int idx) {
    int t = active[size_t(idx / nc)];
    int c = idx % nc;
    const StateData& sd = states[size_t(t)];
    ComplexVolume weighted(dims);
    for (int64_t j = 0; j < voxel_count(dims); ++j)
      weighted.data[j] = coils.maps[size_t(c)].data[j] * y[size_t(t)].data[j];
    std::vector<cplx> pred = nufft_forward(weighted, sd.traj, nopt);
    double loss = 0;
    for (size_t k = 0; k < pred.size(); ++k) {
      cplx r = pred[k] - sd.coil_samples[size_t(c)][k];
      double w2 = sd.weights[k] * sd.weights[k];
      loss += w2 * std::norm(r);
      pred[k] = (2.0 * w2 / sd.norm) * r;
    }
    pair_loss[size_t(idx)] = loss / sd.norm;
    ComplexVolume adj = nufft_adjoint(pred, sd.traj, dims, nopt);
    for (int64_t j = 0; j < voxel_count(dims); ++j)
      adj.data[j] = std::conj(coils.maps[size_t(c)].data[j]) * adj.data[j];
    pair_grad[size_t(idx)] = std::move(adj);
  });

  ObjectiveResult res;
  res.losses.per_state.assign(size_t(ns), 0.0);
  std::vector<ComplexVolume> gy(static_cast<size_t>(ns));
  for (size_t a = 0; a < active.size(); ++a) {
    int t = active[a];
    gy[size_t(t)] = ComplexVolume(dims);
    for (int c = 0; c < nc; ++c) {
      size_t idx = a * size_t(nc) + size_t(c);
      res.losses.per_state[size_t(t)] += pair_loss[idx];
      for (int64_t j = 0; j < voxel_count(dims); ++j)
        gy[size_t(t)].data[j] += pair_grad[idx].data[j];
    }
    res.losses.data += res.losses.per_state[size_t(t)];
  }

  ComplexVolume gx(dims);
  res.losses.tv = tv_loss(x, &gx);
  for (auto& v : gx.data) v *= lambda_tv;
  std::vector<VectorField> g_sp, g_ph;
  res.losses.spatial = spatial_smoothness_loss(u, &g_sp);
  res.losses.phase = phase_smoothness_loss(u, amplitudes, &g_ph);
  res.losses.total = res.losses.data + lambda_tv * res.losses.tv +
                     lambda_spatial * res.losses.spatial + lambda_phase * res.losses.phase;

  // Backward through warp and upsampling. State 0's DVF is constant zero (not
  // a function of any parameter), so only the image gradient flows there.
  std::vector<VectorField> g_u(static_cast<size_t>(ns));
  for (int t = 0; t < ns; ++t) {
    bool has_data = gy[size_t(t)].size() > 0;
    if (t == 0) {
      if (has_data)
        for (int64_t j = 0; j < voxel_count(dims); ++j) gx.data[j] += gy[0].data[j];
      continue;
    }
    g_u[size_t(t)] = VectorField(coarse);
    if (has_data) {
      WarpGrads wg = warp_backward(x, fine[size_t(t)], gy[size_t(t)]);
      for (int64_t j = 0; j < voxel_count(dims); ++j) gx.data[j] += wg.v.data[j];
      g_u[size_t(t)] = upsample_dvf_adjoint(wg.u, coarse);
    }
    for (int c = 0; c < 3; ++c)
      for (int64_t j = 0; j < voxel_count(coarse); ++j)
        g_u[size_t(t)].comp[c].data[j] += lambda_spatial * g_sp[size_t(t)].comp[c].data[j] +
                                          lambda_phase * g_ph[size_t(t)].comp[c].data[j];
  }

  // u_t = compose_t - compose_0: compose_0 collects the negated sum.
  std::vector<VectorField> g_compose(static_cast<size_t>(ns));
  g_compose[0] = VectorField(coarse);
  for (int t = 1; t < ns; ++t) {
    g_compose[size_t(t)] = g_u[size_t(t)];
    for (int c = 0; c < 3; ++c)
      for (int64_t j = 0; j < voxel_count(coarse); ++j)
        g_compose[0].comp[c].data[j] -= g_u[size_t(t)].comp[c].data[j];
  }

  int nb = motion.n_bases;
  int64_t fs = voxel_count(coarse);
  std::vector<double> g_bases(size_t(nb) * 3 * size_t(fs), 0.0);
  res.beta.assign(motion.coeff.beta.size(), 0.0);
  for (int t = 0; t < ns; ++t)
    for (int b = 0; b < nb; ++b) {
      double cb = motion.coeff.coeff(t, b);
      for (int c = 0; c < 3; ++c) {
        const double* gc = g_compose[size_t(t)].comp[c].data.data();
        double* gb = g_bases.data() + (int64_t(b) * 3 + c) * fs;
        const double* bf = bases.comp(b, c);
        double dot = 0;
        for (int64_t j = 0; j < fs; ++j) {
          gb[j] += cb * gc[j];
          dot += bf[j] * gc[j];
        }
        if (b > 0) res.beta[size_t(t) * size_t(nb - 1) + size_t(b - 1)] += dot;
      }
    }
  if (motion.kind == DvfGenerator::direct_grid)
    res.generator = std::move(g_bases);
  else
    res.generator = decoder_backward(motion.decoder, cache, std::move(g_bases));

  res.cloud = voxelize_backward(cloud, gx);
  return res;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamGroup {
  std::vector<double> m, v;
  int64_t t = 0;
};

// eps is added outside the square root: p -= lr * mhat / (sqrt(vhat) + eps).
inline void adam_step(AdamGroup& st, std::span<double> p, std::span<const double> g,
                      double lr, const char* name, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  if (p.size() != g.size()) throw std::invalid_argument("adam size mismatch");
  if (st.m.empty()) {
    st.m.assign(p.size(), 0.0);
    st.v.assign(p.size(), 0.0);
  }
  for (double gv : g)
    if (!std::isfinite(gv))
      throw std::runtime_error(std::string("non-finite gradient in parameter group '") +
                               name + "'");
  ++st.t;
  double c1 = 1.0 - std::pow(beta1, double(st.t));
  double c2 = 1.0 - std::pow(beta2, double(st.t));
  for (size_t i = 0; i < p.size(); ++i) {
    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
    p[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps);
  }
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  std::string checkpoint_dir;  // empty: no periodic checkpoints
  NufftOptions nufft;
};

struct TrainResult {
  GaussianCloud cloud;
  MotionModel motion;
  std::vector<IterationLosses> history;
  ComplexVolume baseline;  // calibrated density-compensated adjoint of state 0
};

inline void write_loss_history(const std::string& path,
                               const std::vector<IterationLosses>& history) {
  auto os = open_output(path);
  os << "iteration,data,tv,spatial,phase,total\n";
  char buf[160];
  for (size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, h.data, h.tv,
                  h.spatial, h.phase, h.total);
    os << buf;
  }
  if (!os) throw std::runtime_error("short write: " + path);
}

namespace detail {

// Least-squares complex scale of the state-0 forward model against the
// measured samples; brings adjoint-seeded intensities onto acquisition scale.
inline cplx calibration_scale(const ComplexVolume& vol, const StateData& sd,
                              const CoilSet& coils, const NufftOptions& opt) {
  cplx num = 0;
  double den = 0;
  ComplexVolume weighted(vol.dims);
  for (size_t c = 0; c < sd.coil_samples.size(); ++c) {
    for (int64_t j = 0; j < vol.size(); ++j)
      weighted.data[j] = coils.maps[c].data[j] * vol.data[j];
    std::vector<cplx> pred = nufft_forward(weighted, sd.traj, opt);
    for (size_t k = 0; k < pred.size(); ++k) {
      double w2 = sd.weights[k] * sd.weights[k];
      num += w2 * std::conj(pred[k]) * sd.coil_samples[c][k];
      den += w2 * std::norm(pred[k]);
    }
  }
  if (den == 0) return cplx(1, 0);
  return num / den;
}

}  // namespace detail

inline TrainResult train(const ReconConfig& cfg, const RadialTrajectory& traj,
                         const RadialKSpace& ks, const MotionStateBins& bins,
                         const CoilSet& coils, const TrainOptions& topt = {}) {
  cfg.validate();
  Dims3 dims = cfg.grid_dims();
  if (!same_dims(coils.dims(), dims))
    throw std::invalid_argument("coil maps do not match the reconstruction grid");
  if (dims[0] % 4 || dims[1] % 4 || dims[2] % 4)
    throw std::invalid_argument("grid_size must be divisible by 4 for the motion model");
  if (bins.n_states() < 2) throw std::invalid_argument("need at least two motion states");
  int ns = bins.n_states();

  std::vector<StateData> states = prepare_state_data(traj, ks, bins, cfg.kspace_weighting);

  // Seed volume from the reference (end-expiration, state 0) subset.
  ComplexVolume seed = coil_combined_adjoint(states[0].traj, states[0].coil_samples, coils,
                                             cfg.kspace_weighting, topt.nufft);
  cplx cal = detail::calibration_scale(seed, states[0], coils, topt.nufft);
  for (auto& v : seed.data) v *= cal;

  TrainResult res;
  res.baseline = seed;

  switch (cfg.init_strategy) {
    case InitStrategy::random:
      res.cloud = init_random(cfg.rng_seed, cfg.n_gaussians, seed, cfg.scale_multiplier);
      break;
    case InitStrategy::equal_space:
      res.cloud = init_equal_space(cfg.n_gaussians, seed, cfg.scale_multiplier);
      break;
    case InitStrategy::multi_resolution:
      res.cloud = init_multi_resolution(cfg.n_gaussians, states[0].traj,
                                        states[0].coil_samples, coils,
                                        cfg.kspace_weighting, cfg.scale_multiplier,
                                        topt.nufft);
      break;
  }
  {
    // Second calibration: put the voxelized cloud itself on acquisition scale.
    ComplexVolume x0 = voxelize(res.cloud);
    cplx s2 = detail::calibration_scale(x0, states[0], coils, topt.nufft);
    for (auto& pt : res.cloud.pts) pt.rho *= s2;
  }

  Dims3 coarse{dims[0] / 4, dims[1] / 4, dims[2] / 4};
  res.motion = make_motion_model(cfg.dvf_generator, cfg.n_bases, bins.amplitude, coarse,
                                 cfg.resolved_max_displacement(), cfg.rng_seed + 1);

  int64_t m = res.cloud.size();
  std::vector<double> p_rho(size_t(2 * m)), p_logs(size_t(3 * m)), p_quat(size_t(4 * m));
  std::vector<double> g_rho(p_rho.size()), g_logs(p_logs.size()), g_quat(p_quat.size());
  AdamGroup a_rho, a_logs, a_quat, a_gen, a_beta;

  for (int iter = 0; iter < cfg.n_iterations; ++iter) {
    int active = cfg.cycle_states ? iter % ns : -1;
    ObjectiveResult obj =
        evaluate_objective(res.cloud, res.motion, states, coils, bins.amplitude,
                           cfg.lambda_tv, cfg.lambda_spatial, cfg.lambda_phase, topt.nufft,
                           active);

    for (int64_t i = 0; i < m; ++i) {
      p_rho[size_t(2 * i)] = res.cloud.pts[size_t(i)].rho.real();
      p_rho[size_t(2 * i + 1)] = res.cloud.pts[size_t(i)].rho.imag();
      g_rho[size_t(2 * i)] = obj.cloud.rho[size_t(i)].real();
      g_rho[size_t(2 * i + 1)] = obj.cloud.rho[size_t(i)].imag();
      for (int a = 0; a < 3; ++a) {
        p_logs[size_t(3 * i + a)] = res.cloud.pts[size_t(i)].log_s[size_t(a)];
        g_logs[size_t(3 * i + a)] = obj.cloud.log_s[size_t(i)][size_t(a)];
      }
      for (int a = 0; a < 4; ++a) {
        p_quat[size_t(4 * i + a)] = res.cloud.pts[size_t(i)].q[size_t(a)];
        g_quat[size_t(4 * i + a)] = obj.cloud.q[size_t(i)][size_t(a)];
      }
    }

    adam_step(a_rho, p_rho, g_rho, cfg.lr_rho, "rho");
    adam_step(a_logs, p_logs, g_logs, cfg.lr_scale, "log_scale");
    adam_step(a_quat, p_quat, g_quat, cfg.lr_rot, "rotation");
    if (res.motion.kind == DvfGenerator::direct_grid)
      adam_step(a_gen, res.motion.grids, obj.generator, cfg.lr_motion, "motion_grid");
    else
      adam_step(a_gen, res.motion.decoder.theta, obj.generator, cfg.lr_motion, "decoder");
    if (!obj.beta.empty())
      adam_step(a_beta, res.motion.coeff.beta, obj.beta, cfg.lr_motion, "beta");

    for (int64_t i = 0; i < m; ++i) {
      res.cloud.pts[size_t(i)].rho = cplx(p_rho[size_t(2 * i)], p_rho[size_t(2 * i + 1)]);
      for (int a = 0; a < 3; ++a)
        res.cloud.pts[size_t(i)].log_s[size_t(a)] = p_logs[size_t(3 * i + a)];
      for (int a = 0; a < 4; ++a)
        res.cloud.pts[size_t(i)].q[size_t(a)] = p_quat[size_t(4 * i + a)];
    }

    res.history.push_back(std::move(obj.losses));
    const IterationLosses& h = res.history.back();
    if (!std::isfinite(h.total))
      throw std::runtime_error("loss diverged to non-finite value at iteration " +
                               std::to_string(iter));
    if (h.total > 10.0 * res.history.front().total) {
      char msg[256];
      std::snprintf(msg, sizeof msg,
                    "training diverged at iteration %d: total %.6g exceeds 10x initial "
                    "%.6g (data %.6g, tv %.6g, spatial %.6g, phase %.6g)",
                    iter, h.total, res.history.front().total, h.data, h.tv, h.spatial,
                    h.phase);
      throw std::runtime_error(msg);
    }

    if (!topt.checkpoint_dir.empty() && cfg.checkpoint_interval > 0 &&
        (iter + 1) % cfg.checkpoint_interval == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "/cloud_%06d.gspc", iter + 1);
      write_cloud(topt.checkpoint_dir + name, res.cloud);
      std::snprintf(name, sizeof name, "/motion_%06d.gsmm", iter + 1);
      write_motion_model(topt.checkpoint_dir + name, res.motion);
    }
  }
  return res;
}

// Warped state volumes for a trained model (state 0 equals the reference).
inline std::vector<ComplexVolume> render_states(const GaussianCloud& cloud,
                                                const MotionModel& motion) {
  ComplexVolume x = voxelize(cloud);
  MotionBases bases = generate_bases(motion);
  int ns = motion.coeff.n_states();
  std::vector<VectorField> compose(static_cast<size_t>(ns));
  for (int t = 0; t < ns; ++t) compose[size_t(t)] = compose_dvf(bases, motion.coeff, t);
  std::vector<ComplexVolume> out;
  out.reserve(size_t(ns));
  for (int t = 0; t < ns; ++t) {
    if (t == 0) {
      out.push_back(x);
      continue;
    }
    VectorField u(motion.coarse_dims);
    for (int c = 0; c < 3; ++c)
      for (int64_t j = 0; j < voxel_count(motion.coarse_dims); ++j)
        u.comp[c].data[j] =
            compose[size_t(t)].comp[c].data[j] - compose[0].comp[c].data[j];
    out.push_back(warp(x, upsample_dvf(u, cloud.grid_dims)));
  }
  return out;
}

// Full-resolution state DVF (coarse composition upsampled) for a trained model.
inline VectorField state_dvf_full(const GaussianCloud& cloud, const MotionModel& motion,
                                  int state) {
  MotionBases bases = generate_bases(motion);
  VectorField c0 = compose_dvf(bases, motion.coeff, 0);
  VectorField ct = compose_dvf(bases, motion.coeff, state);
  VectorField u(motion.coarse_dims);
  for (int c = 0; c < 3; ++c)
    for (int64_t j = 0; j < voxel_count(motion.coarse_dims); ++j)
      u.comp[c].data[j] = ct.comp[c].data[j] - c0.comp[c].data[j];
  return upsample_dvf(u, cloud.grid_dims);
}

}  // namespace gsmr
