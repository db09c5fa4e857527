#pragma once

// Respiratory self-gating: surrogate extraction from the per-spoke k-space
// center, zero-phase low-pass filtering, and equal-count state binning.

#include <Eigen/Dense>

#include "gsmr/core.hpp"
#include "gsmr/trajectory.hpp"

namespace gsmr {

struct RespiratorySignal {
  std::vector<double> amplitude;  // per spoke, zero mean
  double tr_seconds = 0.0;

  int n_spokes() const { return int(amplitude.size()); }
};

// Magnitude-PCA coil combination of the DC (first) sample of every spoke:
// per-coil series are centered, projected onto the leading principal
// component, and sign-fixed to correlate positively with the coil-mean series.
inline RespiratorySignal extract_dc_signal(const RadialKSpace& ks) {
  if (ks.n_spokes < 4) throw std::invalid_argument("need at least 4 spokes for self-gating");
  int nc = ks.n_coils, np = ks.n_spokes;
  Eigen::MatrixXd centered(nc, np);
  for (int c = 0; c < nc; ++c) {
    double mean = 0;
    for (int p = 0; p < np; ++p) {
      centered(c, p) = std::abs(ks.at(c, p, 0));
      mean += centered(c, p);
    }
    mean /= np;
    for (int p = 0; p < np; ++p) centered(c, p) -= mean;
  }
  Eigen::MatrixXd cov = centered * centered.transpose() / double(np);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Eigen::VectorXd pc1 = eig.eigenvectors().col(nc - 1);  // largest eigenvalue

  RespiratorySignal sig;
  sig.tr_seconds = ks.tr_seconds;
  sig.amplitude.resize(size_t(np));
  double dot = 0;
  for (int p = 0; p < np; ++p) {
    double v = 0, ref = 0;
    for (int c = 0; c < nc; ++c) {
      v += pc1[c] * centered(c, p);
      ref += centered(c, p);
    }
    sig.amplitude[size_t(p)] = v;
    dot += v * ref;
  }
  if (dot < 0)
    for (double& v : sig.amplitude) v = -v;
  return sig;  // zero mean by construction (projection of centered rows)
}

namespace detail {

struct Biquad {
  double b0, b1, b2, a1, a2;  // normalized (a0 = 1)

  // One second-order low-pass section of a Butterworth cascade.
  static Biquad lowpass(double cutoff_hz, double fs_hz, double q) {
    double w0 = 2.0 * M_PI * cutoff_hz / fs_hz;
    double alpha = std::sin(w0) / (2.0 * q);
    double c = std::cos(w0);
    double a0 = 1.0 + alpha;
    return {(1 - c) / 2 / a0, (1 - c) / a0, (1 - c) / 2 / a0, -2 * c / a0, (1 - alpha) / a0};
  }

  // Direct form II transposed with steady-state initial conditions scaled by
  // the first sample, so a constant input produces a constant output.
  void filter(std::vector<double>& x) const {
    double k = (b0 + b1 + b2) / (1.0 + a1 + a2);
    double z2 = (b2 - a2 * k) * x[0];
    double z1 = (b1 - a1 * k + b2 - a2 * k) * x[0];
    for (double& v : x) {
      double y = b0 * v + z1;
      z1 = b1 * v - a1 * y + z2;
      z2 = b2 * v - a2 * y;
      v = y;
    }
  }
};

}  // namespace detail

// Zero-phase 4th-order Butterworth low-pass (two cascaded biquads applied
// forward and backward) with odd-reflection edge padding; the output is
// re-centered to zero mean.
inline RespiratorySignal lowpass_filter(const RespiratorySignal& sig, double cutoff_hz) {
  double fs = 1.0 / sig.tr_seconds;
  if (!(cutoff_hz > 0) || !(cutoff_hz < 0.5 * fs))
    throw std::invalid_argument("cutoff must lie in (0, Nyquist)");
  int n = sig.n_spokes();
  if (n == 0) return sig;

  // Butterworth pole pair Q factors for order 4.
  detail::Biquad s1 = detail::Biquad::lowpass(cutoff_hz, fs, 1.0 / (2.0 * std::cos(M_PI / 8)));
  detail::Biquad s2 = detail::Biquad::lowpass(cutoff_hz, fs, 1.0 / (2.0 * std::cos(3 * M_PI / 8)));

  int pad = std::min(n - 1, 24);
  std::vector<double> x;
  x.reserve(size_t(n + 2 * pad));
  for (int i = pad; i >= 1; --i) x.push_back(2 * sig.amplitude[0] - sig.amplitude[size_t(i)]);
  x.insert(x.end(), sig.amplitude.begin(), sig.amplitude.end());
  for (int i = 1; i <= pad; ++i)
    x.push_back(2 * sig.amplitude[size_t(n - 1)] - sig.amplitude[size_t(n - 1 - i)]);

  s1.filter(x);
  s2.filter(x);
  std::reverse(x.begin(), x.end());
  s1.filter(x);
  s2.filter(x);
  std::reverse(x.begin(), x.end());

  RespiratorySignal out;
  out.tr_seconds = sig.tr_seconds;
  out.amplitude.assign(x.begin() + pad, x.begin() + pad + n);
  double mean = 0;
  for (double v : out.amplitude) mean += v;
  mean /= n;
  for (double& v : out.amplitude) v -= mean;
  return out;
}

// Equal-count amplitude binning of arbitrary per-spoke values; ties broken by
// spoke index. State 0 holds the lowest amplitudes; when counts cannot be
// equal, the first (n mod n_states) states hold one extra spoke.
inline MotionStateBins bin_values(const std::vector<double>& values, int n_states) {
  int n = int(values.size());
  if (n_states < 1) throw std::invalid_argument("n_states must be >= 1");
  if (n < n_states) throw std::invalid_argument("need at least n_states spokes");
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[size_t(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (values[size_t(a)] != values[size_t(b)]) return values[size_t(a)] < values[size_t(b)];
    return a < b;
  });

  MotionStateBins bins;
  bins.spokes.resize(size_t(n_states));
  bins.amplitude.resize(size_t(n_states));
  int base = n / n_states, rem = n % n_states, pos = 0;
  for (int s = 0; s < n_states; ++s) {
    int count = base + (s < rem ? 1 : 0);
    std::vector<double> amps(static_cast<size_t>(count));
    auto& list = bins.spokes[size_t(s)];
    list.assign(order.begin() + pos, order.begin() + pos + count);
    for (int i = 0; i < count; ++i) amps[size_t(i)] = values[size_t(list[size_t(i)])];
    std::sort(list.begin(), list.end());
    // median of the state's amplitudes (values already sorted by construction)
    bins.amplitude[size_t(s)] =
        count % 2 ? amps[size_t(count / 2)]
                  : 0.5 * (amps[size_t(count / 2 - 1)] + amps[size_t(count / 2)]);
    pos += count;
  }
  return bins;
}

inline MotionStateBins bin_spokes(const RespiratorySignal& sig, int n_states) {
  return bin_values(sig.amplitude, n_states);
}

// Convenience pipeline used by the CLI: extract, filter, bin.
inline MotionStateBins gate_kspace(const RadialKSpace& ks, int n_states,
                                   double cutoff_hz = 0.75) {
  RespiratorySignal sig = extract_dc_signal(ks);
  sig = lowpass_filter(sig, cutoff_hz);
  return bin_spokes(sig, n_states);
}

}  // namespace gsmr
