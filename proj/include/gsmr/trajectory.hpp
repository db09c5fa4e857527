#pragma once

// Radial acquisition containers shared by the simulator, the transform
// between image and k-space, and the reconstruction engine.

#include <cmath>
#include <numeric>

#include "gsmr/core.hpp"

#include <json.hpp>

namespace gsmr {

// Center-out radial trajectory. k stores one unit-spaced triplet per sample,
// spoke-major, components in cycles/voxel with |k_d| <= 0.5.
struct RadialTrajectory {
  int n_spokes = 0;
  int samples_per_spoke = 0;
  double tr_seconds = 0.0;
  std::vector<Vec3> k;  // n_spokes * samples_per_spoke

  int64_t n_samples() const { return int64_t(n_spokes) * samples_per_spoke; }
  const Vec3& at(int spoke, int sample) const {
    return k[size_t(spoke) * samples_per_spoke + sample];
  }
  double spoke_time(int spoke) const { return spoke * tr_seconds; }
};

// Multi-coil radial samples matching a trajectory, coil-major.
struct RadialKSpace {
  int n_coils = 0;
  int n_spokes = 0;
  int samples_per_spoke = 0;
  double tr_seconds = 0.0;
  std::vector<cplx> data;  // n_coils * n_spokes * samples_per_spoke

  int64_t samples_per_coil() const { return int64_t(n_spokes) * samples_per_spoke; }
  std::span<cplx> coil(int c) {
    return {data.data() + c * samples_per_coil(), size_t(samples_per_coil())};
  }
  std::span<const cplx> coil(int c) const {
    return {data.data() + c * samples_per_coil(), size_t(samples_per_coil())};
  }
  cplx& at(int c, int spoke, int sample) {
    return data[(size_t(c) * n_spokes + spoke) * samples_per_spoke + sample];
  }
  const cplx& at(int c, int spoke, int sample) const {
    return data[(size_t(c) * n_spokes + spoke) * samples_per_spoke + sample];
  }
};

struct CoilSet {
  std::vector<ComplexVolume> maps;

  int n_coils() const { return int(maps.size()); }
  const Dims3& dims() const { return maps.at(0).dims; }
};

// Respiratory state assignment: spoke index lists plus the per-state
// representative amplitude (median of the centered gating signal).
struct MotionStateBins {
  std::vector<std::vector<int>> spokes;
  std::vector<double> amplitude;

  int n_states() const { return int(spokes.size()); }
};

// ---------------------------------------------------------------------------
// Golden-means spherical ordering. phi2 is the real root of x^3 + x - 1 = 0
// and phi1 = phi2^2; the pair fills the half-sphere uniformly in the limit.

inline std::pair<double, double> golden_means() {
  double x = 0.68;
  for (int i = 0; i < 64; ++i) {
    double f = x * x * x + x - 1.0;
    double df = 3.0 * x * x + 1.0;
    double nx = x - f / df;
    if (nx == x) break;
    x = nx;
  }
  return {x * x, x};
}

// Spoke m (1-based): polar angle from cos(theta) = 2 frac(m phi1) - 1,
// azimuth 2 pi frac(m phi2). Samples run center-out, |k| in [0, 0.5].
inline RadialTrajectory golden_angle_trajectory(int n_spokes, int samples_per_spoke,
                                                double tr_seconds) {
  if (n_spokes < 1 || samples_per_spoke < 2)
    throw std::invalid_argument("trajectory needs >= 1 spoke and >= 2 samples");
  if (tr_seconds <= 0) throw std::invalid_argument("tr_seconds must be positive");
  auto [phi1, phi2] = golden_means();
  RadialTrajectory t;
  t.n_spokes = n_spokes;
  t.samples_per_spoke = samples_per_spoke;
  t.tr_seconds = tr_seconds;
  t.k.resize(size_t(n_spokes) * samples_per_spoke);
  for (int m = 0; m < n_spokes; ++m) {
    double f1 = std::fmod(double(m + 1) * phi1, 1.0);
    double f2 = std::fmod(double(m + 1) * phi2, 1.0);
    double cz = 2.0 * f1 - 1.0;
    double sz = std::sqrt(std::max(0.0, 1.0 - cz * cz));
    double az = 2.0 * M_PI * f2;
    Vec3 dir{sz * std::cos(az), sz * std::sin(az), cz};
    for (int s = 0; s < samples_per_spoke; ++s) {
      double r = 0.5 * double(s) / double(samples_per_spoke - 1);
      t.k[size_t(m) * samples_per_spoke + s] = {r * dir[0], r * dir[1], r * dir[2]};
    }
  }
  return t;
}

// Sample weights proportional to |k|^2, normalized so the largest is 1.
// The k = 0 sample is assigned the weight at half the first radial step.
inline std::vector<double> ramp_weights(const RadialTrajectory& t) {
  std::vector<double> w(size_t(t.n_samples()));
  double r1 = 0.5 / double(t.samples_per_spoke - 1);
  double wmax = 0;
  for (int64_t i = 0; i < t.n_samples(); ++i) {
    const Vec3& k = t.k[size_t(i)];
    double r2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
    if (r2 == 0) r2 = (0.5 * r1) * (0.5 * r1);
    w[size_t(i)] = r2;
    wmax = std::max(wmax, r2);
  }
  for (double& v : w) v /= wmax;
  return w;
}

inline std::vector<double> sample_weights(const RadialTrajectory& t, KspaceWeighting kind) {
  if (kind == KspaceWeighting::ramp) return ramp_weights(t);
  return std::vector<double>(size_t(t.n_samples()), 1.0);
}

// ---------------------------------------------------------------------------
// Binary containers

inline void write_trajectory(const std::string& path, const RadialTrajectory& t) {
  auto os = open_output(path);
  write_magic(os, "GSTR");
  write_u32(os, uint32_t(t.n_spokes));
  write_u32(os, uint32_t(t.samples_per_spoke));
  write_f32(os, float(t.tr_seconds));
  std::vector<float> buf(t.k.size() * 3);
  for (size_t i = 0; i < t.k.size(); ++i)
    for (int a = 0; a < 3; ++a) buf[3 * i + a] = float(t.k[i][a]);
  os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
  if (!os) throw std::runtime_error("short write: " + path);
}

inline RadialTrajectory read_trajectory(const std::string& path) {
  auto is = open_input(path);
  check_magic(is, "GSTR", path);
  RadialTrajectory t;
  t.n_spokes = int(read_u32(is));
  t.samples_per_spoke = int(read_u32(is));
  t.tr_seconds = read_f32(is);
  t.k.resize(size_t(t.n_spokes) * t.samples_per_spoke);
  std::vector<float> buf(t.k.size() * 3);
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
  if (!is) throw std::runtime_error("short read: " + path);
  for (size_t i = 0; i < t.k.size(); ++i)
    for (int a = 0; a < 3; ++a) t.k[i][a] = buf[3 * i + a];
  return t;
}

inline void write_kspace(const std::string& path, const RadialKSpace& ks) {
  auto os = open_output(path);
  write_magic(os, "GSKS");
  write_u32(os, uint32_t(ks.n_coils));
  write_u32(os, uint32_t(ks.n_spokes));
  write_u32(os, uint32_t(ks.samples_per_spoke));
  write_f32(os, float(ks.tr_seconds));
  std::vector<float> buf(ks.data.size() * 2);
  for (size_t i = 0; i < ks.data.size(); ++i) {
    buf[2 * i] = float(ks.data[i].real());
    buf[2 * i + 1] = float(ks.data[i].imag());
  }
  os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
  if (!os) throw std::runtime_error("short write: " + path);
}

inline RadialKSpace read_kspace(const std::string& path) {
  auto is = open_input(path);
  check_magic(is, "GSKS", path);
  RadialKSpace ks;
  ks.n_coils = int(read_u32(is));
  ks.n_spokes = int(read_u32(is));
  ks.samples_per_spoke = int(read_u32(is));
  ks.tr_seconds = read_f32(is);
  ks.data.resize(size_t(ks.n_coils) * ks.n_spokes * ks.samples_per_spoke);
  std::vector<float> buf(ks.data.size() * 2);
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
  if (!is) throw std::runtime_error("short read: " + path);
  for (size_t i = 0; i < ks.data.size(); ++i) ks.data[i] = cplx(buf[2 * i], buf[2 * i + 1]);
  return ks;
}

inline void write_coils(const std::string& path, const CoilSet& cs) {
  auto os = open_output(path);
  write_magic(os, "GSCL");
  write_u32(os, uint32_t(cs.n_coils()));
  for (int a = 0; a < 3; ++a) write_u32(os, uint32_t(cs.dims()[a]));
  for (const auto& m : cs.maps) {
    std::vector<float> buf(m.data.size() * 2);
    for (size_t i = 0; i < m.data.size(); ++i) {
      buf[2 * i] = float(m.data[i].real());
      buf[2 * i + 1] = float(m.data[i].imag());
    }
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
  }
  if (!os) throw std::runtime_error("short write: " + path);
}

inline CoilSet read_coils(const std::string& path) {
  auto is = open_input(path);
  check_magic(is, "GSCL", path);
  int n = int(read_u32(is));
  Dims3 d;
  for (int a = 0; a < 3; ++a) d[a] = int(read_u32(is));
  CoilSet cs;
  for (int c = 0; c < n; ++c) {
    ComplexVolume m(d);
    std::vector<float> buf(m.data.size() * 2);
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
    if (!is) throw std::runtime_error("short read: " + path);
    for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = cplx(buf[2 * i], buf[2 * i + 1]);
    cs.maps.push_back(std::move(m));
  }
  return cs;
}

inline void write_bins(const std::string& path, const MotionStateBins& bins) {
  nlohmann::json j;
  j["n_states"] = bins.n_states();
  auto& arr = j["states"] = nlohmann::json::array();
  for (int i = 0; i < bins.n_states(); ++i)
    arr.push_back({{"amplitude", bins.amplitude[i]}, {"spokes", bins.spokes[i]}});
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write bins: " + path);
  os << j.dump(2) << "\n";
}

inline MotionStateBins read_bins(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open bins: " + path);
  nlohmann::json j;
  is >> j;
  MotionStateBins bins;
  for (const auto& st : j.at("states")) {
    bins.amplitude.push_back(st.at("amplitude").get<double>());
    bins.spokes.push_back(st.at("spokes").get<std::vector<int>>());
  }
  if (int(bins.spokes.size()) != j.at("n_states").get<int>())
    throw std::runtime_error("inconsistent state count in " + path);
  return bins;
}

}  // namespace gsmr
