#pragma once

// Core value types shared by every module: complex volumes on a fixed
// z-fastest grid, displacement fields, the reconstruction config schema,
// deterministic parallel loops and little-endian binary I/O.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace gsmr {

using cplx = std::complex<double>;
using Dims3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;
using Quat = std::array<double, 4>;  // (w, x, y, z), stored unnormalized

inline int64_t voxel_count(const Dims3& d) {
  return int64_t(d[0]) * int64_t(d[1]) * int64_t(d[2]);
}

// Fixed linearization used everywhere: x slowest, z fastest.
inline int64_t linear_index(const Dims3& d, int x, int y, int z) {
  return (int64_t(x) * d[1] + y) * d[2] + z;
}

inline bool same_dims(const Dims3& a, const Dims3& b) { return a == b; }

// ---------------------------------------------------------------------------
// Volumes

struct ComplexVolume {
  Dims3 dims{0, 0, 0};
  double voxel_size = 1.0;
  std::vector<cplx> data;

  ComplexVolume() = default;
  explicit ComplexVolume(const Dims3& d, cplx fill = {}) : dims(d) {
    for (int a = 0; a < 3; ++a)
      if (d[a] < 2) throw std::invalid_argument("ComplexVolume: dims must all be >= 2");
    data.assign(voxel_count(d), fill);
  }

  int64_t size() const { return int64_t(data.size()); }
  cplx& at(int x, int y, int z) { return data[linear_index(dims, x, y, z)]; }
  const cplx& at(int x, int y, int z) const { return data[linear_index(dims, x, y, z)]; }
};

struct RealVolume {
  Dims3 dims{0, 0, 0};
  std::vector<double> data;

  RealVolume() = default;
  explicit RealVolume(const Dims3& d, double fill = 0.0) : dims(d) {
    for (int a = 0; a < 3; ++a)
      if (d[a] < 1) throw std::invalid_argument("RealVolume: dims must be positive");
    data.assign(voxel_count(d), fill);
  }

  int64_t size() const { return int64_t(data.size()); }
  double& at(int x, int y, int z) { return data[linear_index(dims, x, y, z)]; }
  const double& at(int x, int y, int z) const { return data[linear_index(dims, x, y, z)]; }
};

// Dense displacement field, one RealVolume per component (x, y, z), in voxels.
struct VectorField {
  std::array<RealVolume, 3> comp;

  VectorField() = default;
  explicit VectorField(const Dims3& d, double fill = 0.0)
      : comp{RealVolume(d, fill), RealVolume(d, fill), RealVolume(d, fill)} {}

  const Dims3& dims() const { return comp[0].dims; }
  int64_t size() const { return comp[0].size(); }
};

// Border-clamped trilinear interpolation cell: corner indices and weights.
struct TrilinearCell {
  int i0[3], i1[3];
  double f[3];
  bool clamped[3];

  TrilinearCell(const Dims3& dims, double x, double y, double z) {
    double pos[3] = {x, y, z};
    for (int d = 0; d < 3; ++d) {
      double p = pos[d];
      clamped[d] = p <= 0.0 || p >= dims[d] - 1;
      p = std::clamp(p, 0.0, double(dims[d] - 1));
      int lo = std::min(int(p), dims[d] - 2);
      lo = std::max(lo, 0);
      i0[d] = lo;
      i1[d] = std::min(lo + 1, dims[d] - 1);
      f[d] = p - lo;
    }
  }

  // w[c] for corner c in {0..7}, bit d of c selecting i1[d].
  double weight(int c) const {
    double w = 1.0;
    for (int d = 0; d < 3; ++d) w *= (c >> d & 1) ? f[d] : 1.0 - f[d];
    return w;
  }
  int64_t index(const Dims3& dims, int c) const {
    return linear_index(dims, (c & 1) ? i1[0] : i0[0], (c & 2) ? i1[1] : i0[1],
                        (c & 4) ? i1[2] : i0[2]);
  }
};

inline cplx sample_trilinear(const ComplexVolume& v, double x, double y, double z) {
  TrilinearCell cell(v.dims, x, y, z);
  cplx acc{};
  for (int c = 0; c < 8; ++c) acc += cell.weight(c) * v.data[cell.index(v.dims, c)];
  return acc;
}

inline double sample_trilinear(const RealVolume& v, double x, double y, double z) {
  TrilinearCell cell(v.dims, x, y, z);
  double acc = 0;
  for (int c = 0; c < 8; ++c) acc += cell.weight(c) * v.data[cell.index(v.dims, c)];
  return acc;
}

inline RealVolume magnitude(const ComplexVolume& v) {
  RealVolume out(v.dims);
  for (int64_t i = 0; i < v.size(); ++i) out.data[i] = std::abs(v.data[i]);
  return out;
}

// sum_k a_k * conj(b_k); shapes must match.
inline cplx complex_inner_product(std::span<const cplx> a, std::span<const cplx> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("complex_inner_product: size mismatch");
  cplx acc{};
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * std::conj(b[i]);
  return acc;
}

inline cplx complex_inner_product(const ComplexVolume& a, const ComplexVolume& b) {
  if (!same_dims(a.dims, b.dims))
    throw std::invalid_argument("complex_inner_product: dims mismatch");
  return complex_inner_product(std::span<const cplx>(a.data), std::span<const cplx>(b.data));
}

inline double norm2(std::span<const cplx> a) {
  double s = 0;
  for (const cplx& v : a) s += std::norm(v);
  return std::sqrt(s);
}

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

inline bool all_finite(std::span<const cplx> a) {
  for (const cplx& v : a)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Deterministic parallel loops.
//
// Results must be bit-identical for any thread count, so parallelism is only
// applied where iterations write disjoint outputs; reductions happen in fixed
// index order on the caller side. Nested calls run inline.

namespace detail {
inline std::atomic<int>& thread_count_slot() {
  static std::atomic<int> n{0};  // 0 = hardware concurrency
  return n;
}
inline thread_local bool inside_parallel = false;
}  // namespace detail

inline void set_num_threads(int n) { detail::thread_count_slot().store(n); }

inline int num_threads() {
  int n = detail::thread_count_slot().load();
  if (n > 0) return n;
  unsigned h = std::thread::hardware_concurrency();
  return h ? int(h) : 1;
}

// fn(begin, end) over [0, n) split into contiguous chunks.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn, int64_t min_chunk = 1024) {
  if (n <= 0) return;
  int t = num_threads();
  if (detail::inside_parallel || t <= 1 || n < 2 * min_chunk) {
    fn(int64_t(0), n);
    return;
  }
  int64_t chunks = std::min<int64_t>(t, (n + min_chunk - 1) / min_chunk);
  int64_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> workers;
  std::exception_ptr err;
  std::mutex err_mutex;
  for (int64_t c = 0; c < chunks; ++c) {
    int64_t b = c * per, e = std::min(n, b + per);
    if (b >= e) break;
    workers.emplace_back([&, b, e] {
      detail::inside_parallel = true;
      try {
        fn(b, e);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mutex);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  if (err) std::rethrow_exception(err);
}

// One task per index; used when each index owns a disjoint output slab.
template <typename Fn>
void parallel_tasks(int n, Fn&& fn) {
  if (n <= 0) return;
  int t = num_threads();
  if (detail::inside_parallel || t <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  std::exception_ptr err;
  std::mutex err_mutex;
  int nw = std::min(t, n);
  for (int w = 0; w < nw; ++w) {
    workers.emplace_back([&] {
      detail::inside_parallel = true;
      try {
        for (;;) {
          int i = next.fetch_add(1);
          if (i >= n) break;
          fn(i);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mutex);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Little-endian binary I/O (host is assumed little-endian; asserted once).

namespace detail {
inline void require_little_endian() {
  static const bool ok = [] {
    uint32_t v = 1;
    uint8_t b;
    std::memcpy(&b, &v, 1);
    return b == 1;
  }();
  if (!ok) throw std::runtime_error("binary I/O requires a little-endian host");
}
}  // namespace detail

inline void write_u32(std::ostream& os, uint32_t v) {
  detail::require_little_endian();
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void write_f32(std::ostream& os, float v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline uint32_t read_u32(std::istream& is) {
  detail::require_little_endian();
  uint32_t v;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline float read_f32(std::istream& is) {
  float v;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline double read_f64(std::istream& is) {
  double v;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

inline void write_magic(std::ostream& os, const char m[5]) { os.write(m, 4); }

inline void check_magic(std::istream& is, const char m[5], const std::string& what) {
  char got[4];
  is.read(got, 4);
  if (!is || std::memcmp(got, m, 4) != 0)
    throw std::runtime_error("bad magic reading " + what);
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return is;
}

// Volume container: magic "GSMR", u32 dims x/y/z, float32 re/im pairs,
// z-fastest. 16-byte header, then 8 bytes per voxel.
inline void write_volume(const std::string& path, const ComplexVolume& v) {
  auto os = open_output(path);
  write_magic(os, "GSMR");
  for (int a = 0; a < 3; ++a) write_u32(os, uint32_t(v.dims[a]));
  std::vector<float> buf(v.data.size() * 2);
  for (size_t i = 0; i < v.data.size(); ++i) {
    buf[2 * i] = float(v.data[i].real());
    buf[2 * i + 1] = float(v.data[i].imag());
  }
  os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
  if (!os) throw std::runtime_error("short write: " + path);
}

inline ComplexVolume read_volume(const std::string& path) {
  auto is = open_input(path);
  check_magic(is, "GSMR", path);
  Dims3 d;
  for (int a = 0; a < 3; ++a) d[a] = int(read_u32(is));
  ComplexVolume v(d);
  std::vector<float> buf(v.data.size() * 2);
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
  if (!is) throw std::runtime_error("short read: " + path);
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] = cplx(buf[2 * i], buf[2 * i + 1]);
  return v;
}

// Displacement field: volume header plus a u32 channel count, then float32
// channels back to back (channel-major, z-fastest), values in voxels.
inline void write_field(const std::string& path, const VectorField& f) {
  auto os = open_output(path);
  write_magic(os, "GSMR");
  for (int a = 0; a < 3; ++a) write_u32(os, uint32_t(f.dims()[a]));
  write_u32(os, 3);
  std::vector<float> buf(size_t(f.size()));
  for (int c = 0; c < 3; ++c) {
    for (int64_t i = 0; i < f.size(); ++i) buf[size_t(i)] = float(f.comp[c].data[i]);
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
  }
  if (!os) throw std::runtime_error("short write: " + path);
}

inline VectorField read_field(const std::string& path) {
  auto is = open_input(path);
  check_magic(is, "GSMR", path);
  Dims3 d;
  for (int a = 0; a < 3; ++a) d[a] = int(read_u32(is));
  uint32_t nch = read_u32(is);
  if (nch != 3) throw std::runtime_error("expected 3 channels in " + path);
  VectorField f(d);
  std::vector<float> buf(size_t(f.size()));
  for (int c = 0; c < 3; ++c) {
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
    for (int64_t i = 0; i < f.size(); ++i) f.comp[c].data[i] = buf[size_t(i)];
  }
  if (!is) throw std::runtime_error("short read: " + path);
  return f;
}

// ---------------------------------------------------------------------------
// Configuration

enum class InitStrategy { random, equal_space, multi_resolution };
enum class DvfGenerator { direct_grid, conv_decoder };
enum class KspaceWeighting { none, ramp };
enum class BreathingWaveform { sinusoid, asymmetric };

inline std::string to_string(InitStrategy s) {
  switch (s) {
    case InitStrategy::random: return "random";
    case InitStrategy::equal_space: return "equal_space";
    case InitStrategy::multi_resolution: return "multi_resolution";
  }
  throw std::logic_error("bad InitStrategy");
}
inline std::string to_string(DvfGenerator g) {
  return g == DvfGenerator::direct_grid ? "direct_grid" : "conv_decoder";
}
inline std::string to_string(KspaceWeighting w) {
  return w == KspaceWeighting::none ? "none" : "ramp";
}
inline std::string to_string(BreathingWaveform w) {
  return w == BreathingWaveform::sinusoid ? "sinusoid" : "asymmetric";
}

template <typename E>
E parse_enum(const std::string& s);

template <>
inline InitStrategy parse_enum<InitStrategy>(const std::string& s) {
  if (s == "random") return InitStrategy::random;
  if (s == "equal_space") return InitStrategy::equal_space;
  if (s == "multi_resolution") return InitStrategy::multi_resolution;
  throw std::invalid_argument("unknown init_strategy: " + s);
}
template <>
inline DvfGenerator parse_enum<DvfGenerator>(const std::string& s) {
  if (s == "direct_grid") return DvfGenerator::direct_grid;
  if (s == "conv_decoder") return DvfGenerator::conv_decoder;
  throw std::invalid_argument("unknown dvf_generator: " + s);
}
template <>
inline KspaceWeighting parse_enum<KspaceWeighting>(const std::string& s) {
  if (s == "none") return KspaceWeighting::none;
  if (s == "ramp") return KspaceWeighting::ramp;
  throw std::invalid_argument("unknown kspace_weighting: " + s);
}
template <>
inline BreathingWaveform parse_enum<BreathingWaveform>(const std::string& s) {
  if (s == "sinusoid") return BreathingWaveform::sinusoid;
  if (s == "asymmetric") return BreathingWaveform::asymmetric;
  throw std::invalid_argument("unknown waveform: " + s);
}

// Acquisition protocol used by the simulator.
struct SimProtocol {
  int n_spokes = 6000;
  int samples_per_spoke = 33;
  int n_coils = 4;
  double tr_seconds = 0.0037;
  double noise_std = 0.0;           // std of each noise component (re, im)
  double breathing_hz = 0.25;
  BreathingWaveform waveform = BreathingWaveform::sinusoid;
  double diaphragm_amplitude = 0.0; // voxels; 0 selects grid_size / 8
  bool uniform_coils = false;
  int amplitude_levels = 128;       // quantization for state grouping
};

struct ReconConfig {
  int grid_size = 64;
  int n_gaussians = 30000;
  int n_states = 6;
  double lambda_tv = 1.0;
  double lambda_spatial = 0.005;
  double lambda_phase = 0.005;
  double lr_rho = 0.01;
  double lr_scale = 0.005;
  double lr_rot = 0.001;
  double lr_motion = 0.001;
  int n_iterations = 2000;
  InitStrategy init_strategy = InitStrategy::multi_resolution;
  DvfGenerator dvf_generator = DvfGenerator::conv_decoder;
  int n_bases = 2;
  uint64_t rng_seed = 1234;
  KspaceWeighting kspace_weighting = KspaceWeighting::ramp;
  double scale_multiplier = 1.0;
  double max_displacement = 0.0;    // voxels at full resolution; 0 selects grid_size / 8
  int checkpoint_interval = 0;      // iterations; 0 disables periodic checkpoints
  bool cycle_states = false;        // true: one state per iteration, fixed order
  SimProtocol simulation;

  Dims3 grid_dims() const { return {grid_size, grid_size, grid_size}; }
  double resolved_max_displacement() const {
    return max_displacement > 0 ? max_displacement : grid_size / 8.0;
  }
  double resolved_diaphragm_amplitude() const {
    return simulation.diaphragm_amplitude > 0 ? simulation.diaphragm_amplitude
                                              : grid_size / 8.0;
  }

  void validate() const {
    if (grid_size < 8) throw std::invalid_argument("grid_size must be >= 8");
    if (n_gaussians < 1) throw std::invalid_argument("n_gaussians must be positive");
    if (n_states < 2) throw std::invalid_argument("n_states must be >= 2");
    if (n_bases < 1) throw std::invalid_argument("n_bases must be >= 1");
    if (n_iterations < 0) throw std::invalid_argument("n_iterations must be >= 0");
    for (double v : {lambda_tv, lambda_spatial, lambda_phase})
      if (v < 0 || !std::isfinite(v)) throw std::invalid_argument("lambdas must be finite and >= 0");
    for (double v : {lr_rho, lr_scale, lr_rot, lr_motion})
      if (v <= 0 || !std::isfinite(v)) throw std::invalid_argument("learning rates must be positive");
    if (scale_multiplier <= 0) throw std::invalid_argument("scale_multiplier must be positive");
    if (simulation.n_spokes < 1 || simulation.samples_per_spoke < 2)
      throw std::invalid_argument("simulation needs >= 1 spoke and >= 2 samples per spoke");
    if (simulation.n_coils < 1) throw std::invalid_argument("n_coils must be >= 1");
    if (simulation.tr_seconds <= 0) throw std::invalid_argument("tr_seconds must be positive");
    if (simulation.noise_std < 0) throw std::invalid_argument("noise_std must be >= 0");
    if (simulation.breathing_hz <= 0) throw std::invalid_argument("breathing_hz must be positive");
    if (simulation.amplitude_levels < 1) throw std::invalid_argument("amplitude_levels must be >= 1");
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::vector<std::string>& known,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("unknown config key '" + it.key() + "' in " + where);
  }
}

}  // namespace detail

inline nlohmann::json to_json(const SimProtocol& s) {
  return {
      {"n_spokes", s.n_spokes},
      {"samples_per_spoke", s.samples_per_spoke},
      {"n_coils", s.n_coils},
      {"tr_seconds", s.tr_seconds},
      {"noise_std", s.noise_std},
      {"breathing_hz", s.breathing_hz},
      {"waveform", to_string(s.waveform)},
      {"diaphragm_amplitude", s.diaphragm_amplitude},
      {"uniform_coils", s.uniform_coils},
      {"amplitude_levels", s.amplitude_levels},
  };
}

inline nlohmann::json to_json(const ReconConfig& c) {
  nlohmann::json j{
      {"grid_size", c.grid_size},
      {"n_gaussians", c.n_gaussians},
      {"n_states", c.n_states},
      {"lambda_tv", c.lambda_tv},
      {"lambda_spatial", c.lambda_spatial},
      {"lambda_phase", c.lambda_phase},
      {"lr_rho", c.lr_rho},
      {"lr_scale", c.lr_scale},
      {"lr_rot", c.lr_rot},
      {"lr_motion", c.lr_motion},
      {"n_iterations", c.n_iterations},
      {"init_strategy", to_string(c.init_strategy)},
      {"dvf_generator", to_string(c.dvf_generator)},
      {"n_bases", c.n_bases},
      {"rng_seed", c.rng_seed},
      {"kspace_weighting", to_string(c.kspace_weighting)},
      {"scale_multiplier", c.scale_multiplier},
      {"max_displacement", c.max_displacement},
      {"checkpoint_interval", c.checkpoint_interval},
      {"cycle_states", c.cycle_states},
  };
  j["simulation"] = to_json(c.simulation);
  return j;
}

inline SimProtocol sim_protocol_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j,
      {"n_spokes", "samples_per_spoke", "n_coils", "tr_seconds", "noise_std",
       "breathing_hz", "waveform", "diaphragm_amplitude", "uniform_coils",
       "amplitude_levels"},
      "simulation");
  SimProtocol s;
  s.n_spokes = j.value("n_spokes", s.n_spokes);
  s.samples_per_spoke = j.value("samples_per_spoke", s.samples_per_spoke);
  s.n_coils = j.value("n_coils", s.n_coils);
  s.tr_seconds = j.value("tr_seconds", s.tr_seconds);
  s.noise_std = j.value("noise_std", s.noise_std);
  s.breathing_hz = j.value("breathing_hz", s.breathing_hz);
  if (j.contains("waveform")) s.waveform = parse_enum<BreathingWaveform>(j["waveform"]);
  s.diaphragm_amplitude = j.value("diaphragm_amplitude", s.diaphragm_amplitude);
  s.uniform_coils = j.value("uniform_coils", s.uniform_coils);
  s.amplitude_levels = j.value("amplitude_levels", s.amplitude_levels);
  return s;
}

inline ReconConfig config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j,
      {"grid_size", "n_gaussians", "n_states", "lambda_tv", "lambda_spatial",
       "lambda_phase", "lr_rho", "lr_scale", "lr_rot", "lr_motion",
       "n_iterations", "init_strategy", "dvf_generator", "n_bases", "rng_seed",
       "kspace_weighting", "scale_multiplier", "max_displacement",
       "checkpoint_interval", "cycle_states", "simulation"},
      "config");
  ReconConfig c;
  c.grid_size = j.value("grid_size", c.grid_size);
  c.n_gaussians = j.value("n_gaussians", c.n_gaussians);
  c.n_states = j.value("n_states", c.n_states);
  c.lambda_tv = j.value("lambda_tv", c.lambda_tv);
  c.lambda_spatial = j.value("lambda_spatial", c.lambda_spatial);
  c.lambda_phase = j.value("lambda_phase", c.lambda_phase);
  c.lr_rho = j.value("lr_rho", c.lr_rho);
  c.lr_scale = j.value("lr_scale", c.lr_scale);
  c.lr_rot = j.value("lr_rot", c.lr_rot);
  c.lr_motion = j.value("lr_motion", c.lr_motion);
  c.n_iterations = j.value("n_iterations", c.n_iterations);
  if (j.contains("init_strategy")) c.init_strategy = parse_enum<InitStrategy>(j["init_strategy"]);
  if (j.contains("dvf_generator")) c.dvf_generator = parse_enum<DvfGenerator>(j["dvf_generator"]);
  c.n_bases = j.value("n_bases", c.n_bases);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  if (j.contains("kspace_weighting"))
    c.kspace_weighting = parse_enum<KspaceWeighting>(j["kspace_weighting"]);
  c.scale_multiplier = j.value("scale_multiplier", c.scale_multiplier);
  c.max_displacement = j.value("max_displacement", c.max_displacement);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  c.cycle_states = j.value("cycle_states", c.cycle_states);
  if (j.contains("simulation")) c.simulation = sim_protocol_from_json(j["simulation"]);
  c.validate();
  return c;
}

inline ReconConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  nlohmann::json j;
  is >> j;
  return config_from_json(j);
}

inline void save_config(const std::string& path, const ReconConfig& c) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write config: " + path);
  os << to_json(c).dump(2) << "\n";
}

// Named presets covering the acquisition protocol and the ablation grid.
inline ReconConfig preset_config(const std::string& name) {
  ReconConfig c;  // defaults form the desk-scale preset
  auto protocol = [&] {
    c.grid_size = 256;
    c.n_gaussians = 30000;
    c.n_states = 6;
    c.n_iterations = 20000;
    c.simulation.n_spokes = 86000;
    c.simulation.samples_per_spoke = 149;
    c.simulation.n_coils = 8;
    c.simulation.tr_seconds = 0.0037;
  };
  if (name == "desk") return c;
  if (name == "protocol-full") {
    protocol();
    return c;
  }
  if (name == "bases-4") {
    // 4 bases: the decoder emits 12 channels instead of the default 6
    c.n_bases = 4;
    return c;
  }
  auto ablation = [&] {
    protocol();
    c.n_iterations = 2000;
  };
  if (name.rfind("ablation-m-", 0) == 0) {
    ablation();
    c.n_gaussians = std::stoi(name.substr(11));
    return c;
  }
  if (name.rfind("ablation-tv-", 0) == 0) {
    ablation();
    c.lambda_tv = std::stod(name.substr(12));
    return c;
  }
  if (name.rfind("ablation-states-", 0) == 0) {
    ablation();
    c.n_states = std::stoi(name.substr(16));
    return c;
  }
  if (name.rfind("ablation-init-", 0) == 0) {
    ablation();
    c.init_strategy = parse_enum<InitStrategy>(name.substr(14));
    return c;
  }
  throw std::invalid_argument("unknown preset: " + name);
}

inline std::vector<std::string> preset_names() {
  return {"desk",
          "protocol-full",
          "bases-4",
          "ablation-m-30000",
          "ablation-m-100000",
          "ablation-m-300000",
          "ablation-tv-0",
          "ablation-tv-0.1",
          "ablation-tv-1",
          "ablation-tv-10",
          "ablation-states-4",
          "ablation-states-5",
          "ablation-states-6",
          "ablation-states-8",
          "ablation-init-random",
          "ablation-init-equal_space",
          "ablation-init-multi_resolution"};
}

}  // namespace gsmr
