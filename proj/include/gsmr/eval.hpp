#pragma once

// Quantitative evaluation: SNR/CNR/NRMSE, analytic phantom ROIs, the stacked
// diaphragm-line profile with 50%-max edge tracking, and 8-bit grayscale PNG
// slice rendering.

#include <cstdio>
#include <limits>
#include <map>

#include <zlib.h>

#include "gsmr/core.hpp"
#include "gsmr/phantom.hpp"

namespace gsmr {

// ---------------------------------------------------------------------------
// Scalar metrics (magnitude images, binary masks as RealVolume 0/1)

namespace detail {

struct MaskStats {
  double mean = 0, std_pop = 0;
  int64_t count = 0;
};

inline MaskStats mask_stats(const RealVolume& img, const RealVolume& mask) {
  if (!same_dims(img.dims, mask.dims)) throw std::invalid_argument("mask dims mismatch");
  MaskStats s;
  double sum = 0;
  for (int64_t j = 0; j < img.size(); ++j)
    if (mask.data[j] != 0) {
      sum += img.data[j];
      ++s.count;
    }
  if (s.count == 0) throw std::invalid_argument("empty mask");
  s.mean = sum / double(s.count);
  double var = 0;
  for (int64_t j = 0; j < img.size(); ++j)
    if (mask.data[j] != 0) var += (img.data[j] - s.mean) * (img.data[j] - s.mean);
  s.std_pop = std::sqrt(var / double(s.count));  // population convention
  return s;
}

}  // namespace detail

inline double snr_db(const RealVolume& img, const RealVolume& roi, const RealVolume& noise) {
  auto rs = detail::mask_stats(img, roi);
  auto ns = detail::mask_stats(img, noise);
  if (ns.std_pop == 0) throw std::invalid_argument("degenerate noise region");
  return 20.0 * std::log10(rs.mean / ns.std_pop);
}

// Equal means yield -inf (flagged sentinel, not an error).
inline double cnr_db(const RealVolume& img, const RealVolume& roi, const RealVolume& noise) {
  auto rs = detail::mask_stats(img, roi);
  auto ns = detail::mask_stats(img, noise);
  if (ns.std_pop == 0) throw std::invalid_argument("degenerate noise region");
  double diff = std::abs(rs.mean - ns.mean);
  if (diff == 0) return -std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(diff / ns.std_pop);
}

// || |recon| - |truth| ||_2 / || |truth| ||_2, optionally restricted to a mask.
inline double nrmse(const ComplexVolume& recon, const ComplexVolume& truth,
                    const RealVolume* mask = nullptr) {
  if (!same_dims(recon.dims, truth.dims)) throw std::invalid_argument("nrmse dims mismatch");
  double num = 0, den = 0;
  for (int64_t j = 0; j < recon.size(); ++j) {
    if (mask && mask->data[j] == 0) continue;
    double d = std::abs(recon.data[j]) - std::abs(truth.data[j]);
    num += d * d;
    den += std::norm(truth.data[j]);
  }
  if (den == 0) throw std::invalid_argument("nrmse: zero truth norm");
  return std::sqrt(num / den);
}

inline double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("pearson needs two equal series of length >= 2");
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(a.size());
  mb /= double(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) throw std::invalid_argument("pearson: zero-variance series");
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// Analytic ROIs

// Tissue ROIs are the scene ellipsoids eroded by one voxel and shifted by the
// state amplitude; the noise region is four (x, z)-corner prisms spanning y,
// kept clear of every ellipsoid across the full breathing range.
struct RoiSpec {
  std::string name;
  Vec3 center;
  Vec3 semi_axes;
  Vec3 motion_amplitude{0, 0, 0};
};

inline std::vector<RoiSpec> desk_roi_specs(const PhantomScene& scene) {
  static const char* names[] = {"torso", "lung", "liver", "spine", "vessel"};
  std::vector<RoiSpec> out;
  for (size_t i = 0; i < scene.ellipsoids.size(); ++i) {
    const auto& e = scene.ellipsoids[i];
    RoiSpec r;
    r.name = i < 5 ? names[i] : "roi" + std::to_string(i);
    r.center = e.center;
    for (int d = 0; d < 3; ++d) r.semi_axes[d] = std::max(0.5, e.semi_axes[d] - 1.0);
    r.motion_amplitude = e.motion_amplitude;
    out.push_back(r);
  }
  return out;
}

inline RealVolume roi_mask(const RoiSpec& spec, const Dims3& dims, double amplitude) {
  RealVolume m(dims);
  Vec3 c{spec.center[0] + amplitude * spec.motion_amplitude[0],
         spec.center[1] + amplitude * spec.motion_amplitude[1],
         spec.center[2] + amplitude * spec.motion_amplitude[2]};
  for (int x = 0; x < dims[0]; ++x)
    for (int y = 0; y < dims[1]; ++y)
      for (int z = 0; z < dims[2]; ++z) {
        double rx = (x - c[0]) / spec.semi_axes[0];
        double ry = (y - c[1]) / spec.semi_axes[1];
        double rz = (z - c[2]) / spec.semi_axes[2];
        if (rx * rx + ry * ry + rz * rz <= 1.0) m.at(x, y, z) = 1.0;
      }
  return m;
}

// margin (voxels) inflates every ellipsoid before carving the corner prisms.
inline RealVolume noise_mask(const std::vector<RoiSpec>& specs, const Dims3& dims,
                             double margin = 3.0) {
  RealVolume m(dims);
  int cx = std::max(2, dims[0] / 8), cz = std::max(2, dims[2] / 8);
  auto inside_any = [&](double x, double y, double z) {
    for (const auto& s : specs)
      for (double a : {0.0, 0.5, 1.0}) {
        double rx = (x - s.center[0] - a * s.motion_amplitude[0]) / (s.semi_axes[0] + margin);
        double ry = (y - s.center[1] - a * s.motion_amplitude[1]) / (s.semi_axes[1] + margin);
        double rz = (z - s.center[2] - a * s.motion_amplitude[2]) / (s.semi_axes[2] + margin);
        if (rx * rx + ry * ry + rz * rz <= 1.0) return true;
      }
    return false;
  };
  int64_t count = 0;
  for (int x = 0; x < dims[0]; ++x) {
    bool in_x = x < cx || x >= dims[0] - cx;
    if (!in_x) continue;
    for (int z = 0; z < dims[2]; ++z) {
      if (!(z < cz || z >= dims[2] - cz)) continue;
      for (int y = 0; y < dims[1]; ++y)
        if (!inside_any(x, y, z)) {
          m.at(x, y, z) = 1.0;
          ++count;
        }
    }
  }
  if (count == 0) throw std::runtime_error("noise mask is empty; scene fills the corners");
  return m;
}

// Zeroes the mask outside one coronal plane (metrics are slice-based by
// default; empty intersections are the caller's signal to skip the ROI).
inline RealVolume restrict_to_coronal(const RealVolume& mask, int y) {
  if (y < 0 || y >= mask.dims[1]) throw std::out_of_range("coronal index out of range");
  RealVolume out(mask.dims);
  for (int x = 0; x < mask.dims[0]; ++x)
    for (int z = 0; z < mask.dims[2]; ++z)
      out.at(x, y, z) = mask.at(x, y, z);
  return out;
}

inline bool mask_empty(const RealVolume& m) {
  for (double v : m.data)
    if (v != 0) return false;
  return true;
}

inline void save_roi_specs(const std::string& path, const std::vector<RoiSpec>& specs,
                           const Dims3& dims) {
  nlohmann::json j;
  j["grid"] = {dims[0], dims[1], dims[2]};
  j["rois"] = nlohmann::json::array();
  for (const auto& s : specs)
    j["rois"].push_back({{"name", s.name},
                         {"center", {s.center[0], s.center[1], s.center[2]}},
                         {"semi_axes", {s.semi_axes[0], s.semi_axes[1], s.semi_axes[2]}},
                         {"motion_amplitude",
                          {s.motion_amplitude[0], s.motion_amplitude[1],
                           s.motion_amplitude[2]}}});
  auto os = open_output(path);
  os << j.dump(2) << "\n";
  if (!os) throw std::runtime_error("short write: " + path);
}

inline std::vector<RoiSpec> load_roi_specs(const std::string& path, Dims3* dims = nullptr) {
  auto is = open_input(path);
  nlohmann::json j;
  is >> j;
  if (dims) {
    auto g = j.at("grid");
    for (int d = 0; d < 3; ++d) (*dims)[size_t(d)] = g.at(size_t(d)).get<int>();
  }
  std::vector<RoiSpec> out;
  for (const auto& r : j.at("rois")) {
    RoiSpec s;
    s.name = r.at("name").get<std::string>();
    for (int d = 0; d < 3; ++d) {
      s.center[size_t(d)] = r.at("center").at(size_t(d)).get<double>();
      s.semi_axes[size_t(d)] = r.at("semi_axes").at(size_t(d)).get<double>();
      s.motion_amplitude[size_t(d)] = r.at("motion_amplitude").at(size_t(d)).get<double>();
    }
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diaphragm profile

struct DiaphragmProfile {
  int line_length = 0;
  int n_states = 0;
  std::vector<double> image;   // [state][z]: stacked magnitudes along the line
  std::vector<double> edge_z;  // 50%-max +z crossing per state; NaN if missing
};

// Samples |v| along the z column at (x, y) for each state and finds the
// topmost crossing of half the column maximum, with linear sub-voxel
// interpolation. The profile image stacks one column per state.
inline DiaphragmProfile diaphragm_profile(const std::vector<ComplexVolume>& states, int x,
                                          int y) {
  if (states.empty()) throw std::invalid_argument("no states");
  const Dims3& d = states.front().dims;
  if (x < 0 || x >= d[0] || y < 0 || y >= d[1])
    throw std::out_of_range("profile line outside the grid");
  DiaphragmProfile p;
  p.line_length = d[2];
  p.n_states = int(states.size());
  p.image.resize(size_t(p.n_states) * size_t(d[2]));
  p.edge_z.assign(size_t(p.n_states), std::numeric_limits<double>::quiet_NaN());
  for (int t = 0; t < p.n_states; ++t) {
    if (!same_dims(states[size_t(t)].dims, d))
      throw std::invalid_argument("state dims mismatch");
    double* col = p.image.data() + size_t(t) * size_t(d[2]);
    double vmax = 0;
    for (int z = 0; z < d[2]; ++z) {
      col[z] = std::abs(states[size_t(t)].at(x, y, z));
      vmax = std::max(vmax, col[z]);
    }
    if (vmax <= 0) continue;
    double half = 0.5 * vmax;
    for (int z = d[2] - 2; z >= 0; --z) {
      if (col[z] >= half && col[z + 1] < half) {
        p.edge_z[size_t(t)] = z + (col[z] - half) / (col[z] - col[z + 1]);
        break;
      }
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// PNG rendering (8-bit grayscale, zlib-compressed, deterministic)

namespace detail {

inline void png_append_u32(std::string& s, uint32_t v) {
  s.push_back(char(v >> 24));
  s.push_back(char(v >> 16));
  s.push_back(char(v >> 8));
  s.push_back(char(v));
}

inline void png_chunk(std::ostream& os, const char type[4], const std::string& payload) {
  std::string hdr;
  png_append_u32(hdr, uint32_t(payload.size()));
  hdr.append(type, 4);
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(hdr.data() + 4), 4);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(payload.data()), uInt(payload.size()));
  os.write(hdr.data(), std::streamsize(hdr.size()));
  os.write(payload.data(), std::streamsize(payload.size()));
  std::string tail;
  png_append_u32(tail, crc);
  os.write(tail.data(), 4);
}

}  // namespace detail

inline void write_png_gray8(const std::string& path, int width, int height,
                            std::span<const uint8_t> pixels) {
  if (int64_t(pixels.size()) != int64_t(width) * height)
    throw std::invalid_argument("pixel buffer size mismatch");
  auto os = open_output(path);
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  os.write(reinterpret_cast<const char*>(sig), 8);
  std::string ihdr;
  detail::png_append_u32(ihdr, uint32_t(width));
  detail::png_append_u32(ihdr, uint32_t(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(0);   // grayscale
  ihdr.push_back(0);   // deflate
  ihdr.push_back(0);   // adaptive filtering
  ihdr.push_back(0);   // no interlace
  detail::png_chunk(os, "IHDR", ihdr);

  std::string raw;
  raw.reserve(size_t(height) * (size_t(width) + 1));
  for (int r = 0; r < height; ++r) {
    raw.push_back(0);  // filter: none
    raw.append(reinterpret_cast<const char*>(pixels.data() + int64_t(r) * width),
               size_t(width));
  }
  uLongf bound = compressBound(uLong(raw.size()));
  std::string idat(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(idat.data()), &bound,
                reinterpret_cast<const Bytef*>(raw.data()), uLong(raw.size()),
                6) != Z_OK)
    throw std::runtime_error("zlib compression failed");
  idat.resize(bound);
  detail::png_chunk(os, "IDAT", idat);
  detail::png_chunk(os, "IEND", "");
  if (!os) throw std::runtime_error("short write: " + path);
}

enum class SlicePlane { coronal, sagittal, axial };

inline SlicePlane parse_plane(const std::string& s) {
  if (s == "coronal") return SlicePlane::coronal;
  if (s == "sagittal") return SlicePlane::sagittal;
  if (s == "axial") return SlicePlane::axial;
  throw std::invalid_argument("unknown plane: " + s);
}

struct SliceImage {
  int width = 0, height = 0;
  std::vector<uint8_t> pixels;
};

// Magnitude slice windowed to [0, 99th percentile] (nearest-rank on the
// slice); +z is rendered upward for coronal/sagittal planes.
inline SliceImage render_slice(const ComplexVolume& v, SlicePlane plane, int index) {
  const Dims3& d = v.dims;
  SliceImage img;
  std::vector<double> vals;
  auto mag = [&](int x, int y, int z) { return std::abs(v.at(x, y, z)); };
  switch (plane) {
    case SlicePlane::coronal:
      if (index < 0 || index >= d[1]) throw std::out_of_range("slice index out of range");
      img.width = d[0];
      img.height = d[2];
      vals.resize(size_t(img.width) * img.height);
      for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
          vals[size_t(r) * img.width + c] = mag(c, index, d[2] - 1 - r);
      break;
    case SlicePlane::sagittal:
      if (index < 0 || index >= d[0]) throw std::out_of_range("slice index out of range");
      img.width = d[1];
      img.height = d[2];
      vals.resize(size_t(img.width) * img.height);
      for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
          vals[size_t(r) * img.width + c] = mag(index, c, d[2] - 1 - r);
      break;
    case SlicePlane::axial:
      if (index < 0 || index >= d[2]) throw std::out_of_range("slice index out of range");
      img.width = d[0];
      img.height = d[1];
      vals.resize(size_t(img.width) * img.height);
      for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
          vals[size_t(r) * img.width + c] = mag(c, r, index);
      break;
  }
  std::vector<double> sorted = vals;
  std::sort(sorted.begin(), sorted.end());
  double p99 = sorted[size_t(std::floor(0.99 * double(sorted.size() - 1)))];
  img.pixels.resize(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) {
    double w = p99 > 0 ? std::clamp(vals[i] / p99, 0.0, 1.0) : 0.0;
    img.pixels[i] = uint8_t(std::lround(255.0 * w));
  }
  return img;
}

// ---------------------------------------------------------------------------
// Report

struct MetricRow {
  std::string metric;
  std::string roi;  // empty for global metrics
  int state = -1;   // -1 for state-independent metrics
  double value = 0;
};

struct MetricsReport {
  std::vector<MetricRow> rows;

  void add(const std::string& metric, const std::string& roi, int state, double value) {
    rows.push_back({metric, roi, state, value});
  }
};

inline void write_report_csv(const std::string& path, const MetricsReport& report) {
  auto os = open_output(path);
  os << "metric,roi,state,value\n";
  char buf[64];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%.10g", r.value);
    os << r.metric << ',' << r.roi << ',';
    if (r.state >= 0) os << r.state;
    os << ',' << buf << "\n";
  }
  if (!os) throw std::runtime_error("short write: " + path);
}

// Mean and max endpoint error between two displacement fields over a mask.
struct DvfError {
  double mean = 0, max = 0;
};

inline DvfError dvf_endpoint_error(const VectorField& est, const VectorField& truth,
                                   const RealVolume& mask) {
  if (!same_dims(est.dims(), truth.dims()) || !same_dims(est.dims(), mask.dims))
    throw std::invalid_argument("dvf error dims mismatch");
  DvfError e;
  int64_t count = 0;
  for (int64_t j = 0; j < est.size(); ++j) {
    if (mask.data[j] == 0) continue;
    double s = 0;
    for (int c = 0; c < 3; ++c) {
      double d = est.comp[c].data[j] - truth.comp[c].data[j];
      s += d * d;
    }
    double n = std::sqrt(s);
    e.mean += n;
    e.max = std::max(e.max, n);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("empty mask");
  e.mean /= double(count);
  return e;
}

}  // namespace gsmr
