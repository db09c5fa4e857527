#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <random>

#include "gsmr/gating.hpp"
#include "test_util.hpp"

using namespace gsmr;

namespace {

// Synthetic acquisition whose DC samples carry `series` on each coil, scaled
// per coil; only sample 0 of each spoke matters for gating.
RadialKSpace dc_kspace(const std::vector<double>& series, const std::vector<double>& gains,
                       double tr) {
  RadialKSpace ks;
  ks.n_coils = int(gains.size());
  ks.n_spokes = int(series.size());
  ks.samples_per_spoke = 3;
  ks.tr_seconds = tr;
  ks.data.assign(size_t(ks.n_coils) * ks.samples_per_coil(), cplx{});
  for (int c = 0; c < ks.n_coils; ++c)
    for (int m = 0; m < ks.n_spokes; ++m)
      ks.at(c, m, 0) = cplx(5.0 + gains[size_t(c)] * series[size_t(m)], 0.0);
  return ks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / double(a.size());
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / double(b.size());
  double num = 0, da = 0, db = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    da += (a[i] - ma) * (a[i] - ma);
    db += (b[i] - mb) * (b[i] - mb);
  }
  return num / std::sqrt(da * db);
}

double rms(const std::vector<double>& v, size_t skip = 0) {
  double s = 0;
  for (size_t i = skip; i + skip < v.size(); ++i) s += v[i] * v[i];
  return std::sqrt(s / double(v.size() - 2 * skip));
}

}  // namespace

TEST_CASE("single-coil surrogate is the centered DC magnitude", "[gating]") {
  std::vector<double> series(64);
  for (size_t i = 0; i < series.size(); ++i) series[i] = std::sin(0.3 * double(i));
  RadialKSpace ks = dc_kspace(series, {1.0}, 0.0037);
  RespiratorySignal sig = extract_dc_signal(ks);
  double mean = std::accumulate(series.begin(), series.end(), 0.0) / double(series.size());
  REQUIRE(sig.n_spokes() == 64);
  for (size_t i = 0; i < series.size(); ++i)
    CHECK(sig.amplitude[i] == Catch::Approx(series[i] - mean).margin(1e-12));
  CHECK(std::abs(std::accumulate(sig.amplitude.begin(), sig.amplitude.end(), 0.0)) < 1e-10);
}

TEST_CASE("identical coils produce a perfectly correlated surrogate", "[gating]") {
  std::vector<double> series(128);
  for (size_t i = 0; i < series.size(); ++i)
    series[i] = std::sin(0.1 * double(i)) + 0.2 * std::cos(0.37 * double(i));
  RadialKSpace ks = dc_kspace(series, {1.0, 1.0}, 0.0037);
  RespiratorySignal sig = extract_dc_signal(ks);
  CHECK(pearson(sig.amplitude, series) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("surrogate sign follows the coil-mean series", "[gating]") {
  std::vector<double> series(96);
  for (size_t i = 0; i < series.size(); ++i) series[i] = std::sin(0.21 * double(i));
  // Opposite-gain coils: PCA direction is sign-ambiguous, the mean fixes it.
  RadialKSpace ks = dc_kspace(series, {2.0, 0.5}, 0.0037);
  RespiratorySignal sig = extract_dc_signal(ks);
  CHECK(pearson(sig.amplitude, series) > 0.99);
}

TEST_CASE("self-gating needs at least four spokes", "[gating]") {
  std::vector<double> series{1, 2, 3};
  RadialKSpace ks = dc_kspace(series, {1.0}, 0.0037);
  CHECK_THROWS_AS(extract_dc_signal(ks), std::invalid_argument);
}

TEST_CASE("low-pass passes respiration and rejects fast oscillation", "[gating]") {
  double tr = 0.0037;  // fs = 270 Hz
  int n = 8000;
  RespiratorySignal slow, fast;
  slow.tr_seconds = fast.tr_seconds = tr;
  slow.amplitude.resize(size_t(n));
  fast.amplitude.resize(size_t(n));
  for (int i = 0; i < n; ++i) {
    double t = double(i) * tr;
    slow.amplitude[size_t(i)] = std::sin(2 * M_PI * 0.1 * t);
    fast.amplitude[size_t(i)] = std::sin(2 * M_PI * 5.0 * t);
  }
  RespiratorySignal fslow = lowpass_filter(slow, 0.75);
  RespiratorySignal ffast = lowpass_filter(fast, 0.75);

  // 0.1 Hz attenuated by < 1%, 5 Hz by > 95% (interior samples).
  std::vector<double> diff(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    diff[size_t(i)] = fslow.amplitude[size_t(i)] - slow.amplitude[size_t(i)];
  CHECK(rms(diff, 400) < 0.01 * rms(slow.amplitude, 400));
  CHECK(rms(ffast.amplitude, 400) < 0.05 * rms(fast.amplitude, 400));
}

TEST_CASE("constant surrogate filters to zero", "[gating]") {
  RespiratorySignal sig;
  sig.tr_seconds = 0.0037;
  sig.amplitude.assign(500, 3.25);
  RespiratorySignal out = lowpass_filter(sig, 0.75);
  for (double v : out.amplitude) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("cutoff must lie strictly inside (0, Nyquist)", "[gating]") {
  RespiratorySignal sig;
  sig.tr_seconds = 0.0037;
  sig.amplitude.assign(100, 0.0);
  CHECK_THROWS_AS(lowpass_filter(sig, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(lowpass_filter(sig, 0.5 / 0.0037), std::invalid_argument);
  CHECK_NOTHROW(lowpass_filter(sig, 0.75));
}

TEST_CASE("equal-count binning splits 86000 spokes into near-equal states", "[gating]") {
  int n = 86000;
  std::vector<double> values(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) values[size_t(i)] = std::sin(2 * M_PI * 0.25 * 0.0037 * i);
  MotionStateBins bins = bin_values(values, 6);
  REQUIRE(bins.n_states() == 6);
  std::vector<size_t> counts;
  for (const auto& s : bins.spokes) counts.push_back(s.size());
  CHECK(counts == std::vector<size_t>{14334, 14334, 14333, 14333, 14333, 14333});
  size_t mn = *std::min_element(counts.begin(), counts.end());
  size_t mx = *std::max_element(counts.begin(), counts.end());
  CHECK(mx - mn <= 1);
}

TEST_CASE("binning partitions the spokes with sorted lists", "[gating]") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> d;
  std::vector<double> values(1001);
  for (double& v : values) v = d(rng);
  MotionStateBins bins = bin_values(values, 7);
  std::vector<char> seen(values.size(), 0);
  for (const auto& list : bins.spokes) {
    CHECK(std::is_sorted(list.begin(), list.end()));
    for (int i : list) {
      CHECK(seen[size_t(i)] == 0);
      seen[size_t(i)] = 1;
    }
  }
  CHECK(std::count(seen.begin(), seen.end(), char(1)) == int64_t(values.size()));
  // State amplitudes (medians) are non-decreasing from expiration to inspiration.
  for (int s = 0; s + 1 < bins.n_states(); ++s)
    CHECK(bins.amplitude[size_t(s)] <= bins.amplitude[size_t(s + 1)]);
}

TEST_CASE("monotone values give strictly increasing state medians", "[gating]") {
  std::vector<double> values(40);
  for (size_t i = 0; i < values.size(); ++i) values[i] = double(i) * 0.5;
  MotionStateBins bins = bin_values(values, 4);
  // 10 spokes per state; medians at value indices 4.5, 14.5, 24.5, 34.5.
  for (int s = 0; s < 4; ++s) {
    std::vector<int> expect(10);
    std::iota(expect.begin(), expect.end(), 10 * s);
    CHECK(bins.spokes[size_t(s)] == expect);
    CHECK(bins.amplitude[size_t(s)] == Catch::Approx((10.0 * s + 4.5) * 0.5));
  }
}

TEST_CASE("binning is invariant to positive affine rescaling", "[gating]") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> d;
  std::vector<double> values(500), scaled(500);
  for (size_t i = 0; i < values.size(); ++i) {
    values[i] = d(rng);
    scaled[i] = 2.5 * values[i] + 7.0;
  }
  MotionStateBins a = bin_values(values, 5);
  MotionStateBins b = bin_values(scaled, 5);
  for (int s = 0; s < 5; ++s) CHECK(a.spokes[size_t(s)] == b.spokes[size_t(s)]);
}

TEST_CASE("ties are broken by spoke index", "[gating]") {
  std::vector<double> values(12, 1.0);
  MotionStateBins bins = bin_values(values, 4);
  CHECK(bins.spokes[0] == std::vector<int>{0, 1, 2});
  CHECK(bins.spokes[1] == std::vector<int>{3, 4, 5});
  CHECK(bins.spokes[2] == std::vector<int>{6, 7, 8});
  CHECK(bins.spokes[3] == std::vector<int>{9, 10, 11});
}

TEST_CASE("single-state binning collapses to the global median", "[gating]") {
  std::vector<double> values{3.0, 1.0, 2.0, 5.0, 4.0};
  MotionStateBins bins = bin_values(values, 1);
  REQUIRE(bins.n_states() == 1);
  CHECK(bins.spokes[0] == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(bins.amplitude[0] == 3.0);
  CHECK_THROWS_AS(bin_values(values, 0), std::invalid_argument);
  CHECK_THROWS_AS(bin_values(values, 6), std::invalid_argument);
}

TEST_CASE("pipeline recovers the breathing frequency from synthetic data", "[gating]") {
  // 0.25 Hz breathing + broadband noise on the DC samples; the filtered
  // surrogate's dominant DTFT peak must land within 0.02 Hz of the truth.
  double tr = 0.0037;
  int n = 20000;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<double> series(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    series[size_t(i)] = std::sin(2 * M_PI * 0.25 * tr * double(i)) + noise(rng);
  RadialKSpace ks = dc_kspace(series, {1.5, 0.7, 1.1}, tr);

  RespiratorySignal sig = lowpass_filter(extract_dc_signal(ks), 0.75);

  double best_f = 0, best_p = -1;
  for (double f = 0.05; f <= 1.0; f += 0.005) {
    cplx acc = 0;
    for (int i = 0; i < n; ++i) {
      double w = 0.5 - 0.5 * std::cos(2 * M_PI * double(i) / double(n - 1));
      acc += w * sig.amplitude[size_t(i)] *
             std::polar(1.0, -2 * M_PI * f * tr * double(i));
    }
    if (std::abs(acc) > best_p) {
      best_p = std::abs(acc);
      best_f = f;
    }
  }
  CHECK(std::abs(best_f - 0.25) <= 0.02);
}

TEST_CASE("gate_kspace bins a synthetic acquisition end to end", "[gating]") {
  double tr = 0.0037;
  int n = 6000;
  std::vector<double> series(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) series[size_t(i)] = std::sin(2 * M_PI * 0.25 * tr * double(i));
  RadialKSpace ks = dc_kspace(series, {1.0, 0.8}, tr);
  MotionStateBins bins = gate_kspace(ks, 6);
  REQUIRE(bins.n_states() == 6);
  size_t mn = SIZE_MAX, mx = 0;
  for (const auto& s : bins.spokes) {
    mn = std::min(mn, s.size());
    mx = std::max(mx, s.size());
  }
  CHECK(mx - mn <= 1);
  for (int s = 0; s + 1 < 6; ++s)
    CHECK(bins.amplitude[size_t(s)] < bins.amplitude[size_t(s + 1)]);
}
