#include "lify/vitals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lify/error.hpp"

namespace lify {

namespace {

constexpr double kKelvinPerCount = 0.02;
constexpr double kKelvinOffset = 273.15;
constexpr double kMinPeakSpacingS = 0.33;
constexpr double kPeakThresholdRms = 0.5;
// Longer than the slowest supported pulse period (48 BPM); a 1 s window
// boosts the second harmonic relative to the fundamental below 60 BPM and
// splits each beat into two peaks.
constexpr double kHrDetrendWindowS = 1.5;
constexpr double kHrSmoothingS = 0.08;

// Detrended energy below this fraction of the signal level is rounding noise.
constexpr double kFlatRelative = 1e-9;

double mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double level_of(const std::vector<double>& x) {
  return std::max(1.0, std::abs(mean(x)));
}

std::size_t samples_for(const PpgWindow& w, double seconds) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(w.sample_rate_hz * seconds)));
}

std::size_t one_second(const PpgWindow& w) { return samples_for(w, 1.0); }

std::vector<double> moving_average(const std::vector<double>& x, std::size_t window) {
  auto residual = detrend(x, window);
  for (std::size_t i = 0; i < x.size(); ++i) residual[i] = x[i] - residual[i];
  return residual;
}

}  // namespace

std::string_view metric_code(MetricKind m) noexcept {
  switch (m) {
    case MetricKind::TempC: return "temp_c";
    case MetricKind::HrBpm: return "hr_bpm";
    case MetricKind::Spo2Pct: return "spo2_pct";
  }
  return "";
}

std::optional<MetricKind> parse_metric(std::string_view code) noexcept {
  for (auto m : kAllMetrics) {
    if (metric_code(m) == code) return m;
  }
  return std::nullopt;
}

std::string_view quality_code(Quality q) noexcept {
  switch (q) {
    case Quality::Ok: return "ok";
    case Quality::Suspect: return "suspect";
    case Quality::NoSignal: return "no_signal";
  }
  return "";
}

std::optional<Quality> parse_quality(std::string_view code) noexcept {
  for (auto q : {Quality::Ok, Quality::Suspect, Quality::NoSignal}) {
    if (quality_code(q) == code) return q;
  }
  return std::nullopt;
}

PhysiologicalBounds physiological_bounds(MetricKind m) noexcept {
  switch (m) {
    case MetricKind::TempC: return {25.0, 45.0};
    case MetricKind::HrBpm: return {20.0, 250.0};
    case MetricKind::Spo2Pct: return {70.0, 100.0};
  }
  return {0.0, 0.0};
}

double raw_to_celsius(RawTempReading r) {
  if (r.raw > 0x7FFF) {
    throw Error(ErrorCode::SensorFault, "temperature sensor error flag set");
  }
  return static_cast<double>(r.raw) * kKelvinPerCount - kKelvinOffset;
}

RawTempReading celsius_to_raw(double celsius) {
  const double counts = std::round((celsius + kKelvinOffset) / kKelvinPerCount);
  return RawTempReading{static_cast<std::uint16_t>(std::clamp(counts, 0.0, 32767.0))};
}

void check_window(const PpgWindow& w) {
  if (!(w.sample_rate_hz >= 25.0 && w.sample_rate_hz <= 1000.0)) {
    throw Error(ErrorCode::WindowTooShort, "sample rate must be within [25, 1000] Hz");
  }
  if (w.red.size() != w.ir.size()) {
    throw Error(ErrorCode::WindowTooShort, "red and ir channels differ in length");
  }
  if (static_cast<double>(w.ir.size()) < 2.0 * w.sample_rate_hz) {
    throw Error(ErrorCode::WindowTooShort, "window shorter than 2 s");
  }
}

std::vector<double> detrend(const std::vector<double>& x, std::size_t window) {
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];

  const std::size_t half = window / 2;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + (window - half));
    const double avg = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
    out[i] = x[i] - avg;
  }
  return out;
}

double estimate_heart_rate(const PpgWindow& w) {
  check_window(w);
  const auto d = moving_average(detrend(w.ir, samples_for(w, kHrDetrendWindowS)), samples_for(w, kHrSmoothingS));

  double sum_sq = 0.0;
  for (double v : d) sum_sq += v * v;
  const double rms = std::sqrt(sum_sq / static_cast<double>(d.size()));
  if (!(rms > kFlatRelative * level_of(w.ir)) || !std::isfinite(rms)) {
    throw Error(ErrorCode::NoPulseDetected, "flat IR channel");
  }
  const double threshold = kPeakThresholdRms * rms;
  const auto min_spacing = static_cast<std::ptrdiff_t>(std::ceil(kMinPeakSpacingS * w.sample_rate_hz));

  std::vector<std::ptrdiff_t> peaks;
  for (std::size_t i = 1; i + 1 < d.size(); ++i) {
    if (d[i] <= threshold || d[i] <= d[i - 1] || d[i] < d[i + 1]) continue;
    const auto idx = static_cast<std::ptrdiff_t>(i);
    if (!peaks.empty() && idx - peaks.back() < min_spacing) {
      if (d[i] > d[static_cast<std::size_t>(peaks.back())]) peaks.back() = idx;
      continue;
    }
    peaks.push_back(idx);
  }

  if (peaks.size() < 3) {
    throw Error(ErrorCode::NoPulseDetected, "fewer than 3 pulse peaks in window");
  }
  const double span_s = static_cast<double>(peaks.back() - peaks.front()) / w.sample_rate_hz;
  return 60.0 * static_cast<double>(peaks.size() - 1) / span_s;
}

Spo2Estimate estimate_spo2(const PpgWindow& w) {
  check_window(w);
  const double dc_red = mean(w.red);
  const double dc_ir = mean(w.ir);
  if (!(dc_red > 0.0) || !(dc_ir > 0.0)) {
    throw Error(ErrorCode::NoSignal, "non-positive DC level");
  }

  const auto window = one_second(w);
  const auto peak_to_peak = [&](const std::vector<double>& x) {
    const auto d = detrend(x, window);
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    return *hi - *lo;
  };
  const double ac_red = peak_to_peak(w.red);
  const double ac_ir = peak_to_peak(w.ir);
  if (!(ac_ir > kFlatRelative * dc_ir)) {
    throw Error(ErrorCode::NoSignal, "no pulsatile component on IR channel");
  }

  Spo2Estimate est;
  est.ratio = (ac_red / dc_red) / (ac_ir / dc_ir);
  const double raw = 110.0 - 25.0 * est.ratio;
  est.value = std::clamp(raw, 70.0, 100.0);
  // A reading pinned at a limit cannot be told apart from one beyond it.
  constexpr double kAtLimit = 1e-6;
  const bool clamped = raw >= 100.0 - kAtLimit || raw <= 70.0 + kAtLimit;
  est.quality = clamped ? Quality::Suspect : Quality::Ok;
  return est;
}

VitalSample validate_sample(VitalSample s) {
  if (!std::isfinite(s.value)) {
    s.quality = Quality::NoSignal;
    return s;
  }
  const auto b = physiological_bounds(s.metric);
  if (s.value < b.lo || s.value > b.hi) {
    s.quality = std::max(s.quality, Quality::Suspect);
  }
  return s;
}

}  // namespace lify
