#pragma once

// Domain types shared across the platform and the sample-to-vitals math for
// the temperature and dual-channel optical pulse sensors.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lify {

enum class MetricKind { TempC, HrBpm, Spo2Pct };

inline constexpr std::array<MetricKind, 3> kAllMetrics = {
    MetricKind::TempC, MetricKind::HrBpm, MetricKind::Spo2Pct};

/// Wire identifiers: "temp_c", "hr_bpm", "spo2_pct".
std::string_view metric_code(MetricKind m) noexcept;
std::optional<MetricKind> parse_metric(std::string_view code) noexcept;

/// Ordered from best to worst so that std::max picks the worse quality.
enum class Quality { Ok = 0, Suspect = 1, NoSignal = 2 };

std::string_view quality_code(Quality q) noexcept;
std::optional<Quality> parse_quality(std::string_view code) noexcept;

struct PhysiologicalBounds {
  double lo;
  double hi;
};

PhysiologicalBounds physiological_bounds(MetricKind m) noexcept;

struct VitalSample {
  std::string patient_id;
  std::string device_id;
  MetricKind metric = MetricKind::TempC;
  double value = 0.0;
  std::int64_t ts_ms = 0;
  Quality quality = Quality::Ok;

  bool operator==(const VitalSample&) const = default;
};

/// Raw dual-channel optical samples in ADC counts.
struct PpgWindow {
  std::vector<double> red;
  std::vector<double> ir;
  double sample_rate_hz = 0.0;
};

/// Object-temperature register of the infrared thermometer, 0.02 K per LSB.
/// The high bit flags a sensor error.
struct RawTempReading {
  std::uint16_t raw = 0;
};

struct Spo2Estimate {
  double value = 0.0;
  Quality quality = Quality::Ok;
  double ratio = 0.0;
};

/// Throws Error(SensorFault) when the error flag bit is set.
double raw_to_celsius(RawTempReading r);

/// Inverse of raw_to_celsius rounded to the nearest count. Used by the
/// simulator to synthesize register values.
RawTempReading celsius_to_raw(double celsius);

/// Throws WindowTooShort when the window is malformed.
void check_window(const PpgWindow& w);

/// Peak-based heart rate on the IR channel.
///
/// The channel is detrended with a centred 1.5 s moving average and smoothed
/// with an 80 ms one. Local maxima above half the RMS of the result are peak
/// candidates; candidates closer than 0.33 s to the previous accepted peak
/// replace it only when they are higher. The rate is 60 * (peaks - 1) / (t_last - t_first).
///
/// Throws WindowTooShort or NoPulseDetected (fewer than 3 peaks).
double estimate_heart_rate(const PpgWindow& w);

/// Ratio-of-ratios oxygen saturation: R = (AC_red/DC_red) / (AC_ir/DC_ir),
/// SpO2 = 110 - 25 R, clamped to [70, 100]. AC is the peak-to-peak of the
/// detrended channel and DC its mean. Results clamped or sitting on a limit
/// (within 1e-6) carry Quality::Suspect.
///
/// Throws WindowTooShort, or NoSignal when a DC level is not positive or the
/// IR channel carries no pulsatile component.
Spo2Estimate estimate_spo2(const PpgWindow& w);

/// Downgrades quality for non-finite values (NoSignal) and values outside
/// the physiological bounds (Suspect). Never upgrades.
VitalSample validate_sample(VitalSample s);

/// Centred moving average subtraction with a window truncated at the edges.
std::vector<double> detrend(const std::vector<double>& x, std::size_t window);

}  // namespace lify
