#pragma once

// Synthetic bedside sensors. Stands in for the thermometer and the optical
// pulse sensor so the whole pipeline can run on a desk.

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "lify/envelope.hpp"
#include "lify/vitals.hpp"

namespace lify {

inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

/// Modulation depth of the IR channel. The red depth is R times this so that
/// 110 - 25 R equals the requested saturation.
inline constexpr double kIrModulation = 0.02;
inline constexpr double kIrDc = 50000.0;
inline constexpr double kRedDc = 40000.0;

/// Deterministic two-channel pulse waveform for a given seed:
///   s(t) = DC (1 + m (sin(2 pi f t + p0) + 0.3 sin(4 pi f t + 2 p0 + phi))) + noise
/// with f = hr_bpm / 60. The harmonic phase phi and the start phase p0 are
/// drawn from the seed; noise is white Gaussian at `noise_snr_db` relative
/// to the pulsatile power of each channel (kNoNoise disables it).
///
/// Throws Error(InvalidTarget) for hr outside [20, 250], spo2 outside
/// [70, 100], or a non-positive rate/duration.
PpgWindow generate_ppg(double hr_bpm, double spo2_pct, double sample_rate_hz, double duration_s,
                       double noise_snr_db, std::uint64_t seed);

enum class AnomalyTarget { Temp, HeartRate, Spo2, PpgFlat, TempFault };

std::string_view anomaly_code(AnomalyTarget t) noexcept;
std::optional<AnomalyTarget> parse_anomaly_target(std::string_view code) noexcept;

/// Forces a reading for a while. Offsets are relative to the simulator's
/// origin (its first cycle). `value` is ignored for PpgFlat and TempFault.
struct Anomaly {
  std::int64_t start_ms = 0;
  std::int64_t duration_ms = 0;
  AnomalyTarget target = AnomalyTarget::Temp;
  double value = 0.0;

  bool active_at(std::int64_t offset_ms) const noexcept {
    return offset_ms >= start_ms && offset_ms < start_ms + duration_ms;
  }
  bool operator==(const Anomaly&) const = default;
};

/// Parses "temp_c=39.5@10s+30s", "ppg_flat@5s+3s" and friends. Durations
/// accept ms, s and m suffixes.
Anomaly parse_anomaly(std::string_view spec);

/// Mean-reverting random walk step sizes (one standard deviation per cycle).
struct DriftParams {
  double hr_step = 0.4;
  double temp_step = 0.01;
  double spo2_step = 0.05;
  double reversion = 0.1;
};

struct SimulatedPatientState {
  double base_hr = 72.0;
  double base_temp = 36.8;
  double base_spo2 = 97.5;
  DriftParams drift;
  std::vector<Anomaly> anomalies;
  double noise_snr_db = 30.0;
  double ppg_rate_hz = 100.0;
  double ppg_window_s = 10.0;
  std::uint64_t seed = 1;

  /// Throws Error(ConfigError) when a base value leaves the physiological
  /// bounds or an anomaly duration is not positive.
  void validate() const;
};

/// Drives one simulated device. Each cycle advances the drift, applies active
/// anomalies, synthesizes raw sensor data and runs the vitals estimators on it.
class DeviceSimulator {
 public:
  DeviceSimulator(std::string device_id, std::string patient_id, SimulatedPatientState state);

  /// The first call fixes the origin that anomaly offsets refer to.
  TelemetryEnvelope acquire_cycle(std::int64_t now_ms);

  std::uint64_t cycles() const noexcept { return cycle_; }
  const std::string& device_id() const noexcept { return device_id_; }
  const std::string& patient_id() const noexcept { return patient_id_; }

 private:
  std::string device_id_;
  std::string patient_id_;
  SimulatedPatientState state_;
  std::mt19937_64 rng_;
  double hr_;
  double temp_;
  double spo2_;
  std::uint64_t cycle_ = 0;
  std::optional<std::int64_t> origin_ms_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

}  // namespace lify
