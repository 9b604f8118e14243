#include "lify/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lify/clock.hpp"
#include "lify/error.hpp"

namespace lify {

namespace {

constexpr double kHarmonic = 0.3;

double round_to(double v, double step) { return std::round(v / step) * step; }

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

PpgWindow generate_ppg(double hr_bpm, double spo2_pct, double sample_rate_hz, double duration_s,
                       double noise_snr_db, std::uint64_t seed) {
  if (!(hr_bpm >= 20.0 && hr_bpm <= 250.0)) {
    throw Error(ErrorCode::InvalidTarget, "heart rate target outside [20, 250]");
  }
  if (!(spo2_pct >= 70.0 && spo2_pct <= 100.0)) {
    throw Error(ErrorCode::InvalidTarget, "SpO2 target outside [70, 100]");
  }
  if (!(sample_rate_hz > 0.0) || !(duration_s > 0.0)) {
    throw Error(ErrorCode::InvalidTarget, "sample rate and duration must be positive");
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double start_phase = phase(rng);
  const double harmonic_phase = phase(rng);

  const double ratio = (110.0 - spo2_pct) / 25.0;
  const double m_ir = kIrModulation;
  const double m_red = ratio * kIrModulation;
  const double f = hr_bpm / 60.0;

  const auto n = static_cast<std::size_t>(std::llround(sample_rate_hz * duration_s));
  PpgWindow w;
  w.sample_rate_hz = sample_rate_hz;
  w.red.resize(n);
  w.ir.resize(n);

  // mean power of sin(x) + 0.3 sin(2x + phi) is 0.5 + 0.045
  const double shape_power = 0.5 + 0.5 * kHarmonic * kHarmonic;
  const bool noisy = std::isfinite(noise_snr_db);
  const double noise_scale = noisy ? std::sqrt(shape_power / std::pow(10.0, noise_snr_db / 10.0)) : 0.0;
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate_hz;
    const double theta = 2.0 * std::numbers::pi * f * t + start_phase;
    const double shape = std::sin(theta) + kHarmonic * std::sin(2.0 * theta + harmonic_phase);
    w.red[i] = kRedDc * (1.0 + m_red * shape);
    w.ir[i] = kIrDc * (1.0 + m_ir * shape);
    if (noisy) {
      w.red[i] += kRedDc * m_red * noise_scale * gauss(rng);
      w.ir[i] += kIrDc * m_ir * noise_scale * gauss(rng);
    }
  }
  return w;
}

std::string_view anomaly_code(AnomalyTarget t) noexcept {
  switch (t) {
    case AnomalyTarget::Temp: return "temp_c";
    case AnomalyTarget::HeartRate: return "hr_bpm";
    case AnomalyTarget::Spo2: return "spo2_pct";
    case AnomalyTarget::PpgFlat: return "ppg_flat";
    case AnomalyTarget::TempFault: return "temp_fault";
  }
  return "";
}

std::optional<AnomalyTarget> parse_anomaly_target(std::string_view code) noexcept {
  for (auto t : {AnomalyTarget::Temp, AnomalyTarget::HeartRate, AnomalyTarget::Spo2, AnomalyTarget::PpgFlat,
                 AnomalyTarget::TempFault}) {
    if (anomaly_code(t) == code) return t;
  }
  return std::nullopt;
}

Anomaly parse_anomaly(std::string_view spec) {
  const auto bad = [&](const char* why) {
    return Error(ErrorCode::ConfigError, "anomaly '" + std::string(spec) + "': " + why);
  };
  const auto at = spec.find('@');
  const auto plus = spec.find('+', at == std::string_view::npos ? 0 : at);
  if (at == std::string_view::npos || plus == std::string_view::npos) throw bad("expected TARGET[=VALUE]@START+DURATION");

  const auto head = spec.substr(0, at);
  const auto eq = head.find('=');
  const auto target = parse_anomaly_target(head.substr(0, eq));
  if (!target) throw bad("unknown target");

  Anomaly a;
  a.target = *target;
  const bool needs_value = a.target == AnomalyTarget::Temp || a.target == AnomalyTarget::HeartRate ||
                           a.target == AnomalyTarget::Spo2;
  if (needs_value) {
    if (eq == std::string_view::npos) throw bad("missing value");
    try {
      a.value = std::stod(std::string(head.substr(eq + 1)));
    } catch (const std::exception&) {
      throw bad("malformed value");
    }
  }
  a.start_ms = parse_duration_ms(spec.substr(at + 1, plus - at - 1));
  a.duration_ms = parse_duration_ms(spec.substr(plus + 1));
  if (a.duration_ms <= 0) throw bad("duration must be positive");
  return a;
}

void SimulatedPatientState::validate() const {
  const auto check = [](MetricKind m, double v) {
    const auto b = physiological_bounds(m);
    if (!(v >= b.lo && v <= b.hi)) {
      throw Error(ErrorCode::ConfigError, "base " + std::string(metric_code(m)) + " outside physiological bounds");
    }
  };
  check(MetricKind::HrBpm, base_hr);
  check(MetricKind::TempC, base_temp);
  check(MetricKind::Spo2Pct, base_spo2);
  for (const auto& a : anomalies) {
    if (a.duration_ms <= 0) throw Error(ErrorCode::ConfigError, "anomaly duration must be positive");
  }
  if (!(ppg_rate_hz >= 25.0 && ppg_rate_hz <= 1000.0) || !(ppg_window_s >= 2.0)) {
    throw Error(ErrorCode::ConfigError, "PPG window must be >= 2 s at 25..1000 Hz");
  }
}

DeviceSimulator::DeviceSimulator(std::string device_id, std::string patient_id, SimulatedPatientState state)
    : device_id_(std::move(device_id)),
      patient_id_(std::move(patient_id)),
      state_(std::move(state)),
      rng_(mix_seed(state_.seed, 0)),
      hr_(state_.base_hr),
      temp_(state_.base_temp),
      spo2_(state_.base_spo2) {
  state_.validate();
}

TelemetryEnvelope DeviceSimulator::acquire_cycle(std::int64_t now_ms) {
  if (!origin_ms_) origin_ms_ = now_ms;
  const std::int64_t offset = now_ms - *origin_ms_;
  const std::uint64_t cycle = cycle_++;

  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto& d = state_.drift;
  hr_ += d.hr_step * gauss(rng_) - d.reversion * (hr_ - state_.base_hr);
  temp_ += d.temp_step * gauss(rng_) - d.reversion * (temp_ - state_.base_temp);
  spo2_ += d.spo2_step * gauss(rng_) - d.reversion * (spo2_ - state_.base_spo2);
  spo2_ = std::clamp(spo2_, 70.0, 100.0);
  hr_ = std::clamp(hr_, 20.0, 250.0);

  double hr = hr_;
  double temp = temp_;
  double spo2 = spo2_;
  bool flat = false;
  bool temp_fault = false;
  for (const auto& a : state_.anomalies) {
    if (!a.active_at(offset)) continue;
    switch (a.target) {
      case AnomalyTarget::Temp: temp = a.value; break;
      case AnomalyTarget::HeartRate: hr = std::clamp(a.value, 20.0, 250.0); break;
      case AnomalyTarget::Spo2: spo2 = std::clamp(a.value, 70.0, 100.0); break;
      case AnomalyTarget::PpgFlat: flat = true; break;
      case AnomalyTarget::TempFault: temp_fault = true; break;
    }
  }

  TelemetryEnvelope env;
  env.device_id = device_id_;
  env.patient_id = patient_id_;
  env.ts_ms = now_ms;

  const auto put = [&](MetricKind m, double value, Quality q) {
    VitalSample s{patient_id_, device_id_, m, value, now_ms, q};
    s = validate_sample(s);
    env.metrics[m] = s.value;
    env.quality[m] = s.quality;
  };
  const auto missing = [&](MetricKind m) { env.quality[m] = Quality::NoSignal; };

  const RawTempReading raw = temp_fault ? RawTempReading{0x8001} : celsius_to_raw(temp);
  try {
    put(MetricKind::TempC, round_to(raw_to_celsius(raw), 0.01), Quality::Ok);
  } catch (const Error&) {
    missing(MetricKind::TempC);
  }

  PpgWindow window;
  if (flat) {
    const auto n = static_cast<std::size_t>(std::llround(state_.ppg_rate_hz * state_.ppg_window_s));
    window = PpgWindow{std::vector<double>(n, kRedDc), std::vector<double>(n, kIrDc), state_.ppg_rate_hz};
  } else {
    window = generate_ppg(hr, spo2, state_.ppg_rate_hz, state_.ppg_window_s, state_.noise_snr_db,
                          mix_seed(state_.seed, cycle + 1));
  }
  try {
    put(MetricKind::HrBpm, round_to(estimate_heart_rate(window), 0.1), Quality::Ok);
  } catch (const Error&) {
    missing(MetricKind::HrBpm);
  }
  try {
    const auto est = estimate_spo2(window);
    put(MetricKind::Spo2Pct, round_to(est.value, 0.1), est.quality);
  } catch (const Error&) {
    missing(MetricKind::Spo2Pct);
  }
  return env;
}

}  // namespace lify
