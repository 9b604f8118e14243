#include <benchmark/benchmark.h>

#include <filesystem>
#include <random>

#include "lify/alert_engine.hpp"
#include "lify/envelope.hpp"
#include "lify/simulator.hpp"
#include "lify/storage.hpp"
#include "lify/vitals.hpp"

using namespace lify;

namespace {

// One device window: 10 s at 100 Hz, as the agent acquires it.
const PpgWindow& window() {
  static const PpgWindow w = generate_ppg(72.0, 97.0, 100.0, 10.0, 30.0, 1);
  return w;
}

TelemetryEnvelope envelope(std::int64_t ts) {
  TelemetryEnvelope env;
  env.device_id = "dev-01";
  env.patient_id = "p-001";
  env.ts_ms = ts;
  env.metrics = {{MetricKind::TempC, 36.71}, {MetricKind::HrBpm, 72.4}, {MetricKind::Spo2Pct, 97.2}};
  env.quality = {{MetricKind::TempC, Quality::Ok}, {MetricKind::HrBpm, Quality::Ok}, {MetricKind::Spo2Pct, Quality::Ok}};
  return env;
}

std::vector<StoredRecord> records(std::int64_t first_ts, std::size_t n) {
  std::vector<StoredRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    StoredRecord r;
    r.patient_id = "p-001";
    r.device_id = "dev-01";
    r.metric = MetricKind::TempC;
    r.ts_ms = first_ts + static_cast<std::int64_t>(i) * 1000;
    r.value = 36.5 + 0.001 * static_cast<double>(i % 100);
    out.push_back(r);
  }
  return out;
}

}  // namespace

static void BM_HeartRate(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(estimate_heart_rate(window()));
}
BENCHMARK(BM_HeartRate);

static void BM_Spo2(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(estimate_spo2(window()));
}
BENCHMARK(BM_Spo2);

static void BM_GeneratePpg(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_ppg(72.0, 97.0, 100.0, 10.0, 30.0, ++seed));
}
BENCHMARK(BM_GeneratePpg);

static void BM_Evaluate(benchmark::State& state) {
  AlertRule rule;
  rule.metric = MetricKind::TempC;
  rule.min = 35.0;
  rule.max = 38.0;
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> temp(34.0, 39.5);
  std::vector<VitalSample> trace;
  for (int i = 0; i < 1024; ++i) trace.push_back({"p-001", "dev-01", MetricKind::TempC, temp(rng), i * 1000LL, Quality::Ok});
  RuleState rs;
  std::size_t i = 0;
  for (auto _ : state) {
    rs = evaluate(trace[i++ & 1023], rule, rs).state;
    benchmark::DoNotOptimize(rs);
  }
}
BENCHMARK(BM_Evaluate);

static void BM_EnvelopeRoundTrip(benchmark::State& state) {
  const auto env = envelope(1'700'000'000'000);
  for (auto _ : state) benchmark::DoNotOptimize(parse_envelope(serialize(env)));
}
BENCHMARK(BM_EnvelopeRoundTrip);

static void BM_MemoryStorageRange(benchmark::State& state) {
  MemoryStorage storage;
  const auto n = static_cast<std::size_t>(state.range(0));
  storage.append(records(0, n));
  for (auto _ : state) {
    benchmark::DoNotOptimize(storage.range("p-001", MetricKind::TempC, 0, static_cast<std::int64_t>(n) * 500));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n / 2));
}
BENCHMARK(BM_MemoryStorageRange)->Arg(1'000)->Arg(100'000);

static void BM_FileStorageAppend(benchmark::State& state) {
  const auto root = std::filesystem::temp_directory_path() / "lify-bench-storage";
  std::filesystem::remove_all(root);
  FileStorage storage(root);
  std::int64_t ts = 1'700'000'000'000;
  for (auto _ : state) {
    benchmark::DoNotOptimize(storage.append(records(ts, 3)));
    ts += 3000;
  }
  state.SetItemsProcessed(state.iterations() * 3);
  std::filesystem::remove_all(root);
}
BENCHMARK(BM_FileStorageAppend);

BENCHMARK_MAIN();
