#include <gtest/gtest.h>

#include <random>

#include "lify/alert_engine.hpp"
#include "lify/error.hpp"
#include "test_support.hpp"

using namespace lify;
using lify::testing::TempDir;

namespace {

AlertRule temp_rule(double min, double max, int n, int m) {
  AlertRule r = default_rule("p-1", MetricKind::TempC);
  r.min = min;
  r.max = max;
  r.debounce_n = n;
  r.rearm_m = m;
  return r;
}

VitalSample temp(double v, Quality q = Quality::Ok, std::int64_t ts = 1) {
  return VitalSample{"p-1", "dev-1", MetricKind::TempC, v, ts, q};
}

std::vector<std::size_t> run_machine(const std::vector<VitalSample>& trace, const AlertRule& rule) {
  std::vector<std::size_t> fires;
  RuleState st;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto ev = evaluate(trace[i], rule, st);
    st = ev.state;
    if (ev.fire) fires.push_back(i);
  }
  return fires;
}

/// Counts runs directly instead of stepping a state machine: sample i fires
/// when the breach run ending at i has length exactly n and, since the last
/// fire, some run of in-range samples reached m. NoSignal samples are
/// invisible.
std::vector<std::size_t> oracle(const std::vector<VitalSample>& trace, const AlertRule& rule) {
  std::vector<std::size_t> idx;  // positions of samples that count
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (trace[i].quality != Quality::NoSignal) idx.push_back(i);
  }
  const auto breach = [&](std::size_t k) {
    const double v = trace[idx[k]].value;
    return v < rule.min || v > rule.max;
  };
  std::vector<std::size_t> fires;
  std::optional<std::size_t> last_fire;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (!breach(k)) continue;
    std::size_t run = 0;
    for (std::size_t j = k + 1; j-- > 0 && breach(j);) ++run;
    if (run != static_cast<std::size_t>(rule.debounce_n)) continue;
    bool armed = !last_fire;
    if (last_fire) {
      std::size_t normals = 0;
      for (std::size_t j = *last_fire + 1; j < k; ++j) {
        normals = breach(j) ? 0 : normals + 1;
        if (normals >= static_cast<std::size_t>(rule.rearm_m)) armed = true;
      }
    }
    if (!armed) continue;
    fires.push_back(idx[k]);
    last_fire = k;
  }
  return fires;
}

std::vector<VitalSample> random_trace(std::mt19937_64& rng, std::size_t len, const AlertRule& rule) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<VitalSample> out;
  bool high = false;
  for (std::size_t i = 0; i < len; ++i) {
    if (u(rng) < 0.15) high = !high;  // runs of similar values make fires likely
    double v = high ? rule.max + 0.1 + u(rng) * 2 : rule.min + (rule.max - rule.min) * u(rng);
    if (u(rng) < 0.05) v = rule.max;  // exact boundary
    if (u(rng) < 0.05) v = rule.min - 0.5;
    const double qr = u(rng);
    const Quality q = qr < 0.1 ? Quality::NoSignal : qr < 0.2 ? Quality::Suspect : Quality::Ok;
    out.push_back(temp(v, q, static_cast<std::int64_t>(i + 1)));
  }
  return out;
}

Actor staff() { return Actor{"u-staff", "Nurse J.", Role::Staff}; }
Actor family() { return Actor{"u-fam", "Ana's son", Role::Family}; }

}  // namespace

TEST(Evaluate, FiresOnDebounceCount) {
  const auto rule = temp_rule(35, 38, 3, 5);
  EXPECT_EQ(run_machine({temp(39), temp(39), temp(39)}, rule), std::vector<std::size_t>{2});
  EXPECT_TRUE(run_machine({temp(38.0), temp(38.0), temp(38.0), temp(35.0)}, rule).empty());  // inclusive bounds
}

TEST(Evaluate, DisarmedUntilRearm) {
  const auto rule = temp_rule(35, 38, 3, 5);
  std::vector<VitalSample> t(8, temp(39));
  EXPECT_EQ(run_machine(t, rule), std::vector<std::size_t>{2});
  for (int i = 0; i < 4; ++i) t.push_back(temp(37));
  for (int i = 0; i < 3; ++i) t.push_back(temp(39));
  EXPECT_EQ(run_machine(t, rule).size(), 1u);  // 4 normals are not enough
  t.resize(8);
  for (int i = 0; i < 5; ++i) t.push_back(temp(37));
  for (int i = 0; i < 3; ++i) t.push_back(temp(39));
  EXPECT_EQ(run_machine(t, rule), (std::vector<std::size_t>{2, 15}));
}

TEST(Evaluate, NoSignalIsSkippedAndSuspectCounts) {
  const auto rule = temp_rule(35, 38, 3, 5);
  RuleState st;
  st = evaluate(temp(39), rule, st).state;
  const auto same = evaluate(temp(99, Quality::NoSignal), rule, st);
  EXPECT_EQ(same.state, st);
  EXPECT_FALSE(same.fire);
  st = evaluate(temp(39, Quality::Suspect), rule, st).state;
  EXPECT_TRUE(evaluate(temp(39), rule, st).fire);
}

TEST(Evaluate, MetricMismatch) {
  auto s = temp(39);
  s.metric = MetricKind::HrBpm;
  try {
    evaluate(s, temp_rule(35, 38, 3, 5), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MetricMismatch);
  }
}

TEST(Evaluate, MatchesRunCountingOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> count(1, 5), len(1, 400);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto rule = temp_rule(35, 38, count(rng), count(rng));
    const auto trace = random_trace(rng, static_cast<std::size_t>(len(rng)), rule);
    const auto fires = run_machine(trace, rule);
    ASSERT_EQ(fires, oracle(trace, rule)) << "trial " << trial;

    // no storm: at least rearm_m in-range samples between consecutive fires
    for (std::size_t f = 1; f < fires.size(); ++f) {
      int normals = 0;
      for (std::size_t i = fires[f - 1] + 1; i < fires[f]; ++i) {
        const auto& s = trace[i];
        if (s.quality != Quality::NoSignal && s.value >= rule.min && s.value <= rule.max) ++normals;
      }
      EXPECT_GE(normals, rule.rearm_m);
    }
    // NoSignal transparency: removing them changes nothing about which samples fire
    std::vector<VitalSample> clean;
    std::vector<std::size_t> map;
    for (std::size_t i = 0; i < trace.size(); ++i) {
      if (trace[i].quality == Quality::NoSignal) continue;
      map.push_back(i);
      clean.push_back(trace[i]);
    }
    std::vector<std::size_t> mapped;
    for (const auto f : run_machine(clean, rule)) mapped.push_back(map[f]);
    EXPECT_EQ(mapped, fires);
  }
}

TEST(Evaluate, LongTraces) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> count(1, 5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto rule = temp_rule(35, 38, count(rng), count(rng));
    const auto trace = random_trace(rng, 10'000, rule);
    EXPECT_EQ(run_machine(trace, rule), oracle(trace, rule));
  }
}

TEST(AlertEngine, SamplesOnTheBusRaiseAlerts) {
  EventBus bus;
  ManualClock clock;
  AlertEngine engine(bus, {}, clock);
  std::vector<AlertEvent> events;
  auto sub = bus.subscribe([&](const BusEvent& e) {
    if (const auto* a = std::get_if<AlertEvent>(&e)) events.push_back(*a);
  });
  for (int i = 0; i < 3; ++i) bus.publish(SampleEvent{temp(39.2, Quality::Ok, 1000 + i)});
  ASSERT_EQ(events.size(), 1u);
  const auto& a = events[0].alert;
  EXPECT_EQ(a.alert_id, "a-0000000001");
  EXPECT_EQ(a.metric, MetricKind::TempC);
  EXPECT_EQ(a.value, 39.2);
  EXPECT_EQ(a.rule_min, 35.0);
  EXPECT_EQ(a.rule_max, 38.0);
  EXPECT_EQ(a.sample_ts_ms, 1002);
  EXPECT_EQ(a.created_ts_ms, clock.now_ms());
  EXPECT_EQ(a.severity, Severity::Warning);
  EXPECT_FALSE(a.is_manual());
}

TEST(AlertEngine, DefaultRules) {
  EventBus bus;
  AlertEngine engine(bus);
  const auto r = engine.rules("p-9");
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(std::make_pair(r[0].min, r[0].max), std::make_pair(35.0, 38.0));
  EXPECT_EQ(std::make_pair(r[1].min, r[1].max), std::make_pair(50.0, 110.0));
  EXPECT_EQ(std::make_pair(r[2].min, r[2].max), std::make_pair(92.0, 100.0));
  for (const auto& x : r) {
    EXPECT_EQ(x.debounce_n, 3);
    EXPECT_EQ(x.rearm_m, 5);
    EXPECT_EQ(x.severity, Severity::Warning);
  }
}

TEST(AlertEngine, RuleChangeResetsStateAndAppliesNext) {
  EventBus bus;
  AlertEngine engine(bus);
  engine.on_sample(temp(39));
  engine.on_sample(temp(39));
  EXPECT_EQ(engine.state("p-1", MetricKind::TempC).consecutive_breaches, 2);
  engine.set_rule(temp_rule(35, 39.5, 3, 5));
  EXPECT_EQ(engine.state("p-1", MetricKind::TempC), RuleState{});
  for (int i = 0; i < 3; ++i) EXPECT_FALSE(engine.on_sample(temp(39)));
  EXPECT_THROW(engine.set_rule(temp_rule(40, 38, 3, 5)), Error);
  auto disabled = temp_rule(35, 38, 1, 1);
  disabled.enabled = false;
  engine.set_rule(disabled);
  EXPECT_FALSE(engine.on_sample(temp(45)));
}

TEST(AlertEngine, ManualAlerts) {
  EventBus bus;
  AlertEngine engine(bus);
  const auto a = engine.trigger_manual(staff(), "p-1", "patient fell", Severity::Critical);
  EXPECT_EQ(a.state, AlertState::Open);
  EXPECT_EQ(a.raised_by, "u-staff");
  EXPECT_EQ(a.raised_by_name, "Nurse J.");

  const auto code = [&](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;  // sentinel: nothing thrown
  };
  EXPECT_EQ(code([&] { engine.trigger_manual(family(), "p-1", "x", Severity::Warning); }), ErrorCode::Forbidden);
  EXPECT_EQ(code([&] { engine.trigger_manual(staff(), "p-1", "", Severity::Warning); }), ErrorCode::ValidationError);
  EXPECT_EQ(code([&] { engine.trigger_manual(staff(), "p-1", std::string(501, 'x'), Severity::Warning); }),
            ErrorCode::ValidationError);
  EXPECT_EQ(code([&] { engine.trigger_manual(staff(), "p-1", "x", Severity::Info); }), ErrorCode::ValidationError);
  std::string accents;
  for (int i = 0; i < 500; ++i) accents += "é";  // 1000 bytes, 500 characters
  EXPECT_NO_THROW(engine.trigger_manual(staff(), "p-1", accents, Severity::Warning));
}

TEST(AlertEngine, AcknowledgeLifecycle) {
  EventBus bus;
  ManualClock clock;
  AlertEngine engine(bus, {}, clock);
  const auto a = engine.trigger_manual(staff(), "p-1", "help", Severity::Warning);
  clock.advance(std::chrono::seconds(5));
  const auto acked = engine.acknowledge(staff(), a.alert_id);
  EXPECT_EQ(acked.state, AlertState::Acked);
  EXPECT_EQ(acked.acked_by, "u-staff");
  EXPECT_EQ(acked.acked_ts_ms, clock.now_ms());
  const auto code = [&](const Actor& who, const std::string& id) {
    try {
      engine.acknowledge(who, id);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  EXPECT_EQ(code(staff(), a.alert_id), ErrorCode::AlreadyAcked);
  EXPECT_EQ(code(family(), a.alert_id), ErrorCode::Forbidden);
  EXPECT_EQ(code(staff(), "a-404"), ErrorCode::NotFound);
  EXPECT_TRUE(engine.list({AlertState::Open, {}, {}}).empty());
}

TEST(AlertEngine, ListingOrderAndFilters) {
  EventBus bus;
  ManualClock clock;
  AlertEngine engine(bus, {}, clock);
  EXPECT_TRUE(engine.list().empty());
  engine.trigger_manual(staff(), "p-1", "one", Severity::Warning);
  engine.trigger_manual(staff(), "p-2", "two", Severity::Warning);  // same ts
  clock.advance(std::chrono::seconds(1));
  const auto third = engine.trigger_manual(staff(), "p-1", "three", Severity::Warning);
  engine.acknowledge(staff(), "a-0000000001");

  const auto all = engine.list();
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[0].alert_id, "a-0000000003");
  EXPECT_EQ(all[1].alert_id, "a-0000000002");  // tie on ts broken by id desc
  EXPECT_EQ(all[2].alert_id, "a-0000000001");
  EXPECT_EQ(engine.list({AlertState::Open, {}, {}}).size(), 2u);
  EXPECT_EQ(engine.list({{}, std::string("p-1"), {}}).size(), 2u);
  EXPECT_EQ(engine.list({{}, {}, third.created_ts_ms}).size(), 1u);
}

TEST(AlertEngine, LogAndRulesSurviveRestart) {
  TempDir dir;
  EventBus bus;
  ManualClock clock;
  std::vector<Alert> before;
  {
    AlertEngine engine(bus, dir.path(), clock);
    engine.set_rule(temp_rule(36, 37.5, 2, 2));
    engine.on_sample(temp(38));
    engine.on_sample(temp(38));
    engine.trigger_manual(staff(), "p-1", "check on her", Severity::Critical);
    engine.acknowledge(staff(), "a-0000000001");
    before = engine.list();
  }
  AlertEngine engine(bus, dir.path(), clock);
  EXPECT_EQ(engine.list(), before);
  EXPECT_EQ(engine.rule("p-1", MetricKind::TempC).max, 37.5);
  EXPECT_EQ(engine.trigger_manual(staff(), "p-1", "next", Severity::Warning).alert_id, "a-0000000003");
}
