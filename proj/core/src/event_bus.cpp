#include "lify/event_bus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <vector>

#include "lify/error.hpp"

namespace lify {

nlohmann::ordered_json sample_to_json(const VitalSample& s) {
  nlohmann::ordered_json j;
  j["patient_id"] = s.patient_id;
  j["device_id"] = s.device_id;
  j["metric"] = metric_code(s.metric);
  j["value"] = s.value;
  j["quality"] = quality_code(s.quality);
  j["ts_ms"] = s.ts_ms;
  return j;
}

nlohmann::ordered_json event_to_json(const BusEvent& e) {
  nlohmann::ordered_json j;
  if (const auto* s = std::get_if<SampleEvent>(&e)) {
    j["type"] = "sample";
    const auto body = sample_to_json(s->sample);
    for (const auto& [k, v] : body.items()) j[k] = v;
  } else {
    const auto& a = std::get<AlertEvent>(e);
    j["type"] = "alert";
    j["kind"] = a.kind == AlertEvent::Kind::Created ? "created" : "acked";
    j["alert"] = alert_to_json(a.alert);
  }
  return j;
}

BusEvent event_from_json(const nlohmann::json& j) {
  try {
    const auto type = j.at("type").get<std::string>();
    if (type == "sample") {
      VitalSample s;
      s.patient_id = j.at("patient_id").get<std::string>();
      s.device_id = j.at("device_id").get<std::string>();
      const auto metric = parse_metric(j.at("metric").get<std::string>());
      const auto quality = parse_quality(j.at("quality").get<std::string>());
      if (!metric || !quality) throw Error(ErrorCode::ProtocolError, "bad sample event");
      s.metric = *metric;
      s.quality = *quality;
      s.value = j.at("value").get<double>();
      s.ts_ms = j.at("ts_ms").get<std::int64_t>();
      return SampleEvent{s};
    }
    if (type == "alert") {
      const auto kind = j.at("kind").get<std::string>();
      if (kind != "created" && kind != "acked") throw Error(ErrorCode::ProtocolError, "bad alert event kind");
      return AlertEvent{kind == "created" ? AlertEvent::Kind::Created : AlertEvent::Kind::Acked,
                        alert_from_json(j.at("alert"))};
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ProtocolError, std::string("bad bus event: ") + e.what());
  }
  throw Error(ErrorCode::ProtocolError, "unknown bus event type");
}

EventBus::EventBus() : state_(std::make_shared<State>()) {}

EventBus::Subscription EventBus::subscribe(Handler handler) {
  auto entry = std::make_shared<Entry>();
  entry->handler = std::move(handler);
  std::uint64_t id = 0;
  {
    std::lock_guard lock(state_->mu);
    id = state_->next_id++;
    state_->handlers.emplace(id, entry);
  }
  std::weak_ptr<State> weak = state_;
  // the token's deleter detaches the handler
  std::shared_ptr<void> token(nullptr, [weak, id, entry](void*) {
    if (auto state = weak.lock()) {
      std::lock_guard lock(state->mu);
      state->handlers.erase(id);
    }
    std::unique_lock lock(entry->mu);
    entry->alive = false;
    const auto self = std::this_thread::get_id();
    entry->cv.wait(lock, [&] {
      return std::all_of(entry->callers.begin(), entry->callers.end(), [&](auto t) { return t == self; });
    });
  });
  return Subscription(std::move(token));
}

void EventBus::publish(const BusEvent& event) {
  std::vector<std::shared_ptr<Entry>> targets;
  {
    std::lock_guard lock(state_->mu);
    targets.reserve(state_->handlers.size());
    for (const auto& [id, e] : state_->handlers) targets.push_back(e);
  }
  const auto self = std::this_thread::get_id();
  for (const auto& e : targets) {
    {
      std::lock_guard lock(e->mu);
      if (!e->alive) continue;
      e->callers.push_back(self);
    }
    try {
      e->handler(event);
    } catch (const std::exception& ex) {
      spdlog::error("event bus subscriber failed: {}", ex.what());
    }
    std::lock_guard lock(e->mu);
    e->callers.erase(std::find(e->callers.begin(), e->callers.end(), self));
    e->cv.notify_all();
  }
}

std::size_t EventBus::subscriber_count() const {
  std::lock_guard lock(state_->mu);
  return state_->handlers.size();
}

}  // namespace lify
