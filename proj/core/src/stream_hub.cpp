#include "lify/stream_hub.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

namespace lify {

std::string StreamEvent::wire() const {
  std::string out;
  if (id != 0) out += "id: " + std::to_string(id) + "\n";
  out += "event: " + type + "\ndata: " + data + "\n\n";
  return out;
}

std::vector<StreamEvent> StreamHub::Client::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return closed_ || !queue_.empty(); });
  if (closed_) return {};
  std::vector<StreamEvent> out(std::make_move_iterator(queue_.begin()), std::make_move_iterator(queue_.end()));
  queue_.clear();
  return out;
}

bool StreamHub::Client::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

bool StreamHub::Client::overflowed() const {
  std::lock_guard lock(mu_);
  return overflowed_;
}

StreamHub::StreamHub(EventBus& bus, std::size_t replay_capacity, std::size_t client_queue)
    : replay_capacity_(std::max<std::size_t>(1, replay_capacity)), client_queue_(std::max<std::size_t>(1, client_queue)) {
  sub_ = bus.subscribe([this](const BusEvent& e) { push(e); });
}

StreamHub::~StreamHub() {
  sub_.reset();
  shutdown();
}

void StreamHub::deliver(Client& c, const StreamEvent& e) {
  std::lock_guard lock(c.mu_);
  if (c.closed_) return;
  if (c.queue_.size() >= c.capacity_) {
    // A consumer this far behind is cut off rather than slowing ingestion.
    c.overflowed_ = true;
    c.closed_ = true;
    c.queue_.clear();
  } else {
    c.queue_.push_back(e);
  }
  c.cv_.notify_all();
}

void StreamHub::push(const BusEvent& e) {
  StreamEvent ev;
  if (const auto* s = std::get_if<SampleEvent>(&e)) {
    ev.type = "sample";
    ev.patient_id = s->sample.patient_id;
  } else if (const auto* a = std::get_if<AlertEvent>(&e)) {
    ev.type = "alert";
    ev.patient_id = a->alert.patient_id;
  }
  ev.data = event_to_json(e).dump();

  std::lock_guard lock(mu_);
  if (shut_) return;
  ev.id = ++last_id_;
  ring_.push_back(ev);
  if (ring_.size() > replay_capacity_) ring_.pop_front();
  std::size_t dropped = 0;
  for (const auto& c : clients_) {
    if (c->filter_ && !c->filter_(ev.patient_id)) continue;
    deliver(*c, ev);
    if (c->overflowed()) ++dropped;
  }
  if (dropped) {
    clients_.erase(std::remove_if(clients_.begin(), clients_.end(), [](const auto& c) { return c->closed(); }),
                   clients_.end());
    spdlog::warn("stream: disconnected {} slow client(s)", dropped);
  }
}

std::shared_ptr<StreamHub::Client> StreamHub::open(Filter filter, std::optional<std::uint64_t> last_event_id) {
  auto c = std::make_shared<Client>();
  c->filter_ = std::move(filter);
  c->capacity_ = client_queue_;
  std::lock_guard lock(mu_);
  if (shut_) {
    c->closed_ = true;
    return c;
  }
  if (last_event_id && *last_event_id < last_id_) {
    const std::uint64_t oldest = ring_.empty() ? last_id_ + 1 : ring_.front().id;
    if (*last_event_id + 1 < oldest) {
      StreamEvent gap;
      gap.type = "gap";
      gap.data = nlohmann::json{{"from_id", *last_event_id + 1}, {"to_id", oldest - 1}}.dump();
      deliver(*c, gap);
    }
    for (const auto& ev : ring_) {
      if (ev.id <= *last_event_id) continue;
      if (c->filter_ && !c->filter_(ev.patient_id)) continue;
      deliver(*c, ev);
    }
  }
  clients_.push_back(c);
  return c;
}

void StreamHub::close(const std::shared_ptr<Client>& c) {
  {
    std::lock_guard lock(c->mu_);
    c->closed_ = true;
    c->cv_.notify_all();
  }
  std::lock_guard lock(mu_);
  clients_.erase(std::remove(clients_.begin(), clients_.end(), c), clients_.end());
}

void StreamHub::shutdown() {
  std::lock_guard lock(mu_);
  shut_ = true;
  for (const auto& c : clients_) {
    std::lock_guard cl(c->mu_);
    c->closed_ = true;
    c->cv_.notify_all();
  }
  clients_.clear();
}

std::size_t StreamHub::client_count() const {
  std::lock_guard lock(mu_);
  return clients_.size();
}

std::uint64_t StreamHub::last_id() const {
  std::lock_guard lock(mu_);
  return last_id_;
}

}  // namespace lify
