#include "lify/storage.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <mutex>
#include <sstream>

#include "lify/error.hpp"

namespace lify {

namespace fs = std::filesystem;

nlohmann::ordered_json record_to_json(const StoredRecord& r) {
  nlohmann::ordered_json j;
  j["ts_ms"] = r.ts_ms;
  j["patient_id"] = r.patient_id;
  j["device_id"] = r.device_id;
  j["metric"] = metric_code(r.metric);
  j["value"] = r.value;
  j["quality"] = quality_code(r.quality);
  return j;
}

StoredRecord record_from_json(const nlohmann::json& j) {
  StoredRecord r;
  try {
    r.ts_ms = j.at("ts_ms").get<std::int64_t>();
    r.patient_id = j.at("patient_id").get<std::string>();
    r.device_id = j.at("device_id").get<std::string>();
    const auto metric = parse_metric(j.at("metric").get<std::string>());
    const auto quality = parse_quality(j.at("quality").get<std::string>());
    if (!metric || !quality) throw Error(ErrorCode::ValidationError, "bad metric or quality in record");
    r.metric = *metric;
    r.quality = *quality;
    r.value = j.at("value").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ValidationError, std::string("malformed record: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------

bool MemoryStorage::index(const StoredRecord& r) {
  if (!unique_.emplace(r.device_id, r.ts_ms, r.metric).second) return false;
  series_[{r.patient_id, r.metric}].emplace(Position{r.ts_ms, r.device_id}, r);
  return true;
}

std::size_t MemoryStorage::append(const std::vector<StoredRecord>& records) {
  std::unique_lock lock(mu_);
  // persist first: if the write fails nothing is indexed, so a redelivery
  // is not mistaken for a duplicate (the loader tolerates repeated lines)
  std::vector<const StoredRecord*> fresh;
  std::set<std::tuple<std::string, std::int64_t, MetricKind>> batch;
  for (const auto& r : records) {
    auto key = std::make_tuple(r.device_id, r.ts_ms, r.metric);
    if (unique_.contains(key) || !batch.insert(std::move(key)).second) continue;
    fresh.push_back(&r);
  }
  if (fresh.empty()) return 0;
  for (const auto* r : fresh) persist(*r);
  commit();
  for (const auto* r : fresh) index(*r);
  return fresh.size();
}

bool MemoryStorage::contains(const std::string& device_id, std::int64_t ts_ms, MetricKind metric) const {
  std::shared_lock lock(mu_);
  return unique_.contains({device_id, ts_ms, metric});
}

std::vector<StoredRecord> MemoryStorage::range(const std::string& patient_id, MetricKind metric, std::int64_t from_ms,
                                               std::int64_t to_ms) const {
  std::shared_lock lock(mu_);
  std::vector<StoredRecord> out;
  const auto it = series_.find({patient_id, metric});
  if (it == series_.end()) return out;
  const auto& s = it->second;
  for (auto r = s.lower_bound({from_ms, std::string()}); r != s.end() && r->first.first < to_ms; ++r) {
    out.push_back(r->second);
  }
  return out;
}

std::optional<StoredRecord> MemoryStorage::latest(const std::string& patient_id, MetricKind metric) const {
  std::shared_lock lock(mu_);
  const auto it = series_.find({patient_id, metric});
  if (it == series_.end() || it->second.empty()) return std::nullopt;
  return std::prev(it->second.end())->second;
}

std::size_t MemoryStorage::size() const {
  std::shared_lock lock(mu_);
  return unique_.size();
}

// ---------------------------------------------------------------------------

std::string FileStorage::utc_day(std::int64_t ts_ms) {
  using namespace std::chrono;
  const auto days = floor<std::chrono::days>(sys_time<milliseconds>(milliseconds(ts_ms)));
  const year_month_day ymd{days};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

FileStorage::FileStorage(fs::path data_root) : root_(std::move(data_root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create data root " + root_.string() + ": " + ec.message());
  std::vector<fs::path> segments;
  for (const auto& patient_dir : fs::directory_iterator(root_)) {
    if (!patient_dir.is_directory()) continue;
    for (const auto& f : fs::directory_iterator(patient_dir.path())) {
      if (f.is_regular_file() && f.path().extension() == ".ndjson") segments.push_back(f.path());
    }
  }
  std::sort(segments.begin(), segments.end());
  for (const auto& s : segments) load_segment(s);
}

FileStorage::~FileStorage() { flush(); }

void FileStorage::load_segment(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string data = buf.str();
  in.close();

  // a crash can leave a torn last line; cut the file back to the last newline
  const auto last_nl = data.rfind('\n');
  const std::size_t complete = last_nl == std::string::npos ? 0 : last_nl + 1;
  if (complete < data.size()) {
    spdlog::warn("storage: dropping torn tail of {} ({} bytes)", file.string(), data.size() - complete);
    ++skipped_;
    fs::resize_file(file, complete);
  }

  std::size_t pos = 0;
  bool header = true;
  while (pos < complete) {
    const auto nl = data.find('\n', pos);
    const std::string_view line(data.data() + pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (header) {
        header = false;
        if (j.value("segment", 0) != 1) throw Error(ErrorCode::IoError, "unsupported segment header");
        continue;
      }
      index(record_from_json(j));
    } catch (const std::exception& e) {
      if (header) {
        spdlog::error("storage: {} has no valid segment header, skipped: {}", file.string(), e.what());
        ++skipped_;
        return;
      }
      spdlog::warn("storage: skipping malformed line in {}: {}", file.string(), e.what());
      ++skipped_;
    }
  }
}

void FileStorage::persist(const StoredRecord& r) {
  const auto day = utc_day(r.ts_ms);
  const fs::path file = root_ / r.patient_id / (day + ".ndjson");
  auto it = open_.find(file);
  if (it == open_.end()) {
    fs::create_directories(file.parent_path());
    const bool fresh = !fs::exists(file) || fs::file_size(file) == 0;
    std::ofstream out(file, std::ios::binary | std::ios::app);
    if (!out) throw Error(ErrorCode::IoError, "cannot open segment " + file.string());
    if (fresh) {
      nlohmann::ordered_json h;
      h["segment"] = 1;
      h["patient_id"] = r.patient_id;
      h["day"] = day;
      out << h.dump() << '\n';
    }
    it = open_.emplace(file, std::move(out)).first;
  }
  it->second << record_to_json(r).dump() << '\n';
}

void FileStorage::commit() {
  for (auto it = open_.begin(); it != open_.end(); ++it) {
    it->second.flush();
    if (!it->second) {
      const auto path = it->first;
      open_.erase(it);  // reopened on the next write
      throw Error(ErrorCode::IoError, "write failed on " + path.string());
    }
  }
}

void FileStorage::flush() {
  std::unique_lock lock(mu_);
  commit();
}

std::unique_ptr<Storage> open_storage(const fs::path& data_root) {
  if (data_root.empty()) return std::make_unique<MemoryStorage>();
  return std::make_unique<FileStorage>(data_root);
}

}  // namespace lify
