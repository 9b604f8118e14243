#pragma once

// Time-series storage for accepted samples. Records are unique on
// (device_id, ts_ms, metric) and are returned ascending by (ts_ms, device_id).
//
// FileStorage keeps one append-only segment per (patient, UTC day):
//   {data_root}/{patient_id}/{YYYY-MM-DD}.ndjson
// whose first line is {"segment":1,"patient_id":..,"day":..} followed by one
// record per line. The in-memory index is rebuilt from the segments on open.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "lify/vitals.hpp"

namespace lify {

struct StoredRecord {
  std::string patient_id;
  MetricKind metric = MetricKind::TempC;
  std::int64_t ts_ms = 0;
  double value = 0.0;
  Quality quality = Quality::Ok;
  std::string device_id;

  bool operator==(const StoredRecord&) const = default;
};

nlohmann::ordered_json record_to_json(const StoredRecord& r);
StoredRecord record_from_json(const nlohmann::json& j);

class Storage {
 public:
  virtual ~Storage() = default;

  /// Appends the records not already stored; returns how many were new.
  virtual std::size_t append(const std::vector<StoredRecord>& records) = 0;
  virtual bool contains(const std::string& device_id, std::int64_t ts_ms, MetricKind metric) const = 0;
  /// Records with from_ms <= ts_ms < to_ms.
  virtual std::vector<StoredRecord> range(const std::string& patient_id, MetricKind metric, std::int64_t from_ms,
                                          std::int64_t to_ms) const = 0;
  virtual std::optional<StoredRecord> latest(const std::string& patient_id, MetricKind metric) const = 0;
  virtual std::size_t size() const = 0;
  virtual void flush() {}
};

class MemoryStorage : public Storage {
 public:
  std::size_t append(const std::vector<StoredRecord>& records) override;
  bool contains(const std::string& device_id, std::int64_t ts_ms, MetricKind metric) const override;
  std::vector<StoredRecord> range(const std::string& patient_id, MetricKind metric, std::int64_t from_ms,
                                  std::int64_t to_ms) const override;
  std::optional<StoredRecord> latest(const std::string& patient_id, MetricKind metric) const override;
  std::size_t size() const override;

 protected:
  /// Called with the write lock held for each newly indexed record, then
  /// commit() once per append batch.
  virtual void persist(const StoredRecord&) {}
  virtual void commit() {}
  /// Adds to the index without persisting; false if already present.
  bool index(const StoredRecord& r);

  mutable std::shared_mutex mu_;

 private:
  using SeriesKey = std::pair<std::string, MetricKind>;
  using Position = std::pair<std::int64_t, std::string>;  // (ts_ms, device_id)
  std::map<SeriesKey, std::map<Position, StoredRecord>> series_;
  std::set<std::tuple<std::string, std::int64_t, MetricKind>> unique_;
};

class FileStorage final : public MemoryStorage {
 public:
  /// Creates the directory if needed and loads every segment below it. A torn
  /// final line (a crash mid-write) is dropped and the file truncated to the
  /// last complete record.
  explicit FileStorage(std::filesystem::path data_root);
  ~FileStorage() override;

  void flush() override;
  const std::filesystem::path& root() const noexcept { return root_; }
  std::size_t skipped_lines() const noexcept { return skipped_; }

  static std::string utc_day(std::int64_t ts_ms);

 protected:
  void persist(const StoredRecord& r) override;
  void commit() override;

 private:
  void load_segment(const std::filesystem::path& file);

  std::filesystem::path root_;
  std::map<std::filesystem::path, std::ofstream> open_;
  std::size_t skipped_ = 0;
};

/// Memory when data_root is empty, otherwise file-backed.
std::unique_ptr<Storage> open_storage(const std::filesystem::path& data_root);

}  // namespace lify
