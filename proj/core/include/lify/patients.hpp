#pragma once

// Patient profiles with soft delete and optimistic versioning.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lify/clock.hpp"

namespace lify {

struct Medication {
  std::string name;
  std::string dose;
  std::string schedule;

  bool operator==(const Medication&) const = default;
};

struct PatientProfile {
  std::string patient_id;
  std::string name;
  std::string birth_date;  // YYYY-MM-DD
  std::vector<std::string> conditions;
  std::vector<Medication> medications;
  std::vector<std::string> device_ids;
  std::string notes;
  bool deleted = false;
  std::uint64_t version = 0;  // bumped on every write

  bool operator==(const PatientProfile&) const = default;
};

nlohmann::ordered_json patient_to_json(const PatientProfile& p);

/// Reads the editable fields of a create/update body. Unknown keys are a
/// ValidationError; patient_id and version are optional.
PatientProfile patient_from_json(const nlohmann::json& j);

/// Days since 1970-01-01 for a valid YYYY-MM-DD, nullopt otherwise.
std::optional<std::int64_t> parse_civil_date(const std::string& text);

/// Persists to {data_root}/patients.json (rewritten atomically).
class PatientStore {
 public:
  explicit PatientStore(std::filesystem::path data_root = {}, Clock& clock = SystemClock::instance());

  /// Assigns an id when none is given. Throws ValidationError (empty name,
  /// bad or non-past birth date) or Conflict (id taken, device already
  /// bound to another live patient).
  PatientProfile create(PatientProfile p);

  /// Replaces the editable fields. When expected_version is set and differs
  /// from the stored one, throws Conflict (compare-and-set).
  PatientProfile update(const std::string& patient_id, PatientProfile p,
                        std::optional<std::uint64_t> expected_version = {});

  /// Soft delete: the profile stays readable with include_deleted.
  void remove(const std::string& patient_id);

  std::optional<PatientProfile> get(const std::string& patient_id, bool include_deleted = false) const;
  std::vector<PatientProfile> list(bool include_deleted = false) const;

 private:
  void validate(const PatientProfile& p, const std::string& self_id) const;
  void save() const;

  std::filesystem::path root_;
  Clock& clock_;
  mutable std::mutex mu_;
  std::map<std::string, PatientProfile> patients_;
  std::uint64_t last_id_ = 0;
};

}  // namespace lify
