#include "lify/patients.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <set>

#include "lify/config_util.hpp"
#include "lify/error.hpp"
#include "lify/util.hpp"

namespace lify {

namespace fs = std::filesystem;

std::optional<std::int64_t> parse_civil_date(const std::string& text) {
  int y = 0, m = 0, d = 0;
  char tail = 0;
  if (text.size() != 10 || std::sscanf(text.c_str(), "%4d-%2d-%2d%c", &y, &m, &d, &tail) != 3) return std::nullopt;
  if (text[4] != '-' || text[7] != '-') return std::nullopt;
  const auto ymd = std::chrono::year{y} / std::chrono::month{static_cast<unsigned>(m)} /
                   std::chrono::day{static_cast<unsigned>(d)};
  if (!ymd.ok()) return std::nullopt;
  return std::chrono::sys_days(ymd).time_since_epoch().count();
}

nlohmann::ordered_json patient_to_json(const PatientProfile& p) {
  nlohmann::ordered_json j;
  j["patient_id"] = p.patient_id;
  j["name"] = p.name;
  j["birth_date"] = p.birth_date;
  j["conditions"] = p.conditions;
  j["medications"] = nlohmann::ordered_json::array();
  for (const auto& m : p.medications) {
    j["medications"].push_back({{"name", m.name}, {"dose", m.dose}, {"schedule", m.schedule}});
  }
  j["device_ids"] = p.device_ids;
  j["notes"] = p.notes;
  j["deleted"] = p.deleted;
  j["version"] = p.version;
  return j;
}

PatientProfile patient_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ValidationError, "patient body must be an object");
  for (const auto& [key, v] : j.items()) {
    static const std::set<std::string> allowed = {"patient_id", "name",       "birth_date", "conditions", "medications",
                                                  "device_ids", "notes",      "version",    "deleted"};
    if (!allowed.contains(key)) throw Error(ErrorCode::ValidationError, "unknown patient field: " + key);
  }
  try {
    PatientProfile p;
    p.patient_id = j.value("patient_id", std::string());
    p.name = j.value("name", std::string());
    p.birth_date = j.value("birth_date", std::string());
    p.conditions = j.value("conditions", std::vector<std::string>{});
    if (j.contains("medications")) {
      for (const auto& m : j.at("medications")) {
        Medication med{m.at("name").get<std::string>(), m.value("dose", std::string()),
                       m.value("schedule", std::string())};
        p.medications.push_back(std::move(med));
      }
    }
    p.device_ids = j.value("device_ids", std::vector<std::string>{});
    p.notes = j.value("notes", std::string());
    p.version = j.value("version", std::uint64_t{0});
    p.deleted = j.value("deleted", false);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ValidationError, std::string("malformed patient: ") + e.what());
  }
}

PatientStore::PatientStore(fs::path data_root, Clock& clock) : root_(std::move(data_root)), clock_(clock) {
  if (root_.empty()) return;
  fs::create_directories(root_);
  const auto path = root_ / "patients.json";
  if (!fs::exists(path)) return;
  const auto j = nlohmann::json::parse(util::read_file(path));
  last_id_ = j.value("last_id", std::uint64_t{0});
  for (const auto& e : j.at("patients")) {
    auto p = patient_from_json(e);
    patients_[p.patient_id] = std::move(p);
  }
}

void PatientStore::save() const {
  if (root_.empty()) return;
  nlohmann::ordered_json j;
  j["last_id"] = last_id_;
  j["patients"] = nlohmann::ordered_json::array();
  for (const auto& [id, p] : patients_) j["patients"].push_back(patient_to_json(p));
  util::write_file_atomic(root_ / "patients.json", j.dump(2) + "\n");
}

void PatientStore::validate(const PatientProfile& p, const std::string& self_id) const {
  if (p.name.empty() || util::utf8_length(p.name) > 200) {
    throw Error(ErrorCode::ValidationError, "name must be 1 to 200 characters");
  }
  const auto born = parse_civil_date(p.birth_date);
  if (!born) throw Error(ErrorCode::ValidationError, "birth_date must be a valid YYYY-MM-DD date");
  const auto today = clock_.now_ms() / 86'400'000;
  if (*born >= today) throw Error(ErrorCode::ValidationError, "birth_date must be in the past");
  for (const auto& m : p.medications) {
    if (m.name.empty()) throw Error(ErrorCode::ValidationError, "medication name must not be empty");
  }
  std::set<std::string> seen;
  for (const auto& d : p.device_ids) {
    if (d.empty()) throw Error(ErrorCode::ValidationError, "device id must not be empty");
    if (!seen.insert(d).second) throw Error(ErrorCode::ValidationError, "device " + d + " listed twice");
    for (const auto& [id, other] : patients_) {
      if (id == self_id || other.deleted) continue;
      if (std::find(other.device_ids.begin(), other.device_ids.end(), d) != other.device_ids.end()) {
        throw Error(ErrorCode::Conflict, "device " + d + " is already bound to " + id);
      }
    }
  }
}

PatientProfile PatientStore::create(PatientProfile p) {
  std::lock_guard lock(mu_);
  if (p.patient_id.empty()) {
    do {
      char buf[24];
      std::snprintf(buf, sizeof buf, "p-%06llu", static_cast<unsigned long long>(++last_id_));
      p.patient_id = buf;
    } while (patients_.contains(p.patient_id));
  } else if (patients_.contains(p.patient_id)) {
    throw Error(ErrorCode::Conflict, "patient " + p.patient_id + " already exists");
  }
  validate(p, p.patient_id);
  p.deleted = false;
  p.version = 1;
  patients_[p.patient_id] = p;
  try {
    save();
  } catch (...) {
    patients_.erase(p.patient_id);
    throw;
  }
  return p;
}

PatientProfile PatientStore::update(const std::string& patient_id, PatientProfile p,
                                    std::optional<std::uint64_t> expected_version) {
  std::lock_guard lock(mu_);
  const auto it = patients_.find(patient_id);
  if (it == patients_.end() || it->second.deleted) throw Error(ErrorCode::NotFound, "no patient " + patient_id);
  if (expected_version && *expected_version != it->second.version) {
    throw Error(ErrorCode::Conflict, "patient " + patient_id + " was modified concurrently");
  }
  p.patient_id = patient_id;
  validate(p, patient_id);
  p.deleted = false;
  p.version = it->second.version + 1;
  const auto previous = it->second;
  it->second = p;
  try {
    save();
  } catch (...) {
    it->second = previous;
    throw;
  }
  return p;
}

void PatientStore::remove(const std::string& patient_id) {
  std::lock_guard lock(mu_);
  const auto it = patients_.find(patient_id);
  if (it == patients_.end() || it->second.deleted) throw Error(ErrorCode::NotFound, "no patient " + patient_id);
  it->second.deleted = true;
  ++it->second.version;
  save();
}

std::optional<PatientProfile> PatientStore::get(const std::string& patient_id, bool include_deleted) const {
  std::lock_guard lock(mu_);
  const auto it = patients_.find(patient_id);
  if (it == patients_.end() || (it->second.deleted && !include_deleted)) return std::nullopt;
  return it->second;
}

std::vector<PatientProfile> PatientStore::list(bool include_deleted) const {
  std::lock_guard lock(mu_);
  std::vector<PatientProfile> out;
  for (const auto& [id, p] : patients_) {
    if (!p.deleted || include_deleted) out.push_back(p);
  }
  return out;
}

}  // namespace lify
