#pragma once

// MQTT 3.1.1 control packets: the subset needed for QoS 0/1 pub-sub.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace lify::mqtt {

enum class PacketType : std::uint8_t {
  Connect = 1,
  Connack = 2,
  Publish = 3,
  Puback = 4,
  Subscribe = 8,
  Suback = 9,
  Unsubscribe = 10,
  Unsuback = 11,
  Pingreq = 12,
  Pingresp = 13,
  Disconnect = 14,
};

inline constexpr std::uint8_t kConnackAccepted = 0;
inline constexpr std::uint8_t kConnackBadProtocol = 1;
inline constexpr std::uint8_t kConnackIdentifierRejected = 2;
inline constexpr std::uint8_t kSubackFailure = 0x80;

struct Connect {
  std::string client_id;
  bool clean_session = true;
  std::uint16_t keepalive_s = 30;
  std::optional<std::string> username;
  std::optional<std::string> password;
  std::uint8_t protocol_level = 4;
  bool operator==(const Connect&) const = default;
};

struct Connack {
  bool session_present = false;
  std::uint8_t return_code = kConnackAccepted;
  bool operator==(const Connack&) const = default;
};

struct Publish {
  std::string topic;
  std::string payload;
  std::uint8_t qos = 0;
  bool retain = false;
  bool dup = false;
  std::uint16_t packet_id = 0;
  bool operator==(const Publish&) const = default;
};

struct Puback {
  std::uint16_t packet_id = 0;
  bool operator==(const Puback&) const = default;
};

struct Subscribe {
  std::uint16_t packet_id = 0;
  std::vector<std::pair<std::string, std::uint8_t>> filters;
  bool operator==(const Subscribe&) const = default;
};

struct Suback {
  std::uint16_t packet_id = 0;
  std::vector<std::uint8_t> return_codes;
  bool operator==(const Suback&) const = default;
};

struct Unsubscribe {
  std::uint16_t packet_id = 0;
  std::vector<std::string> filters;
  bool operator==(const Unsubscribe&) const = default;
};

struct Unsuback {
  std::uint16_t packet_id = 0;
  bool operator==(const Unsuback&) const = default;
};

struct Pingreq {
  bool operator==(const Pingreq&) const = default;
};
struct Pingresp {
  bool operator==(const Pingresp&) const = default;
};
struct Disconnect {
  bool operator==(const Disconnect&) const = default;
};

using Packet = std::variant<Connect, Connack, Publish, Puback, Subscribe, Suback, Unsubscribe, Unsuback, Pingreq,
                            Pingresp, Disconnect>;

std::vector<std::uint8_t> encode(const Packet& p);

/// Incremental decoder for a byte stream. Throws Error(ProtocolError) on
/// malformed input; the stream is unusable afterwards.
class PacketReader {
 public:
  explicit PacketReader(std::size_t max_packet_bytes = 256 * 1024) : max_(max_packet_bytes) {}

  void feed(std::span<const std::uint8_t> bytes);
  std::optional<Packet> next();

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t max_;
};

/// '+' matches one level, '#' the remainder (including the parent level).
bool topic_matches(std::string_view filter, std::string_view topic) noexcept;
bool valid_topic_filter(std::string_view filter) noexcept;
bool valid_topic_name(std::string_view topic) noexcept;

}  // namespace lify::mqtt
