#include "lify/mqtt/packet.hpp"

#include "lify/error.hpp"

namespace lify::mqtt {

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::ProtocolError, "malformed MQTT packet: " + what);
}

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
    out_.push_back(static_cast<std::uint8_t>(v & 0xFF));
  }
  void str(std::string_view s) {
    if (s.size() > 0xFFFF) malformed("string longer than 65535 bytes");
    u16(static_cast<std::uint16_t>(s.size()));
    raw(s);
  }
  void raw(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t> finish(std::uint8_t first_byte) const {
    std::vector<std::uint8_t> packet;
    packet.reserve(out_.size() + 5);
    packet.push_back(first_byte);
    std::size_t len = out_.size();
    if (len > 268'435'455) malformed("packet too large");
    do {
      std::uint8_t b = len % 128;
      len /= 128;
      if (len > 0) b |= 0x80;
      packet.push_back(b);
    } while (len > 0);
    packet.insert(packet.end(), out_.begin(), out_.end());
    return packet;
  }

 private:
  std::vector<std::uint8_t> out_;
};

class Cursor {
 public:
  explicit Cursor(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>((data_[pos_] << 8) | data_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::string str() {
    const std::uint16_t n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string rest() {
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), data_.size() - pos_);
    pos_ = data_.size();
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) malformed("truncated");
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

Packet decode(std::uint8_t first, std::span<const std::uint8_t> body) {
  const auto type = static_cast<PacketType>(first >> 4);
  const std::uint8_t flags = first & 0x0F;
  Cursor c(body);

  const auto expect_flags = [&](std::uint8_t want) {
    if (flags != want) malformed("reserved flags");
  };

  switch (type) {
    case PacketType::Connect: {
      expect_flags(0);
      Connect p;
      if (c.str() != "MQTT") malformed("protocol name");
      p.protocol_level = c.u8();
      const std::uint8_t cf = c.u8();
      if (cf & 0x01) malformed("reserved connect flag");
      p.clean_session = (cf & 0x02) != 0;
      const bool will = (cf & 0x04) != 0;
      p.keepalive_s = c.u16();
      p.client_id = c.str();
      if (will) {
        c.str();
        c.str();
      }
      if (cf & 0x80) p.username = c.str();
      if (cf & 0x40) p.password = c.str();
      return p;
    }
    case PacketType::Connack: {
      expect_flags(0);
      Connack p;
      p.session_present = (c.u8() & 0x01) != 0;
      p.return_code = c.u8();
      return p;
    }
    case PacketType::Publish: {
      Publish p;
      p.dup = (flags & 0x08) != 0;
      p.qos = (flags >> 1) & 0x03;
      p.retain = (flags & 0x01) != 0;
      if (p.qos > 2) malformed("qos 3");
      p.topic = c.str();
      if (!valid_topic_name(p.topic)) malformed("invalid topic name");
      if (p.qos > 0) p.packet_id = c.u16();
      p.payload = c.rest();
      return p;
    }
    case PacketType::Puback: {
      expect_flags(0);
      return Puback{c.u16()};
    }
    case PacketType::Subscribe: {
      expect_flags(2);
      Subscribe p;
      p.packet_id = c.u16();
      while (!c.done()) {
        std::string filter = c.str();
        const std::uint8_t qos = c.u8();
        if (qos > 2) malformed("subscription qos");
        p.filters.emplace_back(std::move(filter), qos);
      }
      if (p.filters.empty()) malformed("empty subscribe");
      return p;
    }
    case PacketType::Suback: {
      expect_flags(0);
      Suback p;
      p.packet_id = c.u16();
      while (!c.done()) p.return_codes.push_back(c.u8());
      return p;
    }
    case PacketType::Unsubscribe: {
      expect_flags(2);
      Unsubscribe p;
      p.packet_id = c.u16();
      while (!c.done()) p.filters.push_back(c.str());
      return p;
    }
    case PacketType::Unsuback: {
      expect_flags(0);
      return Unsuback{c.u16()};
    }
    case PacketType::Pingreq: expect_flags(0); return Pingreq{};
    case PacketType::Pingresp: expect_flags(0); return Pingresp{};
    case PacketType::Disconnect: expect_flags(0); return Disconnect{};
  }
  malformed("unsupported packet type " + std::to_string(first >> 4));
}

}  // namespace

std::vector<std::uint8_t> encode(const Packet& packet) {
  return std::visit(
      [](const auto& p) -> std::vector<std::uint8_t> {
        using T = std::decay_t<decltype(p)>;
        Writer w;
        if constexpr (std::is_same_v<T, Connect>) {
          w.str("MQTT");
          w.u8(p.protocol_level);
          std::uint8_t cf = p.clean_session ? 0x02 : 0x00;
          if (p.username) cf |= 0x80;
          if (p.password) cf |= 0x40;
          w.u8(cf);
          w.u16(p.keepalive_s);
          w.str(p.client_id);
          if (p.username) w.str(*p.username);
          if (p.password) w.str(*p.password);
          return w.finish(0x10);
        } else if constexpr (std::is_same_v<T, Connack>) {
          w.u8(p.session_present ? 1 : 0);
          w.u8(p.return_code);
          return w.finish(0x20);
        } else if constexpr (std::is_same_v<T, Publish>) {
          w.str(p.topic);
          if (p.qos > 0) w.u16(p.packet_id);
          w.raw(p.payload);
          const auto flags =
              static_cast<std::uint8_t>((p.dup ? 0x08 : 0) | ((p.qos & 0x03) << 1) | (p.retain ? 0x01 : 0));
          return w.finish(static_cast<std::uint8_t>(0x30 | flags));
        } else if constexpr (std::is_same_v<T, Puback>) {
          w.u16(p.packet_id);
          return w.finish(0x40);
        } else if constexpr (std::is_same_v<T, Subscribe>) {
          w.u16(p.packet_id);
          for (const auto& [filter, qos] : p.filters) {
            w.str(filter);
            w.u8(qos);
          }
          return w.finish(0x82);
        } else if constexpr (std::is_same_v<T, Suback>) {
          w.u16(p.packet_id);
          for (auto rc : p.return_codes) w.u8(rc);
          return w.finish(0x90);
        } else if constexpr (std::is_same_v<T, Unsubscribe>) {
          w.u16(p.packet_id);
          for (const auto& f : p.filters) w.str(f);
          return w.finish(0xA2);
        } else if constexpr (std::is_same_v<T, Unsuback>) {
          w.u16(p.packet_id);
          return w.finish(0xB0);
        } else if constexpr (std::is_same_v<T, Pingreq>) {
          return w.finish(0xC0);
        } else if constexpr (std::is_same_v<T, Pingresp>) {
          return w.finish(0xD0);
        } else {
          return w.finish(0xE0);
        }
      },
      packet);
}

void PacketReader::feed(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

std::optional<Packet> PacketReader::next() {
  if (buf_.size() < 2) return std::nullopt;
  std::size_t len = 0;
  std::size_t mult = 1;
  std::size_t i = 1;
  for (;; ++i) {
    if (i > 4) malformed("remaining length exceeds 4 bytes");
    if (i >= buf_.size()) return std::nullopt;
    len += (buf_[i] & 0x7F) * mult;
    if ((buf_[i] & 0x80) == 0) break;
    mult *= 128;
  }
  if (len > max_) malformed("packet exceeds " + std::to_string(max_) + " bytes");
  const std::size_t header = i + 1;
  if (buf_.size() < header + len) return std::nullopt;

  Packet p = decode(buf_[0], std::span<const std::uint8_t>(buf_.data() + header, len));
  buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(header + len));
  return p;
}

bool valid_topic_name(std::string_view topic) noexcept {
  return !topic.empty() && topic.find_first_of("+#") == std::string_view::npos &&
         topic.find('\0') == std::string_view::npos;
}

bool valid_topic_filter(std::string_view filter) noexcept {
  if (filter.empty() || filter.find('\0') != std::string_view::npos) return false;
  std::size_t start = 0;
  for (;;) {
    const auto slash = filter.find('/', start);
    const auto level = filter.substr(start, slash == std::string_view::npos ? std::string_view::npos : slash - start);
    if (level.find_first_of("+#") != std::string_view::npos && level.size() != 1) return false;
    if (level == "#" && slash != std::string_view::npos) return false;
    if (slash == std::string_view::npos) return true;
    start = slash + 1;
  }
}

bool topic_matches(std::string_view filter, std::string_view topic) noexcept {
  std::size_t f = 0;
  std::size_t t = 0;
  for (;;) {
    const auto fs = filter.find('/', f);
    const auto flevel = filter.substr(f, fs == std::string_view::npos ? std::string_view::npos : fs - f);
    if (flevel == "#") return true;
    if (t > topic.size()) return false;
    const auto ts = topic.find('/', t);
    const auto tlevel = topic.substr(t, ts == std::string_view::npos ? std::string_view::npos : ts - t);
    if (flevel != "+" && flevel != tlevel) return false;
    if (fs == std::string_view::npos || ts == std::string_view::npos) {
      if (fs == std::string_view::npos && ts == std::string_view::npos) return true;
      // "a/#" matches "a": the filter continues with exactly "#"
      return ts == std::string_view::npos && filter.substr(fs + 1) == "#";
    }
    f = fs + 1;
    t = ts + 1;
  }
}

}  // namespace lify::mqtt
