#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <boost/beast/core/detail/base64.hpp>
#include <nlohmann/json.hpp>

namespace dcoach::service {

inline constexpr int kProtocolVersion = 1;

class ProtocolError : public std::invalid_argument {
 public:
  ProtocolError(std::string code, const std::string& msg) : std::invalid_argument(msg), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  namespace b64 = boost::beast::detail::base64;
  std::vector<std::uint8_t> out(b64::decoded_size(text.size()));
  auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  std::size_t pad = 0;
  while (pad < text.size() && pad < 2 && text[text.size() - 1 - pad] == '=') ++pad;
  if (read + pad != text.size()) throw ProtocolError("bad-request", "invalid base64 payload");
  out.resize(written);
  return out;
}

inline std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

// ---- client -> server

struct FeedbackMsg {
  std::string session;
  std::optional<std::string> key;     // named correction, resolved through the coupled map
  std::optional<std::vector<int>> h;  // raw per-dimension vector
  std::int64_t client_ts = 0;
};

struct StartMsg {
  std::string session;
  std::string profile;  // base configuration; empty keeps the server default
  std::string mode;     // human | simulated-teacher | eval; empty keeps the profile's
  std::optional<double> fps;
  std::vector<std::string> overrides;
  std::string snapshot;  // optional initial agent
};

struct StopMsg {
  std::string session;
};

struct SubscribeMsg {
  std::string session;
};

struct ListMsg {};

using ClientMessage = std::variant<FeedbackMsg, StartMsg, StopMsg, SubscribeMsg, ListMsg>;

inline ClientMessage parse_client_message(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError("bad-request", std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("bad-request", "message must be a JSON object");
  if (!j.contains("v") || !j["v"].is_number_integer() || j["v"].get<int>() != kProtocolVersion) {
    throw ProtocolError("unsupported-version", "expected protocol version " + std::to_string(kProtocolVersion));
  }
  const std::string type = j.value("type", "");
  auto session = [&]() -> std::string {
    if (!j.contains("session") || !j["session"].is_string() || j["session"].get<std::string>().empty()) {
      throw ProtocolError("bad-request", "'" + type + "' needs a non-empty session id");
    }
    return j["session"].get<std::string>();
  };
  try {
    if (type == "feedback") {
      FeedbackMsg m;
      m.session = session();
      if (j.contains("key")) m.key = j["key"].get<std::string>();
      if (j.contains("h")) m.h = j["h"].get<std::vector<int>>();
      if (m.key.has_value() == m.h.has_value()) throw ProtocolError("bad-request", "feedback needs exactly one of 'key' or 'h'");
      m.client_ts = j.value("ts", std::int64_t{0});
      return m;
    }
    if (type == "start") {
      StartMsg m;
      m.session = session();
      m.profile = j.value("profile", "");
      m.mode = j.value("mode", "");
      if (j.contains("fps")) m.fps = j["fps"].get<double>();
      if (j.contains("overrides")) m.overrides = j["overrides"].get<std::vector<std::string>>();
      m.snapshot = j.value("snapshot", "");
      return m;
    }
    if (type == "stop") return StopMsg{session()};
    if (type == "subscribe") return SubscribeMsg{session()};
    if (type == "list") return ListMsg{};
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError("bad-request", std::string("bad field: ") + e.what());
  }
  throw ProtocolError("bad-request", "unknown message type '" + type + "'");
}

// ---- server -> client

struct FramePacket {
  std::string session;
  std::uint64_t t = 0;
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // 8-bit grayscale, row-major
  std::vector<float> action;
  double episode_return = 0;
  std::uint64_t episode = 0;
  bool done = false;  // this step ended the episode
  std::size_t buffer_fill = 0;
  std::vector<int> h_applied;  // empty when no feedback was applied during this step
};

inline nlohmann::json to_json(const FramePacket& p) {
  return {{"v", kProtocolVersion},
          {"type", "frame"},
          {"session", p.session},
          {"t", p.t},
          {"width", p.width},
          {"height", p.height},
          {"encoding", "raw8-b64"},
          {"frame", base64_encode(p.pixels)},
          {"action", p.action},
          {"return", p.episode_return},
          {"episode", p.episode},
          {"done", p.done},
          {"buffer_fill", p.buffer_fill},
          {"h_applied", p.h_applied}};
}

struct Ack {
  std::string session;
  std::string status;  // applied | superseded | ignored-between-episodes
  std::optional<std::uint64_t> bound_t;
  std::int64_t client_ts = 0;
  std::int64_t server_ts = 0;  // receive time
};

inline nlohmann::json to_json(const Ack& a) {
  nlohmann::json j{{"v", kProtocolVersion}, {"type", "ack"}, {"session", a.session}, {"status", a.status},
                   {"client_ts", a.client_ts}, {"server_ts", a.server_ts}};
  j["bound_t"] = a.bound_t ? nlohmann::json(*a.bound_t) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json error_message(const std::string& code, const std::string& msg) {
  return {{"v", kProtocolVersion}, {"type", "error"}, {"code", code}, {"msg", msg}};
}

inline nlohmann::json reply(const std::string& type, nlohmann::json body = nlohmann::json::object()) {
  body["v"] = kProtocolVersion;
  body["type"] = type;
  return body;
}

}  // namespace dcoach::service
