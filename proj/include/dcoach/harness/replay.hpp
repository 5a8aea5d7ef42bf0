#pragma once

#include <fstream>

#include "dcoach/harness/session.hpp"

namespace dcoach::harness {

class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReplayResult {
  std::uint64_t steps = 0;
  std::uint64_t feedback_events = 0;
  std::uint64_t final_checksum = 0;
  std::optional<std::uint64_t> logged_checksum;  // absent when the log has no footer
  bool matches() const { return logged_checksum && *logged_checksum == final_checksum; }
  std::optional<Agent> agent;
};

inline std::uint64_t parse_hex64(const std::string& s) {
  std::size_t pos = 0;
  const auto v = std::stoull(s, &pos, 16);
  if (pos != s.size()) throw ReplayError("malformed checksum '" + s + "'");
  return v;
}

// Re-executes a session log: every feedback record is re-applied on the step it was bound to and every
// step record is re-simulated and checked against the logged state hash and action.
inline ReplayResult replay_log(std::istream& is, const std::string& source = "log") {
  std::string line;
  std::size_t lineno = 0;
  auto next_record = [&]() -> std::optional<nlohmann::json> {
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        return nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ReplayError(source + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
      }
    }
    return std::nullopt;
  };
  auto fail = [&](const std::string& what) { throw ReplayError(source + ":" + std::to_string(lineno) + ": " + what); };

  auto header = next_record();
  if (!header || header->value("type", "") != "header") fail("first record is not a header");
  if (header->value("v", 0) != kLogVersion) {
    fail("unsupported log version " + std::to_string(header->value("v", 0)) + " (expected " + std::to_string(kLogVersion) + ")");
  }
  const auto cfg = parse_config_string(header->at("config").get<std::string>());
  const auto seed = header->at("seed").get<std::uint64_t>();
  Resources res;
  if (header->contains("encoder_path")) {
    res.encoder_path = header->at("encoder_path").get<std::string>();
    res.encoder = std::make_shared<const encoder::Autoencoder>(encoder::Autoencoder::load(res.encoder_path));
    if (hex64(res.encoder->encoder_checksum()) != header->at("encoder_checksum").get<std::string>()) {
      fail("encoder at '" + res.encoder_path + "' differs from the one used to record the session");
    }
  }
  std::optional<Agent> initial;
  if (header->contains("initial_snapshot")) {
    initial.emplace(Agent::load(std::filesystem::path(header->at("initial_snapshot").get<std::string>())));
  }
  SessionCore core(cfg, seed, res, std::move(initial), nullptr, nlohmann::json::object(), header->value("learning", true));
  if (hex64(core.agent().weights_checksum()) != header->at("initial_checksum").get<std::string>()) {
    fail("initial policy weights differ from the recorded session");
  }

  ReplayResult out;
  while (auto rec = next_record()) {
    const auto type = rec->value("type", "");
    if (type == "feedback") {
      const auto t = rec->at("t").get<std::uint64_t>();
      FeedbackSignal h{rec->at("h").get<std::vector<int>>()};
      if (t == core.next_t()) {
        core.feedback_current(h);
      } else if (t + 1 == core.next_t()) {
        core.feedback_previous(h);
      } else {
        fail("feedback bound to step " + std::to_string(t) + " while replay is at step " + std::to_string(core.next_t()));
      }
      ++out.feedback_events;
    } else if (type == "step") {
      const auto t = rec->at("t").get<std::uint64_t>();
      if (t != core.next_t()) fail("step " + std::to_string(t) + " out of order (expected " + std::to_string(core.next_t()) + ")");
      if (hex64(tensor_hash(core.state())) != rec->at("state_hash").get<std::string>()) {
        fail("state diverged at step " + std::to_string(t));
      }
      const auto logged = rec->at("action").get<std::vector<double>>();
      const Tensor& a = core.action();
      if (logged.size() != a.size()) fail("action size differs at step " + std::to_string(t));
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (static_cast<float>(logged[i]) != a[i]) fail("action diverged at step " + std::to_string(t));
      }
      core.step();
    } else if (type == "end") {
      out.logged_checksum = parse_hex64(rec->at("final_checksum").get<std::string>());
      if (rec->at("steps").get<std::uint64_t>() != core.agent().steps()) fail("footer step count differs from replayed steps");
      break;
    } else if (type == "error" || type == "note") {
      continue;
    } else {
      fail("unknown record type '" + type + "'");
    }
  }
  out.steps = core.agent().steps();
  out.final_checksum = core.agent().weights_checksum();
  out.agent.emplace(core.agent());
  return out;
}

inline ReplayResult replay_log(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ReplayError("cannot open session log '" + path.string() + "'");
  return replay_log(is, path.string());
}

}  // namespace dcoach::harness
