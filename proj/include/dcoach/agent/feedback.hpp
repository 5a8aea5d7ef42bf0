#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcoach/tensor.hpp"

namespace dcoach {

class FeedbackError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Per-dimension corrective advice h in {-1, 0, +1}^d.
struct FeedbackSignal {
  std::vector<int> h;
  std::uint64_t timestep = 0;

  FeedbackSignal() = default;
  explicit FeedbackSignal(std::vector<int> values, std::uint64_t t = 0) : h(std::move(values)), timestep(t) {
    for (int v : h) {
      if (v < -1 || v > 1) throw FeedbackError("feedback entries must be -1, 0 or +1, got " + std::to_string(v));
    }
  }

  static FeedbackSignal none(std::size_t dims, std::uint64_t t = 0) { return FeedbackSignal(std::vector<int>(dims, 0), t); }

  bool is_zero() const {
    return std::all_of(h.begin(), h.end(), [](int v) { return v == 0; });
  }
  std::size_t size() const { return h.size(); }

  friend bool operator==(const FeedbackSignal& a, const FeedbackSignal& b) { return a.h == b.h; }
};

enum class CorrectionMode { decoupled, coupled };

inline std::string_view to_string(CorrectionMode m) { return m == CorrectionMode::coupled ? "coupled" : "decoupled"; }

inline CorrectionMode parse_correction_mode(std::string_view s) {
  if (s == "decoupled") return CorrectionMode::decoupled;
  if (s == "coupled") return CorrectionMode::coupled;
  throw std::invalid_argument("unknown correction mode '" + std::string(s) + "' (expected decoupled or coupled)");
}

using CoupledMap = std::map<std::string, std::vector<int>>;

// Four-key racer table, dimensions (direction, acceleration, brake).
inline CoupledMap racer_coupled_map() {
  return {
      {"forward", {0, 1, -1}},
      {"back", {0, -1, 1}},
      {"left", {-1, -1, 0}},
      {"right", {1, -1, 0}},
  };
}

inline CoupledMap coupled_map_by_id(std::string_view id) {
  if (id == "racer" || id == "racer-table") return racer_coupled_map();
  if (id == "none" || id.empty()) return {};
  throw std::invalid_argument("unknown coupled map '" + std::string(id) + "' (known: racer, none)");
}

struct CorrectionConfig {
  double e = 1.0;
  CorrectionMode mode = CorrectionMode::decoupled;
  CoupledMap coupled_map;

  void validate(std::size_t action_dim) const {
    if (!(e > 0)) throw FeedbackError("error magnitude e must be positive");
    if (mode == CorrectionMode::decoupled) return;
    for (const auto& [name, vec] : coupled_map) {
      if (vec.size() != action_dim) {
        throw FeedbackError("coupled map entry '" + name + "' has " + std::to_string(vec.size()) +
                            " dimensions, expected " + std::to_string(action_dim));
      }
      FeedbackSignal check(vec);
    }
  }

  friend bool operator==(const CorrectionConfig&, const CorrectionConfig&) = default;
};

// label_i = clamp(action_i + h_i * e, -1, 1)
inline Tensor make_label(const Tensor& action, const FeedbackSignal& h, const CorrectionConfig& config) {
  if (action.size() != h.size()) {
    throw FeedbackError("feedback has " + std::to_string(h.size()) + " dimensions but the action has " +
                        std::to_string(action.size()));
  }
  if (h.is_zero()) throw FeedbackError("make_label called with all-zero feedback");
  Tensor label = action;
  for (std::size_t i = 0; i < label.size(); ++i) {
    const double v = static_cast<double>(action[i]) + static_cast<double>(h.h[i]) * config.e;
    label[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return label;
}

inline FeedbackSignal map_coupled(std::string_view name, const CorrectionConfig& config, std::uint64_t t = 0) {
  if (config.mode != CorrectionMode::coupled) throw FeedbackError("named feedback requires coupled mode");
  auto it = config.coupled_map.find(std::string(name));
  if (it == config.coupled_map.end()) {
    std::string known;
    for (const auto& [k, v] : config.coupled_map) known += (known.empty() ? "" : ", ") + k;
    throw FeedbackError("unknown feedback name '" + std::string(name) + "' (known: " + known + ")");
  }
  return FeedbackSignal(it->second, t);
}

}  // namespace dcoach
