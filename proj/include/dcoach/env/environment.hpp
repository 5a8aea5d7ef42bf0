#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>

#include "dcoach/log.hpp"
#include "dcoach/tensor.hpp"

namespace dcoach::env {

struct VectorObservation {
  Tensor values;
};

// Grayscale H x W image, every pixel in [0, 1].
struct FrameObservation {
  Tensor pixels;
};

using Observation = std::variant<VectorObservation, FrameObservation>;

inline bool is_frame(const Observation& o) { return std::holds_alternative<FrameObservation>(o); }

inline const Tensor& observation_tensor(const Observation& o) {
  return std::visit([](const auto& v) -> const Tensor& {
    if constexpr (std::is_same_v<std::decay_t<decltype(v)>, VectorObservation>) {
      return v.values;
    } else {
      return v.pixels;
    }
  }, o);
}

struct StepInfo {
  std::optional<double> progress_fraction;  // racer only
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class EnvError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string id() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual double fps() const = 0;
  virtual std::size_t max_episode_steps() const = 0;

  virtual Observation reset(std::uint64_t seed) = 0;
  virtual StepResult step(const Tensor& action) = 0;
  virtual Tensor render_frame() const = 0;
  virtual Observation observation() const = 0;

  virtual bool done() const = 0;
  virtual std::size_t episode_step() const = 0;

  // Nominal magnitude per observation component; vector observations are divided by it to
  // form the policy input. Empty for pixel environments.
  virtual std::vector<float> observation_scale() const { return {}; }

  virtual std::unique_ptr<Environment> clone() const = 0;

 protected:
  // Copies `action` clamped to [-1, 1]; warns once per call if anything was out of range.
  Tensor clamp_action(const Tensor& action) const {
    if (action.rank() != 1 || action.size() != action_dim()) {
      throw EnvError(id() + ": action must be a vector of length " + std::to_string(action_dim()) + ", got shape " +
                     shape_str(action.shape()));
    }
    Tensor out = action;
    bool clamped = false;
    for (auto& v : out) {
      if (!std::isfinite(v)) throw EnvError(id() + ": non-finite action component");
      if (v > 1.0f || v < -1.0f) {
        v = std::clamp(v, -1.0f, 1.0f);
        clamped = true;
      }
    }
    if (clamped) log::warn(id(), ": action out of [-1, 1] clamped");
    return out;
  }
};

}  // namespace dcoach::env
