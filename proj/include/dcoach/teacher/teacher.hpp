#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>

#include "dcoach/agent/feedback.hpp"
#include "dcoach/env/cartpole.hpp"
#include "dcoach/env/racer.hpp"
#include "dcoach/nn/network.hpp"

namespace dcoach::teacher {

// What a teacher policy may look at: the agent's state representation and the live environment.
struct TeacherContext {
  const Tensor& state_repr;
  const env::Environment* environment = nullptr;
};

class TeacherPolicy {
 public:
  virtual ~TeacherPolicy() = default;
  virtual std::string id() const = 0;
  virtual Tensor action(const TeacherContext& ctx) const = 0;
  virtual std::unique_ptr<TeacherPolicy> clone() const = 0;
};

template <typename E>
const E& require_env(const TeacherContext& ctx, const char* who) {
  const auto* e = dynamic_cast<const E*>(ctx.environment);
  if (!e) throw std::invalid_argument(std::string(who) + " teacher needs a live environment of its kind");
  return *e;
}

// Linear state feedback F = k . (x, x_dot, theta, theta_dot), action = clamp(F / force_scale).
class CartPoleOracle final : public TeacherPolicy {
 public:
  static constexpr std::array<double, 4> kGains{2.4, 4.7, 43.2, 11.2};

  std::string id() const override { return "cartpole-oracle"; }

  static double command(const env::CartPoleState& s, double force_scale) {
    const double f = kGains[0] * s.x + kGains[1] * s.x_dot + kGains[2] * s.theta + kGains[3] * s.theta_dot;
    return std::clamp(f / force_scale, -1.0, 1.0);
  }

  Tensor action(const TeacherContext& ctx) const override {
    const auto& cp = require_env<env::CartPole>(ctx, "cartpole oracle");
    return Tensor(Shape{1}, {static_cast<float>(command(cp.state(), cp.params().force_scale))});
  }

  std::unique_ptr<TeacherPolicy> clone() const override { return std::make_unique<CartPoleOracle>(*this); }
};

// Pure-pursuit centerline follower with a speed target.
class PurePursuitTeacher final : public TeacherPolicy {
 public:
  struct Params {
    double lookahead = 3.0;
    double target_speed = 4.0;
    double speed_gain = 0.5;  // command per unit/s of speed error
  };

  PurePursuitTeacher() = default;
  explicit PurePursuitTeacher(Params p) : p_(p) {}

  std::string id() const override { return "racer-pursuit"; }

  Tensor action(const TeacherContext& ctx) const override {
    const auto& racer = require_env<env::Racer>(ctx, "pure-pursuit");
    const auto& s = racer.state();
    const auto& track = racer.track();
    const auto proj = track.project(s.position);
    const auto target = track.at_arc(proj.arc + p_.lookahead).first;
    const env::Vec2 d = target - s.position;
    const env::Vec2 fwd{std::cos(s.heading), std::sin(s.heading)};
    const double alpha = std::atan2(fwd.x * d.y - fwd.y * d.x, fwd.dot(d));
    const double curvature = 2.0 * std::sin(alpha) / std::max(d.norm(), 1e-6);
    const double steer = std::clamp(curvature / racer.params().max_curvature, -1.0, 1.0);
    const double speed_cmd = std::clamp(p_.speed_gain * (p_.target_speed - s.speed), -1.0, 1.0);
    return Tensor(Shape{3}, {static_cast<float>(steer), static_cast<float>(speed_cmd), static_cast<float>(-speed_cmd)});
  }

  std::unique_ptr<TeacherPolicy> clone() const override { return std::make_unique<PurePursuitTeacher>(*this); }

 private:
  Params p_;
};

// Frozen policy network evaluated on the same state representation the agent sees.
class NetworkTeacher final : public TeacherPolicy {
 public:
  explicit NetworkTeacher(nn::Network net) : net_(std::make_shared<const nn::Network>(std::move(net))) {}

  std::string id() const override { return "network"; }
  Tensor action(const TeacherContext& ctx) const override { return net_->forward(ctx.state_repr); }
  std::unique_ptr<TeacherPolicy> clone() const override { return std::make_unique<NetworkTeacher>(*this); }

 private:
  std::shared_ptr<const nn::Network> net_;
};

enum class FlipMode { one, random_count };

inline std::string_view to_string(FlipMode m) { return m == FlipMode::one ? "one" : "random-count"; }

inline FlipMode parse_flip_mode(std::string_view s) {
  if (s == "one") return FlipMode::one;
  if (s == "random-count") return FlipMode::random_count;
  throw std::invalid_argument("unknown flip mode '" + std::string(s) + "' (expected one or random-count)");
}

struct TeacherConfig {
  double alpha = 0.6;
  double tau = 0.0003;
  double p_err = 0.0;
  std::uint64_t seed = 0;
  FlipMode flip = FlipMode::one;

  void validate() const {
    if (!(alpha >= 0 && alpha <= 1)) throw std::invalid_argument("teacher alpha must lie in [0, 1]");
    if (!(tau >= 0)) throw std::invalid_argument("teacher tau must be non-negative");
    if (!(p_err >= 0 && p_err <= 1)) throw std::invalid_argument("teacher p_err must lie in [0, 1]");
  }

  friend bool operator==(const TeacherConfig&, const TeacherConfig&) = default;
};

struct Advice {
  FeedbackSignal h;
  bool fired = false;      // the P_h draw succeeded
  bool corrupted = false;  // at least one dimension was flipped
};

// Sign-of-difference corrections with decaying probability and optional erroneous flips.
// Per call the rng consumes: one uniform for firing; if the resulting h is non-zero, one uniform
// for corruption; if corrupted, the draws choosing which dimensions flip.
class SimulatedTeacher {
 public:
  SimulatedTeacher(std::unique_ptr<TeacherPolicy> policy, TeacherConfig config)
      : policy_(std::move(policy)), config_(config), rng_(config.seed) {
    if (!policy_) throw std::invalid_argument("simulated teacher needs a policy");
    config_.validate();
  }

  SimulatedTeacher(const SimulatedTeacher& o) : policy_(o.policy_->clone()), config_(o.config_), rng_(o.rng_) {}

  const TeacherConfig& config() const { return config_; }
  const TeacherPolicy& policy() const { return *policy_; }

  double p_h(std::uint64_t timestep) const { return config_.alpha * std::exp(-config_.tau * static_cast<double>(timestep)); }

  Advice advise(const TeacherContext& ctx, const Tensor& agent_action, std::uint64_t timestep) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t d = agent_action.size();
    Advice out{FeedbackSignal::none(d, timestep), false, false};
    if (!(u(rng_) < p_h(timestep))) return out;
    out.fired = true;
    const Tensor target = policy_->action(ctx);
    if (target.size() != d) {
      throw std::invalid_argument("teacher action has " + std::to_string(target.size()) + " dimensions, agent has " +
                                  std::to_string(d));
    }
    std::vector<std::size_t> nonzero;
    for (std::size_t i = 0; i < d; ++i) {
      const float diff = target[i] - agent_action[i];
      out.h.h[i] = (diff > 0) - (diff < 0);
      if (out.h.h[i] != 0) nonzero.push_back(i);
    }
    if (nonzero.empty()) return out;
    if (!(u(rng_) < config_.p_err)) return out;
    out.corrupted = true;
    std::size_t count = 1;
    if (config_.flip == FlipMode::one) {
      const auto pick = std::uniform_int_distribution<std::size_t>(0, nonzero.size() - 1)(rng_);
      std::swap(nonzero[0], nonzero[pick]);
    } else {
      count = std::uniform_int_distribution<std::size_t>(1, nonzero.size())(rng_);
      std::shuffle(nonzero.begin(), nonzero.end(), rng_);
    }
    for (std::size_t k = 0; k < count; ++k) out.h.h[nonzero[k]] = -out.h.h[nonzero[k]];
    return out;
  }

 private:
  std::unique_ptr<TeacherPolicy> policy_;
  TeacherConfig config_;
  std::mt19937_64 rng_;
};

}  // namespace dcoach::teacher
