#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "dcoach/env/environment.hpp"

namespace dcoach::env {

struct CartPoleState {
  double x = 0;          // cart position, m
  double x_dot = 0;      // m/s
  double theta = 0;      // pole angle from upright, rad; positive leans toward +x
  double theta_dot = 0;  // rad/s
};

struct CartPoleParams {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_length = 0.5;
  double force_scale = 10.0;  // action +-1 maps to +-10 N
  double dt = 1.0 / 22.5;
  double theta_limit = 12.0 * std::numbers::pi / 180.0;
  double x_limit = 2.4;
  std::size_t max_steps = 500;
  double init_noise = 0.05;
};

// Continuous-action cart-pole: one action dimension (horizontal force), +1 reward per surviving step.
class CartPole final : public Environment {
 public:
  static constexpr int kFrameH = 64;
  static constexpr int kFrameW = 128;

  explicit CartPole(CartPoleParams params = {}) : p_(params) {}

  std::string id() const override { return "cartpole"; }
  std::size_t action_dim() const override { return 1; }
  double fps() const override { return 1.0 / p_.dt; }
  std::size_t max_episode_steps() const override { return p_.max_steps; }
  const CartPoleParams& params() const { return p_; }

  Observation reset(std::uint64_t seed) override {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-p_.init_noise, p_.init_noise);
    s_.x = u(rng);
    s_.x_dot = u(rng);
    s_.theta = u(rng);
    s_.theta_dot = u(rng);
    steps_ = 0;
    done_ = false;
    return observation();
  }

  StepResult step(const Tensor& action) override {
    if (done_) throw EnvError("cartpole: step called on a finished episode; reset first");
    Tensor a = clamp_action(action);
    s_ = advance(s_, p_.force_scale * static_cast<double>(a[0]), p_);
    ++steps_;
    const bool failed = std::abs(s_.x) > p_.x_limit || std::abs(s_.theta) > p_.theta_limit;
    done_ = failed || steps_ >= p_.max_steps;
    StepResult r;
    r.observation = observation();
    r.reward = failed ? 0.0 : 1.0;
    r.done = done_;
    return r;
  }

  // One explicit-Euler step of the classic cart-pole equations of motion.
  static CartPoleState advance(const CartPoleState& s, double force, const CartPoleParams& p) {
    const double total = p.cart_mass + p.pole_mass;
    const double pml = p.pole_mass * p.half_length;
    const double c = std::cos(s.theta), sn = std::sin(s.theta);
    const double temp = (force + pml * s.theta_dot * s.theta_dot * sn) / total;
    const double theta_acc = (p.gravity * sn - c * temp) / (p.half_length * (4.0 / 3.0 - p.pole_mass * c * c / total));
    const double x_acc = temp - pml * theta_acc * c / total;
    CartPoleState n;
    n.x = s.x + p.dt * s.x_dot;
    n.x_dot = s.x_dot + p.dt * x_acc;
    n.theta = s.theta + p.dt * s.theta_dot;
    n.theta_dot = s.theta_dot + p.dt * theta_acc;
    return n;
  }

  Observation observation() const override {
    return VectorObservation{Tensor(Shape{4}, {static_cast<float>(s_.x), static_cast<float>(s_.x_dot),
                                               static_cast<float>(s_.theta), static_cast<float>(s_.theta_dot)})};
  }

  std::vector<float> observation_scale() const override {
    return {static_cast<float>(p_.x_limit), 3.0f, static_cast<float>(p_.theta_limit), 3.0f};
  }

  // Schematic side view for the UI: rail, cart block, pole.
  Tensor render_frame() const override {
    Tensor img(Shape{kFrameH, kFrameW}, 0.1f);
    const double ppm = kFrameW / (2.0 * (p_.x_limit + 0.4));
    auto put = [&](int r, int c, float v) {
      if (r >= 0 && r < kFrameH && c >= 0 && c < kFrameW) img[static_cast<std::size_t>(r * kFrameW + c)] = v;
    };
    const int rail = 50;
    for (int c = 0; c < kFrameW; ++c) put(rail, c, 0.4f);
    const int cx = static_cast<int>(std::lround(kFrameW / 2.0 + s_.x * ppm));
    for (int r = rail - 4; r < rail; ++r) {
      for (int c = cx - 5; c <= cx + 5; ++c) put(r, c, 0.8f);
    }
    const double len = 2.0 * p_.half_length * ppm;
    for (int i = 0; i <= 2 * static_cast<int>(len); ++i) {
      const double f = i / (2.0 * len);
      put(static_cast<int>(std::lround(rail - 4 - f * len * std::cos(s_.theta))),
          static_cast<int>(std::lround(cx + f * len * std::sin(s_.theta))), 1.0f);
    }
    return img;
  }

  bool done() const override { return done_; }
  std::size_t episode_step() const override { return steps_; }
  const CartPoleState& state() const { return s_; }
  void set_state(const CartPoleState& s) { s_ = s; }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<CartPole>(*this); }

 private:
  CartPoleParams p_;
  CartPoleState s_;
  std::size_t steps_ = 0;
  bool done_ = false;
};

}  // namespace dcoach::env
