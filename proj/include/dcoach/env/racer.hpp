#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "dcoach/env/environment.hpp"
#include "dcoach/env/track.hpp"

namespace dcoach::env {

struct RacerParams {
  double dt = 1.0 / 20.5;
  double max_speed = 8.0;       // units/s
  double acceleration = 6.0;    // units/s^2 at full throttle
  double braking = 10.0;        // units/s^2 at full brake
  double drag = 0.3;            // 1/s
  double max_curvature = 0.4;   // 1/units at full steer
  double track_width = 3.0;
  std::size_t max_steps = 615;  // ceil(30 s * 20.5 FPS)
  bool random_start = true;     // start at a seeded arc position instead of vertex 0
  double meters_per_pixel = 0.25;
};

struct RacerState {
  Vec2 position;
  double heading = 0;  // rad, direction (cos, sin)
  double speed = 0;
};

// Top-down racer on a procedurally generated loop. Actions: (steer, accelerate, brake) in [-1, 1];
// positive parts of accelerate/brake drive throttle/brake. Observation is the ego-centric frame.
class Racer final : public Environment {
 public:
  static constexpr int kFrame = 64;
  static constexpr int kCarRow = 48;
  static constexpr int kCarCol = 32;
  static constexpr int kHudRows = 4;

  static constexpr float kOffTrack = 0.2f;
  static constexpr float kOnTrack = 0.55f;
  static constexpr float kCar = 1.0f;
  static constexpr float kHudBackground = 0.0f;
  static constexpr float kHudBar = 0.95f;

  explicit Racer(RacerParams params = {}) : p_(params) {}

  std::string id() const override { return "racer"; }
  std::size_t action_dim() const override { return 3; }
  double fps() const override { return 1.0 / p_.dt; }
  std::size_t max_episode_steps() const override { return p_.max_steps; }
  const RacerParams& params() const { return p_; }

  Observation reset(std::uint64_t seed) override {
    track_ = Track::generate(seed, p_.track_width);
    double start = 0;
    if (p_.random_start) {
      std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
      start = std::uniform_real_distribution<double>(0.0, track_.length())(rng);
    }
    return reset_on(track_, start);
  }

  // Places the car at rest on the centerline at arc `start`, facing along the loop.
  Observation reset_on(Track track, double start_arc) {
    track_ = std::move(track);
    auto [pos, tangent] = track_.at_arc(start_arc);
    s_.position = pos;
    s_.heading = std::atan2(tangent.y, tangent.x);
    s_.speed = 0;
    last_arc_ = track_.project(s_.position).arc;
    travelled_ = 0;
    best_ = 0;
    progress_ = 0;
    steps_ = 0;
    done_ = false;
    return observation();
  }

  StepResult step(const Tensor& action) override {
    if (done_) throw EnvError("racer: step called on a finished episode; reset first");
    Tensor a = clamp_action(action);
    const double steer = a[0];
    const double throttle = std::max(0.0f, a[1]);
    const double brake = std::max(0.0f, a[2]);

    double v = s_.speed + p_.dt * (throttle * p_.acceleration - brake * p_.braking - p_.drag * s_.speed);
    v = std::clamp(v, 0.0, p_.max_speed);
    s_.speed = v;
    s_.heading += p_.dt * v * steer * p_.max_curvature;
    s_.heading = std::remainder(s_.heading, 2 * std::numbers::pi);
    if (v > 0) s_.position = s_.position + Vec2{std::cos(s_.heading), std::sin(s_.heading)} * (p_.dt * v);
    ++steps_;

    const auto proj = track_.project(s_.position);
    const double L = track_.length();
    const double delta = std::remainder(proj.arc - last_arc_, L);
    last_arc_ = proj.arc;
    travelled_ += delta;
    best_ = std::max(best_, travelled_);
    const double old_progress = progress_;
    progress_ = std::min(1.0, best_ / L);

    const bool left_track = proj.distance > track_.width() / 2;
    done_ = left_track || steps_ >= p_.max_steps;

    StepResult r;
    r.observation = observation();
    r.reward = progress_ - old_progress;
    r.done = done_;
    r.info.progress_fraction = progress_;
    return r;
  }

  Observation observation() const override { return FrameObservation{render_frame()}; }

  // Ego-centric view: car near the bottom centre facing up, speed bar in the bottom rows.
  Tensor render_frame() const override {
    Tensor img(Shape{kFrame, kFrame});
    const double res = p_.meters_per_pixel;
    const Vec2 fwd{std::cos(s_.heading), std::sin(s_.heading)};
    const Vec2 right{std::sin(s_.heading), -std::cos(s_.heading)};
    const int scene_rows = kFrame - kHudRows;
    for (int r = 0; r < scene_rows; ++r) {
      const double f = (kCarRow - r - 0.5) * res;
      for (int c = 0; c < kFrame; ++c) {
        const double l = (c - kCarCol + 0.5) * res;
        const Vec2 w = s_.position + fwd * f + right * l;
        img[static_cast<std::size_t>(r * kFrame + c)] = track_.on_track_fast(w) ? kOnTrack : kOffTrack;
      }
    }
    for (int r = kCarRow - 2; r < kCarRow + 2; ++r) {
      for (int c = kCarCol - 1; c < kCarCol + 1; ++c) img[static_cast<std::size_t>(r * kFrame + c)] = kCar;
    }
    const int bar = static_cast<int>(std::lround(s_.speed / p_.max_speed * kFrame));
    for (int r = scene_rows; r < kFrame; ++r) {
      for (int c = 0; c < kFrame; ++c) {
        img[static_cast<std::size_t>(r * kFrame + c)] = c < bar ? kHudBar : kHudBackground;
      }
    }
    return img;
  }

  bool done() const override { return done_; }
  std::size_t episode_step() const override { return steps_; }
  double progress_fraction() const { return progress_; }
  const RacerState& state() const { return s_; }
  const Track& track() const { return track_; }
  double arc_position() const { return last_arc_; }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<Racer>(*this); }

 private:
  RacerParams p_;
  Track track_;
  RacerState s_;
  double last_arc_ = 0;
  double travelled_ = 0;
  double best_ = 0;
  double progress_ = 0;
  std::size_t steps_ = 0;
  bool done_ = false;
};

}  // namespace dcoach::env
