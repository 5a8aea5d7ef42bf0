#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

namespace dcoach::env {

struct Vec2 {
  double x = 0, y = 0;
  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct TrackProjection {
  double arc = 0;       // arc length of the closest centerline point from vertex 0
  double distance = 0;  // distance from the centerline
  std::size_t segment = 0;
};

// Closed-loop centerline polyline with a constant corridor width.
class Track {
 public:
  Track() = default;
  Track(std::uint64_t seed, std::vector<Vec2> centerline, double width)
      : seed_(seed), points_(std::move(centerline)), width_(width) {
    if (points_.size() < 3) throw std::invalid_argument("track needs at least 3 centerline points");
    if (!(width_ > 0)) throw std::invalid_argument("track width must be positive");
    cumulative_.resize(points_.size() + 1, 0.0);
    for (std::size_t i = 0; i < points_.size(); ++i) {
      cumulative_[i + 1] = cumulative_[i] + (point(i + 1) - points_[i]).norm();
    }
    build_raster();
  }

  // Star-shaped loop: jittered control points around the origin, Catmull-Rom smoothed.
  static Track generate(std::uint64_t seed, double width = 3.0, std::size_t controls = 12,
                        std::size_t samples_per_span = 16) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> radius(9.0, 14.0);
    std::uniform_real_distribution<double> jitter(-0.25, 0.25);
    const double step = 2 * std::numbers::pi / static_cast<double>(controls);
    std::vector<Vec2> ctrl;
    for (std::size_t k = 0; k < controls; ++k) {
      const double a = step * (static_cast<double>(k) + jitter(rng));
      const double r = radius(rng);
      ctrl.push_back({r * std::cos(a), r * std::sin(a)});
    }
    std::vector<Vec2> pts;
    const std::size_t n = ctrl.size();
    for (std::size_t k = 0; k < n; ++k) {
      const Vec2 p0 = ctrl[(k + n - 1) % n], p1 = ctrl[k], p2 = ctrl[(k + 1) % n], p3 = ctrl[(k + 2) % n];
      for (std::size_t s = 0; s < samples_per_span; ++s) {
        const double t = static_cast<double>(s) / static_cast<double>(samples_per_span);
        const double t2 = t * t, t3 = t2 * t;
        pts.push_back((p1 * 2.0 + (p2 - p0) * t + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2 +
                       (p1 * 3.0 - p0 - p2 * 3.0 + p3) * t3) *
                      0.5);
      }
    }
    return Track(seed, std::move(pts), width);
  }

  std::uint64_t seed() const { return seed_; }
  double width() const { return width_; }
  const std::vector<Vec2>& centerline() const { return points_; }
  double length() const { return cumulative_.back(); }
  std::size_t size() const { return points_.size(); }
  Vec2 point(std::size_t i) const { return points_[i % points_.size()]; }

  TrackProjection project(Vec2 p) const {
    TrackProjection best{0, std::numeric_limits<double>::infinity(), 0};
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const Vec2 a = points_[i], b = point(i + 1);
      const Vec2 ab = b - a;
      const double len2 = ab.dot(ab);
      double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double d = (p - (a + ab * t)).norm();
      if (d < best.distance) best = {cumulative_[i] + t * std::sqrt(len2), d, i};
    }
    return best;
  }

  // Point and unit tangent at arc length s (wrapped).
  std::pair<Vec2, Vec2> at_arc(double s) const {
    const double L = length();
    s = std::fmod(s, L);
    if (s < 0) s += L;
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
    std::size_t i = static_cast<std::size_t>(std::distance(cumulative_.begin(), it)) - 1;
    i = std::min(i, points_.size() - 1);
    const Vec2 a = points_[i], b = point(i + 1);
    const double seg = cumulative_[i + 1] - cumulative_[i];
    const double t = seg > 0 ? (s - cumulative_[i]) / seg : 0.0;
    const Vec2 d = b - a;
    const double n = d.norm();
    return {a + d * t, n > 0 ? d * (1.0 / n) : Vec2{1, 0}};
  }

  // Constant-time corridor test through a precomputed occupancy grid.
  bool on_track_fast(Vec2 p) const {
    const double fx = (p.x - origin_.x) / kCell, fy = (p.y - origin_.y) / kCell;
    if (fx < 0 || fy < 0) return false;
    const auto ix = static_cast<std::size_t>(fx), iy = static_cast<std::size_t>(fy);
    if (ix >= cols_ || iy >= rows_) return false;
    return raster_[iy * cols_ + ix] != 0;
  }

  nlohmann::json to_json() const {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : points_) pts.push_back({p.x, p.y});
    return {{"seed", seed_}, {"width", width_}, {"centerline", pts}};
  }

  static Track from_json(const nlohmann::json& j) {
    std::vector<Vec2> pts;
    for (const auto& p : j.at("centerline")) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    return Track(j.at("seed").get<std::uint64_t>(), std::move(pts), j.at("width").get<double>());
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write track file '" + path.string() + "'");
    os << to_json().dump(2) << '\n';
  }

  static Track load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read track file '" + path.string() + "'");
    return from_json(nlohmann::json::parse(is));
  }

 private:
  static constexpr double kCell = 0.125;

  void build_raster() {
    double minx = points_[0].x, maxx = minx, miny = points_[0].y, maxy = miny;
    for (const auto& p : points_) {
      minx = std::min(minx, p.x);
      maxx = std::max(maxx, p.x);
      miny = std::min(miny, p.y);
      maxy = std::max(maxy, p.y);
    }
    const double margin = width_ + 1.0;
    origin_ = {minx - margin, miny - margin};
    cols_ = static_cast<std::size_t>((maxx - minx + 2 * margin) / kCell) + 1;
    rows_ = static_cast<std::size_t>((maxy - miny + 2 * margin) / kCell) + 1;
    raster_.assign(cols_ * rows_, 0);
    const double half = width_ / 2;
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const Vec2 a = points_[i], b = point(i + 1);
      const Vec2 ab = b - a;
      const double len2 = ab.dot(ab);
      const auto lo_x = static_cast<std::size_t>(std::max(0.0, (std::min(a.x, b.x) - half - origin_.x) / kCell));
      const auto hi_x = std::min(cols_ - 1, static_cast<std::size_t>((std::max(a.x, b.x) + half - origin_.x) / kCell) + 1);
      const auto lo_y = static_cast<std::size_t>(std::max(0.0, (std::min(a.y, b.y) - half - origin_.y) / kCell));
      const auto hi_y = std::min(rows_ - 1, static_cast<std::size_t>((std::max(a.y, b.y) + half - origin_.y) / kCell) + 1);
      for (std::size_t iy = lo_y; iy <= hi_y; ++iy) {
        for (std::size_t ix = lo_x; ix <= hi_x; ++ix) {
          const Vec2 c{origin_.x + (static_cast<double>(ix) + 0.5) * kCell, origin_.y + (static_cast<double>(iy) + 0.5) * kCell};
          double t = len2 > 0 ? (c - a).dot(ab) / len2 : 0.0;
          t = std::clamp(t, 0.0, 1.0);
          if ((c - (a + ab * t)).norm() <= half) raster_[iy * cols_ + ix] = 1;
        }
      }
    }
  }

  std::uint64_t seed_ = 0;
  std::vector<Vec2> points_;
  double width_ = 3.0;
  std::vector<double> cumulative_;
  Vec2 origin_;
  std::size_t cols_ = 0, rows_ = 0;
  std::vector<std::uint8_t> raster_;
};

}  // namespace dcoach::env
