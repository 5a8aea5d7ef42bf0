#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "dcoach/binary_io.hpp"
#include "dcoach/env/environment.hpp"
#include "dcoach/seed.hpp"

namespace dcoach::encoder {

// Grayscale frames sharing one H x W shape, pixels in [0, 1].
struct ExplorationDataset {
  std::vector<Tensor> frames;
  std::string source_env;
  std::string collection_policy = "uniform-random";

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  Shape frame_shape() const { return frames.empty() ? Shape{} : frames.front().shape(); }

  void validate() const {
    for (const auto& f : frames) {
      if (f.shape() != frames.front().shape()) {
        throw std::invalid_argument("dataset frames differ in shape: " + shape_str(f.shape()) + " vs " +
                                    shape_str(frames.front().shape()));
      }
      for (auto v : f) {
        if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("dataset pixel outside [0, 1]");
      }
    }
  }
};

// Frames observed while acting uniformly at random; one frame per step, episodes reset as needed.
inline ExplorationDataset collect_exploration_dataset(env::Environment& env, std::size_t steps, std::uint64_t seed) {
  ExplorationDataset data;
  data.source_env = env.id();
  if (steps == 0) return data;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::uint64_t episode = 0;
  auto obs = env.reset(derive_seed(seed, episode++));
  if (!env::is_frame(obs)) throw std::invalid_argument(env.id() + " does not provide pixel observations");
  data.frames.reserve(steps);
  Tensor action(Shape{env.action_dim()});
  while (data.frames.size() < steps) {
    data.frames.push_back(env::observation_tensor(obs));
    if (data.frames.size() == steps) break;
    for (auto& a : action) a = u(rng);
    auto r = env.step(action);
    obs = r.done ? env.reset(derive_seed(seed, episode++)) : std::move(r.observation);
  }
  return data;
}

// "DCDS" | u32 count | u32 H | u32 W | f32 pixels (count * H * W)
inline void save_dataset(const ExplorationDataset& data, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write dataset '" + path.string() + "'");
  BinaryWriter w(os);
  w.magic("DCDS");
  const Shape s = data.frame_shape();
  if (!data.empty() && s.size() != 2) throw std::invalid_argument("dataset frames must be H x W");
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u32(data.empty() ? 0 : static_cast<std::uint32_t>(s[0]));
  w.u32(data.empty() ? 0 : static_cast<std::uint32_t>(s[1]));
  for (const auto& f : data.frames) {
    for (auto v : f) w.f32(v);
  }
  if (!os) throw std::runtime_error("failed writing dataset '" + path.string() + "'");
}

inline ExplorationDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset '" + path.string() + "'");
  BinaryReader r(is);
  r.expect_magic("DCDS");
  const auto count = r.u32("frame count");
  const auto h = r.u32("frame height");
  const auto w = r.u32("frame width");
  if (count > 0 && (h == 0 || w == 0)) throw FormatError("dataset declares frames with a zero dimension");
  ExplorationDataset data;
  data.frames.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor f(Shape{h, w});
    std::vector<unsigned char> raw(f.size() * 4);
    r.bytes(raw.data(), raw.size(), "frame pixels");
    for (std::size_t k = 0; k < f.size(); ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[k * 4 + static_cast<std::size_t>(b)]) << (8 * b);
      f[k] = std::bit_cast<float>(bits);
    }
    data.frames.push_back(std::move(f));
  }
  data.validate();
  return data;
}

}  // namespace dcoach::encoder
