#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "dcoach/env/cartpole.hpp"
#include "dcoach/env/racer.hpp"

namespace dcoach::env {

inline std::unique_ptr<Environment> make_environment(const std::string& id) {
  if (id == "cartpole") return std::make_unique<CartPole>();
  if (id == "racer") return std::make_unique<Racer>();
  throw std::invalid_argument("unknown environment '" + id + "' (known: cartpole, racer)");
}

// 8-bit quantisation used for display and PGM export.
inline std::vector<std::uint8_t> quantize_frame(const Tensor& frame) {
  std::vector<std::uint8_t> out(frame.size());
  for (std::size_t i = 0; i < frame.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(frame[i], 0.0f, 1.0f) * 255.0f));
  }
  return out;
}

inline void write_pgm(const Tensor& frame, const std::filesystem::path& path) {
  if (frame.rank() != 2) throw std::invalid_argument("write_pgm expects an H x W frame");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << "P5\n" << frame.shape()[1] << ' ' << frame.shape()[0] << "\n255\n";
  auto bytes = quantize_frame(frame);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace dcoach::env
