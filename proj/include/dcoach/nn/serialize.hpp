#pragma once

#include <filesystem>
#include <fstream>
#include <optional>

#include "dcoach/binary_io.hpp"
#include "dcoach/nn/network.hpp"

// Weight file layout (little-endian):
//   "DCNN" | u32 version | u32 input rank | u32 dims... | u32 layer count
//   per layer: u8 kind | u8 activation | u32 units | u32 kernel_h | u32 kernel_w | u32 stride
//              | u32 target rank | u32 dims...
//   then per layer in order: f32 weights..., f32 biases...
namespace dcoach::nn {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

namespace detail {

inline void write_shape(BinaryWriter& w, const Shape& s) {
  w.u32(static_cast<std::uint32_t>(s.size()));
  for (auto d : s) w.u32(static_cast<std::uint32_t>(d));
}

inline Shape read_shape(BinaryReader& r, const char* what) {
  auto rank = r.u32(what);
  if (rank > 8) throw FormatError(std::string("implausible rank while reading ") + what);
  Shape s(rank);
  for (auto& d : s) {
    d = r.u32(what);
    if (d == 0) throw FormatError(std::string("zero dimension while reading ") + what);
  }
  return s;
}

}  // namespace detail

inline void write_network(BinaryWriter& w, const Network& net) {
  w.magic("DCNN");
  w.u32(kWeightFormatVersion);
  detail::write_shape(w, net.input_shape());
  w.u32(static_cast<std::uint32_t>(net.layer_count()));
  for (const auto& s : net.specs()) {
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u8(static_cast<std::uint8_t>(s.activation));
    w.u32(static_cast<std::uint32_t>(s.units));
    w.u32(static_cast<std::uint32_t>(s.kernel_h));
    w.u32(static_cast<std::uint32_t>(s.kernel_w));
    w.u32(static_cast<std::uint32_t>(s.stride));
    detail::write_shape(w, s.target);
  }
  for (const auto& p : net.params()) {
    for (auto v : p.weights) w.f32(v);
    for (auto v : p.bias) w.f32(v);
  }
}

// Builds the network only after the full payload has been read.
inline Network read_network(BinaryReader& r) {
  r.expect_magic("DCNN");
  auto version = r.u32("format version");
  if (version != kWeightFormatVersion) {
    throw FormatError("unsupported weight format version " + std::to_string(version) + " (expected " +
                      std::to_string(kWeightFormatVersion) + ")");
  }
  Shape input = detail::read_shape(r, "input shape");
  auto count = r.u32("layer count");
  if (count > 1024) throw FormatError("implausible layer count");
  std::vector<LayerSpec> specs(count);
  for (auto& s : specs) {
    auto kind = r.u8("layer kind");
    auto act = r.u8("layer activation");
    if (kind > 4 || act > 3) throw FormatError("unknown layer kind or activation");
    s.kind = static_cast<LayerKind>(kind);
    s.activation = static_cast<Activation>(act);
    s.units = r.u32("layer units");
    s.kernel_h = r.u32("kernel height");
    s.kernel_w = r.u32("kernel width");
    s.stride = r.u32("stride");
    auto rank = r.u32("reshape target");
    if (rank > 8) throw FormatError("implausible reshape rank");
    s.target.resize(rank);
    for (auto& d : s.target) d = r.u32("reshape target");
  }
  Network net;
  try {
    net = Network(input, specs);
  } catch (const NetworkError& e) {
    throw FormatError(std::string("weight file describes an invalid network: ") + e.what());
  }
  for (auto& p : net.params()) {
    for (auto& v : p.weights) v = r.f32("weights");
    for (auto& v : p.bias) v = r.f32("biases");
  }
  return net;
}

inline void save_weights(const Network& net, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  BinaryWriter w(os);
  write_network(w, net);
  if (!w.ok()) throw std::runtime_error("failed writing weights to '" + path.string() + "'");
}

inline Network load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open weight file '" + path.string() + "'");
  BinaryReader r(is);
  return read_network(r);
}

// Loads and checks the stored input shape against what the caller expects.
inline Network load_weights(const std::filesystem::path& path, const Shape& expected_input) {
  Network net = load_weights(path);
  if (net.input_shape() != expected_input) {
    throw FormatError("weight file '" + path.string() + "' declares input shape " + shape_str(net.input_shape()) +
                      " but " + shape_str(expected_input) + " was expected");
  }
  return net;
}

}  // namespace dcoach::nn
