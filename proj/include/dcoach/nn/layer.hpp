#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dcoach/tensor.hpp"

namespace dcoach::nn {

enum class LayerKind : std::uint8_t { dense = 0, conv2d = 1, deconv2d = 2, flatten = 3, reshape = 4 };
enum class Activation : std::uint8_t { linear = 0, tanh = 1, relu = 2, sigmoid = 3 };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::deconv2d: return "deconv2d";
    case LayerKind::flatten: return "flatten";
    case LayerKind::reshape: return "reshape";
  }
  return "unknown";
}

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "unknown";
}

inline Activation parse_activation(std::string_view name) {
  if (name == "linear") return Activation::linear;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

class NetworkError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t units = 0;  // dense units or conv filters
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  Activation activation = Activation::linear;
  Shape target;  // reshape only

  static LayerSpec dense(std::size_t units, Activation act = Activation::linear) {
    return LayerSpec{LayerKind::dense, units, 0, 0, 1, act, {}};
  }
  static LayerSpec conv2d(std::size_t filters, std::size_t kh, std::size_t kw, std::size_t stride,
                          Activation act = Activation::linear) {
    return LayerSpec{LayerKind::conv2d, filters, kh, kw, stride, act, {}};
  }
  static LayerSpec deconv2d(std::size_t filters, std::size_t kh, std::size_t kw, std::size_t stride,
                            Activation act = Activation::linear) {
    return LayerSpec{LayerKind::deconv2d, filters, kh, kw, stride, act, {}};
  }
  static LayerSpec flatten() { return LayerSpec{LayerKind::flatten, 0, 0, 0, 1, Activation::linear, {}}; }
  static LayerSpec reshape(Shape target) {
    return LayerSpec{LayerKind::reshape, 0, 0, 0, 1, Activation::linear, std::move(target)};
  }

  bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv2d || kind == LayerKind::deconv2d; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Per-sample output shape of a layer, or NetworkError describing the mismatch.
inline Shape infer_output_shape(const LayerSpec& spec, const Shape& in, std::size_t index) {
  auto fail = [&](const std::string& why) {
    return NetworkError("layer " + std::to_string(index) + " (" + std::string(to_string(spec.kind)) +
                        "): " + why + ", input shape " + shape_str(in));
  };
  switch (spec.kind) {
    case LayerKind::dense:
      if (in.size() != 1) throw fail("dense layer requires a rank-1 input");
      if (spec.units == 0) throw fail("dense layer needs at least one unit");
      return Shape{spec.units};
    case LayerKind::conv2d: {
      if (in.size() != 3) throw fail("conv2d requires a (channels, height, width) input");
      if (spec.units == 0 || spec.kernel_h == 0 || spec.kernel_w == 0 || spec.stride == 0) {
        throw fail("conv2d requires positive filters, kernel and stride");
      }
      if (in[1] < spec.kernel_h || in[2] < spec.kernel_w) throw fail("kernel larger than input");
      return Shape{spec.units, (in[1] - spec.kernel_h) / spec.stride + 1, (in[2] - spec.kernel_w) / spec.stride + 1};
    }
    case LayerKind::deconv2d:
      if (in.size() != 3) throw fail("deconv2d requires a (channels, height, width) input");
      if (spec.units == 0 || spec.kernel_h == 0 || spec.kernel_w == 0 || spec.stride == 0) {
        throw fail("deconv2d requires positive filters, kernel and stride");
      }
      return Shape{spec.units, (in[1] - 1) * spec.stride + spec.kernel_h, (in[2] - 1) * spec.stride + spec.kernel_w};
    case LayerKind::flatten:
      return Shape{shape_size(in)};
    case LayerKind::reshape:
      if (spec.target.empty() || shape_size(spec.target) != shape_size(in)) {
        throw fail("reshape target " + shape_str(spec.target) + " has a different element count");
      }
      for (auto d : spec.target) {
        if (d == 0) throw fail("reshape target has a zero dimension");
      }
      return spec.target;
  }
  throw fail("unknown layer kind");
}

}  // namespace dcoach::nn
