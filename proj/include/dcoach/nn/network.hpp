#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dcoach/nn/layer.hpp"
#include "dcoach/tensor.hpp"

namespace dcoach::nn {

template <typename T>
struct LayerParams {
  BasicTensor<T> weights;  // empty for parameterless layers
  BasicTensor<T> bias;
};

// Per-parameter gradient tensors, laid out exactly like the owning network's params.
template <typename T>
struct BasicGradients {
  std::vector<LayerParams<T>> layers;

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weights.all_finite() || !l.bias.all_finite()) return false;
    }
    return true;
  }
};

namespace detail {

template <typename T>
inline void activate(Activation act, std::span<T> v) {
  switch (act) {
    case Activation::linear: break;
    case Activation::tanh:
      for (auto& x : v) x = std::tanh(x);
      break;
    case Activation::relu:
      for (auto& x : v) x = x > T{0} ? x : T{0};
      break;
    case Activation::sigmoid:
      for (auto& x : v) x = T{1} / (T{1} + std::exp(-x));
      break;
  }
}

// dz = dy * act'(z), expressed through the activation output y.
template <typename T>
inline void activation_backward(Activation act, std::span<const T> y, std::span<T> dy) {
  switch (act) {
    case Activation::linear: break;
    case Activation::tanh:
      for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= T{1} - y[i] * y[i];
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = y[i] > T{0} ? dy[i] : T{0};
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= y[i] * (T{1} - y[i]);
      break;
  }
}

}  // namespace detail

// Feed-forward network over a fixed layer list. Parameters are owned by value.
template <typename T>
class BasicNetwork {
 public:
  // Intermediate activations of one forward pass, kept for the backward pass.
  struct Trace {
    std::size_t batch = 1;
    bool batched = false;
    std::vector<std::vector<T>> outputs;  // outputs[0] is the input
  };

  BasicNetwork() = default;

  BasicNetwork(Shape input_shape, std::vector<LayerSpec> layers)
      : input_shape_(std::move(input_shape)), specs_(std::move(layers)) {
    if (input_shape_.empty()) throw NetworkError("network input shape must not be empty");
    for (auto d : input_shape_) {
      if (d == 0) throw NetworkError("network input shape " + shape_str(input_shape_) + " has a zero dimension");
    }
    shapes_.push_back(input_shape_);
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      shapes_.push_back(infer_output_shape(specs_[i], shapes_.back(), i));
    }
    params_.resize(specs_.size());
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const auto& s = specs_[i];
      const auto& in = shapes_[i];
      switch (s.kind) {
        case LayerKind::dense:
          params_[i].weights = BasicTensor<T>(Shape{s.units, in[0]});
          params_[i].bias = BasicTensor<T>(Shape{s.units});
          break;
        case LayerKind::conv2d:
          params_[i].weights = BasicTensor<T>(Shape{s.units, in[0], s.kernel_h, s.kernel_w});
          params_[i].bias = BasicTensor<T>(Shape{s.units});
          break;
        case LayerKind::deconv2d:
          params_[i].weights = BasicTensor<T>(Shape{in[0], s.units, s.kernel_h, s.kernel_w});
          params_[i].bias = BasicTensor<T>(Shape{s.units});
          break;
        default:
          break;
      }
    }
  }

  // Glorot-uniform weights, zero biases.
  template <typename Rng>
  void init_glorot(Rng& rng) {
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const auto& s = specs_[i];
      if (!s.has_params()) continue;
      const auto& in = shapes_[i];
      double fan_in = 0, fan_out = 0;
      const double k = static_cast<double>(s.kernel_h * s.kernel_w);
      if (s.kind == LayerKind::dense) {
        fan_in = static_cast<double>(in[0]);
        fan_out = static_cast<double>(s.units);
      } else {
        fan_in = static_cast<double>(in[0]) * k;
        fan_out = static_cast<double>(s.units) * k;
      }
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& w : params_[i].weights) w = static_cast<T>(dist(rng));
      params_[i].bias.fill(T{0});
    }
  }

  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape() const noexcept { return shapes_.back(); }
  std::size_t layer_count() const noexcept { return specs_.size(); }
  const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
  const LayerSpec& spec(std::size_t i) const { return specs_.at(i); }
  const Shape& layer_input_shape(std::size_t i) const { return shapes_.at(i); }
  const Shape& layer_output_shape(std::size_t i) const { return shapes_.at(i + 1); }

  std::vector<LayerParams<T>>& params() noexcept { return params_; }
  const std::vector<LayerParams<T>>& params() const noexcept { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.weights.size() + p.bias.size();
    return n;
  }

  BasicGradients<T> zero_gradients() const {
    BasicGradients<T> g;
    g.layers.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].weights.empty()) g.layers[i].weights = BasicTensor<T>(params_[i].weights.shape());
      if (!params_[i].bias.empty()) g.layers[i].bias = BasicTensor<T>(params_[i].bias.shape());
    }
    return g;
  }

  // Accepts either a single sample of input_shape() or a leading batch dimension.
  BasicTensor<T> forward(const BasicTensor<T>& input) const {
    Trace trace = forward_trace(input);
    return output_of(trace);
  }

  Trace forward_trace(const BasicTensor<T>& input) const {
    Trace tr;
    resolve_batch(input.shape(), tr.batch, tr.batched);
    tr.outputs.reserve(specs_.size() + 1);
    tr.outputs.emplace_back(input.begin(), input.end());
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      tr.outputs.push_back(layer_forward(i, tr.outputs.back(), tr.batch));
    }
    for (auto v : tr.outputs.back()) {
      if (!std::isfinite(v)) throw NumericError("forward pass produced a non-finite output");
    }
    return tr;
  }

  BasicTensor<T> output_of(const Trace& tr) const {
    Shape shape = output_shape();
    if (tr.batched) shape.insert(shape.begin(), tr.batch);
    return BasicTensor<T>(std::move(shape), tr.outputs.back());
  }

  // Backpropagates d(loss)/d(output) through the trace; accumulates into grads.
  void backward_trace(const Trace& tr, std::vector<T> grad_out, BasicGradients<T>& grads) const {
    for (std::size_t li = specs_.size(); li-- > 0;) {
      grad_out = layer_backward(li, tr.outputs[li], tr.outputs[li + 1], std::move(grad_out), tr.batch,
                                grads.layers[li], li > 0);
    }
  }

  template <typename U>
  BasicNetwork<U> cast() const {
    BasicNetwork<U> out(input_shape_, specs_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].weights.empty()) out.params()[i].weights = BasicTensor<U>::cast(params_[i].weights);
      if (!params_[i].bias.empty()) out.params()[i].bias = BasicTensor<U>::cast(params_[i].bias);
    }
    return out;
  }

  friend bool operator==(const BasicNetwork& a, const BasicNetwork& b) {
    if (a.input_shape_ != b.input_shape_ || a.specs_ != b.specs_) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      if (!(a.params_[i].weights == b.params_[i].weights) || !(a.params_[i].bias == b.params_[i].bias)) return false;
    }
    return true;
  }

 private:
  void resolve_batch(const Shape& shape, std::size_t& batch, bool& batched) const {
    if (shape == input_shape_) {
      batch = 1;
      batched = false;
      return;
    }
    if (shape.size() == input_shape_.size() + 1 && std::equal(input_shape_.begin(), input_shape_.end(), shape.begin() + 1)) {
      batch = shape[0];
      batched = true;
      return;
    }
    std::string first = specs_.empty() ? std::string("network") :
        "layer 0 (" + std::string(to_string(specs_[0].kind)) + ")";
    throw NetworkError(first + " expects input " + shape_str(input_shape_) + " (optionally batched), got " +
                       shape_str(shape));
  }

  std::vector<T> layer_forward(std::size_t li, const std::vector<T>& in, std::size_t batch) const {
    const auto& s = specs_[li];
    const Shape& is = shapes_[li];
    const Shape& os = shapes_[li + 1];
    const std::size_t in_n = shape_size(is);
    const std::size_t out_n = shape_size(os);
    if (s.kind == LayerKind::flatten || s.kind == LayerKind::reshape) return in;

    std::vector<T> out(batch * out_n);
    const T* w = params_[li].weights.data().data();
    const T* b = params_[li].bias.data().data();
    for (std::size_t n = 0; n < batch; ++n) {
      const T* x = in.data() + n * in_n;
      T* y = out.data() + n * out_n;
      switch (s.kind) {
        case LayerKind::dense: {
          const std::size_t I = is[0];
          for (std::size_t o = 0; o < s.units; ++o) {
            const T* row = w + o * I;
            T acc = b[o];
            for (std::size_t i = 0; i < I; ++i) acc += row[i] * x[i];
            y[o] = acc;
          }
          break;
        }
        case LayerKind::conv2d: {
          const std::size_t C = is[0], H = is[1], W = is[2];
          const std::size_t F = os[0], Ho = os[1], Wo = os[2];
          const std::size_t kh = s.kernel_h, kw = s.kernel_w, st = s.stride;
          for (std::size_t f = 0; f < F; ++f) {
            T* yf = y + f * Ho * Wo;
            std::fill(yf, yf + Ho * Wo, b[f]);
            for (std::size_t c = 0; c < C; ++c) {
              const T* xc = x + c * H * W;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const T wv = w[((f * C + c) * kh + ky) * kw + kx];
                  for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const T* xr = xc + (oy * st + ky) * W + kx;
                    T* yr = yf + oy * Wo;
                    for (std::size_t ox = 0; ox < Wo; ++ox) yr[ox] += wv * xr[ox * st];
                  }
                }
              }
            }
          }
          break;
        }
        case LayerKind::deconv2d: {
          const std::size_t C = is[0], H = is[1], W = is[2];
          const std::size_t F = os[0], Ho = os[1], Wo = os[2];
          const std::size_t kh = s.kernel_h, kw = s.kernel_w, st = s.stride;
          for (std::size_t f = 0; f < F; ++f) std::fill(y + f * Ho * Wo, y + (f + 1) * Ho * Wo, b[f]);
          for (std::size_t c = 0; c < C; ++c) {
            const T* xc = x + c * H * W;
            for (std::size_t f = 0; f < F; ++f) {
              T* yf = y + f * Ho * Wo;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const T wv = w[((c * F + f) * kh + ky) * kw + kx];
                  for (std::size_t iy = 0; iy < H; ++iy) {
                    const T* xr = xc + iy * W;
                    T* yr = yf + (iy * st + ky) * Wo + kx;
                    for (std::size_t ix = 0; ix < W; ++ix) yr[ix * st] += wv * xr[ix];
                  }
                }
              }
            }
          }
          break;
        }
        default:
          break;
      }
    }
    detail::activate<T>(s.activation, out);
    return out;
  }

  // Returns d(loss)/d(input of layer li); `dy` holds d(loss)/d(output of layer li).
  std::vector<T> layer_backward(std::size_t li, const std::vector<T>& in, const std::vector<T>& out, std::vector<T> dy,
                                std::size_t batch, LayerParams<T>& g, bool need_input_grad) const {
    const auto& s = specs_[li];
    if (s.kind == LayerKind::flatten || s.kind == LayerKind::reshape) return dy;
    detail::activation_backward<T>(s.activation, out, dy);

    const Shape& is = shapes_[li];
    const Shape& os = shapes_[li + 1];
    const std::size_t in_n = shape_size(is);
    const std::size_t out_n = shape_size(os);
    std::vector<T> dx(need_input_grad ? batch * in_n : 0, T{0});
    const T* w = params_[li].weights.data().data();
    T* gw = g.weights.data().data();
    T* gb = g.bias.data().data();

    for (std::size_t n = 0; n < batch; ++n) {
      const T* x = in.data() + n * in_n;
      const T* dz = dy.data() + n * out_n;
      T* dxn = need_input_grad ? dx.data() + n * in_n : nullptr;
      switch (s.kind) {
        case LayerKind::dense: {
          const std::size_t I = is[0];
          for (std::size_t o = 0; o < s.units; ++o) {
            const T d = dz[o];
            gb[o] += d;
            T* grow = gw + o * I;
            const T* row = w + o * I;
            for (std::size_t i = 0; i < I; ++i) grow[i] += d * x[i];
            if (dxn) {
              for (std::size_t i = 0; i < I; ++i) dxn[i] += d * row[i];
            }
          }
          break;
        }
        case LayerKind::conv2d: {
          const std::size_t C = is[0], H = is[1], W = is[2];
          const std::size_t F = os[0], Ho = os[1], Wo = os[2];
          const std::size_t kh = s.kernel_h, kw = s.kernel_w, st = s.stride;
          for (std::size_t f = 0; f < F; ++f) {
            const T* dzf = dz + f * Ho * Wo;
            T sum{0};
            for (std::size_t i = 0; i < Ho * Wo; ++i) sum += dzf[i];
            gb[f] += sum;
            for (std::size_t c = 0; c < C; ++c) {
              const T* xc = x + c * H * W;
              T* dxc = dxn ? dxn + c * H * W : nullptr;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::size_t wi = ((f * C + c) * kh + ky) * kw + kx;
                  const T wv = w[wi];
                  T acc{0};
                  for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const T* xr = xc + (oy * st + ky) * W + kx;
                    const T* dr = dzf + oy * Wo;
                    for (std::size_t ox = 0; ox < Wo; ++ox) acc += dr[ox] * xr[ox * st];
                    if (dxc) {
                      T* dxr = dxc + (oy * st + ky) * W + kx;
                      for (std::size_t ox = 0; ox < Wo; ++ox) dxr[ox * st] += wv * dr[ox];
                    }
                  }
                  gw[wi] += acc;
                }
              }
            }
          }
          break;
        }
        case LayerKind::deconv2d: {
          const std::size_t C = is[0], H = is[1], W = is[2];
          const std::size_t F = os[0], Ho = os[1], Wo = os[2];
          const std::size_t kh = s.kernel_h, kw = s.kernel_w, st = s.stride;
          for (std::size_t f = 0; f < F; ++f) {
            const T* dzf = dz + f * Ho * Wo;
            T sum{0};
            for (std::size_t i = 0; i < Ho * Wo; ++i) sum += dzf[i];
            gb[f] += sum;
          }
          for (std::size_t c = 0; c < C; ++c) {
            const T* xc = x + c * H * W;
            T* dxc = dxn ? dxn + c * H * W : nullptr;
            for (std::size_t f = 0; f < F; ++f) {
              const T* dzf = dz + f * Ho * Wo;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::size_t wi = ((c * F + f) * kh + ky) * kw + kx;
                  const T wv = w[wi];
                  T acc{0};
                  for (std::size_t iy = 0; iy < H; ++iy) {
                    const T* xr = xc + iy * W;
                    const T* dr = dzf + (iy * st + ky) * Wo + kx;
                    for (std::size_t ix = 0; ix < W; ++ix) acc += dr[ix * st] * xr[ix];
                    if (dxc) {
                      T* dxr = dxc + iy * W;
                      for (std::size_t ix = 0; ix < W; ++ix) dxr[ix] += wv * dr[ix * st];
                    }
                  }
                  gw[wi] += acc;
                }
              }
            }
          }
          break;
        }
        default:
          break;
      }
    }
    return dx;
  }

  Shape input_shape_;
  std::vector<LayerSpec> specs_;
  std::vector<Shape> shapes_;  // shapes_[i] = input of layer i; back() = network output
  std::vector<LayerParams<T>> params_;
};

using Network = BasicNetwork<float>;
using Gradients = BasicGradients<float>;

template <typename T>
BasicTensor<T> forward(const BasicNetwork<T>& net, const BasicTensor<T>& input) {
  return net.forward(input);
}

template <typename T>
struct BackwardResult {
  T loss;
  BasicGradients<T> grads;
};

// Mean squared error over every output element and its parameter gradients.
template <typename T>
BackwardResult<T> backward(const BasicNetwork<T>& net, const BasicTensor<T>& input, const BasicTensor<T>& target) {
  auto tr = net.forward_trace(input);
  Shape out_shape = net.output_shape();
  if (tr.batched) out_shape.insert(out_shape.begin(), tr.batch);
  if (target.shape() != out_shape) {
    throw NetworkError("backward: target shape " + shape_str(target.shape()) + " does not match output shape " +
                       shape_str(out_shape));
  }
  const auto& y = tr.outputs.back();
  const T n = static_cast<T>(y.size());
  std::vector<T> dy(y.size());
  T loss{0};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T diff = y[i] - target[i];
    loss += diff * diff;
    dy[i] = T{2} * diff / n;
  }
  loss /= n;
  auto grads = net.zero_gradients();
  net.backward_trace(tr, std::move(dy), grads);
  return {loss, std::move(grads)};
}

template <typename T>
void check_congruent(const BasicNetwork<T>& net, const BasicGradients<T>& grads) {
  const auto& p = net.params();
  if (grads.layers.size() != p.size()) throw NetworkError("gradients do not match network layer count");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (grads.layers[i].weights.shape() != p[i].weights.shape() || grads.layers[i].bias.shape() != p[i].bias.shape()) {
      throw NetworkError("gradient shapes for layer " + std::to_string(i) + " do not match parameters");
    }
  }
}

// p <- p - lr * g for every parameter. Rejects non-finite gradients before touching anything.
template <typename T>
void sgd_step(BasicNetwork<T>& net, const BasicGradients<T>& grads, T lr) {
  check_congruent(net, grads);
  if (!grads.all_finite()) throw NumericError("sgd_step: gradient contains non-finite entries; step rejected");
  auto& p = net.params();
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& w = p[i].weights;
    const auto& gw = grads.layers[i].weights;
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * gw[k];
    auto& b = p[i].bias;
    const auto& gb = grads.layers[i].bias;
    for (std::size_t k = 0; k < b.size(); ++k) b[k] -= lr * gb[k];
  }
}

template <typename T>
std::uint64_t weights_checksum(const BasicNetwork<T>& net) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : net.params()) {
    h = tensor_hash(p.weights, h);
    h = tensor_hash(p.bias, h);
  }
  return h;
}

}  // namespace dcoach::nn
