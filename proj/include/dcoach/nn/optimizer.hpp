#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dcoach/binary_io.hpp"
#include "dcoach/nn/network.hpp"

namespace dcoach::nn {

enum class OptimizerKind : std::uint8_t { sgd = 0, momentum = 1, adam = 2 };

inline std::string_view to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::momentum: return "momentum";
    case OptimizerKind::adam: return "adam";
  }
  return "unknown";
}

inline OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "momentum") return OptimizerKind::momentum;
  if (name == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "' (expected sgd, momentum or adam)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

// Stateful update rule. Plain SGD keeps no state and defers to sgd_step.
template <typename T>
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerConfig config, const BasicNetwork<T>& net) : config_(config) {
    if (config_.kind != OptimizerKind::sgd) first_ = net.zero_gradients();
    if (config_.kind == OptimizerKind::adam) second_ = net.zero_gradients();
  }

  const OptimizerConfig& config() const noexcept { return config_; }
  std::uint64_t steps() const noexcept { return steps_; }

  void step(BasicNetwork<T>& net, const BasicGradients<T>& grads, T lr) {
    if (config_.kind == OptimizerKind::sgd) {
      sgd_step(net, grads, lr);
      ++steps_;
      return;
    }
    check_congruent(net, grads);
    if (!grads.all_finite()) throw NumericError("optimizer step: gradient contains non-finite entries; step rejected");
    ++steps_;
    auto& params = net.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      update(params[i].weights, grads.layers[i].weights, first_.layers[i].weights,
             second_.layers.empty() ? nullptr : &second_.layers[i].weights, lr);
      update(params[i].bias, grads.layers[i].bias, first_.layers[i].bias,
             second_.layers.empty() ? nullptr : &second_.layers[i].bias, lr);
    }
  }

  void write_state(BinaryWriter& w) const {
    w.u8(static_cast<std::uint8_t>(config_.kind));
    w.f64(config_.momentum);
    w.f64(config_.beta1);
    w.f64(config_.beta2);
    w.f64(config_.epsilon);
    w.u64(steps_);
    auto dump = [&](const BasicGradients<T>& g) {
      w.u32(static_cast<std::uint32_t>(g.layers.size()));
      for (const auto& l : g.layers) {
        for (auto v : l.weights) w.f32(static_cast<float>(v));
        for (auto v : l.bias) w.f32(static_cast<float>(v));
      }
    };
    dump(first_);
    dump(second_);
  }

  static Optimizer read_state(BinaryReader& r, const BasicNetwork<T>& net) {
    OptimizerConfig cfg;
    auto kind = r.u8("optimizer kind");
    if (kind > 2) throw FormatError("unknown optimizer kind in payload");
    cfg.kind = static_cast<OptimizerKind>(kind);
    cfg.momentum = r.f64("optimizer momentum");
    cfg.beta1 = r.f64("optimizer beta1");
    cfg.beta2 = r.f64("optimizer beta2");
    cfg.epsilon = r.f64("optimizer epsilon");
    Optimizer opt(cfg, net);
    opt.steps_ = r.u64("optimizer steps");
    auto load = [&](BasicGradients<T>& g) {
      auto n = r.u32("optimizer moment count");
      if (n != g.layers.size()) throw FormatError("optimizer state does not match network layers");
      for (auto& l : g.layers) {
        for (auto& v : l.weights) v = static_cast<T>(r.f32("optimizer moment"));
        for (auto& v : l.bias) v = static_cast<T>(r.f32("optimizer moment"));
      }
    };
    load(opt.first_);
    load(opt.second_);
    return opt;
  }

 private:
  void update(BasicTensor<T>& p, const BasicTensor<T>& g, BasicTensor<T>& m, BasicTensor<T>* v, T lr) {
    if (config_.kind == OptimizerKind::momentum) {
      const T mu = static_cast<T>(config_.momentum);
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = mu * m[k] + g[k];
        p[k] -= lr * m[k];
      }
      return;
    }
    const double b1 = config_.beta1, b2 = config_.beta2;
    const T c1 = static_cast<T>(1.0 - std::pow(b1, static_cast<double>(steps_)));
    const T c2 = static_cast<T>(1.0 - std::pow(b2, static_cast<double>(steps_)));
    const T eps = static_cast<T>(config_.epsilon);
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = static_cast<T>(b1) * m[k] + static_cast<T>(1.0 - b1) * g[k];
      (*v)[k] = static_cast<T>(b2) * (*v)[k] + static_cast<T>(1.0 - b2) * g[k] * g[k];
      const T mh = m[k] / c1;
      const T vh = (*v)[k] / c2;
      p[k] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }

  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  BasicGradients<T> first_;
  BasicGradients<T> second_;
};

}  // namespace dcoach::nn
