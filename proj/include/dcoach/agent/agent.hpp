#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dcoach/agent/feedback.hpp"
#include "dcoach/agent/replay_buffer.hpp"
#include "dcoach/binary_io.hpp"
#include "dcoach/nn/optimizer.hpp"
#include "dcoach/nn/serialize.hpp"

namespace dcoach {

struct AgentConfig {
  CorrectionConfig correction;
  std::size_t buffer_capacity = 200;    // K
  std::size_t buffer_sample_size = 50;  // N
  std::size_t update_interval = 10;     // b
  double learning_rate = 0.0003;
  bool buffer_enabled = true;
  nn::OptimizerConfig optimizer;

  friend bool operator==(const AgentConfig&, const AgentConfig&) = default;
};

// Policy network: any layer stack whose last layer is a tanh dense layer with rank-1 output.
inline void validate_policy(const nn::Network& net) {
  if (net.layer_count() == 0) throw nn::NetworkError("policy network has no layers");
  const auto& last = net.specs().back();
  if (last.kind != nn::LayerKind::dense || last.activation != nn::Activation::tanh) {
    throw nn::NetworkError("policy network must end in a tanh dense layer so actions stay in [-1, 1]");
  }
}

// Fully connected tanh policy: input -> hidden... -> action_dim.
inline nn::Network make_policy_network(const Shape& input, const std::vector<std::size_t>& hidden,
                                       std::size_t action_dim, std::uint64_t seed) {
  std::vector<nn::LayerSpec> layers;
  if (input.size() != 1) layers.push_back(nn::LayerSpec::flatten());
  for (auto h : hidden) layers.push_back(nn::LayerSpec::dense(h, nn::Activation::tanh));
  layers.push_back(nn::LayerSpec::dense(action_dim, nn::Activation::tanh));
  nn::Network net(input, layers);
  std::mt19937_64 rng(seed);
  net.init_glorot(rng);
  return net;
}

struct FeedbackOutcome {
  Tensor label;
  std::size_t batch_size = 0;  // 0 when no mini-batch update ran
};

class AgentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Online corrective-feedback learner: immediate single-pair updates on advice, replayed mini-batches
// on advice and every b steps, bounded FIFO of corrected pairs.
class Agent {
 public:
  Agent(nn::Network policy, AgentConfig config, std::uint64_t seed)
      : policy_(std::move(policy)), config_(std::move(config)), rng_(seed) {
    validate_policy(policy_);
    config_.correction.validate(action_dim());
    buffer_ = ReplayBuffer(config_.buffer_capacity, config_.buffer_sample_size, config_.update_interval);
    if (!(config_.learning_rate > 0)) throw AgentError("learning rate must be positive");
    optimizer_ = nn::Optimizer<float>(config_.optimizer, policy_);
  }

  std::size_t action_dim() const { return policy_.output_shape()[0]; }
  const Shape& state_shape() const { return policy_.input_shape(); }
  const nn::Network& policy() const noexcept { return policy_; }
  const AgentConfig& config() const noexcept { return config_; }
  const ReplayBuffer& buffer() const noexcept { return buffer_; }
  std::uint64_t steps() const noexcept { return t_; }

  std::uint64_t single_updates() const noexcept { return single_updates_; }
  std::uint64_t batch_updates() const noexcept { return batch_updates_; }
  std::uint64_t periodic_updates() const noexcept { return periodic_updates_; }

  Tensor act(const Tensor& state) const {
    if (state.shape() != policy_.input_shape()) {
      throw nn::NetworkError("act: state shape " + shape_str(state.shape()) + " does not match policy input " +
                             shape_str(policy_.input_shape()));
    }
    return policy_.forward(state);
  }

  // Corrective update for a non-zero h on the executed (state, action). The buffer is only touched
  // after both SGD steps succeed.
  FeedbackOutcome feedback_step(const Tensor& state, const Tensor& action, const FeedbackSignal& h) {
    if (h.is_zero()) throw FeedbackError("feedback_step requires non-zero feedback");
    if (state.shape() != policy_.input_shape()) {
      throw nn::NetworkError("feedback_step: state shape " + shape_str(state.shape()) + " does not match " +
                             shape_str(policy_.input_shape()));
    }
    FeedbackOutcome out;
    out.label = make_label(action, h, config_.correction);
    apply_update(state, out.label);
    ++single_updates_;
    if (!config_.buffer_enabled) return out;
    if (!buffer_.empty()) {
      out.batch_size = replay_update();
      ++batch_updates_;
    }
    buffer_.push({state, out.label});
    return out;
  }

  // Advances the step counter; every b-th step replays a mini-batch if the buffer holds anything.
  bool periodic_step() {
    ++t_;
    if (t_ % config_.update_interval != 0 || buffer_.empty()) return false;
    replay_update();
    ++periodic_updates_;
    return true;
  }

  // Clock advance with no learning, for evaluation runs.
  void tick() { ++t_; }

  std::uint64_t weights_checksum() const { return nn::weights_checksum(policy_); }

  void save(std::ostream& os) const {
    std::ostringstream body;
    BinaryWriter w(body);
    w.magic("DCSN");
    w.u32(kSnapshotVersion);
    w.str(manifest().dump());
    nn::write_network(w, policy_);
    optimizer_.write_state(w);
    std::ostringstream rng_text;
    rng_text << rng_;
    w.str(rng_text.str());
    w.u64(t_);
    w.u64(single_updates_);
    w.u64(batch_updates_);
    w.u64(periodic_updates_);
    w.u64(buffer_.size());
    for (const auto& e : buffer_.entries()) {
      for (auto v : e.state) w.f32(v);
      for (auto v : e.label) w.f32(v);
    }
    const std::string bytes = body.str();
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    BinaryWriter tail(os);
    tail.u64(fnv1a(std::as_bytes(std::span(bytes.data(), bytes.size()))));
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write snapshot '" + path.string() + "'");
    save(os);
    if (!os) throw std::runtime_error("failed writing snapshot '" + path.string() + "'");
  }

  // All-or-nothing restore: checksum first, then the full payload is decoded before an Agent exists.
  static Agent load(std::istream& is) {
    std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (all.size() < 16) throw FormatError("snapshot truncated");
    const std::string body = all.substr(0, all.size() - 8);
    std::istringstream tail_in(all.substr(all.size() - 8));
    BinaryReader tail(tail_in);
    if (tail.u64("snapshot checksum") != fnv1a(std::as_bytes(std::span(body.data(), body.size())))) {
      throw FormatError("snapshot checksum mismatch (corrupted or truncated file)");
    }
    std::istringstream in(body);
    BinaryReader r(in);
    r.expect_magic("DCSN");
    auto version = r.u32("snapshot version");
    if (version != kSnapshotVersion) {
      throw FormatError("unsupported snapshot version " + std::to_string(version) + " (expected " +
                        std::to_string(kSnapshotVersion) + ")");
    }
    auto manifest = nlohmann::json::parse(r.str("snapshot manifest"));
    AgentConfig cfg = config_from_json(manifest.at("config"));
    nn::Network net = nn::read_network(r);
    auto opt = nn::Optimizer<float>::read_state(r, net);
    std::mt19937_64 rng;
    std::istringstream rng_text(r.str("rng state"));
    rng_text >> rng;
    if (!rng_text) throw FormatError("snapshot rng state unreadable");
    const auto t = r.u64("step counter");
    const auto singles = r.u64("counter");
    const auto batches = r.u64("counter");
    const auto periodic = r.u64("counter");
    const auto count = r.u64("buffer count");
    if (count > cfg.buffer_capacity) throw FormatError("snapshot buffer exceeds its capacity");
    const std::size_t d = net.output_shape()[0];
    std::deque<ReplayEntry> entries;
    for (std::uint64_t i = 0; i < count; ++i) {
      ReplayEntry e{Tensor(net.input_shape()), Tensor(Shape{d})};
      for (auto& v : e.state) v = r.f32("buffer state");
      for (auto& v : e.label) v = r.f32("buffer label");
      entries.push_back(std::move(e));
    }
    if (manifest.at("d").get<std::size_t>() != d || manifest.at("t").get<std::uint64_t>() != t) {
      throw FormatError("snapshot manifest disagrees with its payload");
    }

    Agent agent(std::move(net), cfg, 0);
    agent.optimizer_ = std::move(opt);
    agent.rng_ = rng;
    agent.t_ = t;
    agent.single_updates_ = singles;
    agent.batch_updates_ = batches;
    agent.periodic_updates_ = periodic;
    for (auto& e : entries) agent.buffer_.push(std::move(e));
    return agent;
  }

  static Agent load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open snapshot '" + path.string() + "'");
    return load(is);
  }

  nlohmann::json manifest() const {
    return {{"config", config_to_json(config_)},
            {"t", t_},
            {"K", config_.buffer_capacity},
            {"N", config_.buffer_sample_size},
            {"b", config_.update_interval},
            {"d", action_dim()},
            {"state_shape", state_shape()}};
  }

  static nlohmann::json config_to_json(const AgentConfig& c) {
    nlohmann::json map = nlohmann::json::object();
    for (const auto& [k, v] : c.correction.coupled_map) map[k] = v;
    return {{"e", c.correction.e},
            {"mode", std::string(to_string(c.correction.mode))},
            {"coupled_map", map},
            {"K", c.buffer_capacity},
            {"N", c.buffer_sample_size},
            {"b", c.update_interval},
            {"lr", c.learning_rate},
            {"buffer", c.buffer_enabled},
            {"optimizer", std::string(nn::to_string(c.optimizer.kind))},
            {"momentum", c.optimizer.momentum},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"epsilon", c.optimizer.epsilon}};
  }

  static AgentConfig config_from_json(const nlohmann::json& j) {
    AgentConfig c;
    c.correction.e = j.at("e").get<double>();
    c.correction.mode = parse_correction_mode(j.at("mode").get<std::string>());
    for (const auto& [k, v] : j.at("coupled_map").items()) c.correction.coupled_map[k] = v.get<std::vector<int>>();
    c.buffer_capacity = j.at("K").get<std::size_t>();
    c.buffer_sample_size = j.at("N").get<std::size_t>();
    c.update_interval = j.at("b").get<std::size_t>();
    c.learning_rate = j.at("lr").get<double>();
    c.buffer_enabled = j.at("buffer").get<bool>();
    c.optimizer.kind = nn::parse_optimizer(j.at("optimizer").get<std::string>());
    c.optimizer.momentum = j.at("momentum").get<double>();
    c.optimizer.beta1 = j.at("beta1").get<double>();
    c.optimizer.beta2 = j.at("beta2").get<double>();
    c.optimizer.epsilon = j.at("epsilon").get<double>();
    return c;
  }

  static constexpr std::uint32_t kSnapshotVersion = 1;

 private:
  void apply_update(const Tensor& state, const Tensor& label) {
    auto result = nn::backward(policy_, state, label);
    optimizer_.step(policy_, result.grads, static_cast<float>(config_.learning_rate));
  }

  std::size_t replay_update() {
    const auto idx = buffer_.sample_indices(rng_);
    std::vector<const Tensor*> states, labels;
    states.reserve(idx.size());
    labels.reserve(idx.size());
    for (auto i : idx) {
      states.push_back(&buffer_[i].state);
      labels.push_back(&buffer_[i].label);
    }
    apply_update(stack<float>(states), stack<float>(labels));
    return idx.size();
  }

  nn::Network policy_;
  AgentConfig config_;
  ReplayBuffer buffer_;
  nn::Optimizer<float> optimizer_;
  std::mt19937_64 rng_;
  std::uint64_t t_ = 0;
  std::uint64_t single_updates_ = 0;
  std::uint64_t batch_updates_ = 0;
  std::uint64_t periodic_updates_ = 0;
};

}  // namespace dcoach
