#pragma once

#include <memory>
#include <optional>
#include <ostream>

#include <nlohmann/json.hpp>

#include "dcoach/encoder/autoencoder.hpp"
#include "dcoach/env/registry.hpp"
#include "dcoach/harness/config.hpp"
#include "dcoach/seed.hpp"

namespace dcoach::harness {

inline constexpr int kLogVersion = 1;

// Sub-seed streams derived from one session seed.
enum SeedStream : std::uint64_t { kPolicyInit = 1, kAgentSampling = 2, kTeacher = 3, kEnvEpisodes = 4 };

// Shared read-only inputs of a session: the frozen encoder and an optional teacher network.
struct Resources {
  std::shared_ptr<const encoder::Autoencoder> encoder;
  std::string encoder_path;
  std::shared_ptr<const nn::Network> teacher_network;
};

inline Resources load_resources(const ExperimentConfig& cfg) {
  Resources r;
  if (cfg.env == "racer") {
    if (cfg.encoder.path.empty()) throw ConfigError("pixel environment '" + cfg.env + "' needs encoder.path");
    r.encoder = std::make_shared<const encoder::Autoencoder>(encoder::Autoencoder::load(cfg.encoder.path));
    r.encoder_path = cfg.encoder.path;
  }
  if (cfg.teacher.type == "network") r.teacher_network = std::make_shared<const nn::Network>(nn::load_weights(cfg.teacher.weights));
  return r;
}

// Observation -> policy input: scaled vector for low-dimensional states, latent code for frames.
class StateRepresenter {
 public:
  StateRepresenter(const env::Environment& env, std::shared_ptr<const encoder::Autoencoder> enc)
      : scale_(env.observation_scale()), encoder_(std::move(enc)) {
    auto obs = env.observation();
    if (env::is_frame(obs) && !encoder_) throw ConfigError(env.id() + " produces frames; an encoder is required");
  }

  Tensor operator()(const env::Observation& obs) const {
    if (env::is_frame(obs)) return encoder_->encode(env::observation_tensor(obs));
    Tensor v = env::observation_tensor(obs);
    if (!scale_.empty()) {
      if (scale_.size() != v.size()) throw ShapeError("observation scale does not match observation size");
      for (std::size_t i = 0; i < v.size(); ++i) v[i] /= scale_[i];
    }
    return v;
  }

  Shape shape(const env::Environment& env) const { return (*this)(env.observation()).shape(); }
  const encoder::Autoencoder* encoder() const { return encoder_.get(); }

 private:
  std::vector<float> scale_;
  std::shared_ptr<const encoder::Autoencoder> encoder_;
};

inline std::unique_ptr<teacher::TeacherPolicy> make_teacher_policy(const ExperimentConfig& cfg, const Resources& res) {
  if (cfg.teacher.type == "network") {
    if (!res.teacher_network) throw ConfigError("network teacher weights not loaded");
    return std::make_unique<teacher::NetworkTeacher>(*res.teacher_network);
  }
  if (cfg.env == "cartpole") return std::make_unique<teacher::CartPoleOracle>();
  return std::make_unique<teacher::PurePursuitTeacher>();
}

inline Agent make_agent(const ExperimentConfig& cfg, const Shape& state_shape, std::size_t action_dim, std::uint64_t seed) {
  auto net = make_policy_network(state_shape, cfg.agent.hidden, action_dim, derive_seed(seed, kPolicyInit));
  return Agent(std::move(net), cfg.agent_config(), derive_seed(seed, kAgentSampling));
}

struct EpisodeRecord {
  std::uint64_t episode = 0;
  std::uint64_t end_t = 0;  // global step at which the episode finished
  std::size_t steps = 0;
  double ret = 0;
};

inline nlohmann::json to_json(const Tensor& t) { return nlohmann::json(std::vector<double>(t.begin(), t.end())); }

struct StepOutcome {
  std::uint64_t t = 0;
  double reward = 0;
  bool done = false;
  std::uint64_t episode = 0;
};

// One environment + agent pair advanced step by step, with optional JSON-lines logging.
// Per step: prepare() computes the state representation and executed action; feedback may bind to
// the prepared step (simulated teacher) or, before prepare(), to the previous step (human mode);
// step() executes the action, runs the periodic update and handles episode resets.
class SessionCore {
 public:
  SessionCore(ExperimentConfig cfg, std::uint64_t seed, Resources res, std::optional<Agent> initial = std::nullopt,
              std::ostream* log = nullptr, nlohmann::json header_extra = nlohmann::json::object(), bool learning = true)
      : cfg_(std::move(cfg)), seed_(seed), res_(std::move(res)), env_(env::make_environment(cfg_.env)),
        env_seed_(derive_seed(seed_, kEnvEpisodes)), learning_(learning), log_(log) {
    obs_ = env_->reset(derive_seed(env_seed_, 0));
    repr_ = std::make_unique<StateRepresenter>(*env_, res_.encoder);
    const Shape shape = repr_->shape(*env_);
    if (initial) {
      if (initial->state_shape() != shape || initial->action_dim() != env_->action_dim()) {
        throw ConfigError("initial agent does not fit " + cfg_.env + ": expects " + shape_str(initial->state_shape()));
      }
      agent_.emplace(std::move(*initial));
    } else {
      agent_.emplace(make_agent(cfg_, shape, env_->action_dim(), seed_));
    }
    if (log_) {
      nlohmann::json h{{"type", "header"},
                       {"v", kLogVersion},
                       {"config", config_to_string(cfg_)},
                       {"seed", seed_},
                       {"env", cfg_.env},
                       {"learning", learning_},
                       {"initial_checksum", hex64(agent_->weights_checksum())},
                       {"initial_t", agent_->steps()}};
      if (res_.encoder) {
        h["encoder_path"] = res_.encoder_path;
        h["encoder_checksum"] = hex64(res_.encoder->encoder_checksum());
      }
      for (const auto& [k, v] : header_extra.items()) h[k] = v;
      write(h);
    }
  }

  const ExperimentConfig& config() const { return cfg_; }
  const Agent& agent() const { return *agent_; }
  Agent& mutable_agent() { return *agent_; }
  const env::Environment& environment() const { return *env_; }
  const std::vector<EpisodeRecord>& episodes() const { return episodes_; }
  std::uint64_t next_t() const { return agent_->steps() + 1; }
  std::uint64_t episode() const { return episode_; }
  double episode_return() const { return episode_return_; }
  bool learning() const { return learning_; }
  bool has_previous() const { return prev_.has_value(); }
  bool previous_ended_episode() const { return prev_done_; }
  std::uint64_t feedback_count() const { return feedback_count_; }
  const std::vector<int>& last_h() const { return last_h_; }
  const StateRepresenter& representer() const { return *repr_; }

  void prepare() {
    if (prepared_) return;
    state_ = (*repr_)(obs_);
    action_ = agent_->act(state_);
    prepared_ = true;
  }

  const Tensor& state() {
    prepare();
    return state_;
  }
  const Tensor& action() {
    prepare();
    return action_;
  }

  // Feedback on the step about to execute.
  FeedbackOutcome feedback_current(const FeedbackSignal& h) {
    prepare();
    return apply(state_, action_, h, next_t(), "current");
  }

  // Feedback on the most recently executed step; only legal before prepare() and within an episode.
  FeedbackOutcome feedback_previous(const FeedbackSignal& h) {
    if (prepared_) throw std::logic_error("feedback_previous after the next step was prepared");
    if (!prev_) throw FeedbackError("no executed step to bind feedback to");
    if (prev_done_) throw FeedbackError("previous step ended its episode; feedback ignored between episodes");
    return apply(prev_->first, prev_->second, h, next_t() - 1, "previous");
  }

  StepOutcome step() {
    prepare();
    const std::uint64_t t = next_t();
    auto r = env_->step(action_);
    if (learning_) {
      agent_->periodic_step();
    } else {
      agent_->tick();
    }
    episode_return_ += r.reward;
    ++episode_steps_;
    if (log_) {
      write({{"type", "step"},
             {"t", t},
             {"episode", episode_},
             {"state_hash", hex64(tensor_hash(state_))},
             {"action", to_json(action_)},
             {"h", step_h_.empty() ? nlohmann::json(std::vector<int>(action_.size(), 0)) : nlohmann::json(step_h_)},
             {"reward", r.reward},
             {"done", r.done}});
    }
    step_h_.clear();
    StepOutcome out{t, r.reward, r.done, episode_};
    prev_.emplace(std::move(state_), std::move(action_));
    prev_done_ = r.done;
    prepared_ = false;
    if (r.done) {
      episodes_.push_back({episode_, t, episode_steps_, episode_return_});
      ++episode_;
      episode_return_ = 0;
      episode_steps_ = 0;
      obs_ = env_->reset(derive_seed(env_seed_, episode_));
    } else {
      obs_ = std::move(r.observation);
    }
    return out;
  }

  // Footer with the final weights checksum.
  std::uint64_t finish() {
    const auto sum = agent_->weights_checksum();
    if (log_ && !finished_) {
      write({{"type", "end"},
             {"steps", agent_->steps()},
             {"episodes", episodes_.size()},
             {"feedback_events", feedback_count_},
             {"final_checksum", hex64(sum)}});
      log_->flush();
    }
    finished_ = true;
    return sum;
  }

  void log_error(const std::string& what) {
    if (!log_) return;
    write({{"type", "error"}, {"t", next_t()}, {"message", what}});
    log_->flush();
  }

  void log_note(nlohmann::json j) {
    if (log_) write(j);
  }

 private:
  FeedbackOutcome apply(const Tensor& s, const Tensor& a, const FeedbackSignal& h, std::uint64_t bound_t, const char* bind) {
    if (!learning_) throw FeedbackError("session is in evaluation mode; feedback is not accepted");
    if (h.size() != a.size()) {
      throw FeedbackError("feedback has " + std::to_string(h.size()) + " dimensions, action has " + std::to_string(a.size()));
    }
    auto out = agent_->feedback_step(s, a, h);
    ++feedback_count_;
    last_h_ = h.h;
    step_h_ = h.h;
    if (log_) write({{"type", "feedback"}, {"t", bound_t}, {"bind", bind}, {"h", h.h}});
    return out;
  }

  void write(const nlohmann::json& j) { *log_ << j.dump() << '\n'; }

  ExperimentConfig cfg_;
  std::uint64_t seed_;
  Resources res_;
  std::unique_ptr<env::Environment> env_;
  std::uint64_t env_seed_;
  bool learning_;
  std::ostream* log_;
  std::unique_ptr<StateRepresenter> repr_;
  std::optional<Agent> agent_;
  env::Observation obs_;
  bool prepared_ = false;
  Tensor state_, action_;
  std::optional<std::pair<Tensor, Tensor>> prev_;
  bool prev_done_ = false;
  std::vector<int> step_h_, last_h_;
  std::uint64_t episode_ = 0;
  double episode_return_ = 0;
  std::size_t episode_steps_ = 0;
  std::vector<EpisodeRecord> episodes_;
  std::uint64_t feedback_count_ = 0;
  bool finished_ = false;
};

struct SessionResult {
  Agent agent;
  std::vector<EpisodeRecord> episodes;
  std::uint64_t steps = 0;
  std::uint64_t feedback_events = 0;
  std::uint64_t corrupted_events = 0;
  std::uint64_t final_checksum = 0;
};

// Simulated-teacher training run: observe, represent, act, advise, correct, step, periodic update.
inline SessionResult run_session(const ExperimentConfig& cfg, std::uint64_t seed, const Resources& res,
                                 std::ostream* log = nullptr) {
  SessionCore core(cfg, seed, res, std::nullopt, log);
  teacher::SimulatedTeacher teacher(make_teacher_policy(cfg, res), cfg.teacher_config(derive_seed(seed, kTeacher) ^ cfg.teacher.seed));
  std::uint64_t corrupted = 0;
  try {
    while (core.next_t() <= cfg.max_steps) {
      const std::uint64_t t = core.next_t();
      const Tensor& s = core.state();
      const Tensor& a = core.action();
      auto advice = teacher.advise({s, &core.environment()}, a, t);
      if (!advice.h.is_zero()) {
        core.feedback_current(advice.h);
        corrupted += advice.corrupted;
      }
      core.step();
    }
  } catch (const std::exception& e) {
    core.log_error(e.what());
    throw;
  }
  SessionResult out{core.agent(), core.episodes(), core.agent().steps(), core.feedback_count(), corrupted, core.finish()};
  return out;
}

}  // namespace dcoach::harness
