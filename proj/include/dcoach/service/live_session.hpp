#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "dcoach/env/registry.hpp"
#include "dcoach/harness/session.hpp"
#include "dcoach/service/protocol.hpp"
#include "dcoach/service/queue.hpp"

namespace dcoach::service {

struct SessionDescriptor {
  std::string id;
  harness::ExperimentConfig config;  // session.mode, session.fps and session.seed are used
  std::filesystem::path out_dir;     // log and snapshot go to out_dir/<id>/
  std::filesystem::path initial_snapshot;
  std::uint64_t max_steps = 0;  // steps in this session; 0 runs until stopped
  bool paced = true;            // false steps as fast as possible (batch-style sessions, tests)
};

struct StopResult {
  bool already_stopped = false;
  std::filesystem::path snapshot, log;
  std::uint64_t steps = 0;
  std::string error;  // non-empty when the loop died
};

struct FeedbackStats {
  std::uint64_t received = 0, applied = 0, superseded = 0, ignored = 0;
  std::uint64_t dropped() const { return superseded + ignored; }
};

// One paced training loop. The loop thread is the only mutator of agent and environment; feedback
// arrives through a coalescing inbox and frames leave through per-consumer latest-wins slots.
class LiveSession {
 public:
  using AckFn = std::function<void(const Ack&)>;
  using FrameSlot = LatestSlot<FramePacket>;

  explicit LiveSession(SessionDescriptor d) : desc_(std::move(d)) {
    const auto& cfg = desc_.config;
    mode_ = cfg.session.mode;
    res_ = harness::load_resources(cfg);
    fps_ = cfg.session.fps > 0 ? cfg.session.fps : env::make_environment(cfg.env)->fps();
    dir_ = desc_.out_dir / desc_.id;
    std::filesystem::create_directories(dir_);
    log_path_ = dir_ / "session.jsonl";
    snapshot_path_ = dir_ / "snapshot.dcsn";
    log_.open(log_path_, std::ios::trunc);
    if (!log_) throw std::runtime_error("cannot open session log '" + log_path_.string() + "'");
    std::optional<Agent> initial;
    nlohmann::json extra{{"session", desc_.id}, {"mode", mode_}, {"fps", fps_}};
    if (!desc_.initial_snapshot.empty()) {
      initial.emplace(Agent::load(desc_.initial_snapshot));
      extra["initial_snapshot"] = std::filesystem::absolute(desc_.initial_snapshot).string();
    }
    core_ = std::make_unique<harness::SessionCore>(cfg, cfg.session.seed, res_, std::move(initial), &log_, extra, mode_ != "eval");
    if (mode_ == "simulated-teacher") {
      teacher_.emplace(harness::make_teacher_policy(cfg, res_),
                       cfg.teacher_config(derive_seed(cfg.session.seed, harness::kTeacher) ^ cfg.teacher.seed));
    }
    action_dim_ = core_->environment().action_dim();
    initial_steps_ = core_->agent().steps();
    correction_ = cfg.agent_config().correction;
    encoder_checksum_ = res_.encoder ? res_.encoder->encoder_checksum() : 0;
  }

  ~LiveSession() { stop(); }
  LiveSession(const LiveSession&) = delete;
  LiveSession& operator=(const LiveSession&) = delete;

  const std::string& id() const { return desc_.id; }
  const std::string& mode() const { return mode_; }
  double fps() const { return fps_; }
  const std::filesystem::path& log_path() const { return log_path_; }
  const std::filesystem::path& snapshot_path() const { return snapshot_path_; }
  bool running() const { return running_.load(); }
  std::uint64_t t() const { return t_.load(); }
  std::uint64_t overruns() const { return overruns_.load(); }

  std::string error() const {
    std::lock_guard lock(stats_mu_);
    return error_;
  }

  FeedbackStats feedback_stats() const {
    std::lock_guard lock(stats_mu_);
    return stats_;
  }

  // Runs n unpaced iterations on the calling thread; only valid while the loop thread is not running.
  void run_steps(std::size_t n) {
    std::lock_guard lock(control_mu_);
    if (started_ || stopped_) throw ProtocolError("already-started", "run_steps needs a session that was never started");
    manual_ = true;
    for (std::size_t i = 0; i < n; ++i) iterate();
  }

  void start() {
    std::lock_guard lock(control_mu_);
    if (started_) throw ProtocolError("already-started", "session '" + desc_.id + "' was already started");
    started_ = true;
    running_ = true;
    loop_ = std::thread([this] { loop(); });
  }

  // Validates and queues a human correction. The ack arrives from the loop thread once the event
  // is bound (or dropped) at the next step boundary.
  void submit_feedback(const FeedbackMsg& m, AckFn on_ack) {
    const auto received = now_ms();
    if (mode_ == "eval") throw ProtocolError("eval-mode", "session '" + desc_.id + "' is in evaluation mode; feedback is not accepted");
    if (mode_ != "human") throw ProtocolError("not-human-mode", "session '" + desc_.id + "' is driven by the simulated teacher");
    if (!running_ && !manual_) throw ProtocolError("not-running", "session '" + desc_.id + "' is not running");
    FeedbackSignal h;
    try {
      if (m.key) {
        h = map_coupled(*m.key, correction_);
      } else {
        h = FeedbackSignal(*m.h);
      }
    } catch (const FeedbackError& e) {
      throw ProtocolError(m.key ? "unknown-key" : "bad-feedback", e.what());
    }
    if (h.size() != action_dim_) {
      throw ProtocolError("bad-feedback", "feedback has " + std::to_string(h.size()) + " dimensions, action has " +
                                              std::to_string(action_dim_));
    }
    {
      std::lock_guard lock(stats_mu_);
      ++stats_.received;
    }
    inbox_.push({std::move(h), m.client_ts, received, std::move(on_ack)});
  }

  std::shared_ptr<FrameSlot> subscribe() {
    auto slot = std::make_shared<FrameSlot>();
    std::lock_guard lock(slots_mu_);
    slots_.push_back(slot);
    return slot;
  }

  void unsubscribe(const std::shared_ptr<FrameSlot>& slot) {
    std::lock_guard lock(slots_mu_);
    std::erase(slots_, slot);
  }

  std::size_t subscribers() const {
    std::lock_guard lock(slots_mu_);
    return slots_.size();
  }

  // Halts the loop at a step boundary, then persists snapshot and log.
  StopResult stop() {
    std::lock_guard lock(control_mu_);
    if (stopped_) return {true, snapshot_path_, log_path_, final_steps_, error()};
    stop_requested_ = true;
    if (loop_.joinable()) loop_.join();
    if (!started_) finalize();
    stopped_ = true;
    running_ = false;
    std::lock_guard slots_lock(slots_mu_);
    for (auto& s : slots_) s->close();
    return {false, snapshot_path_, log_path_, final_steps_, error()};
  }

  // Blocks until the loop ends by itself (max_steps or failure) or the timeout elapses.
  bool wait_finished(std::chrono::milliseconds timeout) {
    std::unique_lock lock(done_mu_);
    return done_cv_.wait_for(lock, timeout, [&] { return loop_done_; });
  }

  nlohmann::json describe() const {
    const auto fs = feedback_stats();
    return {{"id", desc_.id},
            {"env", desc_.config.env},
            {"mode", mode_},
            {"fps", fps_},
            {"coupled_map", desc_.config.agent.coupled_map},
            {"correction_mode", desc_.config.agent.mode},
            {"running", running_.load()},
            {"t", t_.load()},
            {"episode", episode_.load()},
            {"subscribers", subscribers()},
            {"overruns", overruns_.load()},
            {"feedback", {{"received", fs.received}, {"applied", fs.applied}, {"superseded", fs.superseded},
                          {"ignored", fs.ignored}, {"dropped", fs.dropped()}}},
            {"error", error()}};
  }

  // Frozen-encoder check: both stay equal for the life of the session (0 for vector environments).
  std::uint64_t encoder_checksum_at_start() const { return encoder_checksum_; }
  std::uint64_t encoder_checksum_now() const { return res_.encoder ? res_.encoder->encoder_checksum() : 0; }

 private:
  struct Pending {
    FeedbackSignal h;
    std::int64_t client_ts, server_ts;
    AckFn on_ack;
  };

  void ack(const Pending& p, const char* status, std::optional<std::uint64_t> bound) {
    if (p.on_ack) p.on_ack(Ack{desc_.id, status, bound, p.client_ts, p.server_ts});
  }

  std::vector<int> drain_feedback() {
    auto d = inbox_.drain();
    for (const auto& old : d.superseded) {
      {
        std::lock_guard lock(stats_mu_);
        ++stats_.superseded;
      }
      core_->log_note({{"type", "note"}, {"event", "feedback-superseded"}, {"h", old.h.h}, {"server_ts", old.server_ts}});
      ack(old, "superseded", std::nullopt);
    }
    if (!d.latest) return {};
    const auto& p = *d.latest;
    if (!core_->has_previous() || core_->previous_ended_episode()) {
      {
        std::lock_guard lock(stats_mu_);
        ++stats_.ignored;
      }
      core_->log_note({{"type", "note"}, {"event", "feedback-ignored-between-episodes"}, {"h", p.h.h}});
      ack(p, "ignored-between-episodes", std::nullopt);
      return {};
    }
    if (p.h.is_zero()) {
      std::lock_guard lock(stats_mu_);
      ++stats_.applied;  // a no-op correction still counts as handled
    } else {
      core_->feedback_previous(p.h);
      std::lock_guard lock(stats_mu_);
      ++stats_.applied;
    }
    ack(p, "applied", core_->next_t() - 1);
    return p.h.h;
  }

  void publish(const harness::StepOutcome& out, const Tensor& action, std::vector<int> h) {
    auto frame = core_->environment().render_frame();
    FramePacket p;
    p.session = desc_.id;
    p.t = out.t;
    p.height = frame.shape()[0];
    p.width = frame.shape()[1];
    p.pixels = env::quantize_frame(frame);
    p.action.assign(action.begin(), action.end());
    p.episode_return = out.done ? core_->episodes().back().ret : core_->episode_return();
    p.episode = out.episode;
    p.done = out.done;
    p.buffer_fill = core_->agent().buffer().size();
    p.h_applied = std::move(h);
    std::vector<std::shared_ptr<FrameSlot>> slots;
    {
      std::lock_guard lock(slots_mu_);
      slots = slots_;
    }
    for (auto& s : slots) s->put(p);
  }

  harness::StepOutcome iterate() {
    std::vector<int> applied;
    if (mode_ == "human") {
      applied = drain_feedback();
    } else if (teacher_) {
      const Tensor& s = core_->state();
      const Tensor& a = core_->action();
      auto advice = teacher_->advise({s, &core_->environment()}, a, core_->next_t());
      if (!advice.h.is_zero()) {
        core_->feedback_current(advice.h);
        applied = advice.h.h;
      }
    }
    const Tensor action = core_->action();
    const auto out = core_->step();
    t_ = out.t;
    episode_ = core_->episode();
    publish(out, action, std::move(applied));
    return out;
  }

  void loop() {
    using clock = std::chrono::steady_clock;
    const auto interval = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / fps_));
    auto deadline = clock::now();
    try {
      while (!stop_requested_) {
        if (desc_.max_steps && core_->agent().steps() - initial_steps_ >= desc_.max_steps) break;
        const auto out = iterate();
        if (!desc_.paced) continue;
        deadline += interval;
        const auto now = clock::now();
        if (now > deadline + interval) {
          ++overruns_;
          log::debug("session ", desc_.id, " overran its step deadline at t=", out.t);
          deadline = now;
        } else {
          std::this_thread::sleep_until(deadline);
        }
      }
    } catch (const std::exception& e) {
      {
        std::lock_guard lock(stats_mu_);
        error_ = e.what();
      }
      core_->log_error(e.what());
      log::error("session ", desc_.id, " failed: ", e.what());
    }
    finalize();
    running_ = false;
    {
      std::lock_guard lock(done_mu_);
      loop_done_ = true;
    }
    done_cv_.notify_all();
  }

  void finalize() {
    if (finalized_) return;
    finalized_ = true;
    core_->agent().save(snapshot_path_);
    final_steps_ = core_->agent().steps();
    core_->finish();
    log_.flush();
  }

  SessionDescriptor desc_;
  std::string mode_;
  harness::Resources res_;
  double fps_ = 0;
  std::filesystem::path dir_, log_path_, snapshot_path_;
  std::ofstream log_;
  std::unique_ptr<harness::SessionCore> core_;
  std::optional<teacher::SimulatedTeacher> teacher_;
  std::size_t action_dim_ = 0;
  std::uint64_t initial_steps_ = 0;
  CorrectionConfig correction_;
  std::uint64_t encoder_checksum_ = 0;

  CoalescingQueue<Pending> inbox_;
  mutable std::mutex slots_mu_;
  std::vector<std::shared_ptr<FrameSlot>> slots_;
  mutable std::mutex stats_mu_;
  FeedbackStats stats_;

  std::mutex control_mu_;
  std::thread loop_;
  bool started_ = false, stopped_ = false, finalized_ = false;
  std::atomic<bool> manual_{false};
  std::atomic<bool> stop_requested_{false}, running_{false};
  std::atomic<std::uint64_t> t_{0}, episode_{0}, overruns_{0};
  std::uint64_t final_steps_ = 0;
  std::string error_;
  std::mutex done_mu_;
  std::condition_variable done_cv_;
  bool loop_done_ = false;
};

struct ManagerOptions {
  std::filesystem::path out_dir = "sessions";
  harness::ExperimentConfig base = harness::profile("cartpole-human");
};

// Registry of live sessions keyed by id.
class SessionManager {
 public:
  explicit SessionManager(ManagerOptions opt = {}) : opt_(std::move(opt)) {}
  ~SessionManager() { stop_all(); }

  harness::ExperimentConfig resolve(const StartMsg& m) const {
    auto base = m.profile.empty() ? opt_.base : harness::profile(m.profile);
    auto cfg = harness::parse_config_string(harness::config_to_string(base), m.overrides);
    if (!m.mode.empty()) cfg.session.mode = m.mode;
    if (m.fps) cfg.session.fps = *m.fps;
    cfg.validate();
    return cfg;
  }

  std::shared_ptr<LiveSession> start(const StartMsg& m, std::uint64_t max_steps = 0) {
    harness::ExperimentConfig cfg;
    try {
      cfg = resolve(m);
    } catch (const std::invalid_argument& e) {
      throw ProtocolError("bad-config", e.what());
    }
    return start(SessionDescriptor{m.session, cfg, opt_.out_dir, m.snapshot, max_steps, max_steps == 0});
  }

  std::shared_ptr<LiveSession> start(SessionDescriptor d) {
    if (d.id.empty() || d.id.find_first_of("/\\.") != std::string::npos) {
      throw ProtocolError("bad-request", "session id '" + d.id + "' must be non-empty and contain no '/', '\\' or '.'");
    }
    const std::string id = d.id;
    {
      std::lock_guard lock(mu_);
      if (sessions_.count(d.id)) throw ProtocolError("duplicate-session", "session '" + d.id + "' already exists");
      sessions_[d.id] = nullptr;  // reserve the id while constructing
    }
    std::shared_ptr<LiveSession> s;
    try {
      s = std::make_shared<LiveSession>(std::move(d));
      s->start();
    } catch (const ProtocolError&) {
      release(id);
      throw;
    } catch (const std::exception& e) {
      release(id);
      throw ProtocolError("start-failed", e.what());
    }
    std::lock_guard lock(mu_);
    sessions_[s->id()] = s;
    return s;
  }

  std::shared_ptr<LiveSession> get(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end() || !it->second) throw ProtocolError("unknown-session", "no session '" + id + "'");
    return it->second;
  }

  StopResult stop(const std::string& id) { return get(id)->stop(); }

  void stop_all() {
    std::vector<std::shared_ptr<LiveSession>> all;
    {
      std::lock_guard lock(mu_);
      for (auto& [k, v] : sessions_) {
        if (v) all.push_back(v);
      }
    }
    for (auto& s : all) s->stop();
  }

  nlohmann::json list() const {
    nlohmann::json arr = nlohmann::json::array();
    std::lock_guard lock(mu_);
    for (const auto& [k, v] : sessions_) {
      if (v) arr.push_back(v->describe());
    }
    return {{"v", kProtocolVersion}, {"sessions", arr}};
  }

  const ManagerOptions& options() const { return opt_; }

 private:
  void release(const std::string& id) {
    std::lock_guard lock(mu_);
    sessions_.erase(id);
  }

  ManagerOptions opt_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<LiveSession>> sessions_;
};

}  // namespace dcoach::service
