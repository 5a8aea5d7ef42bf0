#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <thread>

#include "dcoach/harness/curves.hpp"
#include "dcoach/harness/session.hpp"

#ifndef DCOACH_VERSION
#define DCOACH_VERSION "dev"
#endif

namespace dcoach::harness {

class ExperimentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunOptions {
  std::size_t threads = 1;
  std::filesystem::path out_dir;  // empty: nothing written
  bool write_logs = false;        // per-repetition JSON-lines session logs
  bool write_snapshots = true;
  std::function<void(std::size_t rep, const std::string& status)> on_repetition;
};

struct RepetitionResult {
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  RepetitionSeries series;
  std::vector<double> grid;
  double final_return = 0;
  std::uint64_t feedback_events = 0;
  std::uint64_t corrupted_events = 0;
  std::uint64_t final_checksum = 0;
  std::optional<Agent> agent;
};

struct ExperimentResult {
  ExperimentConfig config;
  double fps = 0;
  std::size_t horizon_s = 0;
  std::vector<RepetitionResult> reps;  // in repetition order, failed ones included
  AggregateCurve curve;

  std::vector<double> final_returns() const {
    std::vector<double> out;
    for (const auto& r : reps) {
      if (r.ok) out.push_back(r.final_return);
    }
    return out;
  }
  double mean_final_return() const { return sample_stats(final_returns()).mean; }
  std::size_t failed() const {
    return static_cast<std::size_t>(std::count_if(reps.begin(), reps.end(), [](const auto& r) { return !r.ok; }));
  }
};

inline double env_fps(const std::string& id) { return env::make_environment(id)->fps(); }

inline RepetitionSeries to_series(const std::vector<EpisodeRecord>& episodes, double fps) {
  RepetitionSeries s;
  s.reserve(episodes.size());
  for (const auto& e : episodes) s.push_back({static_cast<double>(e.end_t) / fps, e.ret});
  return s;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline std::string rep_name(std::size_t rep) {
  std::ostringstream os;
  os << "rep_" << std::setw(3) << std::setfill('0') << rep;
  return os.str();
}

inline nlohmann::json run_manifest(const ExperimentConfig& cfg, const Resources& res, const std::string& kind) {
  nlohmann::json m{{"dcoach_version", DCOACH_VERSION},
                   {"kind", kind},
                   {"config", config_to_string(cfg)},
                   {"seeds", cfg.seeds},
                   {"env", cfg.env}};
  if (res.encoder) {
    m["encoder_path"] = res.encoder_path;
    m["encoder_checksum"] = hex64(res.encoder->encoder_checksum());
  }
  return m;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw ExperimentError("cannot write '" + path.string() + "'");
  os << j.dump(2) << '\n';
}

inline void write_curves_csv(std::ostream& os, const ExperimentResult& r) {
  os << "time_s,rep_id,return\n";
  os << std::setprecision(10);
  for (const auto& rep : r.reps) {
    if (!rep.ok) continue;
    for (const auto& p : rep.series) os << p.time_s << ',' << rep.rep << ',' << p.ret << '\n';
  }
}

inline nlohmann::json summary_json(const ExperimentResult& r) {
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& rep : r.reps) {
    nlohmann::json j{{"rep_id", rep.rep}, {"seed", rep.seed}, {"ok", rep.ok}};
    if (rep.ok) {
      j["final_return"] = rep.final_return;
      j["episodes"] = rep.series.size();
      j["feedback_events"] = rep.feedback_events;
      j["corrupted_events"] = rep.corrupted_events;
      j["final_checksum"] = hex64(rep.final_checksum);
    } else {
      j["error"] = rep.error;
    }
    reps.push_back(j);
  }
  const auto fr = sample_stats(r.final_returns());
  double peak = 0;
  for (double m : r.curve.mean) peak = std::max(peak, m);
  return {{"name", r.config.name},
          {"env", r.config.env},
          {"fps", r.fps},
          {"max_steps", r.config.max_steps},
          {"horizon_s", r.horizon_s},
          {"final_fraction", r.config.final_fraction},
          {"repetitions", r.reps.size()},
          {"failed", r.failed()},
          {"mean_final_return", fr.mean},
          {"std_final_return", std::sqrt(fr.variance)},
          {"peak_mean_return", peak},
          {"reps", reps}};
}

inline void write_experiment(const ExperimentResult& r, const Resources& res, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "curves.csv");
    if (!os) throw ExperimentError("cannot write '" + (dir / "curves.csv").string() + "'");
    write_curves_csv(os, r);
  }
  {
    std::ofstream os(dir / "aggregate.dat");
    write_aggregate_dat(os, r.curve);
  }
  write_json(dir / "summary.json", summary_json(r));
  write_json(dir / "manifest.json", run_manifest(r.config, res, "experiment"));
}

// All repetitions of one configuration; failures are excluded with a warning, more than 10% failing is fatal.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const Resources& res, const RunOptions& opt = {}) {
  cfg.validate();
  ExperimentResult out;
  out.config = cfg;
  out.fps = env_fps(cfg.env);
  out.horizon_s = static_cast<std::size_t>(std::floor(static_cast<double>(cfg.max_steps) / out.fps));
  out.reps.resize(cfg.repetitions);
  if (!opt.out_dir.empty()) {
    if (opt.write_logs) std::filesystem::create_directories(opt.out_dir / "logs");
    if (opt.write_snapshots) std::filesystem::create_directories(opt.out_dir / "snapshots");
  }
  std::mutex report_mu;
  parallel_for(cfg.repetitions, opt.threads, [&](std::size_t i) {
    auto& rep = out.reps[i];
    rep.rep = i;
    rep.seed = cfg.seeds[i];
    try {
      std::ofstream log;
      if (!opt.out_dir.empty() && opt.write_logs) {
        log.open(opt.out_dir / "logs" / (rep_name(i) + ".jsonl"));
        if (!log) throw ExperimentError("cannot open session log for " + rep_name(i));
      }
      auto r = run_session(cfg, rep.seed, res, log.is_open() ? &log : nullptr);
      rep.series = to_series(r.episodes, out.fps);
      rep.grid = resample_locf(rep.series, out.horizon_s);
      rep.final_return = final_return(rep.grid, cfg.final_fraction);
      rep.feedback_events = r.feedback_events;
      rep.corrupted_events = r.corrupted_events;
      rep.final_checksum = r.final_checksum;
      if (!opt.out_dir.empty() && opt.write_snapshots) r.agent.save(opt.out_dir / "snapshots" / (rep_name(i) + ".dcsn"));
      rep.agent.emplace(std::move(r.agent));
      rep.ok = true;
    } catch (const std::exception& e) {
      rep.error = e.what();
      log::warn("repetition ", i, " (seed ", rep.seed, ") failed: ", e.what());
    }
    if (opt.on_repetition) {
      std::lock_guard lock(report_mu);
      opt.on_repetition(i, rep.ok ? "ok" : "failed: " + rep.error);
    }
  });
  const std::size_t failed = out.failed();
  if (failed * 10 > cfg.repetitions) {
    throw ExperimentError(std::to_string(failed) + " of " + std::to_string(cfg.repetitions) +
                          " repetitions failed (limit 10%); first error: " +
                          std::find_if(out.reps.begin(), out.reps.end(), [](const auto& r) { return !r.ok; })->error);
  }
  std::vector<std::vector<double>> grids;
  for (const auto& r : out.reps) {
    if (r.ok) grids.push_back(r.grid);
  }
  out.curve = aggregate(grids);
  if (!opt.out_dir.empty()) write_experiment(out, res, opt.out_dir);
  return out;
}

struct OrderingCheck {
  std::string better, worse;
  double mean_better = 0, mean_worse = 0;
  WelchResult welch;
  bool holds = false;  // mean ordering and p < 0.05
};

struct AblationCell {
  double p_err = 0;
  bool buffer = true;
  std::string name;
  ExperimentResult result;
};

struct AblationReport {
  std::vector<AblationCell> cells;
  std::vector<OrderingCheck> checks;
  bool all_hold() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.holds; });
  }
};

inline std::string cell_name(double p_err, bool buffer) {
  std::ostringstream os;
  os << "buffer-" << (buffer ? "on" : "off") << "_perr-" << std::lround(p_err * 100);
  return os.str();
}

inline OrderingCheck check_ordering(const AblationCell& better, const AblationCell& worse) {
  OrderingCheck c;
  c.better = better.name;
  c.worse = worse.name;
  c.mean_better = better.result.mean_final_return();
  c.mean_worse = worse.result.mean_final_return();
  c.welch = welch_greater(better.result.final_returns(), worse.result.final_returns());
  c.holds = c.mean_better > c.mean_worse && c.welch.p < 0.05;
  return c;
}

inline nlohmann::json report_json(const AblationReport& r) {
  nlohmann::json cells = nlohmann::json::array(), checks = nlohmann::json::array();
  for (const auto& c : r.cells) {
    const auto s = sample_stats(c.result.final_returns());
    cells.push_back({{"name", c.name}, {"p_err", c.p_err}, {"buffer", c.buffer}, {"mean_final_return", s.mean},
                     {"std_final_return", std::sqrt(s.variance)}, {"completed", s.n}});
  }
  for (const auto& c : r.checks) {
    checks.push_back({{"better", c.better}, {"worse", c.worse}, {"mean_better", c.mean_better},
                      {"mean_worse", c.mean_worse}, {"welch_t", c.welch.t}, {"welch_df", c.welch.df},
                      {"p_value", c.welch.p}, {"holds", c.holds}});
  }
  return {{"cells", cells}, {"checks", checks}, {"all_hold", r.all_hold()}};
}

// Buffer on/off crossed with the P_err grid; checks on > off at each P_err and on@max(P_err) > off@min(P_err).
inline AblationReport ablate_buffer(const ExperimentConfig& base, const Resources& res, const RunOptions& opt = {}) {
  base.validate();
  if (base.ablation.p_err.empty() || base.ablation.buffer.empty()) throw ConfigError("ablation grid is empty");
  AblationReport report;
  for (bool buffer : base.ablation.buffer) {
    for (double p : base.ablation.p_err) {
      AblationCell cell;
      cell.p_err = p;
      cell.buffer = buffer;
      cell.name = cell_name(p, buffer);
      auto cfg = base;
      cfg.name = base.name + "/" + cell.name;
      cfg.teacher.p_err = p;
      cfg.agent.buffer = buffer;
      auto cell_opt = opt;
      if (!opt.out_dir.empty()) cell_opt.out_dir = opt.out_dir / cell.name;
      cell.result = run_experiment(cfg, res, cell_opt);
      report.cells.push_back(std::move(cell));
    }
  }
  auto find = [&](double p, bool buffer) -> const AblationCell* {
    for (const auto& c : report.cells) {
      if (c.p_err == p && c.buffer == buffer) return &c;
    }
    return nullptr;
  };
  for (double p : base.ablation.p_err) {
    const auto *on = find(p, true), *off = find(p, false);
    if (on && off) report.checks.push_back(check_ordering(*on, *off));
  }
  const auto [lo, hi] = std::minmax_element(base.ablation.p_err.begin(), base.ablation.p_err.end());
  if (*lo != *hi) {
    const auto *on = find(*hi, true), *off = find(*lo, false);
    if (on && off) report.checks.push_back(check_ordering(*on, *off));
  }
  if (!opt.out_dir.empty()) {
    write_json(opt.out_dir / "ablation.json", report_json(report));
    write_json(opt.out_dir / "manifest.json", run_manifest(base, res, "ablation"));
  }
  return report;
}

struct EvalReport {
  std::vector<double> returns;
  double mean = 0, std = 0, min = 0, max = 0;
};

// Greedy rollouts on freshly seeded environments; the agent is never updated.
inline EvalReport evaluate_policy(const Agent& agent, const ExperimentConfig& cfg, const Resources& res, std::size_t episodes,
                                  std::uint64_t seed) {
  if (episodes == 0) throw std::invalid_argument("evaluate_policy needs at least one episode");
  auto env = env::make_environment(cfg.env);
  env->reset(derive_seed(seed, 0));
  StateRepresenter repr(*env, res.encoder);
  if (repr.shape(*env) != agent.state_shape()) {
    throw ConfigError("snapshot expects state shape " + shape_str(agent.state_shape()) + " but " + cfg.env + " provides " +
                      shape_str(repr.shape(*env)));
  }
  EvalReport r;
  for (std::size_t k = 0; k < episodes; ++k) {
    auto obs = env->reset(derive_seed(seed, k));
    double ret = 0;
    for (;;) {
      auto s = env->step(agent.act(repr(obs)));
      ret += s.reward;
      if (s.done) break;
      obs = std::move(s.observation);
    }
    r.returns.push_back(ret);
  }
  const auto st = sample_stats(r.returns);
  r.mean = st.mean;
  r.std = std::sqrt(st.variance);
  r.min = *std::min_element(r.returns.begin(), r.returns.end());
  r.max = *std::max_element(r.returns.begin(), r.returns.end());
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"episodes", r.returns.size()}, {"mean", r.mean}, {"std", r.std}, {"min", r.min}, {"max", r.max}, {"returns", r.returns}};
}

}  // namespace dcoach::harness
