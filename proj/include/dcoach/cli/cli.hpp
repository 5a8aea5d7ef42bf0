#pragma once

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "dcoach/encoder/autoencoder.hpp"
#include "dcoach/harness/experiment.hpp"
#include "dcoach/harness/replay.hpp"
#include "dcoach/service/server.hpp"

namespace dcoach::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kFailure = 2 };

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline std::atomic<bool>& interrupted() {
  static std::atomic<bool> flag{false};
  return flag;
}

extern "C" inline void on_signal(int) { interrupted() = true; }

struct Common {
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::string> overrides;
};

inline void add_common(CLI::App* app, Common& c, bool with_threads) {
  app->add_option("--out", c.out, "Output path");
  app->add_option("--seed", c.seed, "Base seed");
  if (with_threads) app->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
  app->add_option("--set", c.overrides, "Config override key=value (repeatable)");
}

inline harness::ExperimentConfig resolve_config(const std::string& path, const std::string& profile_name,
                                                const std::vector<std::string>& overrides) {
  if (!path.empty() && !profile_name.empty()) throw UsageError("give either a config file or --profile, not both");
  if (!path.empty()) return harness::load_config(path, overrides);
  if (profile_name.empty()) throw UsageError("a config file or --profile is required");
  return harness::parse_config_string(harness::config_to_string(harness::profile(profile_name)), overrides);
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  os << text;
}

inline std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace detail

// Parses argv and routes to the owning module. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Interactive policy learning from corrective feedback", "dcoach"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", DCOACH_VERSION);
  int verbose = 0;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "More logging (repeatable)");
  app.add_flag("-q,--quiet", quiet, "Only errors");

  detail::Common common;
  std::function<void()> action;

  // collect
  auto* collect = app.add_subcommand("collect", "Record exploration frames for autoencoder training");
  std::string collect_env = "racer";
  std::size_t collect_steps = 5000;
  detail::add_common(collect, common, false);
  collect->add_option("--env", collect_env, "Pixel environment")->capture_default_str();
  collect->add_option("--steps", collect_steps, "Frames to record")->capture_default_str();
  collect->callback([&] {
    action = [&] {
      if (common.out.empty()) throw UsageError("collect needs --out FILE");
      auto env = env::make_environment(collect_env);
      auto data = encoder::collect_exploration_dataset(*env, collect_steps, common.seed.value_or(0));
      encoder::save_dataset(data, common.out);
      out << "collected " << data.size() << " frames from " << collect_env << " -> " << common.out << '\n';
    };
  });

  // train-ae
  auto* train = app.add_subcommand("train-ae", "Train the frame autoencoder");
  std::string dataset_path;
  encoder::AutoencoderTrainConfig ae_cfg;
  double held_out = 0.1;
  train->add_option("dataset", dataset_path, "Dataset written by 'collect'")->required();
  detail::add_common(train, common, false);
  train->add_option("--epochs", ae_cfg.epochs)->capture_default_str();
  train->add_option("--latent", ae_cfg.latent_dim)->capture_default_str();
  train->add_option("--lr", ae_cfg.learning_rate)->capture_default_str();
  train->add_option("--batch", ae_cfg.batch_size)->capture_default_str();
  train->add_option("--held-out", held_out, "Fraction kept for evaluation")->check(CLI::Range(0.0, 0.9))->capture_default_str();
  train->callback([&] {
    action = [&] {
      if (common.out.empty()) throw UsageError("train-ae needs --out DIR");
      ae_cfg.seed = common.seed.value_or(0);
      auto data = encoder::load_dataset(dataset_path);
      auto [fit, eval] = encoder::split_dataset(data, held_out, ae_cfg.seed);
      auto trained = encoder::train_autoencoder(fit, ae_cfg, [&](const encoder::EpochLoss& e) {
        log::info("epoch ", e.epoch, " loss ", e.loss);
      });
      const std::filesystem::path dir = common.out;
      trained.model.save(dir);
      std::ostringstream curve;
      curve << "epoch,loss\n";
      for (const auto& e : trained.curve) curve << e.epoch << ',' << e.loss << '\n';
      detail::write_text(dir / "training_curve.csv", curve.str());
      nlohmann::json report{{"frames_fit", fit.size()}, {"frames_held_out", eval.size()}};
      if (!eval.empty()) {
        report["held_out_mse"] = encoder::reconstruction_mse(trained.model, eval);
        report["mean_image_mse"] = encoder::mean_image_mse(fit, eval);
        out << "held-out MSE " << detail::fmt(report["held_out_mse"].get<double>(), 5) << " (mean-image baseline "
            << detail::fmt(report["mean_image_mse"].get<double>(), 5) << ")\n";
      }
      detail::write_text(dir / "report.json", report.dump(2) + "\n");
      out << "encoder saved to " << dir.string() << '\n';
    };
  });

  // experiment run | ablate
  auto* experiment = app.add_subcommand("experiment", "Batch simulated-teacher experiments");
  experiment->require_subcommand(1);
  std::string config_path, profile_name;
  bool write_logs = false;
  auto add_experiment_options = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "Experiment TOML");
    sub->add_option("--profile", profile_name, "Use a built-in profile instead of a file");
    sub->add_flag("--logs", write_logs, "Write per-repetition session logs");
    detail::add_common(sub, common, true);
  };
  auto prepare = [&]() {
    auto cfg = detail::resolve_config(config_path, profile_name, common.overrides);
    if (common.seed) cfg.reseed(*common.seed);
    harness::RunOptions opt;
    opt.threads = common.threads;
    opt.out_dir = common.out.empty() ? std::filesystem::path("runs") / cfg.name : std::filesystem::path(common.out);
    opt.write_logs = write_logs;
    opt.on_repetition = [&](std::size_t rep, const std::string& status) { log::info("repetition ", rep, ": ", status); };
    return std::pair{cfg, opt};
  };
  auto* exp_run = experiment->add_subcommand("run", "Run all repetitions of one configuration");
  add_experiment_options(exp_run);
  exp_run->callback([&] {
    action = [&] {
      auto [cfg, opt] = prepare();
      auto res = harness::load_resources(cfg);
      auto r = harness::run_experiment(cfg, res, opt);
      out << cfg.name << ": " << r.reps.size() - r.failed() << "/" << r.reps.size() << " repetitions, mean final return "
          << detail::fmt(r.mean_final_return(), 2) << " -> " << opt.out_dir.string() << '\n';
    };
  });
  auto* exp_ablate = experiment->add_subcommand("ablate", "Buffer on/off crossed with the P_err grid");
  add_experiment_options(exp_ablate);
  exp_ablate->callback([&] {
    action = [&] {
      auto [cfg, opt] = prepare();
      auto res = harness::load_resources(cfg);
      auto rep = harness::ablate_buffer(cfg, res, opt);
      for (const auto& c : rep.cells) out << c.name << ": mean final return " << detail::fmt(c.result.mean_final_return(), 2) << '\n';
      for (const auto& c : rep.checks) {
        out << (c.holds ? "holds " : "FAILS ") << c.better << " > " << c.worse << " (p = " << detail::fmt(c.welch.p, 6)
            << ")\n";
      }
      out << "report -> " << (opt.out_dir / "ablation.json").string() << '\n';
    };
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Greedy evaluation of a saved policy");
  std::string snapshot_path;
  std::size_t episodes = 0;
  eval->add_option("snapshot", snapshot_path, "Agent snapshot")->required();
  eval->add_option("--config", config_path, "Config naming env and encoder");
  eval->add_option("--profile", profile_name, "Built-in profile naming env and encoder");
  eval->add_option("--episodes", episodes, "Episodes (default: eval.episodes)");
  detail::add_common(eval, common, false);
  eval->callback([&] {
    action = [&] {
      auto agent = Agent::load(std::filesystem::path(snapshot_path));
      if (config_path.empty() && profile_name.empty()) profile_name = agent.action_dim() == 1 ? "cartpole-sim" : "racer-sim";
      auto cfg = detail::resolve_config(config_path, profile_name, common.overrides);
      auto res = harness::load_resources(cfg);
      const auto before = agent.weights_checksum();
      auto rep = harness::evaluate_policy(agent, cfg, res, episodes ? episodes : cfg.eval.episodes, common.seed.value_or(cfg.eval.seed));
      if (agent.weights_checksum() != before) throw std::logic_error("evaluation modified the policy");
      out << cfg.env << ": mean " << detail::fmt(rep.mean) << " +- " << detail::fmt(rep.std) << " over " << rep.returns.size()
          << " episodes (min " << detail::fmt(rep.min) << ", max " << detail::fmt(rep.max) << ")\n";
      if (!common.out.empty()) detail::write_text(common.out, harness::to_json(rep).dump(2) + "\n");
    };
  });

  // serve
  auto* serve = app.add_subcommand("serve", "Interactive feedback server");
  service::ServerOptions sopt;
  std::string session_id, mode;
  std::optional<double> fps;
  std::string initial_snapshot;
  serve->add_option("config", config_path, "Default session config");
  serve->add_option("--profile", profile_name, "Default session profile (default cartpole-human)");
  serve->add_option("--port", sopt.port)->capture_default_str();
  serve->add_option("--address", sopt.address)->capture_default_str();
  serve->add_option("--ui-dir", sopt.ui_dir, "Static UI bundle")->capture_default_str();
  serve->add_option("--session", session_id, "Start a session with this id right away");
  serve->add_option("--mode", mode, "Mode of that session: human, simulated-teacher or eval");
  serve->add_option("--snapshot", initial_snapshot, "Initial agent for that session");
  serve->add_option("--fps", fps, "Override session pacing")->check(CLI::PositiveNumber);
  detail::add_common(serve, common, false);
  serve->callback([&] {
    action = [&] {
      if (config_path.empty() && profile_name.empty()) profile_name = "cartpole-human";
      auto cfg = detail::resolve_config(config_path, profile_name, common.overrides);
      if (common.seed) cfg.session.seed = *common.seed;
      if (fps) cfg.session.fps = *fps;
      if (!mode.empty()) cfg.session.mode = mode;
      cfg.validate();
      service::SessionManager mgr({common.out.empty() ? "sessions" : common.out, cfg});
      service::Server server(mgr, sopt);
      if (!session_id.empty()) {
        service::StartMsg m;
        m.session = session_id;
        m.snapshot = initial_snapshot;
        mgr.start(m);
      }
      detail::interrupted() = false;
      std::signal(SIGINT, detail::on_signal);
      std::signal(SIGTERM, detail::on_signal);
      server.start();
      out << "serving on http://" << sopt.address << ':' << server.port() << " (ws: /ws, sessions: /api/sessions)" << std::endl;
      while (!detail::interrupted()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      mgr.stop_all();
      out << "stopped; session logs and snapshots under " << mgr.options().out_dir.string() << '\n';
    };
  });

  // replay
  auto* replay = app.add_subcommand("replay", "Re-execute a session log and verify the final weights");
  std::string log_path;
  replay->add_option("log", log_path, "Session log (JSON lines)")->required();
  detail::add_common(replay, common, false);
  int replay_code = kOk;
  replay->callback([&] {
    action = [&] {
      auto r = harness::replay_log(std::filesystem::path(log_path));
      out << "replayed " << r.steps << " steps, " << r.feedback_events << " feedback events, final checksum "
          << hex64(r.final_checksum);
      if (!r.logged_checksum) {
        out << " (log has no footer; nothing to compare)\n";
      } else if (r.matches()) {
        out << " matches the log\n";
      } else {
        out << " DIFFERS from the logged " << hex64(*r.logged_checksum) << '\n';
        replay_code = kFailure;
      }
      if (!common.out.empty()) r.agent->save(std::filesystem::path(common.out));
    };
  });

  // profiles
  auto* profiles = app.add_subcommand("profiles", "List built-in profiles or print one as TOML");
  std::string show;
  profiles->add_option("name", show, "Profile to print");
  profiles->callback([&] {
    action = [&] {
      if (show.empty()) {
        for (const auto& [name, cfg] : harness::default_profiles()) out << name << '\n';
      } else {
        out << harness::config_to_string(harness::profile(show));
      }
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion& e) {
    out << DCOACH_VERSION << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }
  log::set_level(quiet ? log::Level::error : verbose >= 2 ? log::Level::debug : verbose == 1 ? log::Level::info : log::Level::warning);
  try {
    if (action) action();
    return replay_code;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const harness::ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace dcoach::cli
