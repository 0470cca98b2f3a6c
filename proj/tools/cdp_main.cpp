// Command-line entry point: run, sweep, resume, eval, plot, label-serve.
#include <csignal>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cdp/harness.hpp"
#include "cdp/label_service.hpp"
#include "cdp/plots.hpp"

namespace fs = std::filesystem;
using namespace cdp;

namespace {

struct Overrides {
  std::string config_file;
  std::string run_id;
  std::optional<std::uint64_t> seed;
  std::string env;
  std::string mode;
  std::optional<double> beta;
  std::optional<int> epochs;
  std::optional<int> skill_steps;
  std::string label_mode;
  std::string input_space;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_file, "JSON run config (fields not given keep their defaults)");
  cmd->add_option("--run-id", o.run_id);
  cmd->add_option("--seed", o.seed);
  cmd->add_option("--env", o.env, "room_nav_2d | line_walker");
  cmd->add_option("--mode", o.mode, "smm_baseline | smm_prior | cdp_guided");
  cmd->add_option("--beta", o.beta, "preferred-region beta in [0, 1]");
  cmd->add_option("--epochs", o.epochs);
  cmd->add_option("--skill-steps", o.skill_steps);
  cmd->add_option("--labels", o.label_mode, "oracle | human | human_with_oracle_fallback");
  cmd->add_option("--input-space", o.input_space, "raw_state | preferred_latent");
}

RunConfig build_config(const Overrides& o) {
  RunConfig c;
  if (!o.config_file.empty()) c = load_config(o.config_file);
  if (!o.env.empty()) {
    const EnvName name = parse_env_name(o.env);
    if (name != c.env.env_name) c.env = name == EnvName::kRoomNav2D ? EnvConfig::room_nav_2d() : EnvConfig::line_walker();
  }
  if (!o.run_id.empty()) c.run_id = o.run_id;
  if (o.seed) c.seed = *o.seed;
  if (!o.mode.empty()) c.exploration.mode = parse_exploration_mode(o.mode);
  if (o.beta) c.exploration.beta_region = *o.beta;
  if (o.epochs) c.exploration.epochs = *o.epochs;
  if (o.skill_steps) c.skill_steps = *o.skill_steps;
  if (!o.label_mode.empty()) c.label_mode = parse_label_mode(o.label_mode);
  if (!o.input_space.empty()) c.codebook.input_space = parse_input_space(o.input_space);
  c.validate();
  return c;
}

void print_plots(const PlotResult& r) {
  for (const auto& p : r.written) fmt::print("  wrote {}\n", p.string());
  for (const auto& m : r.missing) fmt::print("  skipped {}\n", m);
}

LabelService* g_service = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-guided skill discovery experiments"};
  app.require_subcommand(1);
  std::string runs_root = default_runs_root().string();
  app.add_option("--runs-root", runs_root, "directory holding run directories (env CDP_RUNS_ROOT)");

  Overrides run_o;
  std::string stop_after;
  bool print_config = false;
  auto* run = app.add_subcommand("run", "run exploration, discovery and skill learning");
  add_overrides(run, run_o);
  run->add_option("--stop-after", stop_after, "exploration | discovery");
  run->add_flag("--print-config", print_config, "print the effective config and exit");

  Overrides sweep_o;
  std::vector<double> betas;
  auto* sweep = app.add_subcommand("sweep", "run the pipeline once per beta");
  add_overrides(sweep, sweep_o);
  sweep->add_option("--betas", betas, "beta values")->required()->delimiter(',');
  std::string sweep_stop;
  sweep->add_option("--stop-after", sweep_stop);

  std::string run_dir;
  auto* resume = app.add_subcommand("resume", "continue a run from its last completed stage");
  resume->add_option("run_dir", run_dir)->required();

  std::string eval_dir;
  int eval_episodes = 1;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "evaluate the trained skills of a run");
  eval->add_option("run_dir", eval_dir)->required();
  eval->add_option("--episodes", eval_episodes);
  eval->add_option("--seed", eval_seed);

  std::string plot_dir;
  auto* plot = app.add_subcommand("plot", "regenerate the plots of a run");
  plot->add_option("run_dir", plot_dir)->required();

  std::string serve_dir, address = "127.0.0.1";
  int port = 8765, queries = 20, segment = 25;
  double ttl = 600.0;
  auto* serve = app.add_subcommand("label-serve", "serve preference queries from a run's buffer over HTTP");
  serve->add_option("run_dir", serve_dir)->required();
  serve->add_option("--address", address);
  serve->add_option("--port", port);
  serve->add_option("--queries", queries);
  serve->add_option("--segment-length", segment);
  serve->add_option("--ttl", ttl, "seconds before an issued query expires");

  CLI11_PARSE(app, argc, argv);

  try {
    RunOptions opts;
    opts.runs_root = runs_root;
    if (*run) {
      const RunConfig cfg = build_config(run_o);
      if (print_config) {
        std::cout << nlohmann::json(cfg).dump(2) << '\n';
        return 0;
      }
      if (!stop_after.empty()) opts.stop_after = stop_after;
      const fs::path dir = run_pipeline(cfg, opts);
      const Manifest m = read_manifest(dir);
      fmt::print("{}: {} ({})\n", dir.string(), m.status, fmt::join(m.completed, ", "));
    } else if (*sweep) {
      if (!sweep_stop.empty()) opts.stop_after = sweep_stop;
      const SweepReport rep = beta_sweep(build_config(sweep_o), betas, opts);
      for (const auto& c : rep.cells) {
        fmt::print("beta {:g}: {} centroid-to-goal {:.4f} velocity variance {:.4f}{}\n", c.beta, c.ok ? "ok" : "FAILED",
                   c.mean_centroid_to_goal, c.velocity_variance, c.ok ? "" : " (" + c.error + ")");
      }
      fmt::print("table: {}\n", rep.table.string());
    } else if (*resume) {
      const fs::path dir = resume_run(run_dir, opts);
      fmt::print("{}: {}\n", dir.string(), read_manifest(dir).status);
    } else if (*eval) {
      const fs::path dir = eval_dir;
      const RunConfig cfg = load_config(dir / "config.json");
      const SkillSet skills = load_artifact(checkpoint_path(dir, cfg, "skills"), config_hash(cfg)).get<SkillSet>();
      Rng rng(eval_seed);
      const SkillEvalReport rep = evaluate_skills(skills, OracleReward::for_env(cfg.env), eval_episodes, rng);
      write_report_csv(rep, dir / "report.csv");
      write_trajectories(rep, cfg.env, dir / "trajectories.jsonl");
      for (const auto& r : rep.skills) {
        fmt::print("skill {}: final ({:.3f}, {:.3f}) centroid distance {:.3f} return {:.3f}\n", r.skill,
                   r.final_state_mean[0], r.final_state_mean[1], r.centroid_distance, r.oracle_return);
      }
      fmt::print("mean centroid-to-goal {:.4f}, velocity variance {:.4f}\n", rep.mean_centroid_to_goal,
                 rep.velocity_variance);
    } else if (*plot) {
      print_plots(make_plots(plot_dir));
    } else if (*serve) {
      const fs::path dir = serve_dir;
      const RunConfig cfg = load_config(dir / "config.json");
      const auto payload = load_artifact(checkpoint_path(dir, cfg, "exploration"), config_hash(cfg));
      const auto buffer = payload.at("buffer").get<ReplayBuffer>();
      Rng rng(cfg.seed);
      Rng model_rng(0);
      RewardModel model = payload.at("reward_model").is_null() ? RewardModel(cfg.env, cfg.reward_model, model_rng)
                                                               : payload.at("reward_model").get<RewardModel>();
      PreferenceDataset dataset(0.2, dir / "preferences.jsonl", false);
      LabelQueue queue(cfg.env, std::chrono::milliseconds(static_cast<long>(ttl * 1000)));
      for (auto& q : sample_queries(buffer, static_cast<std::size_t>(queries), QueryStrategy::kUniform, model,
                                    static_cast<std::size_t>(segment), rng)) {
        queue.enqueue(std::move(q));
      }
      LabelService service(queue, dataset);
      g_service = &service;
      std::signal(SIGINT, [](int) {
        if (g_service) g_service->stop();
      });
      fmt::print("serving {} queries on http://{}:{} (Ctrl-C to stop)\n", queries, address, port);
      service.run(address, port);
      fmt::print("labeled {}\n", queue.labeled());
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
