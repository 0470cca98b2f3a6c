#include "cdp/harness.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "cdp/label_service.hpp"
#include "cdp/metrics.hpp"
#include "cdp/plots.hpp"

namespace cdp {

namespace fs = std::filesystem;

fs::path default_runs_root() {
  if (const char* env = std::getenv("CDP_RUNS_ROOT"); env && *env) return env;
  return "runs";
}

bool Manifest::done(const std::string& stage) const {
  return std::find(completed.begin(), completed.end(), stage) != completed.end();
}

void to_json(nlohmann::json& j, const Manifest& m) {
  j = nlohmann::json{{"run_id", m.run_id},
                     {"config_hash", m.config_hash},
                     {"format_version", m.format_version},
                     {"completed", m.completed},
                     {"metrics_rows", m.metrics_rows},
                     {"stage_seeds", m.stage_seeds},
                     {"status", m.status},
                     {"failed_stage", m.failed_stage ? nlohmann::json(*m.failed_stage) : nlohmann::json(nullptr)},
                     {"error", m.error ? nlohmann::json(*m.error) : nlohmann::json(nullptr)},
                     {"scatter_stride", m.scatter_stride}};
}

void from_json(const nlohmann::json& j, Manifest& m) {
  m.run_id = j.at("run_id");
  m.config_hash = j.at("config_hash");
  m.format_version = j.at("format_version");
  m.completed = j.at("completed").get<std::vector<std::string>>();
  m.metrics_rows = j.at("metrics_rows");
  m.stage_seeds = j.at("stage_seeds").get<std::map<std::string, std::uint64_t>>();
  m.status = j.at("status");
  m.failed_stage = j.at("failed_stage").is_null() ? std::nullopt : std::optional<std::string>(j.at("failed_stage"));
  m.error = j.at("error").is_null() ? std::nullopt : std::optional<std::string>(j.at("error"));
  m.scatter_stride = j.value("scatter_stride", std::size_t{1});
}

Manifest read_manifest(const fs::path& run_dir) {
  std::ifstream in(run_dir / "manifest.json");
  if (!in) throw InputError("no manifest in " + run_dir.string());
  return nlohmann::json::parse(in).get<Manifest>();
}

namespace {

void write_manifest(const fs::path& run_dir, const Manifest& m) {
  const fs::path tmp = run_dir / "manifest.json.tmp";
  std::ofstream(tmp) << nlohmann::json(m).dump(2) << '\n';
  fs::rename(tmp, run_dir / "manifest.json");
}

}  // namespace

void save_artifact(const fs::path& file, const std::string& config_hash, const nlohmann::json& payload) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const nlohmann::json envelope{{"format_version", kArtifactFormatVersion}, {"config_hash", config_hash}, {"payload", payload}};
  const std::vector<std::uint8_t> bytes = nlohmann::json::to_cbor(envelope);
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  fs::rename(tmp, file);
}

nlohmann::json load_artifact(const fs::path& file, const std::string& expected_hash) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError("missing artifact " + file.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  nlohmann::json envelope;
  try {
    envelope = nlohmann::json::from_cbor(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("corrupt artifact " + file.string() + ": " + e.what());
  }
  if (envelope.value("format_version", -1) != kArtifactFormatVersion) {
    throw StateError("artifact " + file.string() + " has an unsupported format version");
  }
  if (envelope.value("config_hash", std::string()) != expected_hash) {
    throw StateError("artifact " + file.string() + " was written under a different config");
  }
  return std::move(envelope.at("payload"));
}

std::vector<std::string> metrics_columns(int num_skills) {
  std::vector<std::string> cols = {"oracle_return",  "reward_total",     "reward_target",   "reward_novelty",
                                   "reward_diversity", "critic_loss",    "label_count",     "buffer_size",
                                   "region_size",    "region_threshold", "vq_loss",         "vq_mse",
                                   "rm_version_a",   "rm_version_b",     "cb_version_c",    "cb_version_d"};
  for (int k = 0; k < num_skills; ++k) cols.push_back("usage_" + std::to_string(k));
  for (const char* c : {"mean_centroid_distance", "mean_centroid_to_goal", "velocity_variance", "skills_within_0_3",
                        "skills_backward", "mean_skill_return"}) {
    cols.emplace_back(c);
  }
  return cols;
}

fs::path checkpoint_path(const fs::path& run_dir, const RunConfig& config, const std::string& stage) {
  if (std::find(kStages.begin(), kStages.end(), stage) == kStages.end()) throw InputError("unknown stage " + stage);
  const int epoch = stage == "exploration" ? std::max(0, config.exploration.epochs - 1) : 0;
  return run_dir / "checkpoints" / fmt::format("{}-{}.cbor", stage, epoch);
}

namespace {

nlohmann::json region_record(const std::string& stage, const RegionEstimate& est, std::size_t max_points) {
  nlohmann::json pts = nlohmann::json::array();
  const std::size_t stride = std::max<std::size_t>(1, (est.members.size() + max_points - 1) / max_points);
  for (std::size_t i = 0; i < est.members.size(); i += stride) pts.push_back(to_std(est.members[i].coords));
  return nlohmann::json{{"stage", stage},
                        {"beta", est.region.beta_region},
                        {"threshold", est.region.threshold},
                        {"model_version", est.region.model_version},
                        {"size", est.members.size()},
                        {"candidates", est.candidates.size()},
                        {"stride", stride},
                        {"members", pts}};
}

void append_line(const fs::path& file, const nlohmann::json& j) { std::ofstream(file, std::ios::app) << j.dump() << '\n'; }

double mean_centroid_to_goal(const SkillCodebook& cb, const EnvConfig& env) {
  if (env.env_name != EnvName::kRoomNav2D || cb.config().input_space != InputSpace::kRawState) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double d = 0.0;
  for (int k = 0; k < cb.num_codes(); ++k) d += (cb.centroid(k) - env.goal).norm();
  return d / cb.num_codes();
}

struct StageContext {
  const RunConfig& config;
  const RunOptions& options;
  fs::path dir;
  std::string hash;
  Manifest& manifest;
  MetricsWriter& metrics;
};

void run_exploration(StageContext& ctx, Rng& rng) {
  const RunConfig& cfg = ctx.config;
  PreferenceDataset dataset(0.2, ctx.dir / "preferences.jsonl", true);
  fs::remove(ctx.dir / "regions.jsonl");

  std::unique_ptr<LabelQueue> queue;
  std::unique_ptr<LabelService> service;
  std::unique_ptr<HumanLabelSource> human;
  LabelSource* labels = ctx.options.labels;
  if (!labels && cfg.label_mode != LabelMode::kOracle && cfg.exploration.mode != ExplorationMode::kSmmBaseline) {
    const auto& ls = cfg.label_service;
    queue = std::make_unique<LabelQueue>(cfg.env, std::chrono::milliseconds(static_cast<long>(ls.query_ttl_s * 1000)));
    service = std::make_unique<LabelService>(*queue, dataset);
    const int port = service->start(ls.bind_address, ls.port);
    fmt::print("label service listening on {}:{}\n", ls.bind_address, port);
    std::optional<OracleReward> fallback;
    if (cfg.label_mode == LabelMode::kHumanWithOracleFallback) fallback = OracleReward::for_env(cfg.env);
    human = std::make_unique<HumanLabelSource>(*queue, static_cast<std::size_t>(ls.min_labels_per_epoch),
                                               std::chrono::milliseconds(static_cast<long>(ls.wait_timeout_s * 1000)),
                                               fallback);
    labels = human.get();
  }

  ExplorationSetup setup;
  setup.env = cfg.env;
  setup.exploration = cfg.exploration;
  setup.learner = cfg.exploration_learner;
  setup.reward_model = cfg.reward_model;
  setup.codebook = cfg.codebook;
  setup.oracle = OracleReward::for_env(cfg.env);
  setup.labels = labels;
  setup.dataset = &dataset;
  setup.on_epoch = [&](const MetricsRow& row) { ctx.metrics.append(row); };
  ExplorationResult res = run_guided_exploration(setup, rng);
  if (service) service->stop();

  if (res.region) append_line(ctx.dir / "regions.jsonl", region_record("exploration", *res.region, 2000));

  // Visited states for the scatter plot, every `stride`-th transition.
  const std::size_t n = res.buffer.size();
  const std::size_t stride = std::max<std::size_t>(1, (n + 4999) / 5000);
  ctx.manifest.scatter_stride = stride;
  {
    std::ofstream out(ctx.dir / "visited.csv");
    out << "index,x,y\n";
    for (std::size_t i = res.buffer.first_index(); i < res.buffer.end_index(); i += stride) {
      const Vec& s = res.buffer.at(i).next_state.coords;
      out << i << ',' << fmt::format("{:.10g}", s[0]) << ',' << fmt::format("{:.10g}", s[1]) << '\n';
    }
  }

  nlohmann::json payload{{"buffer", res.buffer}, {"density", res.density}};
  payload["reward_model"] = res.reward_model ? nlohmann::json(*res.reward_model) : nlohmann::json(nullptr);
  save_artifact(checkpoint_path(ctx.dir, cfg, "exploration"), ctx.hash, payload);
}

void run_discovery(StageContext& ctx, Rng& rng) {
  const RunConfig& cfg = ctx.config;
  const nlohmann::json prev = load_artifact(checkpoint_path(ctx.dir, cfg, "exploration"), ctx.hash);
  const ReplayBuffer buffer = prev.at("buffer").get<ReplayBuffer>();
  std::optional<RewardModel> model;
  if (!prev.at("reward_model").is_null()) model = prev.at("reward_model").get<RewardModel>();

  const double beta = cfg.effective_discovery_beta();
  const auto n_codes = static_cast<std::size_t>(cfg.codebook.num_codes);
  std::vector<EnvState> candidates = buffer.recent_states(cfg.discovery_candidates);
  RegionEstimate region = model ? estimate_region(*model, std::move(candidates), beta, n_codes)
                                : estimate_region_from_rewards(std::move(candidates),
                                                               Vec::Zero(static_cast<Eigen::Index>(buffer.size() < cfg.discovery_candidates ? buffer.size() : cfg.discovery_candidates)),
                                                               beta, 0, n_codes);
  CodebookConfig cb_cfg = cfg.codebook;
  cb_cfg.input_space = cfg.effective_discovery_space();
  const int input_dim = cb_cfg.input_space == InputSpace::kRawState ? cfg.env.state_dim() : model->latent_dim();
  SkillCodebook codebook(input_dim, cb_cfg, rng);
  const DiscoveryReport rep = fit_discovery(codebook, region, model ? &*model : nullptr, cfg.discovery_steps, rng);

  MetricsRow row{"discovery", 0, {}};
  row.values["region_size"] = static_cast<double>(region.members.size());
  row.values["region_threshold"] = region.region.threshold;
  row.values["vq_loss"] = rep.last.total;
  row.values["vq_mse"] = rep.last.mse;
  for (std::size_t k = 0; k < n_codes; ++k) row.values["usage_" + std::to_string(k)] = rep.usage[k];
  row.values["mean_centroid_to_goal"] = mean_centroid_to_goal(codebook, cfg.env);
  ctx.metrics.append(row);
  append_line(ctx.dir / "regions.jsonl", region_record("discovery", region, 2000));

  nlohmann::json centroids = nlohmann::json::array();
  for (int k = 0; k < codebook.num_codes(); ++k) centroids.push_back(to_std(codebook.centroid(k)));
  std::ofstream(ctx.dir / "centroids.json") << nlohmann::json{{"input_space", to_string(cb_cfg.input_space)},
                                                               {"centroids", centroids}}.dump(2)
                                           << '\n';
  save_artifact(checkpoint_path(ctx.dir, cfg, "discovery"), ctx.hash,
                nlohmann::json{{"codebook", codebook},
                               {"reward_model", model ? nlohmann::json(*model) : nlohmann::json(nullptr)}});
}

MetricsRow eval_row(const std::string& stage, int epoch, const SkillEvalReport& rep) {
  MetricsRow row{stage, epoch, {}};
  double dist = 0.0, ret = 0.0;
  for (const auto& r : rep.skills) {
    dist += r.centroid_distance;
    ret += r.oracle_return;
  }
  const double n = static_cast<double>(rep.skills.size());
  row.values["mean_centroid_distance"] = dist / n;
  row.values["mean_skill_return"] = ret / n;
  row.values["mean_centroid_to_goal"] = rep.mean_centroid_to_goal;
  row.values["velocity_variance"] = rep.velocity_variance;
  row.values["skills_within_0_3"] = rep.skills_within(0.3);
  row.values["skills_backward"] = std::isnan(rep.velocity_variance) ? std::numeric_limits<double>::quiet_NaN()
                                                                     : rep.skills_with_velocity_below(-0.05);
  return row;
}

void run_skills(StageContext& ctx, Rng& rng) {
  const RunConfig& cfg = ctx.config;
  const nlohmann::json prev = load_artifact(checkpoint_path(ctx.dir, cfg, "discovery"), ctx.hash);
  const SkillCodebook codebook = prev.at("codebook").get<SkillCodebook>();
  std::optional<RewardModel> model;
  if (!prev.at("reward_model").is_null()) model = prev.at("reward_model").get<RewardModel>();
  const OracleReward oracle = OracleReward::for_env(cfg.env);

  int checkpoint = 0;
  SkillCheckpointHook hook;
  hook.every = std::max(1, cfg.skill_steps / 5);
  hook.fn = [&](const SkillSet& partial) {
    // Progress evaluation uses its own generator so it cannot perturb training.
    Rng eval_rng(derive_seed(cfg.seed, "skills-progress-" + std::to_string(checkpoint)));
    ctx.metrics.append(eval_row("skills", checkpoint++, evaluate_skills(partial, oracle, 1, eval_rng)));
  };
  const SkillSet skills = train_skills(codebook, model ? &*model : nullptr, cfg.env, cfg.skill_learner, cfg.skill_steps,
                                       rng, hook);
  Rng eval_rng(derive_seed(cfg.seed, "evaluation"));
  const SkillEvalReport report = evaluate_skills(skills, oracle, cfg.eval_episodes, eval_rng);
  ctx.metrics.append(eval_row("evaluation", 0, report));
  write_report_csv(report, ctx.dir / "report.csv");
  write_trajectories(report, cfg.env, ctx.dir / "trajectories.jsonl");
  save_artifact(checkpoint_path(ctx.dir, cfg, "skills"), ctx.hash, nlohmann::json(skills));
}

}  // namespace

fs::path run_pipeline(const RunConfig& config, const RunOptions& options) {
  config.validate();
  const fs::path dir = options.runs_root / config.run_id;
  const std::string hash = config_hash(config);
  fs::create_directories(dir);

  Manifest manifest;
  if (fs::exists(dir / "manifest.json")) {
    manifest = read_manifest(dir);
    if (manifest.config_hash != hash) {
      throw ConfigError("run directory " + dir.string() + " belongs to a different config (hash " +
                        manifest.config_hash + ")");
    }
    if (manifest.format_version != kArtifactFormatVersion) throw StateError("run written by an incompatible version");
  } else {
    manifest.run_id = config.run_id;
    manifest.config_hash = hash;
    for (const auto& s : kStages) manifest.stage_seeds[s] = derive_seed(config.seed, s);
    save_config(config, dir / "config.json");
  }
  manifest.status = "running";
  manifest.failed_stage.reset();
  manifest.error.reset();

  // Rows from a stage that never finished are dropped before it runs again.
  const fs::path csv = dir / "metrics.csv";
  if (fs::exists(csv)) MetricsWriter::truncate_rows(csv, manifest.metrics_rows);
  MetricsWriter metrics(csv, metrics_columns(config.codebook.num_codes), manifest.metrics_rows == 0);
  write_manifest(dir, manifest);

  StageContext ctx{config, options, dir, hash, manifest, metrics};
  for (const auto& stage : kStages) {
    if (manifest.done(stage)) continue;
    Rng rng(manifest.stage_seeds.at(stage));
    try {
      if (stage == "exploration") run_exploration(ctx, rng);
      else if (stage == "discovery") run_discovery(ctx, rng);
      else run_skills(ctx, rng);
    } catch (const std::exception& e) {
      manifest.status = "failed";
      manifest.failed_stage = stage;
      manifest.error = e.what();
      write_manifest(dir, manifest);
      throw;
    }
    manifest.completed.push_back(stage);
    manifest.metrics_rows = metrics.rows_written();
    write_manifest(dir, manifest);
    if (options.stop_after && *options.stop_after == stage) break;
  }
  if (manifest.completed.size() == kStages.size()) {
    manifest.status = "complete";
    write_manifest(dir, manifest);
  }
  if (options.make_plots) make_plots(dir);
  return dir;
}

fs::path resume_run(const fs::path& run_dir, const RunOptions& options) {
  RunConfig config = load_config(run_dir / "config.json");
  RunOptions opts = options;
  opts.runs_root = run_dir.parent_path().empty() ? fs::path(".") : run_dir.parent_path();
  if (config.run_id != run_dir.filename().string()) {
    throw ConfigError("config run_id '" + config.run_id + "' does not match directory " + run_dir.string());
  }
  return run_pipeline(config, opts);
}

SweepReport beta_sweep(const RunConfig& config, const std::vector<double>& betas, const RunOptions& options) {
  if (betas.size() < 2) throw InputError("a beta sweep needs at least two values");
  SweepReport report;
  for (double beta : betas) {
    RunConfig cfg = config;
    cfg.run_id = fmt::format("{}_beta{:g}", config.run_id, beta);
    cfg.exploration.beta_region = beta;
    cfg.discovery_beta = beta;
    SweepCell cell;
    cell.beta = beta;
    cell.mean_centroid_to_goal = std::numeric_limits<double>::quiet_NaN();
    cell.velocity_variance = std::numeric_limits<double>::quiet_NaN();
    try {
      cell.run_dir = run_pipeline(cfg, options);
      for (const auto& row : MetricsWriter::read(cell.run_dir / "metrics.csv")) {
        auto get = [&](const char* k) {
          auto it = row.values.find(k);
          return it == row.values.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
        };
        if (row.stage == "discovery" || row.stage == "evaluation") {
          if (!std::isnan(get("mean_centroid_to_goal"))) cell.mean_centroid_to_goal = get("mean_centroid_to_goal");
          if (!std::isnan(get("velocity_variance"))) cell.velocity_variance = get("velocity_variance");
        }
      }
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    report.cells.push_back(cell);
  }
  const fs::path dir = options.runs_root / (config.run_id + "_sweep");
  fs::create_directories(dir);
  report.table = dir / "beta_comparison.csv";
  {
    std::ofstream out(report.table);
    out << "beta,status,mean_centroid_to_goal,velocity_variance,run_dir,error\n";
    auto num = [](double v) { return std::isnan(v) ? std::string() : fmt::format("{:.10g}", v); };
    for (const auto& c : report.cells) {
      std::string err = c.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      out << fmt::format("{:g}", c.beta) << ',' << (c.ok ? "ok" : "failed") << ',' << num(c.mean_centroid_to_goal) << ','
          << num(c.velocity_variance) << ',' << c.run_dir.string() << ',' << err << '\n';
    }
  }
  if (options.make_plots) plot_beta_comparison(report.table, dir / "beta_comparison.svg");
  return report;
}

}  // namespace cdp
