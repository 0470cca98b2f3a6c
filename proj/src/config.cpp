#include "cdp/config.hpp"

#include <fstream>

#include <fmt/format.h>

namespace cdp {

std::string to_string(LabelMode mode) {
  switch (mode) {
    case LabelMode::kOracle:
      return "oracle";
    case LabelMode::kHuman:
      return "human";
    case LabelMode::kHumanWithOracleFallback:
      return "human_with_oracle_fallback";
  }
  return "?";
}

LabelMode parse_label_mode(const std::string& text) {
  if (text == "oracle") return LabelMode::kOracle;
  if (text == "human") return LabelMode::kHuman;
  if (text == "human_with_oracle_fallback") return LabelMode::kHumanWithOracleFallback;
  throw ConfigError("unknown label source '" + text + "'");
}

double RunConfig::effective_discovery_beta() const {
  if (discovery_beta) return *discovery_beta;
  return exploration.mode == ExplorationMode::kSmmBaseline ? 0.0 : exploration.beta_region;
}

void RunConfig::validate() const {
  env.validate();
  if (run_id.empty() || run_id.find('/') != std::string::npos) throw ConfigError("run_id must be a plain name");
  const double b = effective_discovery_beta();
  if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("discovery beta must lie in [0, 1]");
  if (discovery_steps < 0 || skill_steps < 0 || eval_episodes <= 0) throw ConfigError("negative stage budget");
  if (exploration.mode == ExplorationMode::kSmmBaseline && effective_discovery_space() == InputSpace::kPreferredLatent) {
    throw ConfigError("smm_baseline trains no reward model, so discovery cannot use the preferred latent");
  }
  if (exploration.mode == ExplorationMode::kSmmBaseline && b > 0.0) {
    throw ConfigError("smm_baseline has no preference reward to cut a region from; discovery beta must be 0");
  }
  if (exploration.epochs < 1) throw ConfigError("exploration needs at least one epoch");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"run_id", c.run_id},
                     {"env", c.env},
                     {"exploration", c.exploration},
                     {"exploration_learner", c.exploration_learner},
                     {"reward_model", c.reward_model},
                     {"codebook", c.codebook},
                     {"discovery_beta", c.discovery_beta ? nlohmann::json(*c.discovery_beta) : nlohmann::json(nullptr)},
                     {"discovery_input_space", c.discovery_input_space
                                                   ? nlohmann::json(to_string(*c.discovery_input_space))
                                                   : nlohmann::json(nullptr)},
                     {"discovery_steps", c.discovery_steps},
                     {"discovery_candidates", c.discovery_candidates},
                     {"skill_learner", c.skill_learner},
                     {"skill_steps", c.skill_steps},
                     {"eval_episodes", c.eval_episodes},
                     {"label_mode", to_string(c.label_mode)},
                     {"label_service",
                      {{"bind_address", c.label_service.bind_address},
                       {"port", c.label_service.port},
                       {"min_labels_per_epoch", c.label_service.min_labels_per_epoch},
                       {"wait_timeout_s", c.label_service.wait_timeout_s},
                       {"query_ttl_s", c.label_service.query_ttl_s}}},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  c = RunConfig{};
  c.run_id = j.value("run_id", c.run_id);
  if (j.contains("env")) {
    // Start from the named env's defaults so a config can list only what it changes.
    const auto name = parse_env_name(j.at("env").value("env_name", std::string("room_nav_2d")));
    nlohmann::json base = name == EnvName::kRoomNav2D ? EnvConfig::room_nav_2d() : EnvConfig::line_walker();
    base.update(j.at("env"));
    c.env = base.get<EnvConfig>();
  }
  if (j.contains("exploration")) c.exploration = j.at("exploration").get<ExplorationConfig>();
  if (j.contains("exploration_learner")) c.exploration_learner = j.at("exploration_learner").get<LearnerConfig>();
  if (j.contains("reward_model")) c.reward_model = j.at("reward_model").get<RewardModelConfig>();
  if (j.contains("codebook")) c.codebook = j.at("codebook").get<CodebookConfig>();
  if (j.contains("discovery_beta") && !j.at("discovery_beta").is_null()) c.discovery_beta = j.at("discovery_beta").get<double>();
  if (j.contains("discovery_input_space") && !j.at("discovery_input_space").is_null()) {
    c.discovery_input_space = parse_input_space(j.at("discovery_input_space"));
  }
  c.discovery_steps = j.value("discovery_steps", c.discovery_steps);
  c.discovery_candidates = j.value("discovery_candidates", c.discovery_candidates);
  if (j.contains("skill_learner")) c.skill_learner = j.at("skill_learner").get<LearnerConfig>();
  c.skill_steps = j.value("skill_steps", c.skill_steps);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.label_mode = parse_label_mode(j.value("label_mode", to_string(c.label_mode)));
  if (j.contains("label_service")) {
    const auto& l = j.at("label_service");
    c.label_service.bind_address = l.value("bind_address", c.label_service.bind_address);
    c.label_service.port = l.value("port", c.label_service.port);
    c.label_service.min_labels_per_epoch = l.value("min_labels_per_epoch", c.label_service.min_labels_per_epoch);
    c.label_service.wait_timeout_s = l.value("wait_timeout_s", c.label_service.wait_timeout_s);
    c.label_service.query_ttl_s = l.value("query_ttl_s", c.label_service.query_ttl_s);
  }
  c.seed = j.value("seed", c.seed);
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed config " + file.string() + ": " + e.what());
  }
  RunConfig c = j.get<RunConfig>();
  c.validate();
  return c;
}

void save_config(const RunConfig& config, const std::filesystem::path& file) {
  std::ofstream(file) << nlohmann::json(config).dump(2) << '\n';
}

std::string config_hash(const RunConfig& config) {
  nlohmann::json j = config;
  j.erase("run_id");
  return fmt::format("{:016x}", fnv1a(j.dump()));
}

}  // namespace cdp
