#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "cdp/explorer.hpp"
#include "cdp/skills.hpp"

namespace cdp {

enum class LabelMode { kOracle, kHuman, kHumanWithOracleFallback };

std::string to_string(LabelMode mode);
LabelMode parse_label_mode(const std::string& text);

struct LabelServiceConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8765;
  int min_labels_per_epoch = 10;
  double wait_timeout_s = 120.0;  // before the oracle takes over the rest
  double query_ttl_s = 600.0;
};

struct RunConfig {
  std::string run_id = "run";
  EnvConfig env = EnvConfig::room_nav_2d();
  ExplorationConfig exploration;
  LearnerConfig exploration_learner;
  RewardModelConfig reward_model;
  CodebookConfig codebook;
  // Region used to fit the final codebook; defaults to exploration.beta_region,
  // or 0 (the whole buffer) for smm_baseline.
  std::optional<double> discovery_beta;
  std::optional<InputSpace> discovery_input_space;  // defaults to codebook.input_space
  int discovery_steps = 2000;
  std::size_t discovery_candidates = 100000;
  LearnerConfig skill_learner;
  int skill_steps = 50000;
  int eval_episodes = 1;
  LabelMode label_mode = LabelMode::kOracle;
  LabelServiceConfig label_service;
  std::uint64_t seed = 0;

  double effective_discovery_beta() const;
  InputSpace effective_discovery_space() const { return discovery_input_space.value_or(codebook.input_space); }
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_config(const std::filesystem::path& file);
void save_config(const RunConfig& config, const std::filesystem::path& file);

// Hash of the canonical JSON of everything except the run id.
std::string config_hash(const RunConfig& config);

}  // namespace cdp
