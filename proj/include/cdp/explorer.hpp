#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "cdp/metrics.hpp"
#include "cdp/preference.hpp"
#include "cdp/region.hpp"
#include "cdp/rl.hpp"
#include "cdp/vqvae.hpp"

namespace cdp {

/// Smoothed histogram over the env's state box: B bins per dimension, joint
/// cells, Laplace pseudo-count alpha per cell.
class DensityModel {
 public:
  DensityModel() = default;
  DensityModel(Vec low, Vec high, int bins = 20, double alpha = 1.0);

  void add(const Vec& state);
  void reset();

  double log_prob(const Vec& state) const;
  double cell_prob(std::size_t cell) const;  // probability mass of a cell, not density
  std::size_t cell_of(const Vec& state) const;
  std::size_t num_cells() const { return counts_.size(); }
  double cell_volume() const { return cell_volume_; }
  double total_volume() const;
  std::uint64_t count(std::size_t cell) const { return counts_[cell]; }
  std::uint64_t total() const { return total_; }
  int bins() const { return bins_; }

  friend void to_json(nlohmann::json& j, const DensityModel& d);
  friend void from_json(const nlohmann::json& j, DensityModel& d);

 private:
  Vec low_, high_;
  int bins_ = 20;
  double alpha_ = 1.0;
  double cell_volume_ = 1.0;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

/// q(z|s) over the skills; only the SMM modes use it.
class BaselineDiscriminator {
 public:
  static constexpr double kLogFloor = -20.0;

  BaselineDiscriminator() = default;
  BaselineDiscriminator(const EnvConfig& env, int num_skills, int hidden, double lr, Rng& rng);

  Vec probabilities(const EnvState& state) const;
  // log q(z|s), clamped below at kLogFloor.
  double log_prob(const EnvState& state, int skill) const;
  // One cross-entropy step; returns the mean loss.
  double train_step(const std::vector<Transition>& batch);

  int num_skills() const { return num_skills_; }
  Mlp& network() { return net_; }

  friend void to_json(nlohmann::json& j, const BaselineDiscriminator& d);
  friend void from_json(const nlohmann::json& j, BaselineDiscriminator& d);

 private:
  EnvConfig env_;
  int num_skills_ = 0;
  Mlp net_;
  Adam opt_;
};

enum class ExplorationMode { kSmmBaseline, kSmmPrior, kCdpGuided };

std::string to_string(ExplorationMode mode);
ExplorationMode parse_exploration_mode(const std::string& text);

struct RewardWeights {
  double target = 1.0;
  double novelty = 1.0;
  double diversity = 1.0;
};

struct RewardComponents {
  double target = 0.0;     // log p*(s), or r_hat(s) when the preference model stands in for it
  double novelty = 0.0;    // -log rho(s)
  double diversity = 0.0;
  double total = 0.0;
};

// Plain SMM reward. `model` null means a uniform target over the env box.
RewardComponents smm_reward(const EnvState& state, int skill, const DensityModel& density,
                            const BaselineDiscriminator& disc, const RewardModel* model, const SkillPrior& prior,
                            const RewardWeights& weights = {});

/// Frozen view of the region and codebook used by the guided reward. Building
/// it precomputes, for a capped subsample of region members, each member's
/// codebook input and its log-likelihood under every skill.
class GuidedRewardContext {
 public:
  GuidedRewardContext(const RegionEstimate& region, const SkillCodebook& codebook, const RewardModel& model,
                      std::size_t max_members, Rng& rng);

  std::uint64_t region_model_version() const { return region_version_; }
  std::uint64_t codebook_version() const { return codebook_version_; }
  std::size_t num_members() const { return members_.size(); }

  // Index of the member nearest to the state (normalized coordinates).
  std::size_t nearest_member(const EnvState& state) const;

  // log q(s_hat|z) at the nearest member s_hat, minus half the squared distance
  // between the codebook inputs of s and s_hat.
  double diversity(const EnvState& state, int skill, const SkillCodebook& codebook, const RewardModel& model) const;

 private:
  EnvConfig env_;
  std::uint64_t region_version_ = 0;
  std::uint64_t codebook_version_ = 0;
  std::vector<Vec> members_;       // normalized coordinates
  std::vector<Vec> member_inputs_;  // codebook inputs
  Mat loglik_;                     // members x skills
};

RewardComponents guided_reward(const EnvState& state, int skill, const RewardModel& model,
                               const DensityModel& density, const SkillCodebook& codebook,
                               const GuidedRewardContext& context, const RewardWeights& weights = {});

/// Where step (a) gets its labels. Implementations append labeled pairs to the
/// dataset themselves; the explorer publishes afterwards.
class LabelSource {
 public:
  virtual ~LabelSource() = default;
  virtual void collect(const std::vector<PreferencePair>& queries, PreferenceDataset& dataset, int epoch) = 0;
};

class OracleLabelSource : public LabelSource {
 public:
  explicit OracleLabelSource(OracleReward oracle) : oracle_(std::move(oracle)) {}
  void collect(const std::vector<PreferencePair>& queries, PreferenceDataset& dataset, int epoch) override;

 private:
  OracleReward oracle_;
};

struct ExplorationConfig {
  ExplorationMode mode = ExplorationMode::kCdpGuided;
  int epochs = 40;
  int episodes_per_epoch = 4;
  int queries_per_epoch = 20;
  int label_budget = 400;
  double beta_region = 0.5;
  RewardWeights weights;
  int reward_steps = 100;
  int vq_steps = 200;
  int density_bins = 20;
  double density_alpha = 1.0;
  int segment_length = 25;
  QueryStrategy query_strategy = QueryStrategy::kUniform;
  std::size_t candidate_pool = 10000;
  std::size_t max_region_members = 1024;
  std::size_t buffer_capacity = 200000;
  int discriminator_hidden = 64;
  double discriminator_lr = 1e-3;
};

void to_json(nlohmann::json& j, const ExplorationConfig& c);
void from_json(const nlohmann::json& j, ExplorationConfig& c);

struct ExplorationResult {
  ReplayBuffer buffer;
  DensityModel density;
  LatentPolicy policy;
  std::optional<RewardModel> reward_model;
  std::optional<SkillCodebook> codebook;
  std::optional<RegionEstimate> region;
  std::vector<MetricsRow> rows;
};

struct ExplorationSetup {
  EnvConfig env;
  ExplorationConfig exploration;
  LearnerConfig learner;
  RewardModelConfig reward_model;
  CodebookConfig codebook;
  OracleReward oracle;
  LabelSource* labels = nullptr;          // defaults to the oracle
  PreferenceDataset* dataset = nullptr;   // defaults to an in-memory dataset
  std::function<void(const MetricsRow&)> on_epoch;
};

ExplorationResult run_guided_exploration(const ExplorationSetup& setup, Rng& rng);

// Mean per-episode sum of oracle rewards over next states.
double mean_oracle_return(const std::vector<std::vector<EnvState>>& episodes, const OracleReward& oracle);

}  // namespace cdp
