#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "cdp/rl.hpp"
#include "cdp/vqvae.hpp"

namespace cdp {

// log q(input(s) | z) under the codebook's unit-variance decoder.
double skill_reward(const SkillCodebook& codebook, const EnvState& state, int skill, const RewardModel* model);

struct SkillSet {
  EnvConfig env;
  LatentPolicy policy;
  SkillCodebook codebook;
  std::optional<RewardModel> reward_model;  // present for preferred-latent codebooks
  std::uint64_t codebook_version = 0;
  int trained_steps = 0;
};

void to_json(nlohmann::json& j, const SkillSet& s);
void from_json(const nlohmann::json& j, SkillSet& s);

// Called every `every` environment steps with the skills trained so far.
struct SkillCheckpointHook {
  int every = 0;
  std::function<void(const SkillSet&)> fn;
};

SkillSet train_skills(const SkillCodebook& codebook, const RewardModel* model, const EnvConfig& env,
                      const LearnerConfig& learner, int steps, Rng& rng, const SkillCheckpointHook& hook = {});

struct SkillEvalRow {
  int skill = 0;
  Vec final_state_mean;     // raw coordinates
  Vec centroid;             // codebook input space
  double centroid_distance = 0.0;  // mean codebook input of the final states vs the centroid
  double oracle_return = 0.0;
  double mean_velocity = 0.0;      // LineWalker only, NaN otherwise
  std::vector<std::vector<EnvState>> rollouts;
};

struct SkillEvalReport {
  std::vector<SkillEvalRow> skills;
  double mean_centroid_to_goal = 0.0;  // raw-state RoomNav2D codebooks only, NaN otherwise
  double velocity_variance = 0.0;      // population variance of the per-skill mean velocities

  int skills_within(double radius) const;
  int skills_with_velocity_below(double v) const;
};

SkillEvalReport evaluate_skills(const SkillSet& skills, const OracleReward& oracle, int episodes_per_skill, Rng& rng);

void write_report_csv(const SkillEvalReport& report, const std::filesystem::path& file);
// One JSON line per rollout: skill, episode, polyline.
void write_trajectories(const SkillEvalReport& report, const EnvConfig& env, const std::filesystem::path& file);

}  // namespace cdp
