#include "cdp/skills.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

namespace cdp {

double skill_reward(const SkillCodebook& codebook, const EnvState& state, int skill, const RewardModel* model) {
  if (skill < 0 || skill >= codebook.num_codes()) throw InputError("skill index " + std::to_string(skill) + " out of range");
  return codebook.log_likelihood(codebook.input_for(state, model), skill);
}

void to_json(nlohmann::json& j, const SkillSet& s) {
  j = nlohmann::json{{"env", s.env},
                     {"policy", s.policy},
                     {"codebook", s.codebook},
                     {"reward_model", s.reward_model ? nlohmann::json(*s.reward_model) : nlohmann::json(nullptr)},
                     {"codebook_version", s.codebook_version},
                     {"trained_steps", s.trained_steps}};
}

void from_json(const nlohmann::json& j, SkillSet& s) {
  s.env = j.at("env").get<EnvConfig>();
  s.policy = j.at("policy").get<LatentPolicy>();
  s.codebook = j.at("codebook").get<SkillCodebook>();
  if (j.at("reward_model").is_null()) s.reward_model.reset();
  else s.reward_model = j.at("reward_model").get<RewardModel>();
  s.codebook_version = j.at("codebook_version");
  s.trained_steps = j.at("trained_steps");
}

SkillSet train_skills(const SkillCodebook& codebook, const RewardModel* model, const EnvConfig& env,
                      const LearnerConfig& learner, int steps, Rng& rng, const SkillCheckpointHook& hook) {
  if (!codebook.trained()) throw StateError("skill learning needs a trained codebook");
  if (codebook.config().input_space == InputSpace::kPreferredLatent && model == nullptr) {
    throw InputError("preferred-latent skills need the reward model");
  }
  SkillSet set{env, LatentPolicy(env, codebook.num_codes(), learner, rng), codebook, std::nullopt, codebook.version(), 0};
  if (codebook.config().input_space == InputSpace::kPreferredLatent) set.reward_model = *model;
  const RewardModel* rm = set.reward_model ? &*set.reward_model : nullptr;
  const SkillPrior prior(codebook.num_codes());
  ReplayBuffer buffer(static_cast<std::size_t>(std::max(steps, 1)));
  std::int64_t episode = 0;
  int z = 0;
  EnvState s = reset(env);
  int t = 0;
  for (int n = 0; n < steps; ++n) {
    if (t == 0) z = prior.sample(rng);
    EnvAction a;
    if (n < learner.learning_starts) {
      a.components.resize(env.action_dim());
      for (int i = 0; i < env.action_dim(); ++i) a.components[i] = 2.0 * uniform01(rng) - 1.0;
    } else {
      a = set.policy.select_action(s, z, false, rng);
    }
    const EnvState next = step(s, a, env);
    buffer.push({s, a, next, z, t + 1 == env.episode_length}, episode);
    s = next;
    if (++t == env.episode_length) {
      t = 0;
      ++episode;
      s = reset(env);
    }
    if (n + 1 >= learner.learning_starts) {
      for (int u = 0; u < learner.updates_per_step; ++u) {
        std::vector<RewardedTransition> batch;
        for (auto& tr : buffer.sample(static_cast<std::size_t>(learner.batch_size), rng)) {
          const double r = skill_reward(set.codebook, tr.next_state, tr.skill, rm);
          batch.push_back({std::move(tr), r});
        }
        set.policy.update(batch, rng);
      }
    }
    set.trained_steps = n + 1;
    if (hook.every > 0 && hook.fn && (n + 1) % hook.every == 0) hook.fn(set);
  }
  return set;
}

int SkillEvalReport::skills_within(double radius) const {
  int n = 0;
  for (const auto& r : skills) n += r.centroid_distance <= radius ? 1 : 0;
  return n;
}

int SkillEvalReport::skills_with_velocity_below(double v) const {
  int n = 0;
  for (const auto& r : skills) n += r.mean_velocity < v ? 1 : 0;
  return n;
}

SkillEvalReport evaluate_skills(const SkillSet& skills, const OracleReward& oracle, int episodes_per_skill, Rng& rng) {
  if (episodes_per_skill <= 0) throw InputError("need at least one evaluation episode per skill");
  const EnvConfig& env = skills.env;
  const RewardModel* rm = skills.reward_model ? &*skills.reward_model : nullptr;
  const bool line = env.env_name == EnvName::kLineWalker;
  SkillEvalReport report;
  for (int z = 0; z < skills.codebook.num_codes(); ++z) {
    SkillEvalRow row;
    row.skill = z;
    row.centroid = skills.codebook.centroid(z);
    row.final_state_mean = Vec::Zero(env.state_dim());
    Vec input_mean = Vec::Zero(row.centroid.size());
    double ret = 0.0, vel = 0.0;
    for (int e = 0; e < episodes_per_skill; ++e) {
      EnvState s = reset(env);
      std::vector<EnvState> traj{s};
      for (int t = 0; t < env.episode_length; ++t) {
        s = step(s, skills.policy.select_action(s, z, true, rng), env);
        traj.push_back(s);
        ret += oracle_reward(s, oracle);
        if (line) vel += s.coords[1];
      }
      row.final_state_mean += s.coords;
      input_mean += skills.codebook.input_for(s, rm);
      row.rollouts.push_back(std::move(traj));
    }
    row.final_state_mean /= episodes_per_skill;
    input_mean /= episodes_per_skill;
    row.centroid_distance = (input_mean - row.centroid).norm();
    row.oracle_return = ret / episodes_per_skill;
    row.mean_velocity = line ? vel / (episodes_per_skill * env.episode_length) : std::numeric_limits<double>::quiet_NaN();
    report.skills.push_back(std::move(row));
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (env.env_name == EnvName::kRoomNav2D && skills.codebook.config().input_space == InputSpace::kRawState) {
    double d = 0.0;
    for (const auto& r : report.skills) d += (r.centroid - env.goal).norm();
    report.mean_centroid_to_goal = d / static_cast<double>(report.skills.size());
  } else {
    report.mean_centroid_to_goal = nan;
  }
  if (line) {
    double mean = 0.0;
    for (const auto& r : report.skills) mean += r.mean_velocity;
    mean /= static_cast<double>(report.skills.size());
    double var = 0.0;
    for (const auto& r : report.skills) var += (r.mean_velocity - mean) * (r.mean_velocity - mean);
    report.velocity_variance = var / static_cast<double>(report.skills.size());
  } else {
    report.velocity_variance = nan;
  }
  return report;
}

namespace {

std::string num(double v) { return std::isnan(v) ? std::string() : fmt::format("{:.10g}", v); }

}  // namespace

void write_report_csv(const SkillEvalReport& report, const std::filesystem::path& file) {
  std::ofstream out(file);
  out << "skill,final_x,final_y,centroid_distance,oracle_return,mean_velocity\n";
  for (const auto& r : report.skills) {
    out << r.skill << ',' << num(r.final_state_mean[0]) << ',' << num(r.final_state_mean[1]) << ','
        << num(r.centroid_distance) << ',' << num(r.oracle_return) << ',' << num(r.mean_velocity) << '\n';
  }
  out << "aggregate,,,mean_centroid_to_goal=" << num(report.mean_centroid_to_goal)
      << ",,velocity_variance=" << num(report.velocity_variance) << '\n';
}

void write_trajectories(const SkillEvalReport& report, const EnvConfig& env, const std::filesystem::path& file) {
  std::ofstream out(file);
  for (const auto& r : report.skills) {
    for (std::size_t e = 0; e < r.rollouts.size(); ++e) {
      out << nlohmann::json{{"skill", r.skill}, {"episode", e}, {"polyline", render_trajectory(r.rollouts[e], env)}}.dump()
          << '\n';
    }
  }
}

}  // namespace cdp
