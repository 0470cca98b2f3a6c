#pragma once

#include <deque>
#include <mutex>
#include <optional>
#include <vector>

#include <json.hpp>

#include "cdp/envs.hpp"
#include "cdp/nn.hpp"

namespace cdp {

struct Transition {
  EnvState state;
  EnvAction action;
  EnvState next_state;
  int skill = 0;
  bool done = false;  // last step of the episode (time limit); never cuts bootstrapping
};

void to_json(nlohmann::json& j, const Transition& t);
void from_json(const nlohmann::json& j, Transition& t);

/// Bounded FIFO of transitions with an episode index. Rewards are not stored:
/// callers relabel sampled transitions with whatever reward is current.
/// push/sample are serialized on an internal mutex.
class ReplayBuffer {
 public:
  struct EpisodeRange {
    std::int64_t episode = 0;
    std::size_t begin = 0;  // absolute index, inclusive
    std::size_t end = 0;    // absolute index, exclusive
  };

  explicit ReplayBuffer(std::size_t capacity = 100000);
  ReplayBuffer(const ReplayBuffer& other);
  ReplayBuffer& operator=(const ReplayBuffer& other);

  // Transitions of one episode must be pushed contiguously.
  void push(const Transition& t, std::int64_t episode_id);

  // Uniform with replacement.
  std::vector<Transition> sample(std::size_t k, Rng& rng) const;

  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  std::size_t first_index() const;
  std::size_t end_index() const;
  const Transition& at(std::size_t absolute_index) const;
  std::vector<EpisodeRange> episodes() const;

  // next_state of the most recent n transitions, oldest first.
  std::vector<EnvState> recent_states(std::size_t n) const;

  friend void to_json(nlohmann::json& j, const ReplayBuffer& b);
  friend void from_json(const nlohmann::json& j, ReplayBuffer& b);

 private:
  void evict_locked();

  mutable std::mutex mu_;
  std::size_t capacity_;
  std::deque<Transition> entries_;
  std::size_t first_ = 0;
  std::deque<EpisodeRange> episodes_;
};

class SkillPrior {
 public:
  explicit SkillPrior(int num_skills = 10);
  explicit SkillPrior(std::vector<double> probs);

  int num_skills() const { return static_cast<int>(probs_.size()); }
  double prob(int z) const;
  double log_prob(int z) const;
  int sample(Rng& rng) const;

 private:
  std::vector<double> probs_;
  std::vector<double> log_probs_;
};

struct LearnerConfig {
  int hidden = 64;
  int hidden_layers = 2;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  double gamma = 0.99;
  double tau = 0.005;
  int batch_size = 256;
  double init_temperature = 0.1;
  int learning_starts = 1000;
  int updates_per_step = 1;
};

void to_json(nlohmann::json& j, const LearnerConfig& c);
void from_json(const nlohmann::json& j, LearnerConfig& c);

struct LossReport {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double temperature_loss = 0.0;
  double temperature = 0.0;
};

struct RewardedTransition {
  Transition transition;
  double reward = 0.0;
};

/// Squashed-Gaussian actor over (state ⊕ one-hot skill), twin critics with
/// Polyak-averaged targets and automatic entropy temperature (target entropy
/// = -action_dim).
class LatentPolicy {
 public:
  LatentPolicy() = default;
  LatentPolicy(const EnvConfig& env, int num_skills, const LearnerConfig& config, Rng& rng);

  EnvAction select_action(const EnvState& state, int skill, bool deterministic, Rng& rng) const;
  LossReport update(const std::vector<RewardedTransition>& batch, Rng& rng);
  void soft_update_targets();

  int num_skills() const { return num_skills_; }
  int action_dim() const { return action_dim_; }
  const LearnerConfig& config() const { return config_; }
  double temperature() const;

  const Mlp& actor() const { return actor_; }
  const Mlp& critic(int i) const { return critics_[i]; }
  const Mlp& target_critic(int i) const { return targets_[i]; }
  Mlp& mutable_critic(int i) { return critics_[i]; }

  friend void to_json(nlohmann::json& j, const LatentPolicy& p);
  friend void from_json(const nlohmann::json& j, LatentPolicy& p);

 private:
  struct ActorSample {
    Mat action;     // tanh-squashed sample (or mean)
    Mat eps;        // standard normal noise
    Mat std;        // sigma
    Mat log_std_raw;
    Vec log_prob;   // per sample
  };

  Mat policy_input(const std::vector<const EnvState*>& states, const std::vector<int>& skills) const;
  ActorSample sample_actions(const Mat& actor_out, Rng& rng) const;
  void check_skill(int skill) const;

  EnvConfig env_;
  int num_skills_ = 0;
  int action_dim_ = 0;
  LearnerConfig config_;
  Mlp actor_;
  Mlp critics_[2];
  Mlp targets_[2];
  Adam actor_opt_;
  Adam critic_opt_[2];
  double log_alpha_ = 0.0;
  Adam alpha_opt_;
};

}  // namespace cdp
