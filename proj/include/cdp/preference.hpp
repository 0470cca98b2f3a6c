#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <vector>

#include <json.hpp>

#include "cdp/envs.hpp"
#include "cdp/nn.hpp"
#include "cdp/rl.hpp"

namespace cdp {

struct RewardLoss;
struct PreferencePair;
class RewardModel;
RewardLoss reward_loss(const RewardModel& model, const std::vector<PreferencePair>& batch);

struct Segment {
  std::vector<EnvState> states;
  std::int64_t episode = 0;
  std::size_t offset = 0;
};

// kFirst is y = (1, 0): the first segment is preferred.
enum class Label { kFirst, kSecond, kSkip };
enum class Labeler { kOracle, kHuman };

std::string to_string(Label label);
Label parse_label(const std::string& text);
std::string to_string(Labeler labeler);

struct PreferencePair {
  std::int64_t pair_id = 0;
  Segment first;
  Segment second;
  Label label = Label::kSkip;
  Labeler labeler = Labeler::kOracle;
  std::int64_t timestamp = 0;

  PreferencePair swapped() const;
};

nlohmann::json to_record(const PreferencePair& pair);
PreferencePair from_record(const nlohmann::json& record);

/// Append-only store of labeled pairs. Appends may come from another thread
/// (the label service); they are staged and only become visible to readers at
/// publish(), which the trainer calls at epoch boundaries. When backed by a
/// file, each append is written immediately as one JSON line.
class PreferenceDataset {
 public:
  explicit PreferenceDataset(double holdout_fraction = 0.2);
  PreferenceDataset(double holdout_fraction, std::filesystem::path file, bool truncate);

  PreferenceDataset(PreferenceDataset&& other) noexcept;

  static PreferenceDataset load(const std::filesystem::path& file, double holdout_fraction = 0.2);

  void append(PreferencePair pair);
  std::size_t publish();

  std::vector<PreferencePair> pairs() const;
  // Skip-labeled pairs are excluded from both splits. Every 1/holdout_fraction-th
  // labeled pair goes to the holdout split.
  std::vector<PreferencePair> training_pairs() const;
  std::vector<PreferencePair> holdout_pairs() const;

  std::size_t size() const;
  std::size_t staged() const;
  std::int64_t next_pair_id();
  double holdout_fraction() const { return holdout_fraction_; }

 private:
  void split(std::vector<PreferencePair>* train, std::vector<PreferencePair>* holdout) const;

  double holdout_fraction_;
  std::optional<std::filesystem::path> file_;
  mutable std::mutex mu_;
  std::vector<PreferencePair> visible_;
  std::vector<PreferencePair> staged_;
  std::int64_t next_id_ = 0;
};

struct RewardModelConfig {
  int hidden = 64;
  int hidden_layers = 2;
  int latent = 32;
  int ensemble = 1;
  double lr = 3e-4;
  double weight_decay = 0.0;
  int batch_size = 32;  // pairs per gradient step
};

void to_json(nlohmann::json& j, const RewardModelConfig& c);
void from_json(const nlohmann::json& j, RewardModelConfig& c);

/// r(s) = head(features(s)). Each ensemble member is a feature extractor
/// (normalized state -> tanh latent of width H) followed by a linear head
/// squashed by tanh; the model reward is the member mean, the model latent is
/// the concatenation of member latents.
class RewardModel {
 public:
  RewardModel() = default;
  RewardModel(const EnvConfig& env, const RewardModelConfig& config, Rng& rng);

  Vec latent_features(const EnvState& state) const;
  double head(const Vec& latent) const;
  double predict_reward(const EnvState& state) const { return head(latent_features(state)); }
  Vec predict_rewards(const std::vector<EnvState>& states) const;

  // Preference of each ensemble member for pair.first over pair.second.
  std::vector<double> member_preferences(const PreferencePair& pair) const;

  int latent_dim() const { return config_.latent * config_.ensemble; }
  int ensemble_size() const { return config_.ensemble; }
  const RewardModelConfig& config() const { return config_; }
  const EnvConfig& env() const { return env_; }

  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  Vec flat_params() const;
  void set_flat_params(const Vec& params);
  Adam& optimizer() { return optimizer_; }

  // Adds c to every predicted reward (used to probe shift invariance).
  void set_output_shift(double c) { output_shift_ = c; }

  friend void to_json(nlohmann::json& j, const RewardModel& m);
  friend void from_json(const nlohmann::json& j, RewardModel& m);

 private:
  friend RewardLoss reward_loss(const RewardModel& model, const std::vector<PreferencePair>& batch);

  struct Member {
    Mlp features;
    Mlp head;
  };

  EnvConfig env_;
  RewardModelConfig config_;
  std::vector<Member> members_;
  Adam optimizer_;
  std::uint64_t version_ = 0;
  double output_shift_ = 0.0;
};

// P[first > second] from the two segments' summed rewards, computed stably.
double bradley_terry(double sum_first, double sum_second);
double predict_preference(const RewardModel& model, const PreferencePair& pair);

struct RewardLoss {
  double loss = 0.0;
  Vec gradient;  // layout of RewardModel::flat_params
};

// Mean Bradley-Terry cross-entropy over the batch, averaged across members.
RewardLoss reward_loss(const RewardModel& model, const std::vector<PreferencePair>& batch);

struct TrainingReport {
  int steps = 0;
  double final_loss = 0.0;
  double train_accuracy = 0.0;
  double holdout_accuracy = 0.0;  // NaN when the holdout split is empty
  std::size_t num_train = 0;
  std::size_t num_holdout = 0;
};

double preference_accuracy(const RewardModel& model, const std::vector<PreferencePair>& pairs);

// `epochs` shuffled passes over the training split in minibatches.
TrainingReport train_reward(RewardModel& model, const PreferenceDataset& dataset, int epochs, Rng& rng);
// Fixed number of minibatch gradient steps.
TrainingReport train_reward_steps(RewardModel& model, const PreferenceDataset& dataset, int steps, Rng& rng);

enum class QueryStrategy { kUniform, kDisagreement };

// Non-overlapping windows of `length` next-states cut from every episode in the buffer.
std::vector<Segment> cut_segments(const ReplayBuffer& buffer, std::size_t length);

double preference_variance(const RewardModel& model, const PreferencePair& pair);

std::vector<PreferencePair> sample_queries(const ReplayBuffer& buffer, std::size_t k, QueryStrategy strategy,
                                           const RewardModel& model, std::size_t segment_length, Rng& rng,
                                           std::size_t pool_factor = 10);

Label oracle_label(const PreferencePair& pair, const OracleReward& oracle, double tie_epsilon = 1e-9);

}  // namespace cdp
