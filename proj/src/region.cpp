#include "cdp/region.hpp"

#include <algorithm>
#include <cmath>

namespace cdp {

RegionEstimate estimate_region(const RewardModel& model, std::vector<EnvState> candidates, double beta,
                               std::size_t min_members) {
  Vec rewards = model.predict_rewards(candidates);
  return estimate_region_from_rewards(std::move(candidates), std::move(rewards), beta, model.version(), min_members);
}

RegionEstimate estimate_region_from_rewards(std::vector<EnvState> candidates, Vec rewards, double beta,
                                            std::uint64_t model_version, std::size_t min_members) {
  if (candidates.empty()) throw InputError("region estimation needs at least one candidate state");
  if (!(beta >= 0.0 && beta <= 1.0)) throw InputError("beta_region must lie in [0, 1]");
  if (static_cast<std::size_t>(rewards.size()) != candidates.size()) {
    throw InputError("one predicted reward per candidate is required");
  }
  const std::size_t n = candidates.size();
  std::vector<double> sorted(rewards.data(), rewards.data() + rewards.size());
  std::sort(sorted.begin(), sorted.end());
  // The small slack keeps e.g. 0.7 * 10 from landing on 6.999...
  auto rank = static_cast<std::size_t>(std::floor(beta * static_cast<double>(n - 1) + 1e-9));
  rank = std::min(rank, n - 1);
  if (min_members > 0 && n - rank < min_members) rank = n - std::min(min_members, n);

  RegionEstimate est;
  est.region = PreferredRegion{beta, sorted[rank], model_version};
  std::vector<double> member_rewards;
  for (std::size_t i = 0; i < n; ++i) {
    if (est.region.contains(rewards[static_cast<Eigen::Index>(i)])) {
      est.members.push_back(candidates[i]);
      member_rewards.push_back(rewards[static_cast<Eigen::Index>(i)]);
    }
  }
  std::sort(member_rewards.begin(), member_rewards.end());
  est.min_reward = member_rewards.front();
  est.max_reward = member_rewards.back();
  est.median_reward = member_rewards[member_rewards.size() / 2];
  est.candidates = std::move(candidates);
  est.candidate_rewards = std::move(rewards);
  return est;
}

std::vector<EnvState> filter_states(const RegionEstimate& region, const RewardModel& model,
                                    const std::vector<EnvState>& states) {
  if (region.region.model_version != model.version()) {
    throw StateError("stale region: built from reward model version " + std::to_string(region.region.model_version) +
                     ", current is " + std::to_string(model.version()));
  }
  std::vector<EnvState> out;
  const Vec rewards = model.predict_rewards(states);
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (region.region.contains(rewards[static_cast<Eigen::Index>(i)])) out.push_back(states[i]);
  }
  return out;
}

}  // namespace cdp
