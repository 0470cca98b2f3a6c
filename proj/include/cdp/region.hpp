#pragma once

#include <vector>

#include "cdp/preference.hpp"

namespace cdp {

struct PreferredRegion {
  double beta_region = 0.0;
  double threshold = 0.0;
  std::uint64_t model_version = 0;

  bool contains(double predicted_reward) const { return predicted_reward >= threshold; }
};

struct RegionEstimate {
  PreferredRegion region;
  std::vector<EnvState> candidates;
  Vec candidate_rewards;
  std::vector<EnvState> members;
  double min_reward = 0.0;  // over members
  double median_reward = 0.0;
  double max_reward = 0.0;
};

// Upper level set of the predicted reward at its beta-quantile over the
// candidates: threshold is the floor(beta * (n - 1))-th smallest reward and
// every candidate at or above it is a member. If that leaves fewer than
// min_members states, the threshold drops to the min_members-th largest reward.
RegionEstimate estimate_region(const RewardModel& model, std::vector<EnvState> candidates, double beta,
                               std::size_t min_members = 0);
RegionEstimate estimate_region_from_rewards(std::vector<EnvState> candidates, Vec rewards, double beta,
                                            std::uint64_t model_version, std::size_t min_members = 0);

std::vector<EnvState> filter_states(const RegionEstimate& region, const RewardModel& model,
                                    const std::vector<EnvState>& states);

}  // namespace cdp
