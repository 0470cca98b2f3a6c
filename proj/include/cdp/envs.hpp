#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdp/common.hpp"

namespace cdp {

enum class EnvName { kRoomNav2D, kLineWalker };

EnvName parse_env_name(const std::string& name);
std::string to_string(EnvName name);

// RoomNav2D: (x, y) in [-1, 1]^2. LineWalker: (position, velocity).
struct EnvState {
  Vec coords;
};

struct EnvAction {
  Vec components;
};

struct EnvConfig {
  EnvName env_name = EnvName::kRoomNav2D;
  int episode_length = 50;
  double step_scale = 0.1;
  Vec goal = Vec::Constant(2, 0.9);
  double goal_sigma = 0.2;
  double v_max = 1.0;
  std::uint64_t seed = 0;

  static EnvConfig room_nav_2d();
  static EnvConfig line_walker();

  int state_dim() const { return 2; }
  int action_dim() const { return env_name == EnvName::kRoomNav2D ? 2 : 1; }

  // Axis-aligned box containing every reachable state. For LineWalker the
  // position bound is episode_length * v_max, the farthest one episode can go.
  Vec state_low() const;
  Vec state_high() const;

  void validate() const;
};

void to_json(nlohmann::json& j, const EnvConfig& c);
void from_json(const nlohmann::json& j, EnvConfig& c);

enum class OracleKind { kGaussianGoal, kBackwardVelocity };

struct OracleReward {
  OracleKind kind = OracleKind::kGaussianGoal;
  std::map<std::string, double> parameters;

  // Gaussian bump at config.goal for RoomNav2D, -velocity for LineWalker.
  static OracleReward for_env(const EnvConfig& config);
};

EnvState reset(const EnvConfig& config);
EnvState step(const EnvState& state, const EnvAction& action, const EnvConfig& config);
double oracle_reward(const EnvState& state, const OracleReward& oracle);

using Polyline = std::vector<std::array<double, 2>>;

// Room coordinates for RoomNav2D; (time step, position) for LineWalker.
Polyline render_trajectory(const std::vector<EnvState>& trajectory, const EnvConfig& config);

// Maps states into [-1, 1] per coordinate using the env box; the learned
// networks see normalized states.
Vec normalize_state(const Vec& coords, const EnvConfig& config);

}  // namespace cdp
