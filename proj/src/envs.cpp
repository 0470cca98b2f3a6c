#include "cdp/envs.hpp"

#include <algorithm>
#include <cmath>

namespace cdp {

EnvName parse_env_name(const std::string& name) {
  if (name == "room_nav_2d") return EnvName::kRoomNav2D;
  if (name == "line_walker") return EnvName::kLineWalker;
  throw ConfigError("unknown env_name '" + name + "' (expected room_nav_2d or line_walker)");
}

std::string to_string(EnvName name) {
  return name == EnvName::kRoomNav2D ? "room_nav_2d" : "line_walker";
}

EnvConfig EnvConfig::room_nav_2d() { return EnvConfig{}; }

EnvConfig EnvConfig::line_walker() {
  EnvConfig c;
  c.env_name = EnvName::kLineWalker;
  c.episode_length = 200;
  c.goal = Vec::Zero(2);
  return c;
}

Vec EnvConfig::state_low() const {
  if (env_name == EnvName::kRoomNav2D) return Vec::Constant(2, -1.0);
  Vec v(2);
  v << -episode_length * v_max, -v_max;
  return v;
}

Vec EnvConfig::state_high() const { return -state_low(); }

void EnvConfig::validate() const {
  if (episode_length <= 0) throw ConfigError("episode_length must be positive");
  if (!(step_scale > 0.0)) throw ConfigError("step_scale must be positive");
  if (!(goal_sigma > 0.0)) throw ConfigError("goal_sigma must be positive");
  if (!(v_max > 0.0)) throw ConfigError("v_max must be positive");
  if (goal.size() != state_dim()) throw ConfigError("goal must have the state dimension");
  const Vec lo = state_low();
  const Vec hi = state_high();
  for (Eigen::Index i = 0; i < goal.size(); ++i) {
    if (goal[i] < lo[i] || goal[i] > hi[i]) throw ConfigError("goal lies outside the state box");
  }
}

void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = nlohmann::json{{"env_name", to_string(c.env_name)},
                     {"episode_length", c.episode_length},
                     {"step_scale", c.step_scale},
                     {"goal", to_std(c.goal)},
                     {"goal_sigma", c.goal_sigma},
                     {"v_max", c.v_max},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EnvConfig& c) {
  const EnvName name = parse_env_name(j.value("env_name", std::string{"room_nav_2d"}));
  c = name == EnvName::kRoomNav2D ? EnvConfig::room_nav_2d() : EnvConfig::line_walker();
  c.episode_length = j.value("episode_length", c.episode_length);
  c.step_scale = j.value("step_scale", c.step_scale);
  if (j.contains("goal")) c.goal = from_std(j.at("goal").get<std::vector<double>>());
  c.goal_sigma = j.value("goal_sigma", c.goal_sigma);
  c.v_max = j.value("v_max", c.v_max);
  c.seed = j.value("seed", c.seed);
  c.validate();
}

OracleReward OracleReward::for_env(const EnvConfig& config) {
  OracleReward o;
  if (config.env_name == EnvName::kRoomNav2D) {
    o.kind = OracleKind::kGaussianGoal;
    o.parameters = {{"goal_x", config.goal[0]}, {"goal_y", config.goal[1]}, {"sigma", config.goal_sigma}};
  } else {
    o.kind = OracleKind::kBackwardVelocity;
  }
  return o;
}

EnvState reset(const EnvConfig& config) {
  config.validate();
  return EnvState{Vec::Zero(config.state_dim())};
}

EnvState step(const EnvState& state, const EnvAction& action, const EnvConfig& config) {
  if (state.coords.size() != config.state_dim()) throw InputError("state dimension does not match env");
  if (action.components.size() != config.action_dim()) {
    throw InputError("action dimension " + std::to_string(action.components.size()) + " does not match env (" +
                     std::to_string(config.action_dim()) + ")");
  }
  const Vec a = action.components.cwiseMax(-1.0).cwiseMin(1.0);
  EnvState next = state;
  if (config.env_name == EnvName::kRoomNav2D) {
    next.coords = (state.coords + config.step_scale * a).cwiseMax(-1.0).cwiseMin(1.0);
  } else {
    const double v = std::clamp(state.coords[1] + config.step_scale * a[0], -config.v_max, config.v_max);
    next.coords[0] = state.coords[0] + v;
    next.coords[1] = v;
  }
  return next;
}

double oracle_reward(const EnvState& state, const OracleReward& oracle) {
  if (oracle.kind == OracleKind::kBackwardVelocity) return -state.coords[1];
  const double dx = state.coords[0] - oracle.parameters.at("goal_x");
  const double dy = state.coords[1] - oracle.parameters.at("goal_y");
  const double sigma = oracle.parameters.at("sigma");
  return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
}

Polyline render_trajectory(const std::vector<EnvState>& trajectory, const EnvConfig& config) {
  if (trajectory.empty()) throw InputError("cannot render an empty trajectory");
  Polyline line;
  line.reserve(trajectory.size());
  for (std::size_t t = 0; t < trajectory.size(); ++t) {
    const Vec& c = trajectory[t].coords;
    if (config.env_name == EnvName::kRoomNav2D) {
      line.push_back({c[0], c[1]});
    } else {
      line.push_back({static_cast<double>(t), c[0]});
    }
  }
  return line;
}

Vec normalize_state(const Vec& coords, const EnvConfig& config) {
  const Vec lo = config.state_low();
  const Vec hi = config.state_high();
  return (2.0 * (coords - lo).array() / (hi - lo).array() - 1.0).matrix();
}

}  // namespace cdp
