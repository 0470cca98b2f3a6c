#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cdp/envs.hpp"

using namespace cdp;

namespace {

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }
EnvAction act(std::initializer_list<double> xs) {
  EnvAction a{Vec(static_cast<Eigen::Index>(xs.size()))};
  Eigen::Index i = 0;
  for (double x : xs) a.components[i++] = x;
  return a;
}

}  // namespace

TEST_CASE("reset starts both environments at the origin") {
  CHECK(reset(EnvConfig::room_nav_2d()).coords == v2(0, 0));
  CHECK(reset(EnvConfig::line_walker()).coords == v2(0, 0));
}

TEST_CASE("unknown environment names are configuration errors") {
  CHECK_THROWS_AS(parse_env_name("mujoco"), ConfigError);
  CHECK(parse_env_name("room_nav_2d") == EnvName::kRoomNav2D);
  CHECK(parse_env_name("line_walker") == EnvName::kLineWalker);
}

TEST_CASE("room step clamps at the wall") {
  const auto cfg = EnvConfig::room_nav_2d();
  CHECK(step(EnvState{v2(0.99, 0.5)}, act({1.0, 0.0}), cfg).coords.isApprox(v2(1.0, 0.5)));
  CHECK(step(EnvState{v2(0, 0)}, act({0, 0}), cfg).coords == v2(0, 0));
}

TEST_CASE("out-of-range actions are clamped, not rejected") {
  const auto cfg = EnvConfig::room_nav_2d();
  const auto a = step(EnvState{v2(0, 0)}, act({5.0, -7.0}), cfg);
  CHECK(a.coords.isApprox(v2(0.1, -0.1)));
}

TEST_CASE("line walker integrates velocity then position") {
  const auto cfg = EnvConfig::line_walker();
  const auto s = step(EnvState{v2(0, 0)}, act({-1.0}), cfg);
  CHECK(s.coords[0] == doctest::Approx(-0.1));
  CHECK(s.coords[1] == doctest::Approx(-0.1));
  // velocity saturates at v_max
  EnvState t{v2(0, 0.95)};
  t = step(t, act({1.0}), cfg);
  CHECK(t.coords[1] == doctest::Approx(1.0));
  CHECK(t.coords[0] == doctest::Approx(1.0));
}

TEST_CASE("action dimension mismatch is an input error") {
  CHECK_THROWS_AS(step(EnvState{v2(0, 0)}, act({1.0}), EnvConfig::room_nav_2d()), InputError);
  CHECK_THROWS_AS(step(EnvState{v2(0, 0)}, act({1.0, 0.0}), EnvConfig::line_walker()), InputError);
}

TEST_CASE("oracle rewards") {
  const auto room = EnvConfig::room_nav_2d();
  const auto gauss = OracleReward::for_env(room);
  CHECK(oracle_reward(EnvState{room.goal}, gauss) == 1.0);
  // exp(-1.62 / 0.08)
  CHECK(std::abs(oracle_reward(EnvState{v2(0, 0)}, gauss) - 1.6052280551856116e-09) < 1e-22);
  const auto back = OracleReward::for_env(EnvConfig::line_walker());
  CHECK(oracle_reward(EnvState{v2(3.0, -0.5)}, back) == doctest::Approx(0.5));
}

TEST_CASE("render_trajectory") {
  const auto room = EnvConfig::room_nav_2d();
  CHECK_THROWS_AS(render_trajectory({}, room), InputError);
  const auto single = render_trajectory({EnvState{v2(0, 0)}}, room);
  REQUIRE(single.size() == 1);
  CHECK(single[0] == std::array<double, 2>{0.0, 0.0});

  std::vector<EnvState> right;
  EnvState s = reset(room);
  for (int t = 0; t < 50; ++t) right.push_back(s = step(s, act({1.0, 0.0}), room));
  const auto line = render_trajectory(right, room);
  CHECK(line.size() == 50);
  for (std::size_t i = 1; i < line.size(); ++i) CHECK(line[i][0] >= line[i - 1][0]);

  const auto lw = EnvConfig::line_walker();
  std::vector<EnvState> back;
  for (int t = 0; t < 10; ++t) back.push_back(EnvState{v2(-0.1 * t, -0.1)});
  const auto curve = render_trajectory(back, lw);
  for (std::size_t i = 1; i < curve.size(); ++i) {
    CHECK(curve[i][0] == doctest::Approx(curve[i - 1][0] + 1.0));
    CHECK(curve[i][1] - curve[i - 1][1] == doctest::Approx(-0.1));
  }
}

TEST_CASE("property: room states never leave the box") {
  const auto cfg = EnvConfig::room_nav_2d();
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    EnvState s = reset(cfg);
    for (int t = 0; t < 100; ++t) {
      s = step(s, act({4 * uniform01(rng) - 2, 4 * uniform01(rng) - 2}), cfg);
      REQUIRE(s.coords.cwiseAbs().maxCoeff() <= 1.0);
    }
  }
}

TEST_CASE("property: stepping is deterministic") {
  Rng rng(3);
  for (auto cfg : {EnvConfig::room_nav_2d(), EnvConfig::line_walker()}) {
    for (int i = 0; i < 100; ++i) {
      EnvState s{v2(uniform01(rng) - 0.5, uniform01(rng) - 0.5)};
      EnvAction a{Vec::Random(cfg.action_dim())};
      CHECK(step(s, a, cfg).coords == step(s, a, cfg).coords);
    }
  }
}

TEST_CASE("property: the goal strictly maximizes the gaussian oracle") {
  const auto cfg = EnvConfig::room_nav_2d();
  const auto oracle = OracleReward::for_env(cfg);
  const double at_goal = oracle_reward(EnvState{cfg.goal}, oracle);
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Vec s = v2(2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1);
    if (s == cfg.goal) continue;
    CHECK(oracle_reward(EnvState{s}, oracle) < at_goal);
    CHECK(oracle_reward(EnvState{s}, oracle) > 0.0);
  }
}

TEST_CASE("config validation and round trip") {
  auto cfg = EnvConfig::room_nav_2d();
  cfg.goal = v2(2.0, 0.0);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  const auto lw = EnvConfig::line_walker();
  nlohmann::json j = lw;
  const auto back = j.get<EnvConfig>();
  CHECK(back.env_name == EnvName::kLineWalker);
  CHECK(back.episode_length == 200);
  CHECK(normalize_state(lw.state_high(), lw).isApprox(Vec::Ones(2)));
}
