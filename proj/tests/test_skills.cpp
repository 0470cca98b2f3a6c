#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cdp/skills.hpp"

using namespace cdp;

namespace {

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }

SkillCodebook fitted_codebook(Rng& rng, const EnvConfig& env, int input_dim = 2) {
  std::vector<EnvState> states;
  for (int i = 0; i < 300; ++i) {
    const Vec lo = env.state_low(), hi = env.state_high();
    states.push_back(EnvState{v2(lo[0] + (hi[0] - lo[0]) * uniform01(rng), lo[1] + (hi[1] - lo[1]) * uniform01(rng))});
  }
  CodebookConfig cc;
  cc.batch_size = 32;
  cc.hidden = 16;
  SkillCodebook cb(input_dim, cc, rng);
  fit_discovery(cb, estimate_region_from_rewards(states, Vec::Zero(300), 0.0, 0), nullptr, 30, rng);
  return cb;
}

LearnerConfig small_learner() {
  LearnerConfig lc;
  lc.hidden = 16;
  lc.batch_size = 16;
  lc.learning_starts = 50;
  return lc;
}

}  // namespace

TEST_CASE("skill reward is the codebook log-likelihood") {
  Rng rng(1);
  const auto env = EnvConfig::room_nav_2d();
  const auto cb = fitted_codebook(rng, env);
  const EnvState s{v2(0.3, -0.2)};
  for (int z = 0; z < 10; ++z) CHECK(skill_reward(cb, s, z, nullptr) == cb.log_likelihood(s.coords, z));
}

TEST_CASE("property: the best skill for a state is the one with the nearest centroid") {
  Rng rng(2);
  const auto env = EnvConfig::room_nav_2d();
  const auto cb = fitted_codebook(rng, env);
  for (int i = 0; i < 2000; ++i) {
    const EnvState s{v2(2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1)};
    int best = 0;
    for (int z = 1; z < 10; ++z) {
      if (skill_reward(cb, s, z, nullptr) > skill_reward(cb, s, best, nullptr)) best = z;
    }
    CHECK(best == cb.nearest_centroid(s.coords));
  }
}

TEST_CASE("training needs a fitted codebook") {
  Rng rng(3);
  const auto env = EnvConfig::room_nav_2d();
  SkillCodebook fresh(2, CodebookConfig{}, rng);
  CHECK_THROWS_AS(train_skills(fresh, nullptr, env, small_learner(), 10, rng), StateError);
}

TEST_CASE("zero steps gives an untrained but usable skill set") {
  Rng rng(4);
  const auto env = EnvConfig::room_nav_2d();
  const auto cb = fitted_codebook(rng, env);
  const auto set = train_skills(cb, nullptr, env, small_learner(), 0, rng);
  CHECK(set.trained_steps == 0);
  CHECK(set.codebook_version == cb.version());
  const auto report = evaluate_skills(set, OracleReward::for_env(env), 2, rng);
  CHECK(report.skills.size() == 10);
  CHECK(report.skills[0].rollouts.size() == 2);
  // Rollouts start with the reset state.
  CHECK(report.skills[0].rollouts[0].size() == static_cast<std::size_t>(env.episode_length) + 1);
  CHECK(std::isfinite(report.mean_centroid_to_goal));
  CHECK(std::isnan(report.skills[0].mean_velocity));
}

TEST_CASE("checkpoint hook cadence and evaluation determinism") {
  Rng rng(5);
  const auto env = EnvConfig::room_nav_2d();
  const auto cb = fitted_codebook(rng, env);
  std::vector<int> seen;
  const auto set = train_skills(cb, nullptr, env, small_learner(), 400, rng,
                                SkillCheckpointHook{100, [&](const SkillSet& s) { seen.push_back(s.trained_steps); }});
  CHECK(seen == std::vector<int>{100, 200, 300, 400});
  CHECK(set.trained_steps == 400);

  const auto oracle = OracleReward::for_env(env);
  Rng e1(9), e2(9);
  const auto r1 = evaluate_skills(set, oracle, 1, e1);
  const auto r2 = evaluate_skills(set, oracle, 1, e2);
  const auto r3 = evaluate_skills(set, oracle, 1, e1);
  for (std::size_t k = 0; k < r1.skills.size(); ++k) {
    CHECK(r1.skills[k].final_state_mean == r2.skills[k].final_state_mean);
    CHECK(r1.skills[k].final_state_mean == r3.skills[k].final_state_mean);
    CHECK(r1.skills[k].oracle_return == r2.skills[k].oracle_return);
  }
  CHECK(r1.mean_centroid_to_goal == r2.mean_centroid_to_goal);

  // Centroid distance is measured between the mean final state and the centroid.
  for (const auto& row : r1.skills) {
    CHECK(row.centroid == cb.centroid(row.skill));
    CHECK(row.centroid_distance == doctest::Approx((row.final_state_mean - row.centroid).norm()));
  }
}

TEST_CASE("serialized skill sets evaluate identically") {
  Rng rng(6);
  const auto env = EnvConfig::room_nav_2d();
  const auto cb = fitted_codebook(rng, env);
  const auto set = train_skills(cb, nullptr, env, small_learner(), 200, rng);
  nlohmann::json j = set;
  const auto back = j.get<SkillSet>();
  const auto oracle = OracleReward::for_env(env);
  Rng a(3), b(3);
  const auto r1 = evaluate_skills(set, oracle, 1, a);
  const auto r2 = evaluate_skills(back, oracle, 1, b);
  for (std::size_t k = 0; k < r1.skills.size(); ++k) {
    CHECK(r1.skills[k].final_state_mean == r2.skills[k].final_state_mean);
    CHECK(r1.skills[k].centroid_distance == r2.skills[k].centroid_distance);
  }
  CHECK(r1.mean_centroid_to_goal == r2.mean_centroid_to_goal);
}

TEST_CASE("velocity variance is the population variance of skill velocities") {
  Rng rng(7);
  const auto env = EnvConfig::line_walker();
  const auto cb = fitted_codebook(rng, env);
  const auto set = train_skills(cb, nullptr, env, small_learner(), 300, rng);
  const auto report = evaluate_skills(set, OracleReward::for_env(env), 1, rng);
  double mean = 0;
  for (const auto& row : report.skills) {
    // Mean velocity over the states after each step, recomputed from the rollout.
    double v = 0;
    for (std::size_t t = 1; t < row.rollouts[0].size(); ++t) v += row.rollouts[0][t].coords[1];
    v /= static_cast<double>(env.episode_length);
    CHECK(row.mean_velocity == doctest::Approx(v).epsilon(1e-12));
    mean += row.mean_velocity;
  }
  mean /= 10.0;
  double var = 0;
  for (const auto& row : report.skills) var += (row.mean_velocity - mean) * (row.mean_velocity - mean);
  var /= 10.0;
  CHECK(report.velocity_variance == doctest::Approx(var).epsilon(1e-12));
  int below = 0;
  for (const auto& row : report.skills) below += row.mean_velocity < -0.05;
  CHECK(report.skills_with_velocity_below(-0.05) == below);
  CHECK(std::isnan(report.mean_centroid_to_goal));
}

TEST_CASE("report files") {
  Rng rng(8);
  const auto env = EnvConfig::room_nav_2d();
  const auto cb = fitted_codebook(rng, env);
  const auto set = train_skills(cb, nullptr, env, small_learner(), 0, rng);
  const auto report = evaluate_skills(set, OracleReward::for_env(env), 2, rng);
  const auto dir = std::filesystem::temp_directory_path() / "cdp_test_skills";
  std::filesystem::create_directories(dir);
  write_report_csv(report, dir / "report.csv");
  write_trajectories(report, env, dir / "trajectories.jsonl");
  std::ifstream csv(dir / "report.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  REQUIRE(lines.size() == 12);
  CHECK(lines.front().rfind("skill,", 0) == 0);
  CHECK(lines.back().rfind("aggregate,", 0) == 0);
  std::ifstream traj(dir / "trajectories.jsonl");
  int rollouts = 0;
  while (std::getline(traj, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("skill"));
    CHECK(j.at("polyline").size() == static_cast<std::size_t>(env.episode_length) + 1);
    ++rollouts;
  }
  CHECK(rollouts == 20);
  std::filesystem::remove_all(dir);
}
