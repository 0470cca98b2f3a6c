#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "cdp/rl.hpp"

using namespace cdp;

namespace {

Transition make_transition(double x, int skill = 0) {
  Transition t;
  t.state = EnvState{(Vec(2) << x, 0.0).finished()};
  t.action = EnvAction{Vec::Zero(2)};
  t.next_state = EnvState{(Vec(2) << x, 0.1).finished()};
  t.skill = skill;
  return t;
}

double max_abs_diff(const Mlp& a, const Mlp& b) { return (a.params() - b.params()).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("buffer evicts the oldest entry first") {
  ReplayBuffer buf(2);
  buf.push(make_transition(1), 0);
  buf.push(make_transition(2), 0);
  buf.push(make_transition(3), 1);
  CHECK(buf.size() == 2);
  CHECK(buf.first_index() == 1);
  CHECK(buf.at(1).state.coords[0] == 2.0);
  CHECK(buf.at(2).state.coords[0] == 3.0);
  CHECK_THROWS_AS(buf.at(0), InputError);
}

TEST_CASE("sampling edge cases") {
  ReplayBuffer buf(10);
  Rng rng(1);
  CHECK_THROWS_AS(buf.sample(1, rng), StateError);
  buf.push(make_transition(0), 0);
  CHECK(buf.sample(0, rng).empty());
}

TEST_CASE("sampling is uniform over entries") {
  // Chi-square statistic of the sample counts against the 0.999 quantile of
  // chi2(999), from the Wilson-Hilferty approximation.
  ReplayBuffer buf(1000);
  for (int i = 0; i < 1000; ++i) buf.push(make_transition(i), i);
  Rng rng(2024);
  std::vector<int> counts(1000, 0);
  for (const auto& t : buf.sample(10000, rng)) ++counts[static_cast<std::size_t>(t.state.coords[0])];
  const double expected = 10.0;
  double chi2 = 0.0;
  int outside = 0;
  const double sigma = std::sqrt(10000 * (1.0 / 1000) * (1 - 1.0 / 1000));
  for (int c : counts) {
    chi2 += (c - expected) * (c - expected) / expected;
    if (std::abs(c - expected) > 3 * sigma) ++outside;
  }
  const double k = 999.0, z = 3.0902;
  const double critical = k * std::pow(1 - 2 / (9 * k) + z * std::sqrt(2 / (9 * k)), 3);
  CHECK(chi2 < critical);
  CHECK(chi2 > k - 5 * std::sqrt(2 * k));
  // Poisson(10) leaves 3 sigma with probability about 0.0035.
  CHECK(outside <= 12);
}

TEST_CASE("episode ranges stay contiguous and clip on eviction") {
  ReplayBuffer buf(5);
  for (int e = 0; e < 3; ++e) {
    for (int t = 0; t < 3; ++t) buf.push(make_transition(e * 10 + t), e);
  }
  const auto eps = buf.episodes();
  REQUIRE(eps.size() == 2);
  CHECK(eps[0].episode == 1);
  CHECK(eps[0].begin == 4);
  CHECK(eps[0].end == 6);
  CHECK(eps[1].begin == 6);
  CHECK(eps[1].end == 9);
  CHECK_THROWS_AS(buf.push(make_transition(0), 1), InputError);
}

TEST_CASE("stored transitions carry no reward") {
  nlohmann::json j = make_transition(1.0);
  CHECK_FALSE(j.contains("reward"));
  ReplayBuffer buf(4);
  buf.push(make_transition(1), 0);
  nlohmann::json bj = buf;
  const auto back = bj.get<ReplayBuffer>();
  CHECK(back.size() == 1);
  CHECK(back.at(0).next_state.coords == buf.at(0).next_state.coords);
}

TEST_CASE("skill prior") {
  SkillPrior uniform(10);
  double total = 0.0;
  for (int z = 0; z < 10; ++z) total += uniform.prob(z);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(uniform.log_prob(3) == doctest::Approx(-std::log(10.0)));
  CHECK_THROWS_AS(SkillPrior(std::vector<double>{0.5, 0.6}), InputError);
  CHECK_THROWS_AS(uniform.prob(10), InputError);
}

TEST_CASE("select_action bounds, determinism, range check") {
  const auto env = EnvConfig::room_nav_2d();
  Rng init(5);
  LearnerConfig cfg;
  LatentPolicy policy(env, 10, cfg, init);
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    EnvState s{Vec::Random(2)};
    for (bool det : {true, false}) {
      const auto a = policy.select_action(s, i % 10, det, rng);
      CHECK(a.components.cwiseAbs().maxCoeff() <= 1.0);
    }
  }
  Rng r1(42), r2(42);
  EnvState s{Vec::Constant(2, 0.3)};
  CHECK(policy.select_action(s, 2, false, r1).components == policy.select_action(s, 2, false, r2).components);
  CHECK_THROWS_AS(policy.select_action(s, 10, true, rng), InputError);
  CHECK_THROWS_AS(policy.select_action(s, -1, true, rng), InputError);
}

TEST_CASE("update on a degenerate batch stays finite") {
  const auto env = EnvConfig::room_nav_2d();
  Rng rng(3);
  LatentPolicy policy(env, 4, LearnerConfig{}, rng);
  std::vector<RewardedTransition> batch(32, RewardedTransition{make_transition(0.2, 1), 0.0});
  const auto rep = policy.update(batch, rng);
  CHECK(std::isfinite(rep.critic_loss));
  CHECK(std::isfinite(rep.actor_loss));
  CHECK(std::isfinite(rep.temperature_loss));
  CHECK(rep.temperature > 0.0);
}

TEST_CASE("non-finite rewards are rejected with the entry index") {
  const auto env = EnvConfig::room_nav_2d();
  Rng rng(3);
  LatentPolicy policy(env, 4, LearnerConfig{}, rng);
  std::vector<RewardedTransition> batch(4, RewardedTransition{make_transition(0.2, 1), 0.0});
  batch[2].reward = std::numeric_limits<double>::infinity();
  try {
    policy.update(batch, rng);
    FAIL("expected an input error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("entry 2") != std::string::npos);
  }
}

TEST_CASE("repeated updates on a fixed batch lower the critic loss") {
  const auto env = EnvConfig::room_nav_2d();
  int decreased = 0;
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    LatentPolicy policy(env, 4, LearnerConfig{}, rng);
    std::vector<RewardedTransition> batch;
    for (int i = 0; i < 64; ++i) {
      Transition t;
      t.state = EnvState{Vec::Random(2) * 0.9};
      t.action = EnvAction{Vec::Random(2)};
      t.next_state = step(t.state, t.action, env);
      t.skill = i % 4;
      batch.push_back({t, t.next_state.coords.sum()});
    }
    Rng r1(100), r2(100);
    const double first = policy.update(batch, r1).critic_loss;
    const double second = policy.update(batch, r2).critic_loss;
    decreased += second <= first ? 1 : 0;
  }
  CHECK(decreased >= 8);
}

TEST_CASE("one soft update shrinks the target gap by exactly 1 - tau") {
  const auto env = EnvConfig::room_nav_2d();
  Rng rng(8);
  LearnerConfig cfg;
  LatentPolicy policy(env, 3, cfg, rng);
  // Move the online critic away from its target without touching the target.
  policy.mutable_critic(0).params().array() += 0.37;
  const double before = max_abs_diff(policy.critic(0), policy.target_critic(0));
  policy.soft_update_targets();
  const double after = max_abs_diff(policy.critic(0), policy.target_critic(0));
  CHECK(after == doctest::Approx((1 - cfg.tau) * before).epsilon(1e-12));
}

TEST_CASE("policy serialization preserves behavior") {
  const auto env = EnvConfig::line_walker();
  Rng rng(12);
  LatentPolicy policy(env, 5, LearnerConfig{}, rng);
  nlohmann::json j = policy;
  const auto back = j.get<LatentPolicy>();
  Rng r1(4), r2(4);
  EnvState s{(Vec(2) << 3.0, -0.2).finished()};
  CHECK(policy.select_action(s, 3, false, r1).components == back.select_action(s, 3, false, r2).components);
}
