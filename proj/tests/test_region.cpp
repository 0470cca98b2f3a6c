#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "cdp/region.hpp"

using namespace cdp;

namespace {

std::vector<EnvState> indexed_states(std::size_t n) {
  std::vector<EnvState> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(EnvState{(Vec(2) << static_cast<double>(i), 0.0).finished()});
  return out;
}

std::set<double> member_ids(const RegionEstimate& r) {
  std::set<double> ids;
  for (const auto& s : r.members) ids.insert(s.coords[0]);
  return ids;
}

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

}  // namespace

TEST_CASE("quantile cutoffs on five rewards") {
  const Vec r = vec({0.0, 0.25, 0.5, 0.75, 1.0});
  const auto half = estimate_region_from_rewards(indexed_states(5), r, 0.5, 0);
  CHECK(half.region.threshold == 0.5);
  CHECK(member_ids(half) == std::set<double>{2, 3, 4});
  CHECK(estimate_region_from_rewards(indexed_states(5), r, 0.0, 0).members.size() == 5);
  const auto top = estimate_region_from_rewards(indexed_states(5), r, 1.0, 0);
  CHECK(member_ids(top) == std::set<double>{4});
  CHECK(top.min_reward == 1.0);
  CHECK(top.max_reward == 1.0);
}

TEST_CASE("quantile rank does not suffer from rounding") {
  // 0.7 * 10 is 6.999... in floating point; the cutoff is still the 8th value.
  Vec r(11);
  for (int i = 0; i < 11; ++i) r[i] = i;
  const auto est = estimate_region_from_rewards(indexed_states(11), r, 0.7, 0);
  CHECK(est.region.threshold == 7.0);
  CHECK(est.members.size() == 4);
}

TEST_CASE("ties at the maximum all stay in") {
  const auto est = estimate_region_from_rewards(indexed_states(4), vec({1, 3, 3, 2}), 1.0, 0);
  CHECK(member_ids(est) == std::set<double>{1, 2});
}

TEST_CASE("minimum member fallback") {
  const auto est = estimate_region_from_rewards(indexed_states(10), vec({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}), 1.0, 0, 3);
  CHECK(member_ids(est) == std::set<double>{7, 8, 9});
  const auto all = estimate_region_from_rewards(indexed_states(2), vec({0, 1}), 1.0, 0, 5);
  CHECK(all.members.size() == 2);
}

TEST_CASE("argument errors") {
  CHECK_THROWS_AS(estimate_region_from_rewards({}, Vec(0), 0.5, 0), InputError);
  CHECK_THROWS_AS(estimate_region_from_rewards(indexed_states(3), vec({1, 2, 3}), -0.1, 0), InputError);
  CHECK_THROWS_AS(estimate_region_from_rewards(indexed_states(3), vec({1, 2, 3}), 1.5, 0), InputError);
  CHECK_THROWS_AS(estimate_region_from_rewards(indexed_states(3), vec({1, 2}), 0.5, 0), InputError);
}

TEST_CASE("filtering through the model") {
  Rng rng(1);
  RewardModel model(EnvConfig::room_nav_2d(), RewardModelConfig{}, rng);
  std::vector<EnvState> cands;
  for (int i = 0; i < 200; ++i) cands.push_back(EnvState{(Vec(2) << 2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1).finished()});
  const auto est = estimate_region(model, cands, 0.6);
  const auto kept = filter_states(est, model, est.candidates);
  REQUIRE(kept.size() == est.members.size());
  for (std::size_t i = 0; i < kept.size(); ++i) CHECK(kept[i].coords == est.members[i].coords);
  CHECK(filter_states(est, model, {}).empty());

  // The state at the threshold is kept.
  std::size_t at = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (est.candidate_rewards[static_cast<Eigen::Index>(i)] == est.region.threshold) at = i;
  }
  CHECK(filter_states(est, model, {cands[at]}).size() == 1);

  model.bump_version();
  CHECK_THROWS_AS(filter_states(est, model, cands), StateError);
}

TEST_CASE("property: larger beta gives a subset and the cut is coherent") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 60);
    Vec r(static_cast<Eigen::Index>(n));
    // Coarse values so that ties are common.
    for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = trial % 2 ? std::floor(5 * uniform01(rng)) : standard_normal(rng);
    double b1 = uniform01(rng), b2 = uniform01(rng);
    if (b1 > b2) std::swap(b1, b2);
    const auto lo = estimate_region_from_rewards(indexed_states(n), r, b1, 0);
    const auto hi = estimate_region_from_rewards(indexed_states(n), r, b2, 0);
    const auto lo_ids = member_ids(lo), hi_ids = member_ids(hi);
    CHECK(std::includes(lo_ids.begin(), lo_ids.end(), hi_ids.begin(), hi_ids.end()));

    double worst_out = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
      if (!hi_ids.count(static_cast<double>(i))) worst_out = std::max(worst_out, r[static_cast<Eigen::Index>(i)]);
    }
    CHECK(hi.min_reward >= hi.region.threshold);
    CHECK(hi.region.threshold > worst_out);

    // Count of members matches the quantile rank up to ties at the threshold.
    const auto rank = static_cast<std::size_t>(std::floor(b2 * static_cast<double>(n - 1) + 1e-9));
    CHECK(hi.members.size() >= n - rank);

    // Shuffling candidates does not change the member set.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<EnvState> shuffled;
    Vec rs(r.size());
    for (std::size_t i = 0; i < n; ++i) {
      shuffled.push_back(indexed_states(n)[perm[i]]);
      rs[static_cast<Eigen::Index>(i)] = r[static_cast<Eigen::Index>(perm[i])];
    }
    CHECK(member_ids(estimate_region_from_rewards(shuffled, rs, b2, 0)) == hi_ids);
  }
}

TEST_CASE("beta zero keeps everything and beta one keeps the argmax") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 40);
    Vec r(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = std::floor(4 * uniform01(rng));
    CHECK(estimate_region_from_rewards(indexed_states(n), r, 0.0, 0).members.size() == n);
    const auto top = estimate_region_from_rewards(indexed_states(n), r, 1.0, 0);
    for (const auto& s : top.members) CHECK(r[static_cast<Eigen::Index>(s.coords[0])] == r.maxCoeff());
    CHECK(top.members.size() == static_cast<std::size_t>((r.array() == r.maxCoeff()).count()));
  }
}
