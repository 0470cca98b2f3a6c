// Acceptance suite: one PASS/FAIL line per criterion.
//   cdp_acceptance [--only P5,P6] [--runs-root DIR]
// P5-P7 share pipeline runs through the runs root, so running them together
// (or one after another against the same root) avoids repeating exploration.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cdp/harness.hpp"
#include "cdp/metrics.hpp"
#include "cdp/preference.hpp"
#include "cdp/region.hpp"
#include "cdp/vqvae.hpp"

using namespace cdp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }

Segment random_segment(Rng& rng, std::size_t len) {
  Segment s;
  for (std::size_t t = 0; t < len; ++t) s.states.push_back(EnvState{v2(2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1)});
  return s;
}

// ---- P1 ----

Outcome p1() {
  Rng rng(1);
  const auto env = EnvConfig::room_nav_2d();
  double worst_sum = 0.0;
  for (int i = 0; i < 1000; ++i) {
    RewardModelConfig cfg;
    cfg.ensemble = 1 + static_cast<int>(i % 3);
    cfg.hidden = 8 + static_cast<int>(uniform_index(rng, 56));
    RewardModel model(env, cfg, rng);
    const std::size_t len = 1 + uniform_index(rng, 40);
    PreferencePair p{0, random_segment(rng, len), random_segment(rng, len)};
    worst_sum = std::max(worst_sum, std::abs(predict_preference(model, p) + predict_preference(model, p.swapped()) - 1.0));
  }

  double worst_grad = 0.0;
  for (int m = 0; m < 20; ++m) {
    RewardModelConfig cfg;
    cfg.hidden = 3 + static_cast<int>(uniform_index(rng, 4));
    cfg.hidden_layers = 1 + static_cast<int>(m % 2);
    cfg.latent = 2 + static_cast<int>(uniform_index(rng, 3));
    cfg.ensemble = 1 + static_cast<int>(m % 3);
    RewardModel model(env, cfg, rng);
    std::vector<PreferencePair> batch;
    const std::size_t len = 2 + uniform_index(rng, 4);
    for (int i = 0; i < 4; ++i) {
      batch.push_back(PreferencePair{0, random_segment(rng, len), random_segment(rng, len),
                                     uniform01(rng) < 0.5 ? Label::kFirst : Label::kSecond});
    }
    const Vec analytic = reward_loss(model, batch).gradient;
    const Vec p0 = model.flat_params();
    const double eps = 1e-5;
    for (Eigen::Index i = 0; i < p0.size(); ++i) {
      Vec p = p0;
      p[i] += eps;
      model.set_flat_params(p);
      const double up = reward_loss(model, batch).loss;
      p[i] -= 2 * eps;
      model.set_flat_params(p);
      const double down = reward_loss(model, batch).loss;
      const double numeric = (up - down) / (2 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      worst_grad = std::max(worst_grad, std::abs(analytic[i] - numeric) / denom);
    }
    model.set_flat_params(p0);
  }
  return {worst_sum <= 1e-6 && worst_grad < 1e-4,
          fmt::format("max |p + p_swapped - 1| = {:.2e} over 1000 pairs; max gradient rel. err = {:.2e} over 20 models",
                      worst_sum, worst_grad)};
}

// ---- P2 ----

// Episodes that each hold a random heading with jitter, so segments cover the room.
ReplayBuffer heading_buffer(const EnvConfig& env, int episodes, Rng& rng) {
  ReplayBuffer buf(static_cast<std::size_t>(episodes * env.episode_length));
  for (int e = 0; e < episodes; ++e) {
    const double angle = 2 * M_PI * uniform01(rng);
    const double speed = 0.3 + 0.7 * uniform01(rng);
    EnvState s = reset(env);
    for (int t = 0; t < env.episode_length; ++t) {
      EnvAction a{v2(std::clamp(speed * std::cos(angle) + 0.5 * standard_normal(rng), -1.0, 1.0),
                     std::clamp(speed * std::sin(angle) + 0.5 * standard_normal(rng), -1.0, 1.0))};
      const EnvState next = step(s, a, env);
      buf.push(Transition{s, a, next, 0, t + 1 == env.episode_length}, e);
      s = next;
    }
  }
  return buf;
}

Outcome p2() {
  const auto env = EnvConfig::room_nav_2d();
  const auto oracle = OracleReward::for_env(env);
  std::string detail;
  bool all = true;
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    Rng rng(seed);
    const ReplayBuffer buf = heading_buffer(env, 200, rng);
    RewardModel model(env, RewardModelConfig{}, rng);
    PreferenceDataset ds(0.2);
    std::size_t labeled = 0;
    while (labeled < 400) {
      for (auto& p : sample_queries(buf, 50, QueryStrategy::kUniform, model, 25, rng)) {
        p.label = oracle_label(p, oracle);
        if (p.label == Label::kSkip || labeled == 400) continue;
        ds.append(std::move(p));
        ++labeled;
      }
    }
    ds.publish();
    const auto rep = train_reward(model, ds, 200, rng);
    all = all && rep.holdout_accuracy >= 0.90;
    detail += fmt::format("{}seed {}: holdout acc {:.3f} ({} pairs)", detail.empty() ? "" : "; ", seed,
                          rep.holdout_accuracy, rep.num_holdout);
  }
  return {all, detail};
}

// ---- P3 ----

Outcome p3() {
  Rng rng(3);
  int violations = 0;
  auto ids = [](const RegionEstimate& r) {
    std::set<double> s;
    for (const auto& m : r.members) s.insert(m.coords[0]);
    return s;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 200);
    std::vector<EnvState> states;
    Vec r(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      states.push_back(EnvState{v2(static_cast<double>(i), 0)});
      r[static_cast<Eigen::Index>(i)] = trial % 3 == 0 ? std::floor(6 * uniform01(rng)) : standard_normal(rng);
    }
    double b1 = uniform01(rng), b2 = uniform01(rng);
    if (b1 > b2) std::swap(b1, b2);
    const auto lo = estimate_region_from_rewards(states, r, b1, 0);
    const auto hi = estimate_region_from_rewards(states, r, b2, 0);
    const auto lo_ids = ids(lo), hi_ids = ids(hi);
    if (!std::includes(lo_ids.begin(), lo_ids.end(), hi_ids.begin(), hi_ids.end())) ++violations;
    for (const auto* est : {&lo, &hi}) {
      const auto in = ids(*est);
      double out_max = -1e300;
      for (std::size_t i = 0; i < n; ++i) {
        if (!in.count(static_cast<double>(i))) out_max = std::max(out_max, r[static_cast<Eigen::Index>(i)]);
      }
      if (!(est->min_reward > out_max)) ++violations;
      // Threshold is the floor(beta (n-1))-th order statistic.
      std::vector<double> sorted(r.data(), r.data() + r.size());
      std::sort(sorted.begin(), sorted.end());
      const auto rank = static_cast<std::size_t>(std::floor(est->region.beta_region * static_cast<double>(n - 1) + 1e-9));
      if (est->region.threshold != sorted[rank]) ++violations;
    }
    if (estimate_region_from_rewards(states, r, 0.0, 0).members.size() != n) ++violations;
    const auto top = estimate_region_from_rewards(states, r, 1.0, 0);
    if (top.members.size() != static_cast<std::size_t>((r.array() == r.maxCoeff()).count())) ++violations;
    for (const auto& m : top.members) {
      if (r[static_cast<Eigen::Index>(m.coords[0])] != r.maxCoeff()) ++violations;
    }
  }
  return {violations == 0, fmt::format("{} violations over 200 configurations", violations)};
}

// ---- P4 ----

Outcome p4() {
  Rng rng(4);
  int quant_bad = 0, sg_bad = 0, st_bad = 0;
  for (int trial = 0; trial < 20; ++trial) {
    CodebookConfig cc;
    cc.num_codes = 3 + trial % 8;
    cc.code_dim = 2 + trial % 5;
    cc.hidden = 16;
    SkillCodebook cb(2, cc, rng);
    for (int i = 0; i < 200; ++i) {
      Vec z(cc.code_dim);
      for (int j = 0; j < cc.code_dim; ++j) z[j] = standard_normal(rng);
      const int k = cb.quantize(z).first;
      for (int o = 0; o < cc.num_codes; ++o) {
        const double dk = (z - cb.embeddings().col(k)).squaredNorm(), d_o = (z - cb.embeddings().col(o)).squaredNorm();
        if (dk > d_o || (o < k && dk == d_o)) ++quant_bad;
      }
    }
    std::vector<Vec> batch;
    for (int i = 0; i < 32; ++i) batch.push_back(v2(2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1));
    for (int i = 0; i < 3; ++i) cb.train_step(batch);
    Mat x(2, 32);
    for (int i = 0; i < 32; ++i) x.col(i) = batch[static_cast<std::size_t>(i)];
    const auto g = cb.gradients(x);
    if (!(g.d_z_e_reconstruction.array() == g.d_z_q_reconstruction.array()).all()) ++st_bad;

    auto snap = [&] { return std::make_tuple(cb.encoder().params(), cb.decoder().params(), Mat(cb.embeddings())); };
    auto same = [](const auto& a, const auto& b) { return (a.array() == b.array()).all(); };
    auto s0 = snap();
    cb.train_step(batch, Freeze{true, false, false}, LossTerms{false, false, true});
    auto s1 = snap();
    if (!same(std::get<0>(s0), std::get<0>(s1)) || !same(std::get<1>(s0), std::get<1>(s1)) ||
        !same(std::get<2>(s0), std::get<2>(s1))) {
      ++sg_bad;
    }
    cb.train_step(batch, Freeze{}, LossTerms{false, true, false});
    auto s2 = snap();
    if (!same(std::get<0>(s1), std::get<0>(s2)) || !same(std::get<1>(s1), std::get<1>(s2))) ++sg_bad;
    cb.train_step(batch, Freeze{}, LossTerms{false, false, true});
    auto s3 = snap();
    if (!same(std::get<1>(s2), std::get<1>(s3)) || !same(std::get<2>(s2), std::get<2>(s3))) ++sg_bad;
  }

  const Vec means[3] = {v2(-0.6, -0.6), v2(0.6, -0.6), v2(0.0, 0.7)};
  std::vector<EnvState> states;
  std::vector<int> labels;
  for (int i = 0; i < 600; ++i) {
    labels.push_back(i % 3);
    states.push_back(EnvState{means[i % 3] + 0.05 * v2(standard_normal(rng), standard_normal(rng))});
  }
  CodebookConfig cc;
  cc.num_codes = 3;
  SkillCodebook cb(2, cc, rng);
  const auto rep = fit_discovery(cb, estimate_region_from_rewards(states, Vec::Zero(600), 0.0, 0), nullptr, 500, rng);
  std::vector<std::set<int>> codes(3);
  for (std::size_t i = 0; i < states.size(); ++i) codes[static_cast<std::size_t>(labels[i])].insert(cb.quantize(cb.encode(states[i].coords)).first);
  std::set<int> distinct;
  bool pure = true;
  for (const auto& c : codes) {
    pure = pure && c.size() == 1;
    distinct.insert(c.begin(), c.end());
  }
  pure = pure && distinct.size() == 3;
  const double mse = cb.evaluate([&] {
                         std::vector<Vec> xs;
                         for (const auto& s : states) xs.push_back(s.coords);
                         return xs;
                       }())
                         .mse;
  (void)rep;
  const bool ok = quant_bad == 0 && sg_bad == 0 && st_bad == 0 && pure && mse < 0.05;
  return {ok, fmt::format("quantize mismatches {}, stop-gradient leaks {}, straight-through mismatches {}, "
                          "cluster purity {}, reconstruction mse {:.4f}",
                          quant_bad, sg_bad, st_bad, pure ? "1.0" : "<1.0", mse)};
}

// ---- pipeline-based criteria ----

RunConfig room_config(const std::string& id, ExplorationMode mode, double beta, std::uint64_t seed) {
  RunConfig c;
  c.run_id = id;
  c.seed = seed;
  c.exploration.mode = mode;
  c.exploration.epochs = 40;
  c.exploration.beta_region = beta;
  c.exploration_learner.batch_size = 128;
  c.exploration_learner.learning_starts = 500;
  c.skill_learner.batch_size = 128;
  c.skill_learner.learning_starts = 1000;
  c.skill_steps = 20000;
  c.discovery_steps = 2000;
  if (mode == ExplorationMode::kSmmBaseline) {
    c.exploration.beta_region = 0.0;
  } else {
    c.discovery_beta = beta;
  }
  return c;
}

struct Runs {
  fs::path root;

  RunOptions options(std::optional<std::string> stop = std::nullopt) const {
    RunOptions o;
    o.runs_root = root;
    o.make_plots = false;
    o.stop_after = std::move(stop);
    return o;
  }

  fs::path run(const RunConfig& cfg, std::optional<std::string> stop = std::nullopt) const {
    return run_pipeline(cfg, options(std::move(stop)));
  }

  // CDP runs are named like the sweep cells so the sweep and the full run share them.
  static std::string cdp_id(std::uint64_t seed, double beta) { return fmt::format("room_s{}_beta{:g}", seed, beta); }
};

std::vector<MetricsRow> rows_of(const fs::path& dir) { return MetricsWriter::read(dir / "metrics.csv"); }

double last_value(const std::vector<MetricsRow>& rows, const std::string& stage, const std::string& key) {
  double v = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : rows) {
    auto it = r.values.find(key);
    if (r.stage == stage && it != r.values.end()) v = it->second;
  }
  return v;
}

double final_return(const fs::path& dir) {
  std::vector<double> returns;
  for (const auto& r : rows_of(dir)) {
    if (r.stage == "exploration") returns.push_back(r.values.at("oracle_return"));
  }
  double s = 0.0;
  for (std::size_t i = returns.size() - 5; i < returns.size(); ++i) s += returns[i];
  return s / 5.0;
}

Outcome p5(const Runs& runs) {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    const auto cdp = runs.run(room_config(Runs::cdp_id(seed, 0.5), ExplorationMode::kCdpGuided, 0.5, seed), "exploration");
    const auto base = runs.run(room_config(fmt::format("room_s{}_smm_baseline", seed), ExplorationMode::kSmmBaseline, 0.0, seed),
                               "exploration");
    const auto prior = runs.run(room_config(fmt::format("room_s{}_smm_prior", seed), ExplorationMode::kSmmPrior, 0.5, seed),
                                "exploration");
    const double rc = final_return(cdp), rb = final_return(base), rp = final_return(prior);
    const bool ok = rc >= 1.2 * rb && rc >= 1.05 * rp;
    wins += ok;
    detail += fmt::format("{}seed {}: cdp {:.3f} / smm {:.3f} / prior {:.3f}", detail.empty() ? "" : "; ", seed, rc, rb, rp);
  }
  return {wins >= 2, fmt::format("{} of 3 seeds ({})", wins, detail)};
}

Outcome p6(const Runs& runs) {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    const auto cdp = runs.run(room_config(Runs::cdp_id(seed, 0.5), ExplorationMode::kCdpGuided, 0.5, seed));
    const auto edl = runs.run(room_config(fmt::format("room_s{}_smm_baseline", seed), ExplorationMode::kSmmBaseline, 0.0, seed),
                              "discovery");
    const auto cdp_rows = rows_of(cdp);
    const double dc = last_value(cdp_rows, "discovery", "mean_centroid_to_goal");
    const double de = last_value(rows_of(edl), "discovery", "mean_centroid_to_goal");
    const double within = last_value(cdp_rows, "evaluation", "skills_within_0_3");
    const bool ok = dc <= 0.5 * de && within >= 8;
    wins += ok;
    detail += fmt::format("{}seed {}: centroid-to-goal cdp {:.3f} vs edl {:.3f}, {:g}/10 within 0.3",
                          detail.empty() ? "" : "; ", seed, dc, de, within);
  }
  return {wins >= 2, fmt::format("{} of 3 seeds ({})", wins, detail)};
}

Outcome p7(const Runs& runs) {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    RunConfig base = room_config(fmt::format("room_s{}", seed), ExplorationMode::kCdpGuided, 0.5, seed);
    const auto rep = beta_sweep(base, {0.1, 0.5, 0.9}, runs.options("discovery"));
    std::vector<double> d;
    for (const auto& c : rep.cells) {
      if (!c.ok) throw std::runtime_error("sweep cell failed: " + c.error);
      d.push_back(c.mean_centroid_to_goal);
    }
    const bool ok = d[0] > d[1] && d[1] > d[2];
    wins += ok;
    detail += fmt::format("{}seed {}: {:.3f} > {:.3f} > {:.3f}", detail.empty() ? "" : "; ", seed, d[0], d[1], d[2]);
  }
  return {wins >= 2, fmt::format("{} of 3 seeds ({})", wins, detail)};
}

RunConfig line_config(const std::string& id, InputSpace discovery_space) {
  RunConfig c;
  c.run_id = id;
  c.env = EnvConfig::line_walker();
  c.exploration.mode = ExplorationMode::kCdpGuided;
  c.exploration.epochs = 20;
  c.exploration.beta_region = 0.5;
  c.exploration_learner.batch_size = 128;
  c.exploration_learner.learning_starts = 1000;
  c.codebook.input_space = InputSpace::kPreferredLatent;
  c.discovery_beta = 0.5;
  c.discovery_input_space = discovery_space;
  c.skill_learner.batch_size = 128;
  c.skill_learner.learning_starts = 1000;
  c.skill_steps = 30000;
  return c;
}

Outcome p8(const Runs& runs) {
  const auto raw = runs.run(line_config("line_raw", InputSpace::kRawState));
  const auto latent = runs.run(line_config("line_latent", InputSpace::kPreferredLatent));
  const double nr = last_value(rows_of(raw), "evaluation", "skills_backward");
  const double nl = last_value(rows_of(latent), "evaluation", "skills_backward");
  const double vr = last_value(rows_of(raw), "evaluation", "velocity_variance");
  const double vl = last_value(rows_of(latent), "evaluation", "velocity_variance");
  return {nr < 5 && nl >= 8,
          fmt::format("backward skills (mean velocity < -0.05): raw-state {:g}/10, preferred-latent {:g}/10; "
                      "velocity variance raw {:.4f}, latent {:.4f}",
                      nr, nl, vr, vl)};
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome p9(const Runs& runs) {
  auto cfg = [](const std::string& id) {
    RunConfig c = room_config(id, ExplorationMode::kCdpGuided, 0.5, 9);
    c.exploration.epochs = 8;
    c.skill_steps = 3000;
    c.discovery_steps = 300;
    return c;
  };
  const auto a = runs.run(cfg("det_a"));
  const auto b = runs.run(cfg("det_b"));
  const bool same = slurp(a / "metrics.csv") == slurp(b / "metrics.csv");
  bool resumed = true;
  for (const std::string stop : {"exploration", "discovery"}) {
    const auto cut = runs.run(cfg("det_cut_" + stop), stop);
    resume_run(cut, runs.options());
    resumed = resumed && slurp(cut / "metrics.csv") == slurp(a / "metrics.csv") &&
              slurp(cut / "report.csv") == slurp(a / "report.csv");
  }
  return {same && resumed, fmt::format("rerun metrics byte-identical: {}; resume after exploration/discovery identical: {}",
                                       same ? "yes" : "no", resumed ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string only;
  std::string root = "acceptance_runs";
  app.add_option("--only", only, "comma-separated criteria, e.g. P5,P6");
  app.add_option("--runs-root", root, "where pipeline runs are kept");
  CLI11_PARSE(app, argc, argv);

  std::set<std::string> wanted;
  std::stringstream ss(only);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) wanted.insert(item);
  }
  const Runs runs{root};
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"P1", p1},
      {"P2", p2},
      {"P3", p3},
      {"P4", p4},
      {"P5", [&] { return p5(runs); }},
      {"P6", [&] { return p6(runs); }},
      {"P7", [&] { return p7(runs); }},
      {"P8", [&] { return p8(runs); }},
      {"P9", [&] { return p9(runs); }},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!wanted.empty() && !wanted.count(name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    fmt::print("{} {} ({:.0f}s) {}\n", name, out.pass ? "PASS" : "FAIL", secs, out.detail);
    std::fflush(stdout);
    failed += !out.pass;
  }
  return failed == 0 ? 0 : 1;
}
