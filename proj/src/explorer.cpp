#include "cdp/explorer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cdp {

// ---- DensityModel ----

DensityModel::DensityModel(Vec low, Vec high, int bins, double alpha)
    : low_(std::move(low)), high_(std::move(high)), bins_(bins), alpha_(alpha) {
  if (low_.size() != high_.size() || low_.size() == 0) throw InputError("density box bounds must match");
  if (bins <= 0 || !(alpha > 0.0)) throw InputError("density needs positive bins and alpha");
  if (((high_ - low_).array() <= 0.0).any()) throw InputError("density box must have positive extent");
  std::size_t cells = 1;
  cell_volume_ = 1.0;
  for (Eigen::Index d = 0; d < low_.size(); ++d) {
    cells *= static_cast<std::size_t>(bins);
    cell_volume_ *= (high_[d] - low_[d]) / bins;
  }
  counts_.assign(cells, 0);
}

std::size_t DensityModel::cell_of(const Vec& s) const {
  if (s.size() != low_.size()) throw InputError("density state dimension mismatch");
  std::size_t cell = 0;
  for (Eigen::Index d = 0; d < s.size(); ++d) {
    if (!(s[d] >= low_[d] && s[d] <= high_[d])) {
      throw InputError("state coordinate " + std::to_string(s[d]) + " outside the density box");
    }
    const double u = (s[d] - low_[d]) / (high_[d] - low_[d]);
    const int b = std::min(bins_ - 1, static_cast<int>(u * bins_));
    cell = cell * static_cast<std::size_t>(bins_) + static_cast<std::size_t>(b);
  }
  return cell;
}

void DensityModel::add(const Vec& state) {
  ++counts_[cell_of(state)];
  ++total_;
}

void DensityModel::reset() {
  std::fill(counts_.begin(), counts_.end(), 0);
  total_ = 0;
}

double DensityModel::cell_prob(std::size_t cell) const {
  return (static_cast<double>(counts_.at(cell)) + alpha_) /
         (static_cast<double>(total_) + alpha_ * static_cast<double>(counts_.size()));
}

double DensityModel::log_prob(const Vec& state) const { return std::log(cell_prob(cell_of(state))) - std::log(cell_volume_); }

double DensityModel::total_volume() const { return cell_volume_ * static_cast<double>(counts_.size()); }

void to_json(nlohmann::json& j, const DensityModel& d) {
  j = nlohmann::json{{"low", to_std(d.low_)}, {"high", to_std(d.high_)}, {"bins", d.bins_},
                     {"alpha", d.alpha_},     {"counts", d.counts_},    {"total", d.total_}};
}

void from_json(const nlohmann::json& j, DensityModel& d) {
  d = DensityModel(from_std(j.at("low").get<std::vector<double>>()), from_std(j.at("high").get<std::vector<double>>()),
                   j.at("bins"), j.at("alpha"));
  d.counts_ = j.at("counts").get<std::vector<std::uint64_t>>();
  d.total_ = j.at("total");
}

// ---- BaselineDiscriminator ----

BaselineDiscriminator::BaselineDiscriminator(const EnvConfig& env, int num_skills, int hidden, double lr, Rng& rng)
    : env_(env), num_skills_(num_skills) {
  net_ = Mlp({env.state_dim(), hidden, hidden, num_skills}, Activation::kRelu, Activation::kIdentity, rng);
  opt_ = Adam(net_.num_params(), {.lr = lr});
}

namespace {

Vec softmax(const Vec& logits) {
  const Vec e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

Vec BaselineDiscriminator::probabilities(const EnvState& state) const {
  return softmax(net_.forward(normalize_state(state.coords, env_)).col(0));
}

double BaselineDiscriminator::log_prob(const EnvState& state, int skill) const {
  if (skill < 0 || skill >= num_skills_) throw InputError("skill index out of range");
  const Vec logits = net_.forward(normalize_state(state.coords, env_)).col(0);
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return std::max(kLogFloor, logits[skill] - lse);
}

double BaselineDiscriminator::train_step(const std::vector<Transition>& batch) {
  if (batch.empty()) return 0.0;
  Mat x(env_.state_dim(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = normalize_state(batch[i].next_state.coords, env_);
  }
  Mlp::Tape tape;
  const Mat logits = net_.forward(x, tape);
  Mat d(logits.rows(), logits.cols());
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    const Vec p = softmax(logits.col(i));
    const int z = batch[static_cast<std::size_t>(i)].skill;
    loss -= std::log(std::max(p[z], 1e-300));
    d.col(i) = p * inv_b;
    d(z, i) -= inv_b;
  }
  Vec grad = Vec::Zero(net_.num_params());
  net_.backward(tape, d, &grad);
  opt_.step(net_.params(), grad);
  return loss * inv_b;
}

void to_json(nlohmann::json& j, const BaselineDiscriminator& d) {
  j = nlohmann::json{{"env", d.env_}, {"num_skills", d.num_skills_}, {"net", d.net_}, {"opt", d.opt_}};
}

void from_json(const nlohmann::json& j, BaselineDiscriminator& d) {
  d.env_ = j.at("env").get<EnvConfig>();
  d.num_skills_ = j.at("num_skills");
  d.net_ = j.at("net").get<Mlp>();
  d.opt_ = j.at("opt").get<Adam>();
}

// ---- rewards ----

std::string to_string(ExplorationMode mode) {
  switch (mode) {
    case ExplorationMode::kSmmBaseline:
      return "smm_baseline";
    case ExplorationMode::kSmmPrior:
      return "smm_prior";
    case ExplorationMode::kCdpGuided:
      return "cdp_guided";
  }
  return "?";
}

ExplorationMode parse_exploration_mode(const std::string& text) {
  if (text == "smm_baseline") return ExplorationMode::kSmmBaseline;
  if (text == "smm_prior") return ExplorationMode::kSmmPrior;
  if (text == "cdp_guided") return ExplorationMode::kCdpGuided;
  throw ConfigError("unknown exploration mode '" + text + "'");
}

RewardComponents smm_reward(const EnvState& state, int skill, const DensityModel& density,
                            const BaselineDiscriminator& disc, const RewardModel* model, const SkillPrior& prior,
                            const RewardWeights& weights) {
  RewardComponents c;
  c.target = weights.target * (model ? model->predict_reward(state) : -std::log(density.total_volume()));
  c.novelty = weights.novelty * -density.log_prob(state.coords);
  c.diversity = weights.diversity * (disc.log_prob(state, skill) - prior.log_prob(skill));
  c.total = (c.target + c.novelty) + c.diversity;
  return c;
}

GuidedRewardContext::GuidedRewardContext(const RegionEstimate& region, const SkillCodebook& codebook,
                                         const RewardModel& model, std::size_t max_members, Rng& rng)
    : env_(model.env()), region_version_(region.region.model_version), codebook_version_(codebook.version()) {
  if (region.members.empty()) throw StateError("guided reward needs a nonempty region");
  std::vector<std::size_t> pick(region.members.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  if (max_members > 0 && pick.size() > max_members) {
    // Partial Fisher-Yates keeps the choice reproducible under the stage seed.
    for (std::size_t i = 0; i < max_members; ++i) std::swap(pick[i], pick[i + uniform_index(rng, pick.size() - i)]);
    pick.resize(max_members);
    std::sort(pick.begin(), pick.end());
  }
  loglik_.resize(static_cast<Eigen::Index>(pick.size()), codebook.num_codes());
  for (std::size_t m = 0; m < pick.size(); ++m) {
    const EnvState& s = region.members[pick[m]];
    members_.push_back(normalize_state(s.coords, env_));
    member_inputs_.push_back(codebook.input_for(s, &model));
    for (int k = 0; k < codebook.num_codes(); ++k) {
      loglik_(static_cast<Eigen::Index>(m), k) = codebook.log_likelihood(member_inputs_.back(), k);
    }
  }
}

std::size_t GuidedRewardContext::nearest_member(const EnvState& state) const {
  const Vec x = normalize_state(state.coords, env_);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < members_.size(); ++m) {
    const double d = (members_[m] - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = m;
    }
  }
  return best;
}

double GuidedRewardContext::diversity(const EnvState& state, int skill, const SkillCodebook& codebook,
                                      const RewardModel& model) const {
  if (skill < 0 || skill >= loglik_.cols()) throw InputError("skill index out of range");
  const std::size_t m = nearest_member(state);
  const Vec x = codebook.input_for(state, &model);
  return loglik_(static_cast<Eigen::Index>(m), skill) - 0.5 * (x - member_inputs_[m]).squaredNorm();
}

RewardComponents guided_reward(const EnvState& state, int skill, const RewardModel& model,
                               const DensityModel& density, const SkillCodebook& codebook,
                               const GuidedRewardContext& context, const RewardWeights& weights) {
  if (context.region_model_version() != model.version()) {
    throw StateError("stale region: built from reward model version " + std::to_string(context.region_model_version()) +
                     ", current is " + std::to_string(model.version()));
  }
  if (context.codebook_version() != codebook.version()) {
    throw StateError("guided reward context is out of date with the codebook");
  }
  RewardComponents c;
  c.target = weights.target * model.predict_reward(state);
  c.novelty = weights.novelty * -density.log_prob(state.coords);
  c.diversity = weights.diversity * context.diversity(state, skill, codebook, model);
  c.total = (c.target + c.novelty) + c.diversity;
  return c;
}

void OracleLabelSource::collect(const std::vector<PreferencePair>& queries, PreferenceDataset& dataset, int) {
  for (PreferencePair p : queries) {
    p.label = oracle_label(p, oracle_);
    p.labeler = Labeler::kOracle;
    dataset.append(std::move(p));
  }
}

// ---- config ----

void to_json(nlohmann::json& j, const ExplorationConfig& c) {
  j = nlohmann::json{{"mode", to_string(c.mode)},
                     {"epochs", c.epochs},
                     {"episodes_per_epoch", c.episodes_per_epoch},
                     {"queries_per_epoch", c.queries_per_epoch},
                     {"label_budget", c.label_budget},
                     {"beta_region", c.beta_region},
                     {"weights", {{"target", c.weights.target}, {"novelty", c.weights.novelty},
                                  {"diversity", c.weights.diversity}}},
                     {"reward_steps", c.reward_steps},
                     {"vq_steps", c.vq_steps},
                     {"density_bins", c.density_bins},
                     {"density_alpha", c.density_alpha},
                     {"segment_length", c.segment_length},
                     {"query_strategy", c.query_strategy == QueryStrategy::kUniform ? "uniform" : "disagreement"},
                     {"candidate_pool", c.candidate_pool},
                     {"max_region_members", c.max_region_members},
                     {"buffer_capacity", c.buffer_capacity},
                     {"discriminator_hidden", c.discriminator_hidden},
                     {"discriminator_lr", c.discriminator_lr}};
}

void from_json(const nlohmann::json& j, ExplorationConfig& c) {
  c.mode = parse_exploration_mode(j.value("mode", to_string(c.mode)));
  c.epochs = j.value("epochs", c.epochs);
  c.episodes_per_epoch = j.value("episodes_per_epoch", c.episodes_per_epoch);
  c.queries_per_epoch = j.value("queries_per_epoch", c.queries_per_epoch);
  c.label_budget = j.value("label_budget", c.label_budget);
  c.beta_region = j.value("beta_region", c.beta_region);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    c.weights.target = w.value("target", c.weights.target);
    c.weights.novelty = w.value("novelty", c.weights.novelty);
    c.weights.diversity = w.value("diversity", c.weights.diversity);
  }
  c.reward_steps = j.value("reward_steps", c.reward_steps);
  c.vq_steps = j.value("vq_steps", c.vq_steps);
  c.density_bins = j.value("density_bins", c.density_bins);
  c.density_alpha = j.value("density_alpha", c.density_alpha);
  c.segment_length = j.value("segment_length", c.segment_length);
  const std::string strategy = j.value("query_strategy", std::string("uniform"));
  if (strategy == "uniform") c.query_strategy = QueryStrategy::kUniform;
  else if (strategy == "disagreement") c.query_strategy = QueryStrategy::kDisagreement;
  else throw ConfigError("unknown query strategy '" + strategy + "'");
  c.candidate_pool = j.value("candidate_pool", c.candidate_pool);
  c.max_region_members = j.value("max_region_members", c.max_region_members);
  c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
  c.discriminator_hidden = j.value("discriminator_hidden", c.discriminator_hidden);
  c.discriminator_lr = j.value("discriminator_lr", c.discriminator_lr);
  if (c.epochs < 0 || c.episodes_per_epoch <= 0 || c.segment_length <= 0) {
    throw ConfigError("exploration needs nonnegative epochs, positive episodes and segment length");
  }
  if (!(c.beta_region >= 0.0 && c.beta_region <= 1.0)) throw ConfigError("beta_region must lie in [0, 1]");
}

// ---- the epoch loop ----

double mean_oracle_return(const std::vector<std::vector<EnvState>>& episodes, const OracleReward& oracle) {
  if (episodes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ep : episodes) {
    for (const auto& s : ep) total += oracle_reward(s, oracle);
  }
  return total / static_cast<double>(episodes.size());
}

namespace {

EnvAction random_action(int dim, Rng& rng) {
  EnvAction a{Vec(dim)};
  for (int i = 0; i < dim; ++i) a.components[i] = 2.0 * uniform01(rng) - 1.0;
  return a;
}

}  // namespace

ExplorationResult run_guided_exploration(const ExplorationSetup& setup, Rng& rng) {
  const EnvConfig& env = setup.env;
  const ExplorationConfig& cfg = setup.exploration;
  env.validate();
  const bool guided = cfg.mode == ExplorationMode::kCdpGuided;
  const bool learns_reward = cfg.mode != ExplorationMode::kSmmBaseline;
  const int num_skills = setup.codebook.num_codes;

  ExplorationResult out{ReplayBuffer(cfg.buffer_capacity), DensityModel(env.state_low(), env.state_high(),
                                                                        cfg.density_bins, cfg.density_alpha),
                        LatentPolicy(env, num_skills, setup.learner, rng), std::nullopt, std::nullopt, std::nullopt, {}};
  const SkillPrior prior(num_skills);
  BaselineDiscriminator disc;
  if (!guided) disc = BaselineDiscriminator(env, num_skills, cfg.discriminator_hidden, cfg.discriminator_lr, rng);
  if (learns_reward) out.reward_model.emplace(env, setup.reward_model, rng);
  if (guided) out.codebook.emplace(setup.codebook.input_space == InputSpace::kRawState
                                       ? env.state_dim()
                                       : setup.reward_model.latent * setup.reward_model.ensemble,
                                   setup.codebook, rng);

  OracleLabelSource oracle_source(setup.oracle);
  LabelSource* labels = setup.labels ? setup.labels : &oracle_source;
  PreferenceDataset local_dataset;
  PreferenceDataset* dataset = setup.dataset ? setup.dataset : &local_dataset;

  std::optional<GuidedRewardContext> context;
  std::int64_t episode_id = 0;
  std::size_t env_steps = 0;

  auto rewards_for = [&](const Transition& t) -> RewardComponents {
    if (guided) {
      return guided_reward(t.next_state, t.skill, *out.reward_model, out.density, *out.codebook, *context, cfg.weights);
    }
    return smm_reward(t.next_state, t.skill, out.density, disc, out.reward_model ? &*out.reward_model : nullptr, prior,
                      cfg.weights);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    MetricsRow row{"exploration", epoch, {}};
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.values["rm_version_a"] = nan;
    row.values["rm_version_b"] = nan;
    row.values["cb_version_c"] = nan;
    row.values["cb_version_d"] = nan;

    // (a) preference queries and reward learning
    if (learns_reward && out.buffer.size() > 0) {
      const auto remaining = static_cast<std::size_t>(std::max(0, cfg.label_budget - static_cast<int>(dataset->size())));
      const std::size_t k = std::min(static_cast<std::size_t>(cfg.queries_per_epoch), remaining);
      if (k > 0 && cut_segments(out.buffer, static_cast<std::size_t>(cfg.segment_length)).size() >= 2) {
        const auto queries = sample_queries(out.buffer, k, cfg.query_strategy, *out.reward_model,
                                            static_cast<std::size_t>(cfg.segment_length), rng);
        labels->collect(queries, *dataset, epoch);
      }
      dataset->publish();
      if (dataset->training_pairs().size() >= 2) {
        train_reward_steps(*out.reward_model, *dataset, cfg.reward_steps, rng);
      }
      row.values["rm_version_a"] = static_cast<double>(out.reward_model->version());
    }

    // (b) region and (c) discovery
    if (guided && out.buffer.size() > 0) {
      out.region = estimate_region(*out.reward_model, out.buffer.recent_states(cfg.candidate_pool), cfg.beta_region,
                                   static_cast<std::size_t>(num_skills));
      row.values["rm_version_b"] = static_cast<double>(out.region->region.model_version);
      const DiscoveryReport rep = fit_discovery(*out.codebook, *out.region, &*out.reward_model, cfg.vq_steps, rng);
      row.values["cb_version_c"] = static_cast<double>(out.codebook->version());
      row.values["vq_loss"] = rep.last.total;
      row.values["vq_mse"] = rep.last.mse;
      for (int k = 0; k < num_skills; ++k) row.values["usage_" + std::to_string(k)] = rep.usage[static_cast<std::size_t>(k)];
      context.emplace(*out.region, *out.codebook, *out.reward_model, cfg.max_region_members, rng);
      row.values["region_size"] = static_cast<double>(out.region->members.size());
      row.values["region_threshold"] = out.region->region.threshold;
    }

    // (d) rollouts
    const bool can_reward = !guided || context.has_value();
    if (guided && context) row.values["cb_version_d"] = static_cast<double>(context->codebook_version());
    std::vector<std::vector<EnvState>> episodes;
    RewardComponents sum;
    std::size_t rewarded = 0;
    double critic_loss = 0.0;
    std::size_t updates = 0;
    for (int e = 0; e < cfg.episodes_per_epoch; ++e) {
      const int z = prior.sample(rng);
      EnvState s = reset(env);
      std::vector<EnvState> visited;
      for (int t = 0; t < env.episode_length; ++t) {
        const EnvAction a = env_steps < static_cast<std::size_t>(setup.learner.learning_starts)
                                ? random_action(env.action_dim(), rng)
                                : out.policy.select_action(s, z, false, rng);
        const EnvState next = step(s, a, env);
        Transition tr{s, a, next, z, t + 1 == env.episode_length};
        out.buffer.push(tr, episode_id);
        out.density.add(next.coords);
        visited.push_back(next);
        ++env_steps;
        if (can_reward) {
          const RewardComponents c = rewards_for(tr);
          sum.target += c.target;
          sum.novelty += c.novelty;
          sum.diversity += c.diversity;
          sum.total += c.total;
          ++rewarded;
        }
        if (can_reward && env_steps >= static_cast<std::size_t>(setup.learner.learning_starts)) {
          for (int u = 0; u < setup.learner.updates_per_step; ++u) {
            const auto batch = out.buffer.sample(static_cast<std::size_t>(setup.learner.batch_size), rng);
            if (!guided) disc.train_step(batch);
            std::vector<RewardedTransition> rb;
            rb.reserve(batch.size());
            for (const auto& b : batch) rb.push_back({b, rewards_for(b).total});
            critic_loss += out.policy.update(rb, rng).critic_loss;
            ++updates;
          }
        }
        s = next;
      }
      episodes.push_back(std::move(visited));
      ++episode_id;
    }

    row.values["oracle_return"] = mean_oracle_return(episodes, setup.oracle);
    const double n = rewarded ? static_cast<double>(rewarded) : nan;
    row.values["reward_total"] = sum.total / n;
    row.values["reward_target"] = sum.target / n;
    row.values["reward_novelty"] = sum.novelty / n;
    row.values["reward_diversity"] = sum.diversity / n;
    row.values["critic_loss"] = updates ? critic_loss / static_cast<double>(updates) : nan;
    row.values["label_count"] = static_cast<double>(dataset->size());
    row.values["buffer_size"] = static_cast<double>(out.buffer.size());
    out.rows.push_back(row);
    if (setup.on_epoch) setup.on_epoch(row);
  }
  return out;
}

}  // namespace cdp
