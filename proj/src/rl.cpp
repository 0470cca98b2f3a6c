#include "cdp/rl.hpp"

#include <cmath>
#include <numeric>

namespace cdp {

namespace {

constexpr double kLogStdMin = -5.0;
constexpr double kLogStdMax = 2.0;
const double kHalfLog2Pi = 0.5 * std::log(2.0 * M_PI);

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

nlohmann::json vec_json(const Vec& v) { return to_std(v); }

}  // namespace

void to_json(nlohmann::json& j, const Transition& t) {
  j = nlohmann::json{{"s", vec_json(t.state.coords)},
                     {"a", vec_json(t.action.components)},
                     {"s2", vec_json(t.next_state.coords)},
                     {"z", t.skill},
                     {"done", t.done}};
}

void from_json(const nlohmann::json& j, Transition& t) {
  t.state.coords = from_std(j.at("s").get<std::vector<double>>());
  t.action.components = from_std(j.at("a").get<std::vector<double>>());
  t.next_state.coords = from_std(j.at("s2").get<std::vector<double>>());
  t.skill = j.at("z");
  t.done = j.at("done");
}

// ---- ReplayBuffer ----

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InputError("replay buffer capacity must be positive");
}

ReplayBuffer::ReplayBuffer(const ReplayBuffer& other) {
  std::lock_guard lock(other.mu_);
  capacity_ = other.capacity_;
  entries_ = other.entries_;
  first_ = other.first_;
  episodes_ = other.episodes_;
}

ReplayBuffer& ReplayBuffer::operator=(const ReplayBuffer& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_, other.mu_);
  capacity_ = other.capacity_;
  entries_ = other.entries_;
  first_ = other.first_;
  episodes_ = other.episodes_;
  return *this;
}

void ReplayBuffer::push(const Transition& t, std::int64_t episode_id) {
  std::lock_guard lock(mu_);
  const std::size_t index = first_ + entries_.size();
  if (!episodes_.empty() && episodes_.back().episode == episode_id) {
    episodes_.back().end = index + 1;
  } else {
    for (const auto& e : episodes_) {
      if (e.episode == episode_id) throw InputError("episode " + std::to_string(episode_id) + " is not contiguous");
    }
    episodes_.push_back({episode_id, index, index + 1});
  }
  entries_.push_back(t);
  evict_locked();
}

void ReplayBuffer::evict_locked() {
  while (entries_.size() > capacity_) {
    entries_.pop_front();
    ++first_;
  }
  while (!episodes_.empty() && episodes_.front().end <= first_) episodes_.pop_front();
  if (!episodes_.empty() && episodes_.front().begin < first_) episodes_.front().begin = first_;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t k, Rng& rng) const {
  std::lock_guard lock(mu_);
  if (k == 0) return {};
  if (entries_.empty()) throw StateError("cannot sample from an empty replay buffer");
  std::vector<Transition> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(entries_[uniform_index(rng, entries_.size())]);
  return out;
}

std::size_t ReplayBuffer::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::size_t ReplayBuffer::first_index() const {
  std::lock_guard lock(mu_);
  return first_;
}

std::size_t ReplayBuffer::end_index() const {
  std::lock_guard lock(mu_);
  return first_ + entries_.size();
}

const Transition& ReplayBuffer::at(std::size_t absolute_index) const {
  std::lock_guard lock(mu_);
  if (absolute_index < first_ || absolute_index >= first_ + entries_.size()) {
    throw InputError("replay index " + std::to_string(absolute_index) + " is not held");
  }
  return entries_[absolute_index - first_];
}

std::vector<ReplayBuffer::EpisodeRange> ReplayBuffer::episodes() const {
  std::lock_guard lock(mu_);
  return {episodes_.begin(), episodes_.end()};
}

std::vector<EnvState> ReplayBuffer::recent_states(std::size_t n) const {
  std::lock_guard lock(mu_);
  const std::size_t count = std::min(n, entries_.size());
  std::vector<EnvState> out;
  out.reserve(count);
  for (std::size_t i = entries_.size() - count; i < entries_.size(); ++i) out.push_back(entries_[i].next_state);
  return out;
}

void to_json(nlohmann::json& j, const ReplayBuffer& b) {
  std::lock_guard lock(b.mu_);
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : b.episodes_) eps.push_back({e.episode, e.begin, e.end});
  j = nlohmann::json{{"capacity", b.capacity_},
                     {"first", b.first_},
                     {"entries", nlohmann::json(std::vector<Transition>(b.entries_.begin(), b.entries_.end()))},
                     {"episodes", eps}};
}

void from_json(const nlohmann::json& j, ReplayBuffer& b) {
  std::lock_guard lock(b.mu_);
  b.capacity_ = j.at("capacity");
  b.first_ = j.at("first");
  auto entries = j.at("entries").get<std::vector<Transition>>();
  b.entries_.assign(entries.begin(), entries.end());
  b.episodes_.clear();
  for (const auto& e : j.at("episodes")) b.episodes_.push_back({e[0].get<std::int64_t>(), e[1], e[2]});
}

// ---- SkillPrior ----

SkillPrior::SkillPrior(int num_skills) {
  if (num_skills <= 0) throw InputError("skill prior needs at least one skill");
  probs_.assign(static_cast<std::size_t>(num_skills), 1.0 / num_skills);
  // -log N rather than log(1/N) so a 1/N classifier cancels exactly.
  log_probs_.assign(probs_.size(), -std::log(static_cast<double>(num_skills)));
}

SkillPrior::SkillPrior(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw InputError("skill prior needs at least one skill");
  const double total = std::accumulate(probs_.begin(), probs_.end(), 0.0);
  for (double p : probs_) {
    if (!(p >= 0.0)) throw InputError("skill probabilities must be non-negative");
  }
  if (std::abs(total - 1.0) > 1e-9) throw InputError("skill probabilities must sum to 1");
  for (double p : probs_) log_probs_.push_back(std::log(p));
}

double SkillPrior::prob(int z) const {
  if (z < 0 || z >= num_skills()) throw InputError("skill index out of range");
  return probs_[static_cast<std::size_t>(z)];
}

double SkillPrior::log_prob(int z) const {
  prob(z);
  return log_probs_[static_cast<std::size_t>(z)];
}

int SkillPrior::sample(Rng& rng) const {
  return std::discrete_distribution<int>(probs_.begin(), probs_.end())(rng);
}

// ---- LatentPolicy ----

void to_json(nlohmann::json& j, const LearnerConfig& c) {
  j = nlohmann::json{{"hidden", c.hidden},
                     {"hidden_layers", c.hidden_layers},
                     {"actor_lr", c.actor_lr},
                     {"critic_lr", c.critic_lr},
                     {"alpha_lr", c.alpha_lr},
                     {"gamma", c.gamma},
                     {"tau", c.tau},
                     {"batch_size", c.batch_size},
                     {"init_temperature", c.init_temperature},
                     {"learning_starts", c.learning_starts},
                     {"updates_per_step", c.updates_per_step}};
}

void from_json(const nlohmann::json& j, LearnerConfig& c) {
  c.hidden = j.value("hidden", c.hidden);
  c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
  c.actor_lr = j.value("actor_lr", c.actor_lr);
  c.critic_lr = j.value("critic_lr", c.critic_lr);
  c.alpha_lr = j.value("alpha_lr", c.alpha_lr);
  c.gamma = j.value("gamma", c.gamma);
  c.tau = j.value("tau", c.tau);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.init_temperature = j.value("init_temperature", c.init_temperature);
  c.learning_starts = j.value("learning_starts", c.learning_starts);
  c.updates_per_step = j.value("updates_per_step", c.updates_per_step);
}

LatentPolicy::LatentPolicy(const EnvConfig& env, int num_skills, const LearnerConfig& config, Rng& rng)
    : env_(env), num_skills_(num_skills), action_dim_(env.action_dim()), config_(config) {
  if (num_skills <= 0) throw InputError("policy needs at least one skill");
  const int in = env.state_dim() + num_skills;
  std::vector<int> actor_sizes{in};
  std::vector<int> critic_sizes{in + action_dim_};
  for (int l = 0; l < config.hidden_layers; ++l) {
    actor_sizes.push_back(config.hidden);
    critic_sizes.push_back(config.hidden);
  }
  actor_sizes.push_back(2 * action_dim_);
  critic_sizes.push_back(1);
  actor_ = Mlp(actor_sizes, Activation::kRelu, Activation::kIdentity, rng);
  for (int i = 0; i < 2; ++i) {
    critics_[i] = Mlp(critic_sizes, Activation::kRelu, Activation::kIdentity, rng);
    targets_[i] = critics_[i];
    critic_opt_[i] = Adam(critics_[i].num_params(), {.lr = config.critic_lr});
  }
  actor_opt_ = Adam(actor_.num_params(), {.lr = config.actor_lr});
  log_alpha_ = std::log(config.init_temperature);
  alpha_opt_ = Adam(1, {.lr = config.alpha_lr});
}

double LatentPolicy::temperature() const { return std::exp(log_alpha_); }

void LatentPolicy::check_skill(int skill) const {
  if (skill < 0 || skill >= num_skills_) {
    throw InputError("skill " + std::to_string(skill) + " out of range [0, " + std::to_string(num_skills_) + ")");
  }
}

Mat LatentPolicy::policy_input(const std::vector<const EnvState*>& states, const std::vector<int>& skills) const {
  const int sd = env_.state_dim();
  Mat x = Mat::Zero(sd + num_skills_, static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    x.col(col).head(sd) = normalize_state(states[i]->coords, env_);
    x(sd + skills[i], col) = 1.0;
  }
  return x;
}

LatentPolicy::ActorSample LatentPolicy::sample_actions(const Mat& actor_out, Rng& rng) const {
  const Eigen::Index b = actor_out.cols();
  const int a = action_dim_;
  ActorSample s;
  s.log_std_raw = actor_out.bottomRows(a);
  const Mat log_std =
      (kLogStdMin + 0.5 * (kLogStdMax - kLogStdMin) * (s.log_std_raw.array().tanh() + 1.0)).matrix();
  s.std = log_std.array().exp().matrix();
  s.eps.resize(a, b);
  for (Eigen::Index c = 0; c < b; ++c) {
    for (int r = 0; r < a; ++r) s.eps(r, c) = standard_normal(rng);
  }
  const Mat u = actor_out.topRows(a) + s.std.cwiseProduct(s.eps);
  s.action = u.array().tanh().matrix();
  s.log_prob.resize(b);
  for (Eigen::Index c = 0; c < b; ++c) {
    double lp = 0.0;
    for (int r = 0; r < a; ++r) {
      const double x = u(r, c);
      const double log_one_minus_tanh_sq = 2.0 * (std::log(2.0) - x - softplus(-2.0 * x));
      lp += -0.5 * s.eps(r, c) * s.eps(r, c) - log_std(r, c) - kHalfLog2Pi - log_one_minus_tanh_sq;
    }
    s.log_prob[c] = lp;
  }
  return s;
}

EnvAction LatentPolicy::select_action(const EnvState& state, int skill, bool deterministic, Rng& rng) const {
  check_skill(skill);
  const Mat x = policy_input({&state}, {skill});
  const Mat out = actor_.forward(x);
  if (deterministic) return EnvAction{out.col(0).head(action_dim_).array().tanh().matrix()};
  return EnvAction{sample_actions(out, rng).action.col(0)};
}

LossReport LatentPolicy::update(const std::vector<RewardedTransition>& batch, Rng& rng) {
  if (batch.empty()) throw InputError("policy update needs a nonempty batch");
  const auto b = static_cast<Eigen::Index>(batch.size());
  std::vector<const EnvState*> states, next_states;
  std::vector<int> skills;
  Vec rewards(b);
  Mat actions(action_dim_, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& rt = batch[static_cast<std::size_t>(i)];
    if (!std::isfinite(rt.reward)) {
      throw InputError("non-finite reward at batch entry " + std::to_string(i));
    }
    check_skill(rt.transition.skill);
    states.push_back(&rt.transition.state);
    next_states.push_back(&rt.transition.next_state);
    skills.push_back(rt.transition.skill);
    rewards[i] = rt.reward;
    actions.col(i) = rt.transition.action.components.cwiseMax(-1.0).cwiseMin(1.0);
  }
  const Mat x = policy_input(states, skills);
  const Mat x_next = policy_input(next_states, skills);
  const double alpha = temperature();
  LossReport report;

  // Critic targets. Episodes only end on the time limit, so every transition bootstraps.
  Vec target(b);
  {
    const ActorSample next = sample_actions(actor_.forward(x_next), rng);
    Mat q_in(x_next.rows() + action_dim_, b);
    q_in << x_next, next.action;
    const Mat q1 = targets_[0].forward(q_in);
    const Mat q2 = targets_[1].forward(q_in);
    for (Eigen::Index i = 0; i < b; ++i) {
      target[i] = rewards[i] + config_.gamma * (std::min(q1(0, i), q2(0, i)) - alpha * next.log_prob[i]);
    }
  }

  Mat q_in(x.rows() + action_dim_, b);
  q_in << x, actions;
  for (int c = 0; c < 2; ++c) {
    Mlp::Tape tape;
    const Mat q = critics_[c].forward(q_in, tape);
    const Vec diff = q.row(0).transpose() - target;
    report.critic_loss += diff.squaredNorm() / static_cast<double>(b);
    Vec grad = Vec::Zero(critics_[c].num_params());
    critics_[c].backward(tape, (2.0 / static_cast<double>(b)) * diff.transpose(), &grad);
    critic_opt_[c].step(critics_[c].params(), grad);
  }

  // Actor: minimize E[alpha * log pi(a|s) - min Q(s, a)] with the reparameterized sample.
  Vec log_prob;
  {
    Mlp::Tape actor_tape;
    const Mat out = actor_.forward(x, actor_tape);
    const ActorSample s = sample_actions(out, rng);
    log_prob = s.log_prob;
    Mat qa_in(x.rows() + action_dim_, b);
    qa_in << x, s.action;
    Mlp::Tape t1, t2;
    const Mat q1 = critics_[0].forward(qa_in, t1);
    const Mat q2 = critics_[1].forward(qa_in, t2);
    Mat sel1 = Mat::Zero(1, b), sel2 = Mat::Zero(1, b);
    double q_min_sum = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
      if (q1(0, i) <= q2(0, i)) {
        sel1(0, i) = 1.0;
        q_min_sum += q1(0, i);
      } else {
        sel2(0, i) = 1.0;
        q_min_sum += q2(0, i);
      }
    }
    const Mat dq_dx = critics_[0].backward(t1, sel1, nullptr) + critics_[1].backward(t2, sel2, nullptr);
    const Mat dq_da = dq_dx.bottomRows(action_dim_);
    report.actor_loss = (alpha * log_prob.sum() - q_min_sum) / static_cast<double>(b);

    Mat d_out(2 * action_dim_, b);
    const double inv_b = 1.0 / static_cast<double>(b);
    for (Eigen::Index i = 0; i < b; ++i) {
      for (int r = 0; r < action_dim_; ++r) {
        const double a = s.action(r, i);
        const double dq_du = dq_da(r, i) * (1.0 - a * a);
        const double sig_eps = s.std(r, i) * s.eps(r, i);
        const double d_mean = alpha * 2.0 * a - dq_du;
        const double d_log_std = alpha * (-1.0 + 2.0 * a * sig_eps) - dq_du * sig_eps;
        const double th = std::tanh(s.log_std_raw(r, i));
        const double dlogstd_draw = 0.5 * (kLogStdMax - kLogStdMin) * (1.0 - th * th);
        d_out(r, i) = d_mean * inv_b;
        d_out(action_dim_ + r, i) = d_log_std * dlogstd_draw * inv_b;
      }
    }
    Vec grad = Vec::Zero(actor_.num_params());
    actor_.backward(actor_tape, d_out, &grad);
    actor_opt_.step(actor_.params(), grad);
  }

  // Temperature.
  {
    const double target_entropy = -static_cast<double>(action_dim_);
    const double mean_term = (log_prob.array() + target_entropy).mean();
    report.temperature_loss = -log_alpha_ * mean_term;
    Vec la(1), g(1);
    la[0] = log_alpha_;
    g[0] = -mean_term;
    alpha_opt_.step(la, g);
    log_alpha_ = la[0];
  }
  report.temperature = temperature();
  soft_update_targets();
  return report;
}

void LatentPolicy::soft_update_targets() {
  for (int c = 0; c < 2; ++c) {
    targets_[c].params() = (1.0 - config_.tau) * targets_[c].params() + config_.tau * critics_[c].params();
  }
}

void to_json(nlohmann::json& j, const LatentPolicy& p) {
  j = nlohmann::json{{"env", p.env_},
                     {"num_skills", p.num_skills_},
                     {"config", p.config_},
                     {"actor", p.actor_},
                     {"critics", {p.critics_[0], p.critics_[1]}},
                     {"targets", {p.targets_[0], p.targets_[1]}},
                     {"actor_opt", p.actor_opt_},
                     {"critic_opt", {p.critic_opt_[0], p.critic_opt_[1]}},
                     {"log_alpha", p.log_alpha_},
                     {"alpha_opt", p.alpha_opt_}};
}

void from_json(const nlohmann::json& j, LatentPolicy& p) {
  p.env_ = j.at("env").get<EnvConfig>();
  p.num_skills_ = j.at("num_skills");
  p.config_ = j.at("config").get<LearnerConfig>();
  p.action_dim_ = p.env_.action_dim();
  p.actor_ = j.at("actor").get<Mlp>();
  for (int c = 0; c < 2; ++c) {
    p.critics_[c] = j.at("critics")[c].get<Mlp>();
    p.targets_[c] = j.at("targets")[c].get<Mlp>();
    p.critic_opt_[c] = j.at("critic_opt")[c].get<Adam>();
  }
  p.actor_opt_ = j.at("actor_opt").get<Adam>();
  p.log_alpha_ = j.at("log_alpha");
  p.alpha_opt_ = j.at("alpha_opt").get<Adam>();
}

}  // namespace cdp
