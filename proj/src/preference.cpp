#include "cdp/preference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

namespace cdp {

namespace {

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

nlohmann::json states_json(const std::vector<EnvState>& states) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : states) arr.push_back(to_std(s.coords));
  return arr;
}

std::vector<EnvState> states_from_json(const nlohmann::json& arr) {
  std::vector<EnvState> out;
  for (const auto& s : arr) out.push_back(EnvState{from_std(s.get<std::vector<double>>())});
  return out;
}

double segment_sum(const RewardModel& model, const Segment& seg) {
  return model.predict_rewards(seg.states).sum();
}

}  // namespace

std::string to_string(Label label) {
  switch (label) {
    case Label::kFirst:
      return "first";
    case Label::kSecond:
      return "second";
    case Label::kSkip:
      return "skip";
  }
  return "skip";
}

Label parse_label(const std::string& text) {
  if (text == "first") return Label::kFirst;
  if (text == "second") return Label::kSecond;
  if (text == "skip") return Label::kSkip;
  throw InputError("unknown label '" + text + "' (expected first, second or skip)");
}

std::string to_string(Labeler labeler) { return labeler == Labeler::kOracle ? "oracle" : "human"; }

PreferencePair PreferencePair::swapped() const {
  PreferencePair p = *this;
  std::swap(p.first, p.second);
  if (label == Label::kFirst) p.label = Label::kSecond;
  else if (label == Label::kSecond) p.label = Label::kFirst;
  return p;
}

nlohmann::json to_record(const PreferencePair& pair) {
  return nlohmann::json{{"pair_id", pair.pair_id},
                        {"episodes", {pair.first.episode, pair.second.episode}},
                        {"offsets", {pair.first.offset, pair.second.offset}},
                        {"first", states_json(pair.first.states)},
                        {"second", states_json(pair.second.states)},
                        {"label", to_string(pair.label)},
                        {"labeler", to_string(pair.labeler)},
                        {"timestamp", pair.timestamp}};
}

PreferencePair from_record(const nlohmann::json& record) {
  PreferencePair p;
  p.pair_id = record.at("pair_id");
  p.first.episode = record.at("episodes")[0];
  p.second.episode = record.at("episodes")[1];
  p.first.offset = record.at("offsets")[0];
  p.second.offset = record.at("offsets")[1];
  p.first.states = states_from_json(record.at("first"));
  p.second.states = states_from_json(record.at("second"));
  p.label = parse_label(record.at("label"));
  p.labeler = record.at("labeler").get<std::string>() == "human" ? Labeler::kHuman : Labeler::kOracle;
  p.timestamp = record.at("timestamp");
  return p;
}

// ---- PreferenceDataset ----

PreferenceDataset::PreferenceDataset(double holdout_fraction) : holdout_fraction_(holdout_fraction) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) throw InputError("holdout fraction must be in [0, 1)");
}

PreferenceDataset::PreferenceDataset(double holdout_fraction, std::filesystem::path file, bool truncate)
    : PreferenceDataset(holdout_fraction) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  if (truncate) std::ofstream(file, std::ios::trunc);
  file_ = std::move(file);
}

PreferenceDataset::PreferenceDataset(PreferenceDataset&& other) noexcept
    : holdout_fraction_(other.holdout_fraction_),
      file_(std::move(other.file_)),
      visible_(std::move(other.visible_)),
      staged_(std::move(other.staged_)),
      next_id_(other.next_id_) {}

PreferenceDataset PreferenceDataset::load(const std::filesystem::path& file, double holdout_fraction) {
  PreferenceDataset ds(holdout_fraction);
  std::ifstream in(file);
  if (!in) throw InputError("cannot open preference dataset " + file.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    PreferencePair p = from_record(nlohmann::json::parse(line));
    ds.next_id_ = std::max(ds.next_id_, p.pair_id + 1);
    ds.visible_.push_back(std::move(p));
  }
  ds.file_ = file;
  return ds;
}

void PreferenceDataset::append(PreferencePair pair) {
  std::lock_guard lock(mu_);
  pair.pair_id = next_id_++;
  if (file_) {
    std::ofstream out(*file_, std::ios::app);
    out << to_record(pair).dump() << '\n';
  }
  staged_.push_back(std::move(pair));
}

std::size_t PreferenceDataset::publish() {
  std::lock_guard lock(mu_);
  const std::size_t n = staged_.size();
  for (auto& p : staged_) visible_.push_back(std::move(p));
  staged_.clear();
  return n;
}

std::vector<PreferencePair> PreferenceDataset::pairs() const {
  std::lock_guard lock(mu_);
  return visible_;
}

void PreferenceDataset::split(std::vector<PreferencePair>* train, std::vector<PreferencePair>* holdout) const {
  std::lock_guard lock(mu_);
  std::size_t i = 0;
  for (const auto& p : visible_) {
    if (p.label == Label::kSkip) continue;
    const double f = holdout_fraction_;
    const bool is_holdout = std::floor(static_cast<double>(i + 1) * f) > std::floor(static_cast<double>(i) * f);
    ++i;
    auto* dst = is_holdout ? holdout : train;
    if (dst != nullptr) dst->push_back(p);
  }
}

std::vector<PreferencePair> PreferenceDataset::training_pairs() const {
  std::vector<PreferencePair> out;
  split(&out, nullptr);
  return out;
}

std::vector<PreferencePair> PreferenceDataset::holdout_pairs() const {
  std::vector<PreferencePair> out;
  split(nullptr, &out);
  return out;
}

std::size_t PreferenceDataset::size() const {
  std::lock_guard lock(mu_);
  return visible_.size();
}

std::size_t PreferenceDataset::staged() const {
  std::lock_guard lock(mu_);
  return staged_.size();
}

std::int64_t PreferenceDataset::next_pair_id() {
  std::lock_guard lock(mu_);
  return next_id_;
}

// ---- RewardModel ----

void to_json(nlohmann::json& j, const RewardModelConfig& c) {
  j = nlohmann::json{{"hidden", c.hidden},   {"hidden_layers", c.hidden_layers}, {"latent", c.latent},
                     {"ensemble", c.ensemble}, {"lr", c.lr},                     {"weight_decay", c.weight_decay},
                     {"batch_size", c.batch_size}};
}

void from_json(const nlohmann::json& j, RewardModelConfig& c) {
  c.hidden = j.value("hidden", c.hidden);
  c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
  c.latent = j.value("latent", c.latent);
  c.ensemble = j.value("ensemble", c.ensemble);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
}

RewardModel::RewardModel(const EnvConfig& env, const RewardModelConfig& config, Rng& rng)
    : env_(env), config_(config) {
  if (config.ensemble <= 0 || config.latent <= 0) throw InputError("reward model needs positive ensemble and latent");
  std::vector<int> sizes{env.state_dim()};
  for (int l = 0; l < config.hidden_layers; ++l) sizes.push_back(config.hidden);
  sizes.push_back(config.latent);
  for (int e = 0; e < config.ensemble; ++e) {
    Member m;
    m.features = Mlp(sizes, Activation::kRelu, Activation::kTanh, rng);
    m.head = Mlp({config.latent, 1}, Activation::kIdentity, Activation::kIdentity, rng);
    members_.push_back(std::move(m));
  }
  optimizer_ = Adam(flat_params().size(), {.lr = config.lr, .weight_decay = config.weight_decay});
}

Vec RewardModel::latent_features(const EnvState& state) const {
  const Vec x = normalize_state(state.coords, env_);
  Vec out(latent_dim());
  for (int e = 0; e < config_.ensemble; ++e) {
    out.segment(e * config_.latent, config_.latent) = members_[e].features.forward(x).col(0);
  }
  return out;
}

double RewardModel::head(const Vec& latent) const {
  if (latent.size() != latent_dim()) throw InputError("latent dimension mismatch");
  double sum = 0.0;
  for (int e = 0; e < config_.ensemble; ++e) {
    const Vec z = latent.segment(e * config_.latent, config_.latent);
    sum += std::tanh(members_[e].head.forward(z)(0, 0));
  }
  return sum / config_.ensemble + output_shift_;
}

Vec RewardModel::predict_rewards(const std::vector<EnvState>& states) const {
  // One state at a time so a state's reward never depends on what it is batched with.
  Vec out(static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) out[static_cast<Eigen::Index>(i)] = predict_reward(states[i]);
  return out;
}

std::vector<double> RewardModel::member_preferences(const PreferencePair& pair) const {
  if (pair.first.states.size() != pair.second.states.size()) throw InputError("segment length mismatch");
  std::vector<double> prefs;
  for (const auto& m : members_) {
    auto sum = [&](const Segment& seg) {
      double s = 0.0;
      for (const auto& st : seg.states) {
        s += std::tanh(m.head.forward(m.features.forward(normalize_state(st.coords, env_)))(0, 0));
      }
      return s;
    };
    prefs.push_back(sigmoid(sum(pair.first) - sum(pair.second)));
  }
  return prefs;
}

Vec RewardModel::flat_params() const {
  Eigen::Index n = 0;
  for (const auto& m : members_) n += m.features.num_params() + m.head.num_params();
  Vec out(n);
  Eigen::Index off = 0;
  for (const auto& m : members_) {
    out.segment(off, m.features.num_params()) = m.features.params();
    off += m.features.num_params();
    out.segment(off, m.head.num_params()) = m.head.params();
    off += m.head.num_params();
  }
  return out;
}

void RewardModel::set_flat_params(const Vec& params) {
  Eigen::Index off = 0;
  for (auto& m : members_) {
    m.features.params() = params.segment(off, m.features.num_params());
    off += m.features.num_params();
    m.head.params() = params.segment(off, m.head.num_params());
    off += m.head.num_params();
  }
  if (off != params.size()) throw InputError("reward model parameter size mismatch");
}

void to_json(nlohmann::json& j, const RewardModel& m) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& mem : m.members_) members.push_back({{"features", mem.features}, {"head", mem.head}});
  j = nlohmann::json{{"env", m.env_},           {"config", m.config_},   {"members", members},
                     {"optimizer", m.optimizer_}, {"version", m.version_}, {"shift", m.output_shift_}};
}

void from_json(const nlohmann::json& j, RewardModel& m) {
  m.env_ = j.at("env").get<EnvConfig>();
  m.config_ = j.at("config").get<RewardModelConfig>();
  m.members_.clear();
  for (const auto& mem : j.at("members")) {
    m.members_.push_back({mem.at("features").get<Mlp>(), mem.at("head").get<Mlp>()});
  }
  m.optimizer_ = j.at("optimizer").get<Adam>();
  m.version_ = j.at("version");
  m.output_shift_ = j.at("shift");
}

double bradley_terry(double sum_first, double sum_second) { return sigmoid(sum_first - sum_second); }

double predict_preference(const RewardModel& model, const PreferencePair& pair) {
  if (pair.first.states.size() != pair.second.states.size()) throw InputError("segment length mismatch");
  return bradley_terry(segment_sum(model, pair.first), segment_sum(model, pair.second));
}

RewardLoss reward_loss(const RewardModel& model, const std::vector<PreferencePair>& batch) {
  if (batch.empty()) throw InputError("reward loss needs a nonempty batch");
  const std::size_t len = batch.front().first.states.size();
  for (const auto& p : batch) {
    if (p.label == Label::kSkip) throw InputError("skip-labeled pair in reward loss batch");
    if (p.first.states.size() != len || p.second.states.size() != len) throw InputError("segment length mismatch");
  }
  const auto b = static_cast<Eigen::Index>(batch.size());
  const auto l = static_cast<Eigen::Index>(len);
  // Columns: pair i first segment at [2*i*l, (2*i+1)*l), second right after.
  Mat x(model.env_.state_dim(), 2 * b * l);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& p = batch[static_cast<std::size_t>(i)];
    for (Eigen::Index t = 0; t < l; ++t) {
      x.col(2 * i * l + t) = normalize_state(p.first.states[static_cast<std::size_t>(t)].coords, model.env_);
      x.col((2 * i + 1) * l + t) = normalize_state(p.second.states[static_cast<std::size_t>(t)].coords, model.env_);
    }
  }
  const double e_count = static_cast<double>(model.members_.size());
  RewardLoss result;
  result.gradient = Vec::Zero(model.flat_params().size());
  Eigen::Index off = 0;
  for (const auto& m : model.members_) {
    Mlp::Tape ft, ht;
    const Mat z = m.features.forward(x, ft);
    const Mat o = m.head.forward(z, ht);
    const Mat r = o.array().tanh().matrix();
    Mat d_r(1, r.cols());
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& p = batch[static_cast<std::size_t>(i)];
      const double delta = r.block(0, 2 * i * l, 1, l).sum() - r.block(0, (2 * i + 1) * l, 1, l).sum();
      const double y0 = p.label == Label::kFirst ? 1.0 : 0.0;
      const double y1 = 1.0 - y0;
      result.loss -= (y0 * log_sigmoid(delta) + y1 * log_sigmoid(-delta)) / (static_cast<double>(b) * e_count);
      const double g = (sigmoid(delta) - y0) / (static_cast<double>(b) * e_count);
      d_r.block(0, 2 * i * l, 1, l).setConstant(g);
      d_r.block(0, (2 * i + 1) * l, 1, l).setConstant(-g);
    }
    const Mat d_o = (d_r.array() * (1.0 - r.array().square())).matrix();
    Vec g_head = Vec::Zero(m.head.num_params());
    const Mat d_z = m.head.backward(ht, d_o, &g_head);
    Vec g_feat = Vec::Zero(m.features.num_params());
    m.features.backward(ft, d_z, &g_feat);
    result.gradient.segment(off, g_feat.size()) = g_feat;
    off += g_feat.size();
    result.gradient.segment(off, g_head.size()) = g_head;
    off += g_head.size();
  }
  return result;
}

double preference_accuracy(const RewardModel& model, const std::vector<PreferencePair>& pairs) {
  if (pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t correct = 0;
  for (const auto& p : pairs) {
    const double prob = predict_preference(model, p);
    if ((p.label == Label::kFirst && prob > 0.5) || (p.label == Label::kSecond && prob < 0.5)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

namespace {

TrainingReport train_loop(RewardModel& model, const PreferenceDataset& dataset, int steps, int epochs, Rng& rng) {
  const auto train = dataset.training_pairs();
  const auto holdout = dataset.holdout_pairs();
  if (train.size() + holdout.size() < 2 || train.empty()) {
    throw StateError("reward training needs at least 2 labeled (non-skip) pairs");
  }
  TrainingReport report;
  report.num_train = train.size();
  report.num_holdout = holdout.size();
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(model.config().batch_size), train.size());
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  int epochs_done = 0;
  Vec params = model.flat_params();
  while (true) {
    if (steps >= 0 && report.steps >= steps) break;
    if (cursor + bs > order.size()) {
      if (epochs >= 0 && epochs_done >= epochs) break;
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
      ++epochs_done;
    }
    std::vector<PreferencePair> batch;
    for (std::size_t i = 0; i < bs; ++i) batch.push_back(train[order[cursor + i]]);
    cursor += bs;
    const RewardLoss rl = reward_loss(model, batch);
    model.optimizer().step(params, rl.gradient);
    model.set_flat_params(params);
    report.final_loss = rl.loss;
    ++report.steps;
  }
  model.bump_version();
  report.train_accuracy = preference_accuracy(model, train);
  report.holdout_accuracy = preference_accuracy(model, holdout);
  return report;
}

}  // namespace

TrainingReport train_reward(RewardModel& model, const PreferenceDataset& dataset, int epochs, Rng& rng) {
  return train_loop(model, dataset, -1, epochs, rng);
}

TrainingReport train_reward_steps(RewardModel& model, const PreferenceDataset& dataset, int steps, Rng& rng) {
  return train_loop(model, dataset, steps, -1, rng);
}

// ---- Queries ----

std::vector<Segment> cut_segments(const ReplayBuffer& buffer, std::size_t length) {
  if (length == 0) throw InputError("segment length must be positive");
  std::vector<Segment> out;
  for (const auto& ep : buffer.episodes()) {
    for (std::size_t start = ep.begin; start + length <= ep.end; start += length) {
      Segment seg;
      seg.episode = ep.episode;
      seg.offset = start - ep.begin;
      for (std::size_t i = start; i < start + length; ++i) seg.states.push_back(buffer.at(i).next_state);
      out.push_back(std::move(seg));
    }
  }
  return out;
}

double preference_variance(const RewardModel& model, const PreferencePair& pair) {
  const auto prefs = model.member_preferences(pair);
  const double mean = std::accumulate(prefs.begin(), prefs.end(), 0.0) / static_cast<double>(prefs.size());
  double var = 0.0;
  for (double p : prefs) var += (p - mean) * (p - mean);
  return var / static_cast<double>(prefs.size());
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> distinct_pairs(std::size_t n, std::size_t k, Rng& rng) {
  const std::size_t total = n * (n - 1) / 2;
  if (k > total) throw StateError("not enough segments for " + std::to_string(k) + " distinct pairs");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (total <= 4 * k) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) out.emplace_back(i, j);
    }
    std::shuffle(out.begin(), out.end(), rng);
    out.resize(k);
    return out;
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  while (out.size() < k) {
    std::size_t i = uniform_index(rng, n);
    std::size_t j = uniform_index(rng, n);
    if (i == j) continue;
    if (i > j) std::swap(i, j);
    if (seen.insert({i, j}).second) out.emplace_back(i, j);
  }
  return out;
}

}  // namespace

std::vector<PreferencePair> sample_queries(const ReplayBuffer& buffer, std::size_t k, QueryStrategy strategy,
                                           const RewardModel& model, std::size_t segment_length, Rng& rng,
                                           std::size_t pool_factor) {
  const auto segments = cut_segments(buffer, segment_length);
  if (segments.size() < 2) throw StateError("need at least 2 full segments in the buffer to build queries");
  const std::size_t total = segments.size() * (segments.size() - 1) / 2;
  const bool rank = strategy == QueryStrategy::kDisagreement && model.ensemble_size() > 1;
  const std::size_t draw = rank ? std::min(total, std::max(k, pool_factor * k)) : k;
  const auto idx = distinct_pairs(segments.size(), draw, rng);
  std::vector<PreferencePair> pairs;
  pairs.reserve(idx.size());
  for (const auto& [i, j] : idx) {
    PreferencePair p;
    p.first = segments[i];
    p.second = segments[j];
    pairs.push_back(std::move(p));
  }
  if (!rank) return pairs;
  std::vector<double> var;
  for (const auto& p : pairs) var.push_back(preference_variance(model, p));
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return var[a] > var[b]; });
  std::vector<PreferencePair> top;
  for (std::size_t i = 0; i < k; ++i) top.push_back(pairs[order[i]]);
  return top;
}

Label oracle_label(const PreferencePair& pair, const OracleReward& oracle, double tie_epsilon) {
  double a = 0.0, b = 0.0;
  for (const auto& s : pair.first.states) a += oracle_reward(s, oracle);
  for (const auto& s : pair.second.states) b += oracle_reward(s, oracle);
  if (std::abs(a - b) < tie_epsilon) return Label::kSkip;
  return a > b ? Label::kFirst : Label::kSecond;
}

}  // namespace cdp
