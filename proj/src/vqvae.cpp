#include "cdp/vqvae.hpp"

#include <cmath>
#include <limits>

namespace cdp {

namespace {

const double kLog2Pi = std::log(2.0 * M_PI);

Mat stack(const std::vector<Vec>& xs, int dim) {
  Mat m(dim, static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != dim) throw InputError("codebook input dimension mismatch");
    if (!xs[i].allFinite()) throw InputError("non-finite codebook input at batch entry " + std::to_string(i));
    m.col(static_cast<Eigen::Index>(i)) = xs[i];
  }
  return m;
}

int nearest_column(const Mat& table, const Vec& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < table.cols(); ++k) {
    const double d = (table.col(k) - x).squaredNorm();
    if (d < best_d) {  // strict: ties go to the lowest index
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace

std::string to_string(InputSpace space) {
  return space == InputSpace::kRawState ? "raw_state" : "preferred_latent";
}

InputSpace parse_input_space(const std::string& text) {
  if (text == "raw_state") return InputSpace::kRawState;
  if (text == "preferred_latent") return InputSpace::kPreferredLatent;
  throw ConfigError("unknown input space '" + text + "'");
}

void to_json(nlohmann::json& j, const CodebookConfig& c) {
  j = nlohmann::json{{"num_codes", c.num_codes},       {"code_dim", c.code_dim},   {"hidden", c.hidden},
                     {"hidden_layers", c.hidden_layers}, {"beta_commit", c.beta_commit}, {"lr", c.lr},
                     {"batch_size", c.batch_size},     {"revive_every", c.revive_every},
                     {"input_space", to_string(c.input_space)}};
}

void from_json(const nlohmann::json& j, CodebookConfig& c) {
  c.num_codes = j.value("num_codes", c.num_codes);
  c.code_dim = j.value("code_dim", c.code_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
  c.beta_commit = j.value("beta_commit", c.beta_commit);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.revive_every = j.value("revive_every", c.revive_every);
  c.input_space = parse_input_space(j.value("input_space", to_string(c.input_space)));
}

SkillCodebook::SkillCodebook(int input_dim, const CodebookConfig& config, Rng& rng)
    : input_dim_(input_dim), config_(config) {
  if (input_dim <= 0 || config.num_codes <= 0 || config.code_dim <= 0) {
    throw InputError("codebook dimensions must be positive");
  }
  std::vector<int> enc{input_dim};
  std::vector<int> dec{config.code_dim};
  for (int l = 0; l < config.hidden_layers; ++l) {
    enc.push_back(config.hidden);
    dec.push_back(config.hidden);
  }
  enc.push_back(config.code_dim);
  dec.push_back(input_dim);
  encoder_ = Mlp(enc, Activation::kRelu, Activation::kIdentity, rng);
  decoder_ = Mlp(dec, Activation::kRelu, Activation::kIdentity, rng);
  embeddings_.resize(config.code_dim, config.num_codes);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.code_dim));
  for (Eigen::Index i = 0; i < embeddings_.size(); ++i) embeddings_.data()[i] = scale * standard_normal(rng);
  encoder_opt_ = Adam(encoder_.num_params(), {.lr = config.lr});
  decoder_opt_ = Adam(decoder_.num_params(), {.lr = config.lr});
  codebook_opt_ = Adam(embeddings_.size(), {.lr = config.lr});
  refresh_centroids();
}

void SkillCodebook::refresh_centroids() { centroids_ = decoder_.forward(embeddings_); }

Vec SkillCodebook::encode(const Vec& x) const {
  if (x.size() != input_dim_) throw InputError("codebook input dimension mismatch");
  return encoder_.forward(x).col(0);
}

std::pair<int, Vec> SkillCodebook::quantize(const Vec& z_e) const {
  if (z_e.size() != config_.code_dim) {
    throw InputError("code dimension " + std::to_string(z_e.size()) + " does not match codebook (" +
                     std::to_string(config_.code_dim) + ")");
  }
  const int k = nearest_column(embeddings_, z_e);
  return {k, embeddings_.col(k)};
}

Vec SkillCodebook::centroid(int k) const {
  if (k < 0 || k >= config_.num_codes) throw InputError("code index " + std::to_string(k) + " out of range");
  return centroids_.col(k);
}

double SkillCodebook::log_likelihood(const Vec& x, int k) const {
  const Vec c = centroid(k);
  if (x.size() != c.size()) throw InputError("log-likelihood input dimension mismatch");
  return -0.5 * (x - c).squaredNorm() - 0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

int SkillCodebook::nearest_centroid(const Vec& x) const {
  if (x.size() != input_dim_) throw InputError("codebook input dimension mismatch");
  return nearest_column(centroids_, x);
}

VQGradients SkillCodebook::gradients(const Mat& x, LossTerms terms) const {
  if (x.cols() == 0) throw InputError("codebook batch must be nonempty");
  if (x.rows() != input_dim_) throw InputError("codebook input dimension mismatch");
  const Eigen::Index b = x.cols();
  const double inv_b = 1.0 / static_cast<double>(b);
  VQGradients g;
  g.encoder = Vec::Zero(encoder_.num_params());
  g.decoder = Vec::Zero(decoder_.num_params());
  g.codebook = Mat::Zero(embeddings_.rows(), embeddings_.cols());

  Mlp::Tape enc_tape, dec_tape;
  const Mat z_e = encoder_.forward(x, enc_tape);
  Mat z_q(z_e.rows(), b);
  g.codes.resize(static_cast<std::size_t>(b));
  for (Eigen::Index i = 0; i < b; ++i) {
    const int k = nearest_column(embeddings_, z_e.col(i));
    g.codes[static_cast<std::size_t>(i)] = k;
    z_q.col(i) = embeddings_.col(k);
  }
  const Mat x_hat = decoder_.forward(z_q, dec_tape);
  const Mat diff = x_hat - x;
  const Mat gap = z_e - z_q;
  const double sq_err = diff.squaredNorm();
  g.loss.reconstruction = 0.5 * sq_err * inv_b + 0.5 * static_cast<double>(input_dim_) * kLog2Pi;
  g.loss.codebook = gap.squaredNorm() * inv_b;
  g.loss.commitment = g.loss.codebook;
  g.loss.total = g.loss.reconstruction + g.loss.codebook + config_.beta_commit * g.loss.commitment;
  g.loss.mse = sq_err * inv_b / static_cast<double>(input_dim_);

  Mat d_z_e = Mat::Zero(z_e.rows(), b);
  if (terms.reconstruction) {
    g.d_z_q_reconstruction = decoder_.backward(dec_tape, diff * inv_b, &g.decoder);
    // Straight-through: the decoder's input gradient is copied onto z_e unchanged.
    g.d_z_e_reconstruction = g.d_z_q_reconstruction;
    d_z_e += g.d_z_e_reconstruction;
  }
  if (terms.codebook) {
    // || sg[z_e] - e ||^2 moves the embeddings only.
    for (Eigen::Index i = 0; i < b; ++i) g.codebook.col(g.codes[static_cast<std::size_t>(i)]) -= 2.0 * inv_b * gap.col(i);
  }
  if (terms.commitment) {
    // beta * || z_e - sg[e] ||^2 moves the encoder only.
    d_z_e += 2.0 * config_.beta_commit * inv_b * gap;
  }
  if (terms.reconstruction || terms.commitment) encoder_.backward(enc_tape, d_z_e, &g.encoder);
  return g;
}

VQLossReport SkillCodebook::train_step(const std::vector<Vec>& batch, Freeze freeze, LossTerms terms) {
  const VQGradients g = gradients(stack(batch, input_dim_), terms);
  // A part with no gradient is left untouched, even if its optimizer carries momentum.
  if (!freeze.encoder && !g.encoder.isZero(0.0)) encoder_opt_.step(encoder_.params(), g.encoder);
  if (!freeze.decoder && !g.decoder.isZero(0.0)) decoder_opt_.step(decoder_.params(), g.decoder);
  if (!freeze.codebook && !g.codebook.isZero(0.0)) {
    Eigen::Map<Vec> flat(embeddings_.data(), embeddings_.size());
    Vec p = flat;
    codebook_opt_.step(p, Eigen::Map<const Vec>(g.codebook.data(), g.codebook.size()));
    flat = p;
  }
  refresh_centroids();
  ++version_;
  return g.loss;
}

VQLossReport SkillCodebook::evaluate(const std::vector<Vec>& batch) const {
  return gradients(stack(batch, input_dim_), LossTerms{false, false, false}).loss;
}

void SkillCodebook::initialize_from(const std::vector<Vec>& samples, Rng& rng) {
  if (samples.empty()) throw InputError("codebook initialization needs samples");
  for (int k = 0; k < config_.num_codes; ++k) embeddings_.col(k) = encode(samples[uniform_index(rng, samples.size())]);
  refresh_centroids();
}

void SkillCodebook::revive(int k, const Vec& sample) {
  embeddings_.col(k) = encode(sample);
  refresh_centroids();
}

Vec SkillCodebook::input_for(const EnvState& state, const RewardModel* model) const {
  if (config_.input_space == InputSpace::kRawState) return state.coords;
  if (model == nullptr) throw InputError("preferred-latent codebook needs the reward model");
  if (reward_model_version_ && *reward_model_version_ != model->version()) {
    throw StateError("codebook was fit on reward model version " + std::to_string(*reward_model_version_) +
                     ", got " + std::to_string(model->version()));
  }
  return model->latent_features(state);
}

void to_json(nlohmann::json& j, const SkillCodebook& c) {
  j = nlohmann::json{{"input_dim", c.input_dim_},
                     {"config", c.config_},
                     {"encoder", c.encoder_},
                     {"decoder", c.decoder_},
                     {"embeddings", to_std(Eigen::Map<const Vec>(c.embeddings_.data(), c.embeddings_.size()))},
                     {"encoder_opt", c.encoder_opt_},
                     {"decoder_opt", c.decoder_opt_},
                     {"codebook_opt", c.codebook_opt_},
                     {"version", c.version_},
                     {"reward_model_version", c.reward_model_version_ ? nlohmann::json(*c.reward_model_version_)
                                                                      : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, SkillCodebook& c) {
  c.input_dim_ = j.at("input_dim");
  c.config_ = j.at("config").get<CodebookConfig>();
  c.encoder_ = j.at("encoder").get<Mlp>();
  c.decoder_ = j.at("decoder").get<Mlp>();
  const Vec flat = from_std(j.at("embeddings").get<std::vector<double>>());
  c.embeddings_ = Eigen::Map<const Mat>(flat.data(), c.config_.code_dim, c.config_.num_codes);
  c.encoder_opt_ = j.at("encoder_opt").get<Adam>();
  c.decoder_opt_ = j.at("decoder_opt").get<Adam>();
  c.codebook_opt_ = j.at("codebook_opt").get<Adam>();
  c.version_ = j.at("version");
  if (j.at("reward_model_version").is_null()) c.reward_model_version_.reset();
  else c.reward_model_version_ = j.at("reward_model_version").get<std::uint64_t>();
  c.refresh_centroids();
}

DiscoveryReport fit_discovery(SkillCodebook& codebook, const RegionEstimate& region, const RewardModel* model,
                              int steps, Rng& rng) {
  if (region.members.empty()) throw StateError("cannot fit the discriminator on an empty region");
  if (codebook.config().input_space == InputSpace::kPreferredLatent) {
    if (model == nullptr) throw InputError("preferred-latent discovery needs the reward model");
    codebook.set_reward_model_version(model->version());
  }
  std::vector<Vec> inputs;
  inputs.reserve(region.members.size());
  for (const auto& s : region.members) inputs.push_back(codebook.input_for(s, model));

  DiscoveryReport report;
  if (!codebook.trained()) codebook.initialize_from(inputs, rng);
  const int n_codes = codebook.num_codes();
  const auto bs = static_cast<std::size_t>(codebook.config().batch_size);
  std::vector<int> window(static_cast<std::size_t>(n_codes), 0);
  for (int step = 1; step <= steps; ++step) {
    std::vector<Vec> batch;
    batch.reserve(bs);
    for (std::size_t i = 0; i < bs; ++i) batch.push_back(inputs[uniform_index(rng, inputs.size())]);
    report.last = codebook.train_step(batch);
    for (const Vec& x : batch) ++window[static_cast<std::size_t>(codebook.quantize(codebook.encode(x)).first)];
    const int every = codebook.config().revive_every;
    if (every > 0 && step % every == 0 && step < steps) {
      for (int k = 0; k < n_codes; ++k) {
        if (window[static_cast<std::size_t>(k)] == 0) {
          codebook.revive(k, inputs[uniform_index(rng, inputs.size())]);
          ++report.revived;
        }
      }
      std::fill(window.begin(), window.end(), 0);
    }
  }
  report.usage.assign(static_cast<std::size_t>(n_codes), 0);
  for (const Vec& x : inputs) ++report.usage[static_cast<std::size_t>(codebook.quantize(codebook.encode(x)).first)];
  codebook.bump_version();
  return report;
}

}  // namespace cdp
