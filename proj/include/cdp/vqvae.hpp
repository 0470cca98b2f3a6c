#pragma once

#include <optional>
#include <vector>

#include <json.hpp>

#include "cdp/nn.hpp"
#include "cdp/preference.hpp"
#include "cdp/region.hpp"

namespace cdp {

enum class InputSpace { kRawState, kPreferredLatent };

std::string to_string(InputSpace space);
InputSpace parse_input_space(const std::string& text);

struct CodebookConfig {
  int num_codes = 10;
  int code_dim = 16;
  int hidden = 64;
  int hidden_layers = 2;
  double beta_commit = 0.25;
  double lr = 1e-3;
  int batch_size = 128;
  int revive_every = 50;  // steps between dead-code checks inside fit_discovery
  InputSpace input_space = InputSpace::kRawState;
};

void to_json(nlohmann::json& j, const CodebookConfig& c);
void from_json(const nlohmann::json& j, CodebookConfig& c);

struct VQLossReport {
  double reconstruction = 0.0;  // Gaussian negative log-likelihood, unit variance
  double codebook = 0.0;
  double commitment = 0.0;      // unweighted; enters total as beta_commit * commitment
  double total = 0.0;
  double mse = 0.0;             // mean squared reconstruction error per input coordinate
};

struct LossTerms {
  bool reconstruction = true;
  bool codebook = true;
  bool commitment = true;
};

struct Freeze {
  bool encoder = false;
  bool decoder = false;
  bool codebook = false;
};

struct VQGradients {
  Vec encoder;
  Vec decoder;
  Mat codebook;            // code_dim x num_codes
  Mat d_z_q_reconstruction;  // reconstruction gradient at the quantized embedding
  Mat d_z_e_reconstruction;  // same gradient as seen by the encoder output
  std::vector<int> codes;
  VQLossReport loss;
};

/// VQ-VAE skill discriminator: encoder -> nearest of N embeddings -> decoder
/// mean of a unit-variance Gaussian over the input space. Decoder means at the
/// embeddings are the skill centroids.
class SkillCodebook {
 public:
  SkillCodebook() = default;
  SkillCodebook(int input_dim, const CodebookConfig& config, Rng& rng);

  int input_dim() const { return input_dim_; }
  int num_codes() const { return config_.num_codes; }
  int code_dim() const { return config_.code_dim; }
  const CodebookConfig& config() const { return config_; }

  Vec encode(const Vec& x) const;
  std::pair<int, Vec> quantize(const Vec& z_e) const;

  Vec centroid(int k) const;
  const Mat& centroids() const { return centroids_; }  // input_dim x N
  double log_likelihood(const Vec& x, int k) const;
  int nearest_centroid(const Vec& x) const;

  VQGradients gradients(const Mat& batch, LossTerms terms = {}) const;
  VQLossReport train_step(const std::vector<Vec>& batch, Freeze freeze = {}, LossTerms terms = {});
  VQLossReport evaluate(const std::vector<Vec>& batch) const;

  // Sets every embedding to the encoding of a random sample.
  void initialize_from(const std::vector<Vec>& samples, Rng& rng);
  void revive(int k, const Vec& sample);

  Mat& embeddings() { return embeddings_; }
  const Mat& embeddings() const { return embeddings_; }
  const Mlp& encoder() const { return encoder_; }
  const Mlp& decoder() const { return decoder_; }

  bool trained() const { return version_ > 0; }
  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }
  std::optional<std::uint64_t> reward_model_version() const { return reward_model_version_; }
  void set_reward_model_version(std::uint64_t v) { reward_model_version_ = v; }

  // Raw coordinates or f_psi(state), depending on the input space.
  Vec input_for(const EnvState& state, const RewardModel* model) const;

  friend void to_json(nlohmann::json& j, const SkillCodebook& c);
  friend void from_json(const nlohmann::json& j, SkillCodebook& c);

 private:
  void refresh_centroids();

  int input_dim_ = 0;
  CodebookConfig config_;
  Mlp encoder_;
  Mlp decoder_;
  Mat embeddings_;
  Mat centroids_;
  Adam encoder_opt_;
  Adam decoder_opt_;
  Adam codebook_opt_;
  std::uint64_t version_ = 0;
  std::optional<std::uint64_t> reward_model_version_;
};

struct DiscoveryReport {
  VQLossReport last;
  std::vector<int> usage;  // member count per code after fitting
  int revived = 0;
};

// Train on minibatches drawn uniformly from the region members, mapped through
// f_psi when the codebook works in the preferred-latent space.
DiscoveryReport fit_discovery(SkillCodebook& codebook, const RegionEstimate& region, const RewardModel* model,
                              int steps, Rng& rng);

}  // namespace cdp
