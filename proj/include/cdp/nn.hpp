#pragma once

#include <vector>

#include <json.hpp>

#include "cdp/common.hpp"

namespace cdp {

enum class Activation { kIdentity, kRelu, kTanh };

/// Fully connected network with all weights stored in one flat parameter
/// vector, so optimizers, soft target updates and finite-difference checks can
/// treat it as a plain vector. Samples are columns.
class Mlp {
 public:
  struct Tape {
    std::vector<Mat> inputs;  // input of each layer
    std::vector<Mat> outputs;  // post-activation output of each layer
  };

  Mlp() = default;
  Mlp(std::vector<int> sizes, Activation hidden, Activation output, Rng& rng);

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  const std::vector<int>& sizes() const { return sizes_; }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }
  Eigen::Index num_params() const { return params_.size(); }

  Mat forward(const Mat& x) const;
  Mat forward(const Mat& x, Tape& tape) const;

  // Accumulates dL/dparams into *grad when non-null and returns dL/dx.
  Mat backward(const Tape& tape, const Mat& d_out, Vec* grad) const;

  friend void to_json(nlohmann::json& j, const Mlp& m);
  friend void from_json(const nlohmann::json& j, Mlp& m);

 private:
  Eigen::Map<const Mat> weight(int layer) const;
  Eigen::Map<const Vec> bias(int layer) const;
  Activation activation(int layer) const { return layer + 1 == num_layers() ? output_ : hidden_; }
  void compute_offsets();

  std::vector<int> sizes_;
  Activation hidden_ = Activation::kRelu;
  Activation output_ = Activation::kIdentity;
  std::vector<Eigen::Index> offsets_;
  Vec params_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW style)
};

class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index n, AdamConfig config);

  void step(Vec& params, const Vec& grad);
  const AdamConfig& config() const { return config_; }
  long steps() const { return t_; }

  friend void to_json(nlohmann::json& j, const Adam& a);
  friend void from_json(const nlohmann::json& j, Adam& a);

 private:
  AdamConfig config_;
  Vec m_, v_;
  long t_ = 0;
};

}  // namespace cdp
