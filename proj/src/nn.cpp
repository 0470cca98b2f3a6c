#include "cdp/nn.hpp"

#include <cmath>

namespace cdp {

namespace {

void apply_activation(Mat& m, Activation a) {
  switch (a) {
    case Activation::kIdentity:
      break;
    case Activation::kRelu:
      m = m.cwiseMax(0.0);
      break;
    case Activation::kTanh:
      m = m.array().tanh().matrix();
      break;
  }
}

// Derivative expressed through the post-activation value.
void scale_by_derivative(Mat& d, const Mat& post, Activation a) {
  switch (a) {
    case Activation::kIdentity:
      break;
    case Activation::kRelu:
      d = (post.array() > 0.0).select(d, 0.0);
      break;
    case Activation::kTanh:
      d = (d.array() * (1.0 - post.array().square())).matrix();
      break;
  }
}

}  // namespace

Mlp::Mlp(std::vector<int> sizes, Activation hidden, Activation output, Rng& rng)
    : sizes_(std::move(sizes)), hidden_(hidden), output_(output) {
  if (sizes_.size() < 2) throw InputError("Mlp needs at least an input and an output size");
  for (int s : sizes_) {
    if (s <= 0) throw InputError("Mlp layer sizes must be positive");
  }
  compute_offsets();
  params_.resize(offsets_.back());
  for (int l = 0; l < num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const Eigen::Index n = static_cast<Eigen::Index>(sizes_[l + 1]) * (sizes_[l] + 1);
    for (Eigen::Index i = 0; i < n; ++i) params_[offsets_[l] + i] = dist(rng);
  }
}

void Mlp::compute_offsets() {
  offsets_.assign(1, 0);
  for (int l = 0; l < num_layers(); ++l) {
    offsets_.push_back(offsets_.back() + static_cast<Eigen::Index>(sizes_[l + 1]) * (sizes_[l] + 1));
  }
}

Eigen::Map<const Mat> Mlp::weight(int layer) const {
  return {params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]};
}

Eigen::Map<const Vec> Mlp::bias(int layer) const {
  return {params_.data() + offsets_[layer] + static_cast<Eigen::Index>(sizes_[layer + 1]) * sizes_[layer],
          sizes_[layer + 1]};
}

Mat Mlp::forward(const Mat& x) const {
  if (x.rows() != input_dim()) throw InputError("Mlp input dimension mismatch");
  Mat h = x;
  for (int l = 0; l < num_layers(); ++l) {
    Mat next = weight(l) * h;
    next.colwise() += bias(l);
    apply_activation(next, activation(l));
    h = std::move(next);
  }
  return h;
}

Mat Mlp::forward(const Mat& x, Tape& tape) const {
  if (x.rows() != input_dim()) throw InputError("Mlp input dimension mismatch");
  tape.inputs.resize(num_layers());
  tape.outputs.resize(num_layers());
  const Mat* h = &x;
  for (int l = 0; l < num_layers(); ++l) {
    tape.inputs[l] = *h;
    Mat next = weight(l) * tape.inputs[l];
    next.colwise() += bias(l);
    apply_activation(next, activation(l));
    tape.outputs[l] = std::move(next);
    h = &tape.outputs[l];
  }
  return tape.outputs.back();
}

Mat Mlp::backward(const Tape& tape, const Mat& d_out, Vec* grad) const {
  if (grad != nullptr && grad->size() != params_.size()) {
    grad->setZero(params_.size());
  }
  Mat d = d_out;
  for (int l = num_layers() - 1; l >= 0; --l) {
    scale_by_derivative(d, tape.outputs[l], activation(l));
    if (grad != nullptr) {
      const int out = sizes_[l + 1];
      const int in = sizes_[l];
      Eigen::Map<Mat> gw(grad->data() + offsets_[l], out, in);
      Eigen::Map<Vec> gb(grad->data() + offsets_[l] + static_cast<Eigen::Index>(out) * in, out);
      gw.noalias() += d * tape.inputs[l].transpose();
      gb += d.rowwise().sum();
    }
    Mat prev = weight(l).transpose() * d;
    d = std::move(prev);
  }
  return d;
}

Adam::Adam(Eigen::Index n, AdamConfig config) : config_(config), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

void Adam::step(Vec& params, const Vec& grad) {
  if (grad.size() != params.size() || m_.size() != params.size()) {
    throw InputError("Adam: parameter/gradient size mismatch");
  }
  ++t_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  if (config_.weight_decay > 0.0) params *= (1.0 - config_.lr * config_.weight_decay);
  params.array() -= config_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.eps);
}

void to_json(nlohmann::json& j, const Mlp& m) {
  j = nlohmann::json{{"sizes", m.sizes_},
                     {"hidden", static_cast<int>(m.hidden_)},
                     {"output", static_cast<int>(m.output_)},
                     {"params", to_std(m.params_)}};
}

void from_json(const nlohmann::json& j, Mlp& m) {
  m.sizes_ = j.at("sizes").get<std::vector<int>>();
  m.hidden_ = static_cast<Activation>(j.at("hidden").get<int>());
  m.output_ = static_cast<Activation>(j.at("output").get<int>());
  m.compute_offsets();
  m.params_ = from_std(j.at("params").get<std::vector<double>>());
  if (m.params_.size() != m.offsets_.back()) throw InputError("Mlp checkpoint has wrong parameter count");
}

void to_json(nlohmann::json& j, const Adam& a) {
  j = nlohmann::json{{"lr", a.config_.lr},       {"beta1", a.config_.beta1}, {"beta2", a.config_.beta2},
                     {"eps", a.config_.eps},     {"wd", a.config_.weight_decay},
                     {"m", to_std(a.m_)},        {"v", to_std(a.v_)},
                     {"t", a.t_}};
}

void from_json(const nlohmann::json& j, Adam& a) {
  a.config_.lr = j.at("lr");
  a.config_.beta1 = j.at("beta1");
  a.config_.beta2 = j.at("beta2");
  a.config_.eps = j.at("eps");
  a.config_.weight_decay = j.at("wd");
  a.m_ = from_std(j.at("m").get<std::vector<double>>());
  a.v_ = from_std(j.at("v").get<std::vector<double>>());
  a.t_ = j.at("t");
}

}  // namespace cdp
