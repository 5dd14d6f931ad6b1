#include "fcas/nn.hpp"

#include <cmath>

#include "fcas/errors.hpp"

namespace fcas {

Mlp::Mlp(int inputs, const std::vector<int>& hidden, int outputs) {
  if (inputs <= 0 || outputs <= 0) throw InvalidInput("network sizes must be positive");
  sizes_.push_back(inputs);
  for (int h : hidden) {
    if (h <= 0) throw InvalidInput("hidden widths must be positive");
    sizes_.push_back(h);
  }
  sizes_.push_back(outputs);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    weights_.emplace_back(Eigen::MatrixXd::Zero(sizes_[l + 1], sizes_[l]));
    biases_.emplace_back(Eigen::VectorXd::Zero(sizes_[l + 1]));
  }
}

void Mlp::init(std::mt19937_64& rng, double output_gain) {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    auto& w = weights_[l];
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    const double gain = l + 1 == weights_.size() ? output_gain : 1.0;
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = gain * u(rng);
    }
    biases_[l].setZero();
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::MatrixXd z = (weights_[l] * h).colwise() + biases_[l];
    h = l + 1 < weights_.size() ? Eigen::MatrixXd(z.array().tanh()) : z;
  }
  return h;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache& cache) const {
  cache.activations.clear();
  cache.activations.push_back(x);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::MatrixXd z = (weights_[l] * cache.activations.back()).colwise() + biases_[l];
    cache.activations.push_back(l + 1 < weights_.size() ? Eigen::MatrixXd(z.array().tanh()) : z);
  }
  return cache.activations.back();
}

void Mlp::backward(const Cache& cache, const Eigen::MatrixXd& dout, Eigen::VectorXd& grad) const {
  if (grad.size() != parameter_count()) grad = Eigen::VectorXd::Zero(parameter_count());
  // Offsets of each layer's block in the flat layout.
  std::vector<Eigen::Index> offset(weights_.size());
  Eigen::Index pos = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    offset[l] = pos;
    pos += weights_[l].size() + biases_[l].size();
  }
  Eigen::MatrixXd delta = dout;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    if (l + 1 < weights_.size()) {
      const auto& a = cache.activations[l + 1];
      delta = delta.array() * (1.0 - a.array().square());
    }
    const auto& input = cache.activations[l];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offset[l], weights_[l].rows(), weights_[l].cols());
    gw.noalias() += delta * input.transpose();
    grad.segment(offset[l] + weights_[l].size(), biases_[l].size()) += delta.rowwise().sum();
    if (l > 0) delta = weights_[l].transpose() * delta;
  }
}

Eigen::Index Mlp::parameter_count() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

Eigen::VectorXd Mlp::parameters() const {
  Eigen::VectorXd flat(parameter_count());
  Eigen::Index pos = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    flat.segment(pos, weights_[l].size()) = Eigen::Map<const Eigen::VectorXd>(weights_[l].data(), weights_[l].size());
    pos += weights_[l].size();
    flat.segment(pos, biases_[l].size()) = biases_[l];
    pos += biases_[l].size();
  }
  return flat;
}

void Mlp::set_parameters(const Eigen::VectorXd& flat) {
  if (flat.size() != parameter_count()) throw InvalidInput("parameter vector size mismatch");
  Eigen::Index pos = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::Map<Eigen::VectorXd>(weights_[l].data(), weights_[l].size()) = flat.segment(pos, weights_[l].size());
    pos += weights_[l].size();
    biases_[l] = flat.segment(pos, biases_[l].size());
    pos += biases_[l].size();
  }
}

Adam::Adam(Eigen::Index size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {
  if (!(lr > 0.0)) throw InvalidInput("learning rate must be positive");
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (grad.size() != m_.size() || params.size() != m_.size()) throw InvalidInput("optimizer size mismatch");
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

}  // namespace fcas
