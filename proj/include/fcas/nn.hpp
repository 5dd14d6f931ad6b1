#pragma once

#include <Eigen/Core>
#include <random>
#include <vector>

namespace fcas {

// Feed-forward network: tanh hidden layers, linear output. Batches are
// column-major (one sample per column).
class Mlp {
 public:
  Mlp() = default;
  Mlp(int inputs, const std::vector<int>& hidden, int outputs);

  void init(std::mt19937_64& rng, double output_gain = 1.0);  // Glorot-uniform weights, zero biases

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

  // Forward pass keeping activations for backward().
  struct Cache {
    std::vector<Eigen::MatrixXd> activations;  // input, hidden outputs..., network output
  };
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache& cache) const;
  // Accumulates parameter gradients of sum(dout .* output) into `grad` (flat layout).
  void backward(const Cache& cache, const Eigen::MatrixXd& dout, Eigen::VectorXd& grad) const;

  int inputs() const { return sizes_.front(); }
  int outputs() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  Eigen::Index parameter_count() const;
  Eigen::VectorXd parameters() const;  // W0 (column-major), b0, W1, b1, ...
  void set_parameters(const Eigen::VectorXd& flat);

  std::vector<Eigen::MatrixXd>& weights() { return weights_; }
  std::vector<Eigen::VectorXd>& biases() { return biases_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }

 private:
  std::vector<int> sizes_;
  std::vector<Eigen::MatrixXd> weights_;  // out x in
  std::vector<Eigen::VectorXd> biases_;
};

// Adaptive-moment optimizer on a flat parameter vector (gradient descent).
class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  double learning_rate() const { return lr_; }
  long steps() const { return t_; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
};

}  // namespace fcas
