#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "biasctl/mdp.hpp"

namespace biasctl {

/// Fully connected network with rectifier hidden layers and a linear output layer.
/// All weights and biases live in one flat parameter vector, layer by layer,
/// each layer stored as a row-major (out x in) weight block followed by its bias.
class Mlp {
 public:
  /// He-uniform weights, zero biases.
  Mlp(std::vector<std::size_t> layer_sizes, Rng& rng);
  /// All parameters zero.
  static Mlp zeros(std::vector<std::size_t> layer_sizes);

  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }

  std::vector<double> forward(std::span<const double> input) const;
  /// Gradient of sum_i output_grad[i] * output[i] with respect to every parameter.
  std::vector<double> backward(std::span<const double> input, std::span<const double> output_grad) const;

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  void sgd_step(std::span<const double> grad, double lr);

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + sizes_[layer + 1] * sizes_[layer];
  }

 private:
  explicit Mlp(std::vector<std::size_t> layer_sizes);
  // Post-activation outputs of every layer, input included.
  std::vector<std::vector<double>> activations(std::span<const double> input) const;

  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

}  // namespace biasctl
