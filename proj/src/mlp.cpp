#include "biasctl/mlp.hpp"

#include <cmath>

#include "biasctl/errors.hpp"

namespace biasctl {

Mlp::Mlp(std::vector<std::size_t> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw UsageError("an MLP needs input and output sizes");
  for (auto n : sizes_)
    if (n == 0) throw UsageError("layer sizes must be positive");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(total);
    total += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
  }
  params_.assign(total, 0.0);
}

Mlp::Mlp(std::vector<std::size_t> layer_sizes, Rng& rng) : Mlp(std::move(layer_sizes)) {
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(sizes_[l]));
    std::uniform_real_distribution<double> init(-bound, bound);
    const auto w = weight_offset(l);
    for (std::size_t i = 0; i < sizes_[l + 1] * sizes_[l]; ++i) params_[w + i] = init(rng);
  }
}

Mlp Mlp::zeros(std::vector<std::size_t> layer_sizes) { return Mlp(std::move(layer_sizes)); }

std::vector<std::vector<double>> Mlp::activations(std::span<const double> input) const {
  if (input.size() != input_size()) throw UsageError("MLP input has the wrong size");
  std::vector<std::vector<double>> acts;
  acts.emplace_back(input.begin(), input.end());
  const std::size_t n_layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& x = acts.back();
    const auto in = sizes_[l];
    const auto out = sizes_[l + 1];
    const double* w = params_.data() + weight_offset(l);
    const double* b = params_.data() + bias_offset(l);
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += w[o * in + i] * x[i];
      y[o] = (l + 1 < n_layers && acc < 0.0) ? 0.0 : acc;
    }
    acts.push_back(std::move(y));
  }
  return acts;
}

std::vector<double> Mlp::forward(std::span<const double> input) const { return activations(input).back(); }

std::vector<double> Mlp::backward(std::span<const double> input, std::span<const double> output_grad) const {
  if (output_grad.size() != output_size()) throw UsageError("output gradient has the wrong size");
  const auto acts = activations(input);
  std::vector<double> grad(params_.size(), 0.0);
  std::vector<double> delta(output_grad.begin(), output_grad.end());
  for (std::size_t l = sizes_.size() - 1; l-- > 0;) {
    const auto in = sizes_[l];
    const auto out = sizes_[l + 1];
    const auto& x = acts[l];
    double* gw = grad.data() + weight_offset(l);
    double* gb = grad.data() + bias_offset(l);
    const double* w = params_.data() + weight_offset(l);
    for (std::size_t o = 0; o < out; ++o) {
      gb[o] = delta[o];
      for (std::size_t i = 0; i < in; ++i) gw[o * in + i] = delta[o] * x[i];
    }
    if (l == 0) break;
    std::vector<double> prev(in, 0.0);
    for (std::size_t i = 0; i < in; ++i) {
      if (x[i] <= 0.0) continue;  // rectifier gate of the layer below
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) acc += w[o * in + i] * delta[o];
      prev[i] = acc;
    }
    delta.swap(prev);
  }
  return grad;
}

void Mlp::sgd_step(std::span<const double> grad, double lr) {
  if (grad.size() != params_.size()) throw UsageError("gradient has the wrong size");
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i] -= lr * grad[i];
}

}  // namespace biasctl
