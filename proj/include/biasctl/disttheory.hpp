#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "biasctl/mdp.hpp"

namespace biasctl {

/// Finite-support distribution with atoms sorted ascending and weights summing to one.
class EmpiricalDist {
 public:
  /// Equal weights. Atoms are sorted.
  static EmpiricalDist uniform(std::vector<double> atoms);
  /// Sorts (atom, weight) pairs, merges equal atoms and drops zero weights.
  /// Throws UsageError if weights are negative or do not sum to 1 within 1e-9.
  static EmpiricalDist weighted(std::vector<double> atoms, std::vector<double> weights);
  static EmpiricalDist point(double value) { return uniform({value}); }

  const std::vector<double>& atoms() const { return atoms_; }
  const std::vector<double>& weights() const { return weights_; }
  std::size_t size() const { return atoms_.size(); }

  double mean() const;
  /// P(X <= z).
  double cdf(double z) const;

 private:
  std::vector<double> atoms_;
  std::vector<double> weights_;
};

/// Removes exactly eta of the probability mass from the top and renormalizes.
/// The atom straddling the cut keeps its residual weight. Requires 0 <= eta < 1.
EmpiricalDist truncate(const EmpiricalDist& dist, double eta);

/// d1 precedes d2: F_d1(z) >= F_d2(z) at every point of the merged support
/// (within 1e-12 to absorb rounding).
bool stochastically_leq(const EmpiricalDist& d1, const EmpiricalDist& d2);

/// Distribution of X + Y for independent X, Y.
EmpiricalDist convolve(const EmpiricalDist& x, const EmpiricalDist& y);
/// Distribution of shift + scale * X, scale >= 0.
EmpiricalDist affine(const EmpiricalDist& x, double shift, double scale);
/// Mixture sum_i p_i D_i.
EmpiricalDist mixture(const std::vector<EmpiricalDist>& parts, const std::vector<double>& probs);

using DistSampler = std::function<EmpiricalDist(Rng&)>;

/// Monte-Carlo mean over sampled distributions of mean(truncate(d, eta)) - mean(d).
/// Requires 0 < eta < 1.
double sufficient_stochasticity_gap(const DistSampler& sampler, double eta, std::size_t n_samples, Rng& rng);

/// Return-distribution field over (s, a), flat [s][a].
using DistField = std::vector<EmpiricalDist>;

/// Reward distribution used by the distributional step: the two points mean +/- std
/// with equal weight, matching the Gaussian reward's first two moments.
EmpiricalDist two_point_reward(const TabularMdp& mdp, std::size_t s, std::size_t a);

/// One distributional evaluation step with truncation applied to successor
/// distributions first: Z'(s,a) = R(s,a) + gamma * S^eta Z(s', a'), s' ~ P, a' ~ pi.
/// Terminal states and terminal successors contribute a point mass at zero.
DistField distributional_backup(const TabularMdp& mdp, const StochasticPolicy& policy, const DistField& field,
                                double eta = 0.0);

/// Quantile projection onto n midpoint atoms with equal weights.
EmpiricalDist project_quantiles(const EmpiricalDist& dist, std::size_t n_atoms);

/// Repeats the truncated backup from point masses at zero, projecting every field
/// onto n_atoms quantiles after each step to keep supports bounded.
DistField projected_truncated_evaluation(const TabularMdp& mdp, const StochasticPolicy& policy, double eta,
                                         std::size_t n_atoms, std::size_t iterations);

/// Outcome of one property suite.
struct PropertyReport {
  std::string name;
  std::size_t instances = 0;
  std::size_t violations = 0;
  bool passed() const { return violations == 0; }
};

/// Randomized property suites for the order/truncation lemmas; each runs `instances` cases.
PropertyReport check_mean_order(std::size_t instances, Rng& rng);
PropertyReport check_truncation_preserves_order(std::size_t instances, Rng& rng);
PropertyReport check_truncation_monotone(std::size_t instances, Rng& rng);
PropertyReport check_combined_truncation(std::size_t instances, Rng& rng);
PropertyReport check_convolution_preserves_order(std::size_t instances, Rng& rng);
PropertyReport check_backup_preserves_order(std::size_t instances, Rng& rng);
PropertyReport check_backup_contraction(std::size_t instances, Rng& rng);
PropertyReport check_gap_monotone(std::size_t n_samplers, Rng& rng);

/// All suites above with the standard instance counts (1000 per lemma, 100 samplers).
std::vector<PropertyReport> run_lemma_suite(std::uint64_t seed);

}  // namespace biasctl
