#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>

#include "biasctl/critics.hpp"
#include "biasctl/mdp.hpp"
#include "biasctl/replay.hpp"

namespace biasctl {

/// Q-hat(s, a) as seen by a bias probe.
using CriticFn = std::function<double(std::size_t state, std::size_t action)>;

/// Wraps an ensemble's online members under the given aggregation.
CriticFn critic_view(const CriticEnsemble& ensemble, ValueAggregate how);
/// Wraps a flat [s][a] table (e.g. an exact Q^pi), optionally shifted by a constant.
CriticFn table_view(std::span<const double> q, std::size_t n_actions, double offset = 0.0);

struct BiasEstimate {
  double raw = 0.0;
  double smoothed = 0.0;
  std::size_t batch_size = 0;
  std::optional<double> suitable_share;
};

struct MeanWithError {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t count = 0;
};

/// Sum of discounted recorded rewards plus gamma^k Q-hat at the bootstrap pair,
/// when the rollout carries one.
double k_step_return(const Rollout& rollout, const CriticFn& critic, double gamma);

/// Mean over the batch of Q-hat(s_t, a_t) - k_step_return. nullopt for an empty batch.
std::optional<double> aggregated_bias(std::span<const Rollout> batch, const CriticFn& critic, double gamma);
/// Same estimate with its sample standard error (rollouts treated as independent draws).
std::optional<MeanWithError> aggregated_bias_stats(std::span<const Rollout> batch, const CriticFn& critic,
                                                   double gamma);

/// gamma_eta * previous + (1 - gamma_eta) * raw.
double smooth(double previous_smoothed, double raw, double gamma_eta);

/// Plays n fresh episodes with `policy` and averages Q-hat(s_t, a_t) minus the
/// Monte-Carlo discounted return over every visited pair. Pairs are visited within
/// the MDP's time limit; their returns keep accumulating past the cut (the limit
/// is truncation, not termination) until termination or gamma^h < 1e-8.
/// The standard error treats episodes as independent clusters.
MeanWithError onpolicy_reference_bias_stats(const TabularMdp& mdp, const StochasticPolicy& policy,
                                            const CriticFn& critic, std::size_t n_episodes, Rng& rng);
double onpolicy_reference_bias(const TabularMdp& mdp, const StochasticPolicy& policy, const CriticFn& critic,
                               std::size_t n_episodes, Rng& rng);

/// Occupancy-weighted sum of Q-hat - Q^pi: the aggregated bias under the discounted
/// visitation of the policy that produced `exact`.
double occupancy_weighted_bias(const ExactValues& exact, const CriticFn& critic);
/// Mean of Q-hat - Q^pi over the (s, a) pairs stored in the fresh buffer.
std::optional<double> buffer_weighted_bias(const FreshReplay& fresh, const ExactValues& exact, const CriticFn& critic);

}  // namespace biasctl
