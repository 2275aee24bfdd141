#include "biasctl/bias.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "biasctl/errors.hpp"

namespace biasctl {

CriticFn critic_view(const CriticEnsemble& ensemble, ValueAggregate how) {
  return [&ensemble, how](std::size_t s, std::size_t a) { return ensemble.value(s, a, how); };
}

CriticFn table_view(std::span<const double> q, std::size_t n_actions, double offset) {
  return [q, n_actions, offset](std::size_t s, std::size_t a) { return q[s * n_actions + a] + offset; };
}

double k_step_return(const Rollout& rollout, const CriticFn& critic, double gamma) {
  double ret = 0.0;
  double discount = 1.0;
  for (double r : rollout.rewards) {
    ret += discount * r;
    discount *= gamma;
  }
  if (rollout.bootstrap) ret += discount * critic(rollout.bootstrap->state, rollout.bootstrap->action);
  return ret;
}

std::optional<MeanWithError> aggregated_bias_stats(std::span<const Rollout> batch, const CriticFn& critic,
                                                   double gamma) {
  if (batch.empty()) return std::nullopt;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (const auto& r : batch) {
    const double d = critic(r.start_state, r.start_action) - k_step_return(r, critic, gamma);
    sum += d;
    sum_sq += d * d;
  }
  const auto n = static_cast<double>(batch.size());
  MeanWithError out{sum / n, 0.0, batch.size()};
  if (batch.size() > 1) {
    const double var = std::max(0.0, (sum_sq - n * out.mean * out.mean) / (n - 1.0));
    out.std_error = std::sqrt(var / n);
  }
  return out;
}

std::optional<double> aggregated_bias(std::span<const Rollout> batch, const CriticFn& critic, double gamma) {
  if (auto stats = aggregated_bias_stats(batch, critic, gamma)) return stats->mean;
  return std::nullopt;
}

double smooth(double previous_smoothed, double raw, double gamma_eta) {
  if (!(gamma_eta >= 0.0 && gamma_eta < 1.0)) throw UsageError("bias averaging coefficient must lie in [0, 1)");
  return gamma_eta * previous_smoothed + (1.0 - gamma_eta) * raw;
}

MeanWithError onpolicy_reference_bias_stats(const TabularMdp& mdp, const StochasticPolicy& policy,
                                            const CriticFn& critic, std::size_t n_episodes, Rng& rng) {
  if (n_episodes == 0) throw UsageError("need at least one reference episode");
  const double gamma = mdp.discount();
  const std::size_t tail =
      gamma > 0.0 ? static_cast<std::size_t>(std::ceil(std::log(1e-8) / std::log(gamma))) : std::size_t{1};

  std::vector<double> cluster_sum;
  std::vector<double> cluster_count;
  cluster_sum.reserve(n_episodes);
  cluster_count.reserve(n_episodes);
  std::vector<Transition> steps;
  std::vector<double> returns;
  for (std::size_t e = 0; e < n_episodes; ++e) {
    steps.clear();
    std::size_t s = mdp.sample_initial(rng);
    while (steps.size() < mdp.time_limit() + tail) {
      const auto tr = step(mdp, s, policy.sample(s, rng), rng);
      steps.push_back(tr);
      if (tr.done) break;
      s = tr.next_state;
    }
    returns.assign(steps.size(), 0.0);
    double g = 0.0;
    for (std::size_t i = steps.size(); i-- > 0;) {
      g = steps[i].reward + gamma * g;
      returns[i] = g;
    }
    const std::size_t visited = std::min(steps.size(), mdp.time_limit());
    double sum = 0.0;
    for (std::size_t i = 0; i < visited; ++i) sum += critic(steps[i].state, steps[i].action) - returns[i];
    cluster_sum.push_back(sum);
    cluster_count.push_back(static_cast<double>(visited));
  }

  double total = 0.0;
  double count = 0.0;
  for (std::size_t e = 0; e < n_episodes; ++e) {
    total += cluster_sum[e];
    count += cluster_count[e];
  }
  MeanWithError out{total / count, 0.0, static_cast<std::size_t>(count)};
  if (n_episodes > 1) {
    // Ratio-estimator variance over independent episodes.
    const double mean_count = count / static_cast<double>(n_episodes);
    double acc = 0.0;
    for (std::size_t e = 0; e < n_episodes; ++e) {
      const double resid = cluster_sum[e] - out.mean * cluster_count[e];
      acc += resid * resid;
    }
    const double n = static_cast<double>(n_episodes);
    out.std_error = std::sqrt(acc / (n - 1.0) / n) / mean_count;
  }
  return out;
}

double onpolicy_reference_bias(const TabularMdp& mdp, const StochasticPolicy& policy, const CriticFn& critic,
                               std::size_t n_episodes, Rng& rng) {
  return onpolicy_reference_bias_stats(mdp, policy, critic, n_episodes, rng).mean;
}

double occupancy_weighted_bias(const ExactValues& exact, const CriticFn& critic) {
  double acc = 0.0;
  const auto A = exact.n_actions;
  for (std::size_t i = 0; i < exact.occupancy.size(); ++i) {
    if (exact.occupancy[i] == 0.0) continue;
    acc += exact.occupancy[i] * (critic(i / A, i % A) - exact.q_pi[i]);
  }
  return acc;
}

std::optional<double> buffer_weighted_bias(const FreshReplay& fresh, const ExactValues& exact, const CriticFn& critic) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& traj : fresh.trajectories()) {
    for (const auto& tr : traj) {
      acc += critic(tr.state, tr.action) - exact.q(tr.state, tr.action);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

}  // namespace biasctl
