#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "biasctl/bias.hpp"
#include "biasctl/mdp.hpp"
#include "biasctl/replay.hpp"

namespace testing {

using biasctl::MdpTables;
using biasctl::Rng;
using biasctl::StochasticPolicy;
using biasctl::TabularMdp;
using biasctl::Transition;

// Random dense MDP; roughly one state in five is terminal (never state 0).
inline TabularMdp random_mdp(Rng& rng, std::size_t S, std::size_t A, double gamma, bool with_terminals = true) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto t = MdpTables::zeros(S, A, gamma, 50);
  for (std::size_t s = 1; s < S; ++s) t.terminal[s] = with_terminals && u(rng) < 0.2;
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t a = 0; a < A; ++a) {
      double total = 0.0;
      for (std::size_t n = 0; n < S; ++n) total += (t.p(s, a, n) = u(rng));
      for (std::size_t n = 0; n < S; ++n) t.p(s, a, n) /= total;
      t.reward_mean[s * A + a] = 2.0 * u(rng) - 1.0;
      t.reward_noise_std[s * A + a] = u(rng);
    }
  }
  return TabularMdp(std::move(t));
}

inline StochasticPolicy random_policy(Rng& rng, std::size_t S, std::size_t A) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> p(S * A);
  for (std::size_t s = 0; s < S; ++s) {
    double total = 0.0;
    for (std::size_t a = 0; a < A; ++a) total += (p[s * A + a] = u(rng));
    for (std::size_t a = 0; a < A; ++a) p[s * A + a] /= total;
  }
  return StochasticPolicy(S, A, std::move(p));
}

// Solves (I - gamma P_pi) q = r directly by Gaussian elimination with partial pivoting.
inline std::vector<double> solve_q(const TabularMdp& mdp, const StochasticPolicy& pi) {
  const std::size_t S = mdp.n_states();
  const std::size_t A = mdp.n_actions();
  const std::size_t n = S * A;
  std::vector<double> m(n * (n + 1), 0.0);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return m[i * (n + 1) + j]; };
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t a = 0; a < A; ++a) {
      const std::size_t i = s * A + a;
      at(i, i) += 1.0;
      if (mdp.terminal(s)) continue;
      at(i, n) = mdp.reward_mean(s, a);
      const auto row = mdp.row(s, a);
      for (std::size_t s2 = 0; s2 < S; ++s2) {
        if (mdp.terminal(s2)) continue;
        for (std::size_t a2 = 0; a2 < A; ++a2) at(i, s2 * A + a2) -= mdp.discount() * row[s2] * pi.prob(s2, a2);
      }
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(at(r, c)) > std::fabs(at(piv, c))) piv = r;
    for (std::size_t j = 0; j <= n; ++j) std::swap(at(c, j), at(piv, j));
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = at(r, c) / at(c, c);
      for (std::size_t j = c; j <= n; ++j) at(r, j) -= f * at(c, j);
    }
  }
  std::vector<double> q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = at(i, n) / at(i, i);
  return q;
}

inline Transition tr(std::size_t s, std::size_t a, double r, std::size_t s2, bool done = false,
                     bool truncated = false) {
  return Transition{s, a, r, s2, done, truncated};
}

// A trajectory of length T visiting states 0, 1, ..., with reward t at step t.
inline std::vector<Transition> trajectory(std::size_t T, bool done) {
  std::vector<Transition> out;
  for (std::size_t t = 0; t < T; ++t) out.push_back(tr(t, t % 2, static_cast<double>(t), t + 1));
  if (done) out.back().done = true;
  else out.back().truncated = true;
  return out;
}

// Ten states in a line; state 9 is terminal. Action 0 advances with probability 0.8,
// action 1 advances with probability 0.4 and otherwise falls back one state.
// Rewards are noisy and differ per action.
inline TabularMdp ten_state_chain(double gamma = 0.95) {
  auto t = MdpTables::zeros(10, 2, gamma, 100000);
  t.terminal[9] = true;
  for (std::size_t s = 0; s < 9; ++s) {
    t.p(s, 0, s + 1) = 0.8;
    t.p(s, 0, s) = 0.2;
    t.p(s, 1, s + 1) = 0.4;
    t.p(s, 1, s == 0 ? 0 : s - 1) += 0.6;
    t.reward_mean[s * 2 + 0] = -0.1 * static_cast<double>(s);
    t.reward_mean[s * 2 + 1] = 0.5;
    t.reward_noise_std[s * 2 + 0] = 1.0;
    t.reward_noise_std[s * 2 + 1] = 0.5;
  }
  t.set_row(9, 0, 9);
  t.set_row(9, 1, 9);
  return TabularMdp(std::move(t));
}

// On-policy full episodes, all stored in a fresh buffer of matching capacity.
inline biasctl::FreshReplay fill_fresh(const TabularMdp& mdp, const StochasticPolicy& pi, std::size_t episodes,
                                       Rng& rng) {
  biasctl::FreshReplay fresh(episodes);
  for (std::size_t e = 0; e < episodes; ++e) fresh.add_trajectory(biasctl::run_episode(mdp, pi, rng, mdp.time_limit()));
  return fresh;
}

// Aggregated bias of (Q^pi + offset) from n full-episode rollouts drawn uniformly from
// on-policy episodes of the ten-state chain. k exceeds any episode, so no rollout
// bootstraps. Rollouts from one episode share rewards, so the standard error is
// clustered by episode.
inline biasctl::MeanWithError unbiasedness_protocol(double offset, std::size_t n_rollouts, std::uint64_t seed) {
  const auto mdp = ten_state_chain();
  const auto pi = StochasticPolicy::uniform(10, 2);
  const auto q = solve_q(mdp, pi);
  Rng rng(seed);
  const auto fresh = fill_fresh(mdp, pi, n_rollouts, rng);
  const std::size_t k = 100000;
  const auto valid = biasctl::valid_rollout_indices(fresh, k);
  std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
  std::vector<biasctl::Rollout> batch;
  std::vector<std::size_t> cluster;
  for (std::size_t i = 0; i < n_rollouts; ++i) {
    const auto& where = valid[pick(rng)];
    batch.push_back(biasctl::make_rollout(fresh, where, k));
    cluster.push_back(where.trajectory);
  }
  const auto critic = biasctl::table_view(q, 2, offset);
  auto out = *biasctl::aggregated_bias_stats(batch, critic, mdp.discount());

  std::vector<double> resid(fresh.trajectories().size(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& r = batch[i];
    resid[cluster[i]] +=
        critic(r.start_state, r.start_action) - biasctl::k_step_return(r, critic, mdp.discount()) - out.mean;
  }
  double ss = 0.0;
  std::size_t used = 0;
  for (double e : resid) {
    ss += e * e;
    used += e != 0.0 ? 1 : 0;
  }
  const auto n = static_cast<double>(n_rollouts);
  const auto c = static_cast<double>(used);
  out.std_error = std::sqrt(ss * c / (c - 1.0)) / n;
  return out;
}

}  // namespace testing
