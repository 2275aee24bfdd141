#include "biasctl/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "biasctl/errors.hpp"

namespace biasctl {

namespace {

constexpr double kChainDetourGain = 0.2;
constexpr double kGridInteriorCost = 0.05;


constexpr double kRowTolerance = 1e-9;

void check_distribution(std::span<const double> p, const std::string& what) {
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0 || !std::isfinite(v)) throw ModelError(what + " has a negative or non-finite entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > kRowTolerance) throw ModelError(what + " does not sum to 1");
}

}  // namespace

MdpTables MdpTables::zeros(std::size_t n_states, std::size_t n_actions, double discount,
                           std::size_t time_limit) {
  MdpTables t;
  t.n_states = n_states;
  t.n_actions = n_actions;
  t.transition.assign(n_states * n_actions * n_states, 0.0);
  t.reward_mean.assign(n_states * n_actions, 0.0);
  t.reward_noise_std.assign(n_states * n_actions, 0.0);
  t.terminal.assign(n_states, false);
  t.initial_dist.assign(n_states, 0.0);
  if (n_states > 0) t.initial_dist[0] = 1.0;
  t.discount = discount;
  t.time_limit = time_limit;
  return t;
}

void MdpTables::set_row(std::size_t s, std::size_t a, std::size_t next_state) {
  for (std::size_t n = 0; n < n_states; ++n) p(s, a, n) = 0.0;
  p(s, a, next_state) = 1.0;
}

TabularMdp::TabularMdp(MdpTables tables) : t_(std::move(tables)) {
  const auto S = t_.n_states;
  const auto A = t_.n_actions;
  if (S == 0 || A == 0) throw ModelError("MDP needs at least one state and one action");
  if (t_.transition.size() != S * A * S || t_.reward_mean.size() != S * A ||
      t_.reward_noise_std.size() != S * A || t_.terminal.size() != S || t_.initial_dist.size() != S)
    throw ModelError("MDP table sizes do not match n_states/n_actions");
  if (!(t_.discount >= 0.0 && t_.discount < 1.0)) throw ModelError("discount must lie in [0, 1)");
  if (t_.time_limit == 0) throw ModelError("time_limit must be positive");

  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t a = 0; a < A; ++a) {
      if (t_.terminal[s]) {
        t_.set_row(s, a, s);
        t_.reward_mean[s * A + a] = 0.0;
        t_.reward_noise_std[s * A + a] = 0.0;
      }
      if (t_.reward_noise_std[s * A + a] < 0.0) throw ModelError("reward noise std must be non-negative");
      check_distribution(row(s, a), "transition row (" + std::to_string(s) + "," + std::to_string(a) + ")");
    }
  }
  check_distribution(t_.initial_dist, "initial distribution");
}

std::size_t TabularMdp::sample_initial(Rng& rng) const { return sample_categorical(t_.initial_dist, rng); }

StochasticPolicy::StochasticPolicy(std::size_t n_states, std::size_t n_actions, std::vector<double> probs)
    : n_states_(n_states), n_actions_(n_actions), probs_(std::move(probs)) {
  if (probs_.size() != n_states * n_actions) throw UsageError("policy table has the wrong size");
  for (std::size_t s = 0; s < n_states; ++s) {
    double sum = 0.0;
    for (double p : row(s)) {
      if (p < 0.0) throw UsageError("policy probabilities must be non-negative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kRowTolerance) throw UsageError("policy row does not sum to 1");
  }
}

StochasticPolicy StochasticPolicy::uniform(std::size_t n_states, std::size_t n_actions) {
  return {n_states, n_actions, std::vector<double>(n_states * n_actions, 1.0 / static_cast<double>(n_actions))};
}

StochasticPolicy StochasticPolicy::epsilon_greedy(std::size_t n_states, std::size_t n_actions,
                                                  std::span<const double> values, double epsilon) {
  if (values.size() != n_states * n_actions) throw UsageError("value table has the wrong size");
  if (epsilon < 0.0 || epsilon > 1.0) throw UsageError("epsilon must lie in [0, 1]");
  std::vector<double> probs(n_states * n_actions, epsilon / static_cast<double>(n_actions));
  for (std::size_t s = 0; s < n_states; ++s) {
    const auto best = argmax(values.subspan(s * n_actions, n_actions));
    probs[s * n_actions + best] += 1.0 - epsilon;
  }
  return {n_states, n_actions, std::move(probs)};
}

std::size_t StochasticPolicy::sample(std::size_t s, Rng& rng) const { return sample_categorical(row(s), rng); }

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw UsageError("argmax of an empty range");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;  // rounding slack at the top of the CDF
}

Transition step(const TabularMdp& mdp, std::size_t state, std::size_t action, Rng& rng) {
  if (state >= mdp.n_states()) throw UsageError("state index out of range");
  if (action >= mdp.n_actions()) throw UsageError("action index out of range");
  Transition tr{state, action, 0.0, state, false, false};
  if (mdp.terminal(state)) {
    tr.done = true;
    return tr;
  }
  tr.next_state = sample_categorical(mdp.row(state, action), rng);
  tr.reward = mdp.reward_mean(state, action);
  if (const double sd = mdp.reward_std(state, action); sd > 0.0) {
    std::normal_distribution<double> noise(0.0, 1.0);
    tr.reward += sd * noise(rng);
  }
  tr.done = mdp.terminal(tr.next_state);
  return tr;
}

std::vector<Transition> run_episode(const TabularMdp& mdp, const StochasticPolicy& policy, Rng& rng,
                                    std::size_t time_limit) {
  if (time_limit == 0) throw UsageError("time_limit must be positive");
  if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
    throw UsageError("policy shape does not match the MDP");
  std::vector<Transition> episode;
  std::size_t s = mdp.sample_initial(rng);
  while (true) {
    auto tr = step(mdp, s, policy.sample(s, rng), rng);
    if (!tr.done && episode.size() + 1 >= time_limit) tr.truncated = true;
    episode.push_back(tr);
    if (tr.ends_episode()) break;
    s = tr.next_state;
  }
  return episode;
}

namespace {

// V(s) = sum_a pi(a|s) Q(s,a), with terminal states pinned to zero.
std::vector<double> state_values(const TabularMdp& mdp, const StochasticPolicy& pi, std::span<const double> q) {
  const auto S = mdp.n_states();
  const auto A = mdp.n_actions();
  std::vector<double> v(S, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    if (mdp.terminal(s)) continue;
    for (std::size_t a = 0; a < A; ++a) v[s] += pi.prob(s, a) * q[s * A + a];
  }
  return v;
}

void bellman_backup(const TabularMdp& mdp, std::span<const double> v, std::span<double> out) {
  const auto S = mdp.n_states();
  const auto A = mdp.n_actions();
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t a = 0; a < A; ++a) {
      if (mdp.terminal(s)) {
        out[s * A + a] = 0.0;
        continue;
      }
      double next = 0.0;
      const auto row = mdp.row(s, a);
      for (std::size_t n = 0; n < S; ++n) next += row[n] * v[n];
      out[s * A + a] = mdp.reward_mean(s, a) + mdp.discount() * next;
    }
  }
}

}  // namespace

double bellman_residual(const TabularMdp& mdp, const StochasticPolicy& policy, std::span<const double> q) {
  std::vector<double> backed(q.size());
  bellman_backup(mdp, state_values(mdp, policy, q), backed);
  double worst = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) worst = std::max(worst, std::abs(q[i] - backed[i]));
  return worst;
}

ExactValues exact_policy_eval(const TabularMdp& mdp, const StochasticPolicy& policy, double tol) {
  if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
    throw UsageError("policy shape does not match the MDP");
  if (!(tol > 0.0)) throw UsageError("tolerance must be positive");
  const auto S = mdp.n_states();
  const auto A = mdp.n_actions();
  const double gamma = mdp.discount();

  ExactValues out;
  out.n_actions = A;
  out.q_pi.assign(S * A, 0.0);
  std::vector<double> next(S * A);
  // ||Q_{n+1} - T Q_{n+1}|| <= gamma ||Q_n - Q_{n+1}||, so stopping on the step size bounds the residual.
  for (std::size_t it = 0;; ++it) {
    bellman_backup(mdp, state_values(mdp, policy, out.q_pi), next);
    double delta = 0.0;
    for (std::size_t i = 0; i < next.size(); ++i) delta = std::max(delta, std::abs(next[i] - out.q_pi[i]));
    out.q_pi.swap(next);
    if (delta * std::max(gamma, 1e-300) < tol || delta == 0.0) break;
    if (it > 10'000'000) throw ModelError("policy evaluation failed to converge");
  }

  // Discounted visitation by power iteration; mass entering terminal states leaves the episode.
  out.occupancy.assign(S * A, 0.0);
  std::vector<double> mass(S * A, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    if (mdp.terminal(s)) continue;
    for (std::size_t a = 0; a < A; ++a) mass[s * A + a] = mdp.initial_dist()[s] * policy.prob(s, a);
  }
  std::vector<double> state_mass(S);
  for (std::size_t it = 0; it < 1'000'000; ++it) {
    double total = 0.0;
    for (std::size_t i = 0; i < mass.size(); ++i) {
      out.occupancy[i] += mass[i];
      total += mass[i];
    }
    if (total < 1e-15) break;
    std::fill(state_mass.begin(), state_mass.end(), 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t a = 0; a < A; ++a) {
        const double m = mass[s * A + a];
        if (m == 0.0) continue;
        const auto row = mdp.row(s, a);
        for (std::size_t n = 0; n < S; ++n) state_mass[n] += gamma * m * row[n];
      }
    }
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t a = 0; a < A; ++a)
        mass[s * A + a] = mdp.terminal(s) ? 0.0 : state_mass[s] * policy.prob(s, a);
    }
  }
  const double total = std::accumulate(out.occupancy.begin(), out.occupancy.end(), 0.0);
  if (total <= 0.0) throw ModelError("initial distribution only covers terminal states");
  for (auto& v : out.occupancy) v /= total;
  return out;
}

double expected_episode_return(const TabularMdp& mdp, const StochasticPolicy& policy, std::size_t horizon) {
  const auto S = mdp.n_states();
  const auto A = mdp.n_actions();
  std::vector<double> v(S, 0.0), next(S);
  for (std::size_t h = 0; h < horizon; ++h) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = 0.0;
      if (!mdp.terminal(s)) {
        for (std::size_t a = 0; a < A; ++a) {
          const double p = policy.prob(s, a);
          if (p == 0.0) continue;
          double cont = 0.0;
          const auto row = mdp.row(s, a);
          for (std::size_t n = 0; n < S; ++n) cont += row[n] * v[n];
          acc += p * (mdp.reward_mean(s, a) + cont);
        }
      }
      next[s] = acc;
    }
    v.swap(next);
  }
  double ret = 0.0;
  for (std::size_t s = 0; s < S; ++s) ret += mdp.initial_dist()[s] * v[s];
  return ret;
}

TabularMdp chain(std::size_t n, double noise, std::size_t n_gambles, double discount, std::size_t time_limit) {
  if (n < 2) throw UsageError("chain needs at least two positions");
  if (n_gambles < 1) throw UsageError("chain needs at least one gamble");
  if (noise < 0.0) throw UsageError("noise must be non-negative");
  const std::size_t S = 2 * n - 1;
  const std::size_t A = std::max<std::size_t>(2, n_gambles);
  auto t = MdpTables::zeros(S, A, discount, time_limit == 0 ? 4 * n : time_limit);
  t.terminal[S - 1] = true;
  auto position = [](std::size_t j) { return 2 * j; };
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const std::size_t here = position(j);
    const std::size_t side = here + 1;
    const std::size_t next = position(j + 1);
    t.set_row(here, 0, next);
    for (std::size_t a = 1; a < A; ++a) t.set_row(here, a, side);
    const double mean = (j % 2 == 0 ? 1.0 : -1.0) * kChainDetourGain;
    for (std::size_t a = 0; a < A; ++a) {
      t.set_row(side, a, next);
      t.reward_mean[side * A + a] = mean;
      t.reward_noise_std[side * A + a] = noise;
    }
  }
  return TabularMdp(std::move(t));
}

TabularMdp loopy_grid(std::size_t w, std::size_t h, double noise, double discount, std::size_t time_limit) {
  if (w < 2 || h < 2) throw UsageError("loopy_grid needs at least a 2x2 grid");
  if (noise < 0.0) throw UsageError("noise must be non-negative");
  const std::size_t S = w * h;
  const std::size_t A = 4;  // right, left, up, down
  auto t = MdpTables::zeros(S, A, discount, time_limit == 0 ? 4 * (w + h) : time_limit);
  const std::size_t goal = S - 1;
  auto index = [w](std::size_t x, std::size_t y) { return y * w + x; };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t s = index(x, y);
      const bool interior = x > 0 && y > 0 && x + 1 < w && y + 1 < h;
      const std::size_t targets[4] = {index(x + 1 < w ? x + 1 : x, y), index(x > 0 ? x - 1 : x, y),
                                      index(x, y + 1 < h ? y + 1 : y), index(x, y > 0 ? y - 1 : y)};
      for (std::size_t a = 0; a < A; ++a) {
        std::size_t dest = targets[a];
        double reward = interior ? -kGridInteriorCost : 0.0;
        if (dest == goal) {
          dest = 0;
          reward += 1.0;
        }
        t.set_row(s, a, dest);
        t.reward_mean[s * A + a] = reward;
        if (interior) t.reward_noise_std[s * A + a] = noise;
      }
    }
  }
  return TabularMdp(std::move(t));
}

TabularMdp noisy_bandit_mdp(std::size_t arms, double noise, double discount) {
  if (arms < 1) throw UsageError("bandit needs at least one arm");
  auto t = MdpTables::zeros(2, arms, discount, 1);
  t.terminal[1] = true;
  for (std::size_t a = 0; a < arms; ++a) {
    t.set_row(0, a, 1);
    if (a > 0) {
      t.reward_mean[a] = -0.1;
      t.reward_noise_std[a] = noise;
    }
  }
  return TabularMdp(std::move(t));
}

}  // namespace biasctl
