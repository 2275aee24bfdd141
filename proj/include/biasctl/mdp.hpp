#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace biasctl {

using Rng = std::mt19937_64;

/// One environment step as stored in the replay buffers.
struct Transition {
  std::size_t state = 0;
  std::size_t action = 0;
  double reward = 0.0;
  std::size_t next_state = 0;
  bool done = false;       // environment termination
  bool truncated = false;  // cut by the time limit; bootstrapping stays valid

  bool ends_episode() const { return done || truncated; }
  friend bool operator==(const Transition&, const Transition&) = default;
};

/// Raw tables a TabularMdp is built from. Flat row-major layouts:
/// transition[(s * n_actions + a) * n_states + s'], reward_*[s * n_actions + a].
struct MdpTables {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> transition;
  std::vector<double> reward_mean;
  std::vector<double> reward_noise_std;
  std::vector<bool> terminal;
  std::vector<double> initial_dist;
  double discount = 0.99;
  std::size_t time_limit = 100;

  /// Zero-filled tables with a point-mass initial distribution on state 0.
  static MdpTables zeros(std::size_t n_states, std::size_t n_actions, double discount,
                         std::size_t time_limit);
  void set_row(std::size_t s, std::size_t a, std::size_t next_state);  // deterministic row
  double& p(std::size_t s, std::size_t a, std::size_t next) {
    return transition[(s * n_actions + a) * n_states + next];
  }
};

/// Finite MDP with Gaussian rewards. Immutable after construction.
///
/// Terminal states are rewritten to self-loop with zero reward for every action;
/// the remaining rows are validated and a ModelError is thrown if any row (or the
/// initial distribution) does not sum to one within 1e-9.
class TabularMdp {
 public:
  explicit TabularMdp(MdpTables tables);

  std::size_t n_states() const { return t_.n_states; }
  std::size_t n_actions() const { return t_.n_actions; }
  double discount() const { return t_.discount; }
  std::size_t time_limit() const { return t_.time_limit; }

  std::span<const double> row(std::size_t s, std::size_t a) const {
    return {t_.transition.data() + (s * t_.n_actions + a) * t_.n_states, t_.n_states};
  }
  double reward_mean(std::size_t s, std::size_t a) const { return t_.reward_mean[s * t_.n_actions + a]; }
  double reward_std(std::size_t s, std::size_t a) const { return t_.reward_noise_std[s * t_.n_actions + a]; }
  bool terminal(std::size_t s) const { return t_.terminal[s]; }
  std::span<const double> initial_dist() const { return t_.initial_dist; }

  std::size_t sample_initial(Rng& rng) const;

 private:
  MdpTables t_;
};

/// State-conditional action distribution, stored as a flat [s][a] table.
class StochasticPolicy {
 public:
  StochasticPolicy(std::size_t n_states, std::size_t n_actions, std::vector<double> probs);

  static StochasticPolicy uniform(std::size_t n_states, std::size_t n_actions);
  /// Epsilon-greedy over a [s][a] value table; ties go to the lowest action index.
  static StochasticPolicy epsilon_greedy(std::size_t n_states, std::size_t n_actions,
                                         std::span<const double> values, double epsilon);

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  double prob(std::size_t s, std::size_t a) const { return probs_[s * n_actions_ + a]; }
  std::span<const double> row(std::size_t s) const { return {probs_.data() + s * n_actions_, n_actions_}; }
  std::size_t sample(std::size_t s, Rng& rng) const;

 private:
  std::size_t n_states_;
  std::size_t n_actions_;
  std::vector<double> probs_;
};

/// Exact Q^pi and normalized discounted state-action occupancy.
struct ExactValues {
  std::size_t n_actions = 0;
  std::vector<double> q_pi;
  std::vector<double> occupancy;

  double q(std::size_t s, std::size_t a) const { return q_pi[s * n_actions + a]; }
};

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Draws an index from a discrete distribution.
std::size_t sample_categorical(std::span<const double> probs, Rng& rng);

Transition step(const TabularMdp& mdp, std::size_t state, std::size_t action, Rng& rng);

/// Plays one episode from the initial distribution. The last transition is either
/// done or, if the limit binds first, truncated.
std::vector<Transition> run_episode(const TabularMdp& mdp, const StochasticPolicy& policy, Rng& rng,
                                    std::size_t time_limit);

/// Iterative policy evaluation to sup-norm Bellman residual below tol, plus the
/// discounted visitation of non-terminal state-action pairs from initial_dist.
ExactValues exact_policy_eval(const TabularMdp& mdp, const StochasticPolicy& policy, double tol = 1e-10);

/// Max over (s, a) of |Q - (R + gamma P pi Q)|.
double bellman_residual(const TabularMdp& mdp, const StochasticPolicy& policy, std::span<const double> q);

/// Expected undiscounted return over at most `horizon` steps from initial_dist,
/// computed by backward induction (the noise-free analog of averaging episode returns).
double expected_episode_return(const TabularMdp& mdp, const StochasticPolicy& policy, std::size_t horizon);

// Built-in testbeds.

/// Chain of n positions (2n - 1 states, the last position terminal). At each
/// position action 0 moves straight on; every other action detours through a side
/// state whose actions all pay N(+-0.2, noise) and continue to the next position.
/// Detours pay +0.2 at even positions and -0.2 at odd ones, so overestimating the
/// noisy side states takes the bad detours and underestimating them skips the good ones.
TabularMdp chain(std::size_t n, double noise, std::size_t n_gambles = 3, double discount = 0.99,
                 std::size_t time_limit = 0);

/// w x h grid without terminal states; the default time limit is 4 (w + h). Entering
/// the far corner pays +1 and warps back to the start cell. Moves out of interior
/// cells cost 0.05 with noise std `noise`; border cells are noise-free, so the
/// noisy interior is never worth entering.
TabularMdp loopy_grid(std::size_t w, std::size_t h, double noise, double discount = 0.99,
                      std::size_t time_limit = 0);

/// One decision state followed by termination. Arm 0 pays exactly 0; the remaining
/// arms pay -0.1 on average with noise std `noise`.
TabularMdp noisy_bandit_mdp(std::size_t arms, double noise, double discount = 0.99);

}  // namespace biasctl
