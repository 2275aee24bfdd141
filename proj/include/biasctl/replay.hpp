#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "biasctl/mdp.hpp"

namespace biasctl {

/// Fixed-capacity FIFO of transitions for TD updates.
class MainReplay {
 public:
  explicit MainReplay(std::size_t capacity);

  void push(const Transition& tr);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// i-th oldest stored transition.
  const Transition& at(std::size_t i) const;
  /// Uniform with replacement. Throws UsageError on an empty buffer.
  std::vector<Transition> sample(std::size_t batch_size, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // slot of the oldest element once full
  std::vector<Transition> data_;
};

struct StateAction {
  std::size_t state = 0;
  std::size_t action = 0;
  friend bool operator==(const StateAction&, const StateAction&) = default;
};

/// Window of at most k recorded rewards starting at (start_state, start_action).
/// Either terminated (no bootstrap, possibly fewer than k rewards) or carrying
/// exactly k rewards and the logged pair k steps ahead.
struct Rollout {
  std::size_t start_state = 0;
  std::size_t start_action = 0;
  std::vector<double> rewards;
  std::optional<StateAction> bootstrap;
  bool terminated = false;
};

/// Recent whole trajectories for bias probes. Transitions are appended one at a
/// time; a trajectory becomes visible once it ends (done or truncated), and the
/// oldest finished trajectory is evicted when more than capacity are stored.
class FreshReplay {
 public:
  explicit FreshReplay(std::size_t capacity_trajectories);

  void append(const Transition& tr);
  /// Adds a finished trajectory directly. Throws UsageError if it does not end an episode.
  void add_trajectory(std::vector<Transition> trajectory);

  const std::deque<std::vector<Transition>>& trajectories() const { return finished_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t stored_transitions() const { return stored_; }

 private:
  std::size_t capacity_;
  std::size_t stored_ = 0;
  std::deque<std::vector<Transition>> finished_;
  std::vector<Transition> open_;
};

/// Location of a valid rollout inside FreshReplay::trajectories().
struct RolloutIndex {
  std::size_t trajectory = 0;
  std::size_t start = 0;
};

/// All valid start positions for k-step rollouts. Every index of a terminated
/// trajectory qualifies; a truncated trajectory of length T contributes t < T - k.
std::vector<RolloutIndex> valid_rollout_indices(const FreshReplay& fresh, std::size_t k);
Rollout make_rollout(const FreshReplay& fresh, const RolloutIndex& where, std::size_t k);

std::vector<Rollout> extract_valid_rollouts(const FreshReplay& fresh, int k);

/// size draws, uniform with replacement over valid rollouts. Empty when size is 0;
/// nullopt when a non-empty batch is requested but no rollout is valid.
std::optional<std::vector<Rollout>> sample_rollout_batch(const FreshReplay& fresh, int k, std::size_t size,
                                                         Rng& rng);

/// Valid start positions over stored transitions; nullopt for an empty buffer.
std::optional<double> suitable_share(const FreshReplay& fresh, int k);

}  // namespace biasctl
