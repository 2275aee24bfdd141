#include "biasctl/replay.hpp"

#include <algorithm>

#include "biasctl/errors.hpp"

namespace biasctl {

MainReplay::MainReplay(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw UsageError("replay capacity must be positive");
  data_.reserve(capacity);
}

void MainReplay::push(const Transition& tr) {
  if (data_.size() < capacity_) {
    data_.push_back(tr);
    return;
  }
  data_[head_] = tr;
  head_ = (head_ + 1) % capacity_;
}

const Transition& MainReplay::at(std::size_t i) const {
  if (i >= data_.size()) throw UsageError("replay index out of range");
  return data_[(head_ + i) % data_.size()];
}

std::vector<Transition> MainReplay::sample(std::size_t batch_size, Rng& rng) const {
  if (data_.empty()) throw UsageError("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
  std::vector<Transition> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(data_[pick(rng)]);
  return batch;
}

FreshReplay::FreshReplay(std::size_t capacity_trajectories) : capacity_(capacity_trajectories) {
  if (capacity_ == 0) throw UsageError("fresh replay capacity must be positive");
}

void FreshReplay::append(const Transition& tr) {
  open_.push_back(tr);
  if (!tr.ends_episode()) return;
  stored_ += open_.size();
  finished_.push_back(std::move(open_));
  open_.clear();
  if (finished_.size() > capacity_) {
    stored_ -= finished_.front().size();
    finished_.pop_front();
  }
}

void FreshReplay::add_trajectory(std::vector<Transition> trajectory) {
  if (trajectory.empty() || !trajectory.back().ends_episode())
    throw UsageError("trajectory must end with a done or truncated transition");
  for (std::size_t i = 0; i + 1 < trajectory.size(); ++i)
    if (trajectory[i].ends_episode()) throw UsageError("trajectory ends before its last transition");
  for (const auto& tr : trajectory) append(tr);
}

std::vector<RolloutIndex> valid_rollout_indices(const FreshReplay& fresh, std::size_t k) {
  std::vector<RolloutIndex> out;
  const auto& trajs = fresh.trajectories();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto T = trajs[i].size();
    const bool terminated = trajs[i].back().done;
    const std::size_t count = terminated ? T : (T > k ? T - k : 0);
    for (std::size_t t = 0; t < count; ++t) out.push_back({i, t});
  }
  return out;
}

Rollout make_rollout(const FreshReplay& fresh, const RolloutIndex& where, std::size_t k) {
  const auto& traj = fresh.trajectories().at(where.trajectory);
  const auto T = traj.size();
  Rollout r;
  r.start_state = traj[where.start].state;
  r.start_action = traj[where.start].action;
  const std::size_t end = std::min(where.start + k, T);
  r.rewards.reserve(end - where.start);
  for (std::size_t i = where.start; i < end; ++i) r.rewards.push_back(traj[i].reward);
  if (where.start + k < T) {
    r.bootstrap = StateAction{traj[where.start + k].state, traj[where.start + k].action};
  } else if (traj.back().done) {
    r.terminated = true;
  } else {
    throw UsageError("rollout start has fewer than k recorded future rewards");
  }
  return r;
}

namespace {

std::size_t checked_k(int k) {
  if (k <= 0) throw UsageError("rollout length k must be at least 1");
  return static_cast<std::size_t>(k);
}

}  // namespace

std::vector<Rollout> extract_valid_rollouts(const FreshReplay& fresh, int k) {
  const auto kk = checked_k(k);
  std::vector<Rollout> out;
  for (const auto& where : valid_rollout_indices(fresh, kk)) out.push_back(make_rollout(fresh, where, kk));
  return out;
}

std::optional<std::vector<Rollout>> sample_rollout_batch(const FreshReplay& fresh, int k, std::size_t size,
                                                         Rng& rng) {
  const auto kk = checked_k(k);
  if (size == 0) return std::vector<Rollout>{};
  const auto valid = valid_rollout_indices(fresh, kk);
  if (valid.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
  std::vector<Rollout> batch;
  batch.reserve(size);
  for (std::size_t i = 0; i < size; ++i) batch.push_back(make_rollout(fresh, valid[pick(rng)], kk));
  return batch;
}

std::optional<double> suitable_share(const FreshReplay& fresh, int k) {
  const auto kk = checked_k(k);
  if (fresh.stored_transitions() == 0) return std::nullopt;
  std::size_t valid = 0;
  for (const auto& traj : fresh.trajectories()) {
    const auto T = traj.size();
    valid += traj.back().done ? T : (T > kk ? T - kk : 0);
  }
  return static_cast<double>(valid) / static_cast<double>(fresh.stored_transitions());
}

}  // namespace biasctl
