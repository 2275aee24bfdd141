#include <doctest.h>

#include <cmath>
#include <map>

#include "biasctl/errors.hpp"
#include "biasctl/replay.hpp"
#include "support.hpp"

using namespace biasctl;
using testing::tr;
using testing::trajectory;

namespace {

std::vector<std::size_t> starts(const FreshReplay& fresh, std::size_t k) {
  std::vector<std::size_t> out;
  for (const auto& idx : valid_rollout_indices(fresh, k)) out.push_back(idx.start);
  return out;
}

FreshReplay with(std::vector<std::vector<Transition>> trajs, std::size_t capacity = 100) {
  FreshReplay fresh(capacity);
  for (auto& t : trajs) fresh.add_trajectory(std::move(t));
  return fresh;
}

}  // namespace

TEST_CASE("main replay evicts the oldest transition") {
  MainReplay replay(2);
  replay.push(tr(0, 0, 0.0, 1));
  replay.push(tr(1, 0, 1.0, 2));
  replay.push(tr(2, 0, 2.0, 3));
  REQUIRE(replay.size() == 2);
  CHECK(replay.at(0).state == 1);
  CHECK(replay.at(1).state == 2);
}

TEST_CASE("main replay sampling") {
  MainReplay replay(4);
  Rng rng(1);
  CHECK_THROWS_AS(replay.sample(1, rng), UsageError);
  const Transition t{3, 1, -0.1234567890123, 2, true, false};
  replay.push(t);
  for (const auto& s : replay.sample(5, rng)) CHECK(s == t);
}

TEST_CASE("valid starts for a truncated trajectory") {
  const auto fresh = with({trajectory(5, false)});
  CHECK(starts(fresh, 2) == std::vector<std::size_t>{0, 1, 2});
  const auto r = make_rollout(fresh, {0, 2}, 2);
  CHECK(r.rewards == std::vector<double>{2.0, 3.0});
  REQUIRE(r.bootstrap);
  CHECK(r.bootstrap->state == 4);
  CHECK(r.bootstrap->action == 0);
  CHECK_FALSE(r.terminated);
}

TEST_CASE("every start of a terminated trajectory is valid") {
  const auto fresh = with({trajectory(3, true)});
  const auto rollouts = extract_valid_rollouts(fresh, 5);
  REQUIRE(rollouts.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(rollouts[t].terminated);
    CHECK_FALSE(rollouts[t].bootstrap);
    CHECK(rollouts[t].rewards.size() == 3 - t);
  }
  const auto one = extract_valid_rollouts(with({trajectory(1, true)}), 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].rewards == std::vector<double>{0.0});
  CHECK(one[0].terminated);
}

TEST_CASE("rollout length must be positive") {
  const auto fresh = with({trajectory(3, true)});
  CHECK_THROWS_AS(extract_valid_rollouts(fresh, 0), UsageError);
  CHECK_THROWS_AS(extract_valid_rollouts(fresh, -2), UsageError);
}

TEST_CASE("valid rollout count has a closed form") {
  Rng rng(11);
  std::uniform_int_distribution<std::size_t> len(1, 30);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<Transition>> trajs;
    std::size_t n = 1 + trial % 7;
    for (std::size_t i = 0; i < n; ++i) trajs.push_back(trajectory(len(rng), coin(rng)));
    const auto fresh = with(trajs);
    for (int k = 1; k <= 32; ++k) {
      std::size_t expect = 0;
      for (const auto& t : trajs) {
        const auto T = t.size();
        expect += t.back().done ? T : (T > static_cast<std::size_t>(k) ? T - k : 0);
      }
      const auto rollouts = extract_valid_rollouts(fresh, k);
      CHECK(rollouts.size() == expect);
      for (const auto& r : rollouts) {
        if (r.terminated) {
          CHECK_FALSE(r.bootstrap);
          CHECK(r.rewards.size() <= static_cast<std::size_t>(k));
        } else {
          CHECK(r.bootstrap);
          CHECK(r.rewards.size() == static_cast<std::size_t>(k));
        }
      }
    }
  }
}

TEST_CASE("suitable share") {
  CHECK(*suitable_share(with({trajectory(4, true), trajectory(2, true)}), 7) == 1.0);
  CHECK(*suitable_share(with({trajectory(10, false)}), 10) == 0.0);
  CHECK(*suitable_share(with({trajectory(10, false)}), 5) == 0.5);
  CHECK_FALSE(suitable_share(FreshReplay(3), 1));

  Rng rng(3);
  std::uniform_int_distribution<std::size_t> len(1, 25);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::vector<Transition>> trajs;
    for (int i = 0; i < 4; ++i) trajs.push_back(trajectory(len(rng), i % 3 == 0));
    const auto fresh = with(trajs);
    double prev = 2.0;
    for (int k = 1; k <= 30; ++k) {
      const double s = *suitable_share(fresh, k);
      CHECK(s <= prev);
      CHECK(s >= 0.0);
      prev = s;
    }
  }
}

TEST_CASE("fresh replay keeps whole trajectories") {
  FreshReplay fresh(2);
  for (std::size_t i = 0; i < 3; ++i)
    for (const auto& t : trajectory(i + 2, true)) fresh.append(t);
  REQUIRE(fresh.trajectories().size() == 2);
  CHECK(fresh.trajectories().front().size() == 3);
  CHECK(fresh.trajectories().back().size() == 4);
  CHECK(fresh.stored_transitions() == 7);

  // An open trajectory is not visible.
  fresh.append(tr(0, 0, 0.0, 1));
  CHECK(fresh.stored_transitions() == 7);
  CHECK_THROWS_AS(fresh.add_trajectory({tr(0, 0, 0.0, 1)}), UsageError);
}

TEST_CASE("rollout batches") {
  Rng rng(5);
  const auto fresh = with({trajectory(3, false)});
  SUBCASE("size zero") {
    const auto b = sample_rollout_batch(fresh, 1, 0, rng);
    REQUIRE(b);
    CHECK(b->empty());
  }
  SUBCASE("no valid rollout") {
    CHECK_FALSE(sample_rollout_batch(fresh, 3, 4, rng));
    CHECK_FALSE(sample_rollout_batch(FreshReplay(2), 1, 4, rng));
  }
  SUBCASE("single valid rollout repeats") {
    const auto b = sample_rollout_batch(fresh, 2, 3, rng);
    REQUIRE(b);
    REQUIRE(b->size() == 3);
    for (const auto& r : *b) {
      CHECK(r.start_state == 0);
      CHECK(r.rewards == std::vector<double>{0.0, 1.0});
    }
  }
}

TEST_CASE("rollout sampling is uniform over valid starts") {
  auto second = trajectory(6, false);
  for (auto& t : second) t.state += 100;
  const auto fresh = with({trajectory(4, true), second});
  // k = 2: all 4 starts of the terminated trajectory plus 4 of the truncated one.
  Rng rng(99);
  const std::size_t n = 100000;
  const auto batch = sample_rollout_batch(fresh, 2, n, rng);
  REQUIRE(batch);
  std::map<std::size_t, std::size_t> counts;
  for (const auto& r : *batch) ++counts[r.start_state];
  REQUIRE(counts.size() == 8);
  const double p = 1.0 / 8.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (const auto& [start, c] : counts) {
    CAPTURE(start);
    CHECK(std::fabs(static_cast<double>(c) - n * p) < 3.0 * sigma);
  }
}
