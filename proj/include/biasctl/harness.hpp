#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "biasctl/bias.hpp"
#include "biasctl/config.hpp"
#include "biasctl/controller.hpp"
#include "biasctl/critics.hpp"
#include "biasctl/mdp.hpp"
#include "biasctl/replay.hpp"

namespace biasctl {

/// One evaluation row. Absent values are NaN.
struct RunRow {
  std::size_t step = 0;
  double mean_return = 0.0;
  double eta = 0.0;
  double bias_raw = 0.0;
  double bias_smoothed = 0.0;
  double suitable_share = 0.0;

  bool operator==(const RunRow& other) const;
};

struct RunRecord {
  std::vector<RunRow> rows;
  double final_performance = 0.0;  // NaN for an empty record
};

/// Mean return over rows whose step lies in the last `fraction` of [0, total_steps].
double final_performance(const std::vector<RunRow>& rows, std::size_t total_steps, double fraction);

/// Independent generator for one named purpose of a seeded run.
Rng derive_rng(std::uint64_t seed, std::uint64_t stream);

/// One seeded training run, advanced a step at a time.
class Experiment {
 public:
  Experiment(const ExperimentConfig& config, std::uint64_t seed);

  /// One environment step plus the critic update and the controller tick.
  void step();
  /// Runs to total_steps, recording a row every eval_every steps.
  RunRecord run_to_end();

  std::size_t steps_done() const { return steps_; }
  double eta() const { return controller_.eta(); }
  double epsilon() const;
  const TabularMdp& mdp() const { return mdp_; }
  const CriticEnsemble& critics() const { return critics_; }
  const FreshReplay& fresh() const { return fresh_; }
  const MainReplay& replay() const { return replay_; }
  const BiasController& controller() const { return controller_; }
  const ExperimentConfig& config() const { return config_; }

  /// epsilon-greedy policy the agent currently acts with.
  StochasticPolicy behaviour_policy() const;
  StochasticPolicy greedy_policy() const;
  /// Snapshot of the online critics under the configured aggregation.
  CriticFn bias_critic() const;
  /// Current evaluation score of the greedy policy.
  double evaluate();
  /// One bias estimate from the fresh buffer at rollout length k.
  std::optional<double> probe_bias(int k);
  RunRow snapshot();

 private:
  void update_critics();

  ExperimentConfig config_;
  TabularMdp mdp_;
  Rng env_rng_;
  Rng act_rng_;
  Rng update_rng_;
  Rng probe_rng_;
  Rng eval_rng_;
  CriticEnsemble critics_;
  MainReplay replay_;
  FreshReplay fresh_;
  BiasController controller_;
  std::size_t state_ = 0;
  std::size_t episode_steps_ = 0;
  std::size_t steps_ = 0;
};

/// Validates the config and runs it for one seed.
RunRecord run(const ExperimentConfig& config, std::uint64_t seed);

/// One fixed-eta run per (eta, seed in config.seeds). Runs share nothing and go
/// on up to `threads` worker threads; results do not depend on the thread count.
std::map<double, std::vector<RunRecord>> grid_search(const ExperimentConfig& config_template,
                                                     const std::vector<double>& grid, std::size_t threads = 1);

/// Mean over seeds of each record's final performance.
double mean_final(const std::vector<RunRecord>& records);

/// Improvement in sample efficiency: the least number of grid tries whose expected
/// best final performance matches the adaptive one.
struct IseResult {
  std::optional<std::size_t> tries;  // nullopt when no subset size suffices
  std::size_t grid_size = 0;
  std::vector<double> expected_best;  // index n - 1: mean best over size-n subsets

  std::string to_string() const;  // "n" or ">|G|"
};

IseResult ise(const std::map<double, double>& grid_finals, double adaptive_final);

// CSV persistence.
extern const char* const kCsvHeader;
void emit_csv(const RunRecord& record, const std::string& path);
void write_csv(const RunRecord& record, std::ostream& out);
std::vector<RunRow> read_csv(const std::string& path);
std::vector<RunRow> parse_csv(std::istream& in);

/// Occurrences of each eta value, after rounding down to multiples of bin_width when positive.
std::map<double, std::size_t> eta_histogram(const std::vector<RunRow>& rows, double bin_width = 0.0);

}  // namespace biasctl
