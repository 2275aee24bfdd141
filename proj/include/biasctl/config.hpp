#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "biasctl/controller.hpp"
#include "biasctl/critics.hpp"
#include "biasctl/mdp.hpp"

namespace biasctl {

/// Which MDP to build: a named testbed or explicit tables.
///
/// Explicit tables use `;`-separated records: transitions "s,a,s',p", rewards
/// "s,a,mean,std", terminal "s,s,...", initial "s,p". Unlisted entries are zero;
/// an empty initial distribution means state 0.
struct MdpSpec {
  std::string testbed = "chain";  // chain | loopy_grid | noisy_bandit | explicit
  std::size_t length = 10;
  std::size_t gambles = 8;
  std::size_t width = 5;
  std::size_t height = 5;
  std::size_t arms = 8;
  double noise = 2.0;
  double discount = 0.99;
  std::size_t time_limit = 0;  // 0 picks the testbed's own default
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::string transitions;
  std::string rewards;
  std::string terminal;
  std::string initial;
};

TabularMdp build_mdp(const MdpSpec& spec);

enum class EvalMode { exact, rollouts };

/// Everything one run needs. Defaults are the desk-scale values; see FullScaleDefaults
/// for the full-scale reference values they were scaled from.
struct ExperimentConfig {
  MdpSpec mdp;

  Method method = Method::mmql_style;
  bool adaptive = true;
  std::optional<double> eta;  // the fixed eta, or the starting eta of an adaptive run

  // Controller.
  std::optional<ControlMode> mode;  // discrete for integer eta, continuous for the min weight
  std::size_t bias_evaluation_period = 10;
  double bias_averaging_coefficient = 0.98;
  std::size_t bias_update_interval = 2500;
  double eta_learning_rate = 6e-4;
  std::optional<double> eta_min;
  std::optional<double> eta_max;

  // Critics.
  Representation representation = Representation::tabular;
  std::size_t number_of_critics = 2;
  std::size_t number_of_atoms = 25;
  std::size_t total_networks = 8;
  std::size_t updated_networks = 2;
  std::vector<std::size_t> hidden_layers{32, 32};
  double learning_rate = 0.05;
  double huber_loss_parameter = 1.0;
  double target_smoothing_coefficient = 0.005;
  std::size_t minibatch_size = 8;
  std::size_t replay_buffer_size = 10000;
  std::size_t learning_starts = 500;
  double epsilon_start = 0.1;
  double epsilon_end = 0.1;
  std::size_t epsilon_steps = 5000;

  // Bias probes.
  std::size_t fresh_replay_size = 200;  // trajectories
  std::size_t fresh_batch_size = 500;
  std::optional<int> rollout_length;  // per-method default when unset
  ValueAggregate bias_value = ValueAggregate::mean;

  // Run.
  std::size_t total_steps = 50000;
  std::size_t eval_every = 500;
  std::size_t eval_episodes = 10;
  EvalMode eval_mode = EvalMode::exact;
  double final_window_fraction = 0.1;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3};

  std::size_t members() const;  // N for quantile/weighted critics, N_tot for maxmin
  std::size_t atoms() const;    // M for quantile critics, 1 otherwise
  ControlMode effective_mode() const;
  EtaBounds bounds() const;
  double initial_eta() const;
  int effective_rollout_length() const;

  /// Throws UsageError naming the first offending field.
  void validate() const;
};

/// Parses an INI-style file with sections [mdp], [method], [controller], [critics],
/// [bias] and [run]. Unknown sections or keys are rejected.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(std::istream& in);

/// Full-scale values from the reference hyperparameter tables.
struct FullScaleDefaults {
  double discount = 0.99;
  double bias_averaging_coefficient = 0.999;
  std::size_t bias_evaluation_period = 10;
  std::size_t bias_update_interval = 50000;
  std::size_t fresh_replay_size = 200;
  std::size_t fresh_batch_size = 4000;
  int rollout_length_tqc = 500;
  int rollout_length_wd3 = 500;
  int rollout_length_mmql = 200;
  double huber_loss_parameter = 1.0;
  double target_smoothing_coefficient = 0.005;
  std::size_t number_of_atoms = 25;
  std::size_t number_of_critics = 2;
  std::size_t total_networks = 8;
  std::size_t updated_networks = 2;
  double eta_learning_rate = 3e-5;
  double learning_rate = 3e-4;
  std::size_t replay_buffer_size = 1'000'000;
  std::size_t total_steps = 1'000'000;
  std::size_t final_window = 100'000;
};

/// One "name full desk" row per hyperparameter.
struct DefaultRow {
  std::string name;
  std::string full;
  std::string desk;
};
std::vector<DefaultRow> default_table();
void print_default_table(std::ostream& out);

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace biasctl
