#include "biasctl/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <functional>
#include <sstream>

#include "biasctl/errors.hpp"

namespace biasctl {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& text, const std::string& what) {
  double v = 0.0;
  const auto t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) throw UsageError(what + ": '" + text + "' is not a number");
  return v;
}

std::size_t to_count(const std::string& text, const std::string& what) {
  std::size_t v = 0;
  const auto t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size())
    throw UsageError(what + ": '" + text + "' is not a non-negative integer");
  return v;
}

bool to_bool(const std::string& text, const std::string& what) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw UsageError(what + ": '" + text + "' is not a boolean");
}

std::vector<double> parse_record(const std::string& rec, std::size_t fields, const std::string& what) {
  const auto parts = split(rec, ',');
  if (parts.size() != fields) throw UsageError(what + ": record '" + rec + "' needs " + std::to_string(fields) + " fields");
  std::vector<double> out;
  for (const auto& p : parts) out.push_back(to_double(p, what));
  return out;
}

std::size_t as_index(double v, std::size_t bound, const std::string& what) {
  if (v < 0.0 || v != std::floor(v) || v >= static_cast<double>(bound)) throw UsageError(what + ": index out of range");
  return static_cast<std::size_t>(v);
}

TabularMdp build_explicit(const MdpSpec& spec) {
  if (spec.n_states == 0 || spec.n_actions == 0) throw UsageError("explicit MDP needs n_states and n_actions");
  const auto S = spec.n_states;
  const auto A = spec.n_actions;
  auto t = MdpTables::zeros(S, A, spec.discount, spec.time_limit == 0 ? 100 : spec.time_limit);
  for (const auto& rec : split(spec.transitions, ';')) {
    const auto f = parse_record(rec, 4, "transitions");
    t.p(as_index(f[0], S, "transitions"), as_index(f[1], A, "transitions"), as_index(f[2], S, "transitions")) = f[3];
  }
  for (const auto& rec : split(spec.rewards, ';')) {
    const auto f = parse_record(rec, 4, "rewards");
    const auto i = as_index(f[0], S, "rewards") * A + as_index(f[1], A, "rewards");
    t.reward_mean[i] = f[2];
    t.reward_noise_std[i] = f[3];
  }
  for (const auto& s : split(spec.terminal, ',')) t.terminal[as_index(to_double(s, "terminal"), S, "terminal")] = true;
  if (!trim(spec.initial).empty()) {
    std::fill(t.initial_dist.begin(), t.initial_dist.end(), 0.0);
    for (const auto& rec : split(spec.initial, ';')) {
      const auto f = parse_record(rec, 2, "initial");
      t.initial_dist[as_index(f[0], S, "initial")] = f[1];
    }
  }
  // Rows left empty (typically terminal states) default to a self-loop.
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t a = 0; a < A; ++a) {
      double total = 0.0;
      for (std::size_t n = 0; n < S; ++n) total += t.p(s, a, n);
      if (total == 0.0) t.p(s, a, s) = 1.0;
    }
  }
  return TabularMdp(std::move(t));
}

}  // namespace

TabularMdp build_mdp(const MdpSpec& spec) {
  try {
    if (spec.testbed == "chain") return chain(spec.length, spec.noise, spec.gambles, spec.discount, spec.time_limit);
    if (spec.testbed == "loopy_grid")
      return loopy_grid(spec.width, spec.height, spec.noise, spec.discount, spec.time_limit);
    if (spec.testbed == "noisy_bandit") return noisy_bandit_mdp(spec.arms, spec.noise, spec.discount);
    if (spec.testbed == "explicit") return build_explicit(spec);
  } catch (const ModelError& e) {
    throw UsageError(std::string("invalid MDP: ") + e.what());
  }
  throw UsageError("unknown testbed '" + spec.testbed + "'");
}

std::size_t ExperimentConfig::members() const {
  return method == Method::mmql_style ? total_networks : number_of_critics;
}

std::size_t ExperimentConfig::atoms() const { return method == Method::tqc_style ? number_of_atoms : 1; }

ControlMode ExperimentConfig::effective_mode() const {
  if (!adaptive) return ControlMode::fixed;
  if (mode) return *mode;
  return method == Method::wd3_style ? ControlMode::continuous : ControlMode::discrete;
}

EtaBounds ExperimentConfig::bounds() const {
  auto b = clamp_bounds_for(method, members(), atoms());
  if (eta_min) b.min = *eta_min;
  if (eta_max) b.max = *eta_max;
  return b;
}

double ExperimentConfig::initial_eta() const { return eta ? *eta : default_initial_eta(method); }

int ExperimentConfig::effective_rollout_length() const { return rollout_length ? *rollout_length : 20; }

void ExperimentConfig::validate() const {
  if (method == Method::wd3_style && number_of_critics != 2)
    throw UsageError("wd3_style needs number_of_critics = 2");
  if (method == Method::tqc_style && (number_of_critics == 0 || number_of_atoms == 0))
    throw UsageError("tqc_style needs at least one critic and one atom");
  if (method == Method::mmql_style && (total_networks < 2 || updated_networks == 0 || updated_networks > total_networks))
    throw UsageError("mmql_style needs total_networks >= 2 and 1 <= updated_networks <= total_networks");
  if (!adaptive && !eta) throw UsageError("a fixed run needs an eta");
  const auto b = clamp_bounds_for(method, members(), atoms());
  const auto eb = bounds();
  if (eb.min > eb.max || eb.min < b.min || eb.max > b.max) throw UsageError("eta bounds fall outside the valid range");
  const double e0 = initial_eta();
  if (e0 < eb.min || e0 > eb.max) throw UsageError("eta lies outside its bounds");
  const auto m = effective_mode();
  if (method != Method::wd3_style && e0 != std::round(e0)) throw UsageError("integer eta expected for this method");
  if (m == ControlMode::discrete && e0 != std::round(e0)) throw UsageError("discrete control needs an integer eta");
  if (m == ControlMode::continuous && method != Method::wd3_style)
    throw UsageError("continuous control only applies to the real-valued min weight");
  if (bias_evaluation_period == 0) throw UsageError("bias_evaluation_period must be positive");
  if (!(bias_averaging_coefficient >= 0.0 && bias_averaging_coefficient < 1.0))
    throw UsageError("bias_averaging_coefficient must lie in [0, 1)");
  if (m == ControlMode::discrete && bias_update_interval == 0) throw UsageError("bias_update_interval must be positive");
  if (!(eta_learning_rate > 0.0)) throw UsageError("eta_learning_rate must be positive");
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
  if (!(huber_loss_parameter > 0.0)) throw UsageError("huber_loss_parameter must be positive");
  if (!(target_smoothing_coefficient > 0.0 && target_smoothing_coefficient <= 1.0))
    throw UsageError("target_smoothing_coefficient must lie in (0, 1]");
  if (minibatch_size == 0 || replay_buffer_size == 0) throw UsageError("minibatch and replay sizes must be positive");
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0))
    throw UsageError("epsilon values must lie in [0, 1]");
  if (fresh_replay_size == 0) throw UsageError("fresh_replay_size must be positive");
  if (effective_rollout_length() < 1) throw UsageError("rollout_length must be at least 1");
  if (eval_every == 0) throw UsageError("eval_every must be positive");
  if (eval_mode == EvalMode::rollouts && eval_episodes == 0) throw UsageError("eval_episodes must be positive");
  if (!(final_window_fraction > 0.0 && final_window_fraction <= 1.0))
    throw UsageError("final_window_fraction must lie in (0, 1]");
  if (seeds.empty()) throw UsageError("seeds must not be empty");
  if (representation == Representation::mlp)
    for (auto h : hidden_layers)
      if (h == 0) throw UsageError("hidden layer sizes must be positive");
  build_mdp(mdp);
}

ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw UsageError(std::string("config parse error: ") + e.what());
  }

  ExperimentConfig c;
  using Setter = std::function<void(const std::string&)>;
  const std::string ctx = "config";
  std::map<std::string, std::map<std::string, Setter>> keys;
  auto& mdp = keys["mdp"];
  mdp["testbed"] = [&](const std::string& v) { c.mdp.testbed = trim(v); };
  mdp["length"] = [&](const std::string& v) { c.mdp.length = to_count(v, "mdp.length"); };
  mdp["gambles"] = [&](const std::string& v) { c.mdp.gambles = to_count(v, "mdp.gambles"); };
  mdp["width"] = [&](const std::string& v) { c.mdp.width = to_count(v, "mdp.width"); };
  mdp["height"] = [&](const std::string& v) { c.mdp.height = to_count(v, "mdp.height"); };
  mdp["arms"] = [&](const std::string& v) { c.mdp.arms = to_count(v, "mdp.arms"); };
  mdp["noise"] = [&](const std::string& v) { c.mdp.noise = to_double(v, "mdp.noise"); };
  mdp["discount"] = [&](const std::string& v) { c.mdp.discount = to_double(v, "mdp.discount"); };
  mdp["time_limit"] = [&](const std::string& v) { c.mdp.time_limit = to_count(v, "mdp.time_limit"); };
  mdp["n_states"] = [&](const std::string& v) { c.mdp.n_states = to_count(v, "mdp.n_states"); };
  mdp["n_actions"] = [&](const std::string& v) { c.mdp.n_actions = to_count(v, "mdp.n_actions"); };
  mdp["transitions"] = [&](const std::string& v) { c.mdp.transitions = v; };
  mdp["rewards"] = [&](const std::string& v) { c.mdp.rewards = v; };
  mdp["terminal"] = [&](const std::string& v) { c.mdp.terminal = v; };
  mdp["initial"] = [&](const std::string& v) { c.mdp.initial = v; };

  auto& method = keys["method"];
  method["name"] = [&](const std::string& v) { c.method = parse_method(trim(v)); };
  method["adaptive"] = [&](const std::string& v) { c.adaptive = to_bool(v, "method.adaptive"); };
  method["eta"] = [&](const std::string& v) { c.eta = to_double(v, "method.eta"); };

  auto& ctl = keys["controller"];
  ctl["mode"] = [&](const std::string& v) { c.mode = parse_control_mode(trim(v)); };
  ctl["bias_evaluation_period"] = [&](const std::string& v) {
    c.bias_evaluation_period = to_count(v, "controller.bias_evaluation_period");
  };
  ctl["bias_averaging_coefficient"] = [&](const std::string& v) {
    c.bias_averaging_coefficient = to_double(v, "controller.bias_averaging_coefficient");
  };
  ctl["bias_update_interval"] = [&](const std::string& v) {
    c.bias_update_interval = to_count(v, "controller.bias_update_interval");
  };
  ctl["eta_learning_rate"] = [&](const std::string& v) {
    c.eta_learning_rate = to_double(v, "controller.eta_learning_rate");
  };
  ctl["eta_min"] = [&](const std::string& v) { c.eta_min = to_double(v, "controller.eta_min"); };
  ctl["eta_max"] = [&](const std::string& v) { c.eta_max = to_double(v, "controller.eta_max"); };

  auto& cr = keys["critics"];
  cr["representation"] = [&](const std::string& v) {
    const auto t = trim(v);
    if (t == "tabular") c.representation = Representation::tabular;
    else if (t == "mlp") c.representation = Representation::mlp;
    else throw UsageError("critics.representation must be tabular or mlp");
  };
  cr["number_of_critics"] = [&](const std::string& v) { c.number_of_critics = to_count(v, "critics.number_of_critics"); };
  cr["number_of_atoms"] = [&](const std::string& v) { c.number_of_atoms = to_count(v, "critics.number_of_atoms"); };
  cr["total_networks"] = [&](const std::string& v) { c.total_networks = to_count(v, "critics.total_networks"); };
  cr["updated_networks"] = [&](const std::string& v) { c.updated_networks = to_count(v, "critics.updated_networks"); };
  cr["hidden_layers"] = [&](const std::string& v) {
    c.hidden_layers.clear();
    for (const auto& h : split(v, ',')) c.hidden_layers.push_back(to_count(h, "critics.hidden_layers"));
  };
  cr["learning_rate"] = [&](const std::string& v) { c.learning_rate = to_double(v, "critics.learning_rate"); };
  cr["huber_loss_parameter"] = [&](const std::string& v) {
    c.huber_loss_parameter = to_double(v, "critics.huber_loss_parameter");
  };
  cr["target_smoothing_coefficient"] = [&](const std::string& v) {
    c.target_smoothing_coefficient = to_double(v, "critics.target_smoothing_coefficient");
  };
  cr["minibatch_size"] = [&](const std::string& v) { c.minibatch_size = to_count(v, "critics.minibatch_size"); };
  cr["replay_buffer_size"] = [&](const std::string& v) {
    c.replay_buffer_size = to_count(v, "critics.replay_buffer_size");
  };
  cr["learning_starts"] = [&](const std::string& v) { c.learning_starts = to_count(v, "critics.learning_starts"); };
  cr["epsilon_start"] = [&](const std::string& v) { c.epsilon_start = to_double(v, "critics.epsilon_start"); };
  cr["epsilon_end"] = [&](const std::string& v) { c.epsilon_end = to_double(v, "critics.epsilon_end"); };
  cr["epsilon_steps"] = [&](const std::string& v) { c.epsilon_steps = to_count(v, "critics.epsilon_steps"); };

  auto& bias = keys["bias"];
  bias["fresh_replay_size"] = [&](const std::string& v) { c.fresh_replay_size = to_count(v, "bias.fresh_replay_size"); };
  bias["fresh_batch_size"] = [&](const std::string& v) { c.fresh_batch_size = to_count(v, "bias.fresh_batch_size"); };
  bias["rollout_length"] = [&](const std::string& v) {
    c.rollout_length = static_cast<int>(to_count(v, "bias.rollout_length"));
  };
  bias["bias_value"] = [&](const std::string& v) {
    const auto t = trim(v);
    if (t == "mean") c.bias_value = ValueAggregate::mean;
    else if (t == "min") c.bias_value = ValueAggregate::min;
    else if (t == "member0") c.bias_value = ValueAggregate::member0;
    else throw UsageError("bias.bias_value must be mean, min or member0");
  };

  auto& run = keys["run"];
  run["total_steps"] = [&](const std::string& v) { c.total_steps = to_count(v, "run.total_steps"); };
  run["eval_every"] = [&](const std::string& v) { c.eval_every = to_count(v, "run.eval_every"); };
  run["eval_episodes"] = [&](const std::string& v) { c.eval_episodes = to_count(v, "run.eval_episodes"); };
  run["eval_mode"] = [&](const std::string& v) {
    const auto t = trim(v);
    if (t == "exact") c.eval_mode = EvalMode::exact;
    else if (t == "rollouts") c.eval_mode = EvalMode::rollouts;
    else throw UsageError("run.eval_mode must be exact or rollouts");
  };
  run["final_window_fraction"] = [&](const std::string& v) {
    c.final_window_fraction = to_double(v, "run.final_window_fraction");
  };
  run["seeds"] = [&](const std::string& v) {
    c.seeds.clear();
    for (const auto& s : split(v, ',')) c.seeds.push_back(to_count(s, "run.seeds"));
  };

  for (const auto& [section, body] : tree) {
    const auto sec = keys.find(section);
    if (sec == keys.end()) {
      if (!body.data().empty()) throw UsageError("config: keys must live inside a section, found '" + section + "'");
      throw UsageError("config: unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      const auto setter = sec->second.find(key);
      if (setter == sec->second.end()) throw UsageError("config: unknown key '" + key + "' in [" + section + "]");
      setter->second(value.data());
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  return parse_config(in);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::vector<DefaultRow> default_table() {
  const FullScaleDefaults p;
  const ExperimentConfig d;
  auto f = [](double v) { return format_double(v); };
  auto n = [](std::size_t v) { return std::to_string(v); };
  return {
      {"discount", f(p.discount), f(d.mdp.discount)},
      {"bias_averaging_coefficient", f(p.bias_averaging_coefficient), f(d.bias_averaging_coefficient)},
      {"bias_evaluation_period", n(p.bias_evaluation_period), n(d.bias_evaluation_period)},
      {"bias_update_interval", n(p.bias_update_interval), n(d.bias_update_interval)},
      {"fresh_replay_size", n(p.fresh_replay_size), n(d.fresh_replay_size)},
      {"fresh_batch_size", n(p.fresh_batch_size), n(d.fresh_batch_size)},
      {"rollout_length_tqc", n(static_cast<std::size_t>(p.rollout_length_tqc)), n(20)},
      {"rollout_length_wd3", n(static_cast<std::size_t>(p.rollout_length_wd3)), n(20)},
      {"rollout_length_mmql", n(static_cast<std::size_t>(p.rollout_length_mmql)), n(20)},
      {"huber_loss_parameter", f(p.huber_loss_parameter), f(d.huber_loss_parameter)},
      {"target_smoothing_coefficient", f(p.target_smoothing_coefficient), f(d.target_smoothing_coefficient)},
      {"number_of_atoms", n(p.number_of_atoms), n(d.number_of_atoms)},
      {"number_of_critics", n(p.number_of_critics), n(d.number_of_critics)},
      {"total_networks", n(p.total_networks), n(d.total_networks)},
      {"updated_networks", n(p.updated_networks), n(d.updated_networks)},
      {"eta_learning_rate", f(p.eta_learning_rate), f(d.eta_learning_rate)},
      {"learning_rate", f(p.learning_rate), f(d.learning_rate)},
      {"replay_buffer_size", n(p.replay_buffer_size), n(d.replay_buffer_size)},
      {"total_steps", n(p.total_steps), n(d.total_steps)},
      {"final_window", n(p.final_window),
       n(static_cast<std::size_t>(std::llround(d.final_window_fraction * static_cast<double>(d.total_steps))))},
  };
}

void print_default_table(std::ostream& out) {
  out << std::left << std::setw(32) << "parameter" << std::setw(12) << "full" << "desk\n";
  for (const auto& row : default_table())
    out << std::left << std::setw(32) << row.name << std::setw(12) << row.full << row.desk << '\n';
}

}  // namespace biasctl
