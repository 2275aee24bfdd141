#include "biasctl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "biasctl/errors.hpp"

namespace biasctl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum Stream : std::uint64_t { kEnv = 1, kAct, kUpdate, kProbe, kEval, kInit };

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

ControllerParams controller_params(const ExperimentConfig& c) {
  ControllerParams p;
  p.mode = c.effective_mode();
  p.bounds = c.bounds();
  p.initial_eta = c.initial_eta();
  p.lambda = c.eta_learning_rate;
  p.gamma_eta = c.bias_averaging_coefficient;
  p.m_compute = c.bias_evaluation_period;
  p.m_update = c.bias_update_interval == 0 ? 1 : c.bias_update_interval;
  return p;
}

CriticEnsemble make_critics(const ExperimentConfig& c, const TabularMdp& mdp, Rng& rng) {
  CriticShape shape;
  shape.n_states = mdp.n_states();
  shape.n_actions = mdp.n_actions();
  shape.n_members = c.members();
  shape.n_atoms = c.atoms();
  shape.representation = c.representation;
  shape.hidden = c.hidden_layers;
  return CriticEnsemble(shape, rng);
}

const ExperimentConfig& validated(const ExperimentConfig& c) {
  c.validate();
  return c;
}

double parse_field(const std::string& text, std::size_t line) {
  if (text == "nan") return kNaN;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw UsageError("csv line " + std::to_string(line) + ": bad number '" + text + "'");
  return v;
}

}  // namespace

bool RunRow::operator==(const RunRow& o) const {
  return step == o.step && same(mean_return, o.mean_return) && same(eta, o.eta) && same(bias_raw, o.bias_raw) &&
         same(bias_smoothed, o.bias_smoothed) && same(suitable_share, o.suitable_share);
}

double final_performance(const std::vector<RunRow>& rows, std::size_t total_steps, double fraction) {
  const double cut = static_cast<double>(total_steps) * (1.0 - fraction);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (static_cast<double>(r.step) > cut) {
      sum += r.mean_return;
      ++n;
    }
  }
  return n == 0 ? kNaN : sum / static_cast<double>(n);
}

Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x9e3779b9u};
  return Rng(seq);
}

Experiment::Experiment(const ExperimentConfig& config, std::uint64_t seed)
    : config_(validated(config)),
      mdp_(build_mdp(config.mdp)),
      env_rng_(derive_rng(seed, kEnv)),
      act_rng_(derive_rng(seed, kAct)),
      update_rng_(derive_rng(seed, kUpdate)),
      probe_rng_(derive_rng(seed, kProbe)),
      eval_rng_(derive_rng(seed, kEval)),
      critics_([&] {
        auto init = derive_rng(seed, kInit);
        return make_critics(config, mdp_, init);
      }()),
      replay_(config.replay_buffer_size),
      fresh_(config.fresh_replay_size),
      controller_(controller_params(config)) {
  state_ = mdp_.sample_initial(env_rng_);
}

double Experiment::epsilon() const {
  if (config_.epsilon_steps == 0 || steps_ >= config_.epsilon_steps) return config_.epsilon_end;
  const double frac = static_cast<double>(steps_) / static_cast<double>(config_.epsilon_steps);
  return config_.epsilon_start + frac * (config_.epsilon_end - config_.epsilon_start);
}

StochasticPolicy Experiment::behaviour_policy() const {
  std::vector<double> values;
  values.reserve(mdp_.n_states() * mdp_.n_actions());
  for (std::size_t s = 0; s < mdp_.n_states(); ++s) {
    const auto q = critics_.action_values(s, ValueAggregate::mean);
    values.insert(values.end(), q.begin(), q.end());
  }
  return StochasticPolicy::epsilon_greedy(mdp_.n_states(), mdp_.n_actions(), values, epsilon());
}

StochasticPolicy Experiment::greedy_policy() const {
  std::vector<double> values;
  values.reserve(mdp_.n_states() * mdp_.n_actions());
  for (std::size_t s = 0; s < mdp_.n_states(); ++s) {
    const auto q = critics_.action_values(s, ValueAggregate::mean);
    values.insert(values.end(), q.begin(), q.end());
  }
  return StochasticPolicy::epsilon_greedy(mdp_.n_states(), mdp_.n_actions(), values, 0.0);
}

CriticFn Experiment::bias_critic() const {
  auto table = std::make_shared<std::vector<double>>();
  table->reserve(mdp_.n_states() * mdp_.n_actions());
  for (std::size_t s = 0; s < mdp_.n_states(); ++s) {
    const auto q = critics_.action_values(s, config_.bias_value);
    table->insert(table->end(), q.begin(), q.end());
  }
  return [table, n_actions = mdp_.n_actions()](std::size_t s, std::size_t a) { return (*table)[s * n_actions + a]; };
}

void Experiment::step() {
  std::size_t action = 0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(act_rng_) < epsilon()) {
    std::uniform_int_distribution<std::size_t> pick(0, mdp_.n_actions() - 1);
    action = pick(act_rng_);
  } else {
    action = argmax(critics_.action_values(state_, ValueAggregate::mean));
  }

  auto tr = biasctl::step(mdp_, state_, action, env_rng_);
  ++episode_steps_;
  if (!tr.done && episode_steps_ >= mdp_.time_limit()) tr.truncated = true;
  replay_.push(tr);
  fresh_.append(tr);
  if (tr.ends_episode()) {
    state_ = mdp_.sample_initial(env_rng_);
    episode_steps_ = 0;
  } else {
    state_ = tr.next_state;
  }
  ++steps_;

  if (steps_ >= config_.learning_starts) update_critics();

  const int k = config_.effective_rollout_length();
  controller_.on_env_step([this, k] { return probe_bias(k); });
}

void Experiment::update_critics() {
  const auto batch = replay_.sample(config_.minibatch_size, update_rng_);
  const double gamma = mdp_.discount();
  const double eta = controller_.eta();
  switch (config_.method) {
    case Method::tqc_style:
      tqc_update_step(critics_, batch, static_cast<int>(std::lround(eta)), gamma, config_.learning_rate,
                      config_.huber_loss_parameter);
      break;
    case Method::wd3_style:
      wd3_update_step(critics_, batch, eta, gamma, config_.learning_rate);
      break;
    case Method::mmql_style: {
      std::vector<std::vector<Transition>> batches{batch};
      while (batches.size() < config_.updated_networks)
        batches.push_back(replay_.sample(config_.minibatch_size, update_rng_));
      maxmin_update_step(critics_, batches, static_cast<int>(std::lround(eta)), gamma, config_.learning_rate,
                         update_rng_);
      break;
    }
  }
  critics_.sync_targets(config_.target_smoothing_coefficient);
}

std::optional<double> Experiment::probe_bias(int k) {
  const auto batch = sample_rollout_batch(fresh_, k, config_.fresh_batch_size, probe_rng_);
  if (!batch || batch->empty()) return std::nullopt;
  return aggregated_bias(*batch, bias_critic(), mdp_.discount());
}

double Experiment::evaluate() {
  const auto policy = greedy_policy();
  if (config_.eval_mode == EvalMode::exact) return expected_episode_return(mdp_, policy, mdp_.time_limit());
  double total = 0.0;
  for (std::size_t e = 0; e < config_.eval_episodes; ++e)
    for (const auto& tr : run_episode(mdp_, policy, eval_rng_, mdp_.time_limit())) total += tr.reward;
  return total / static_cast<double>(config_.eval_episodes);
}

RunRow Experiment::snapshot() {
  const auto& st = controller_.state();
  RunRow row;
  row.step = steps_;
  row.mean_return = evaluate();
  row.eta = controller_.eta();
  row.bias_raw = st.last_raw ? *st.last_raw : kNaN;
  row.bias_smoothed = st.probes > 0 ? st.b_smooth : kNaN;
  const auto share = suitable_share(fresh_, config_.effective_rollout_length());
  row.suitable_share = share ? *share : kNaN;
  return row;
}

RunRecord Experiment::run_to_end() {
  RunRecord record;
  while (steps_ < config_.total_steps) {
    step();
    if (steps_ % config_.eval_every == 0) record.rows.push_back(snapshot());
  }
  record.final_performance = final_performance(record.rows, config_.total_steps, config_.final_window_fraction);
  return record;
}

RunRecord run(const ExperimentConfig& config, std::uint64_t seed) {
  Experiment exp(config, seed);
  return exp.run_to_end();
}

std::map<double, std::vector<RunRecord>> grid_search(const ExperimentConfig& config_template,
                                                     const std::vector<double>& grid, std::size_t threads) {
  if (grid.empty()) throw UsageError("grid must not be empty");
  struct Job {
    double eta;
    std::size_t seed_index;
    ExperimentConfig config;
  };
  std::vector<Job> jobs;
  for (double eta : grid) {
    auto c = config_template;
    c.adaptive = false;
    c.mode.reset();
    c.eta = eta;
    c.validate();
    for (std::size_t i = 0; i < c.seeds.size(); ++i) jobs.push_back({eta, i, c});
  }

  std::vector<RunRecord> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        results[j] = run(jobs[j].config, jobs[j].config.seeds[jobs[j].seed_index]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, jobs.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::map<double, std::vector<RunRecord>> out;
  for (std::size_t j = 0; j < jobs.size(); ++j) out[jobs[j].eta].push_back(std::move(results[j]));
  return out;
}

double mean_final(const std::vector<RunRecord>& records) {
  if (records.empty()) return kNaN;
  double sum = 0.0;
  for (const auto& r : records) sum += r.final_performance;
  return sum / static_cast<double>(records.size());
}

std::string IseResult::to_string() const {
  if (tries) return std::to_string(*tries);
  return ">" + std::to_string(grid_size);
}

IseResult ise(const std::map<double, double>& grid_finals, double adaptive_final) {
  if (grid_finals.empty()) throw UsageError("grid finals must not be empty");
  std::vector<double> v;
  for (const auto& [eta, final] : grid_finals) v.push_back(final);
  std::sort(v.begin(), v.end());
  const std::size_t g = v.size();

  IseResult result;
  result.grid_size = g;
  // With values sorted ascending, the i-th smallest (1-based) is the maximum of
  // exactly C(i-1, n-1) of the C(g, n) subsets of size n.
  for (std::size_t n = 1; n <= g; ++n) {
    double expected = 0.0;
    double subsets = 1.0;
    for (std::size_t j = 1; j <= n; ++j) subsets = subsets * static_cast<double>(g - n + j) / static_cast<double>(j);
    double weight = 1.0 / subsets;
    for (std::size_t i = n; i <= g; ++i) {
      expected += v[i - 1] * weight;
      weight *= static_cast<double>(i) / static_cast<double>(i + 1 - n);
    }
    result.expected_best.push_back(expected);
    if (!result.tries && expected >= adaptive_final) result.tries = n;
  }
  return result;
}

const char* const kCsvHeader = "step,return,eta,bias_raw,bias_smoothed,suitable_share";

void write_csv(const RunRecord& record, std::ostream& out) {
  out << kCsvHeader << '\n';
  for (const auto& r : record.rows) {
    out << r.step << ',' << format_double(r.mean_return) << ',' << format_double(r.eta) << ','
        << format_double(r.bias_raw) << ',' << format_double(r.bias_smoothed) << ','
        << format_double(r.suitable_share) << '\n';
  }
}

void emit_csv(const RunRecord& record, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_csv(record, out);
  out.flush();
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<RunRow> parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw UsageError("csv: missing or unexpected header");
  std::vector<RunRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() != 6) throw UsageError("csv line " + std::to_string(line_no) + ": expected 6 fields");
    RunRow r;
    const double step = parse_field(fields[0], line_no);
    if (!(step >= 0.0) || step != std::floor(step))
      throw UsageError("csv line " + std::to_string(line_no) + ": bad step");
    r.step = static_cast<std::size_t>(step);
    r.mean_return = parse_field(fields[1], line_no);
    r.eta = parse_field(fields[2], line_no);
    r.bias_raw = parse_field(fields[3], line_no);
    r.bias_smoothed = parse_field(fields[4], line_no);
    r.suitable_share = parse_field(fields[5], line_no);
    rows.push_back(r);
  }
  return rows;
}

std::vector<RunRow> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path + "'");
  return parse_csv(in);
}

std::map<double, std::size_t> eta_histogram(const std::vector<RunRow>& rows, double bin_width) {
  std::map<double, std::size_t> counts;
  for (const auto& r : rows) {
    const double key = bin_width > 0.0 ? std::floor(r.eta / bin_width) * bin_width : r.eta;
    ++counts[key];
  }
  return counts;
}

}  // namespace biasctl
