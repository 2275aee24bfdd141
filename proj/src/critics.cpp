#include "biasctl/critics.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "biasctl/errors.hpp"

namespace biasctl {

double quantile_level(std::size_t m, std::size_t n_atoms) {
  return (2.0 * static_cast<double>(m) + 1.0) / (2.0 * static_cast<double>(n_atoms));
}

double QuantileDistribution::mean() const {
  if (atoms.empty()) throw UsageError("mean of an empty distribution");
  return std::accumulate(atoms.begin(), atoms.end(), 0.0) / static_cast<double>(atoms.size());
}

void ValueFunction::check_index(std::size_t state, std::size_t action) const {
  if (state >= n_states_) throw UsageError("state index out of range");
  if (action >= n_actions_) throw UsageError("action index out of range");
}

std::vector<double> ValueFunction::evaluate(std::size_t state) const {
  std::vector<double> out(n_actions_ * n_atoms_);
  evaluate(state, out);
  return out;
}

std::vector<double> ValueFunction::action_values(std::size_t state) const {
  const auto raw = evaluate(state);
  std::vector<double> values(n_actions_);
  for (std::size_t a = 0; a < n_actions_; ++a) {
    double acc = 0.0;
    for (std::size_t m = 0; m < n_atoms_; ++m) acc += raw[a * n_atoms_ + m];
    values[a] = acc / static_cast<double>(n_atoms_);
  }
  return values;
}

QuantileDistribution ValueFunction::distribution(std::size_t state, std::size_t action) const {
  check_index(state, action);
  const auto raw = evaluate(state);
  const auto first = raw.begin() + static_cast<std::ptrdiff_t>(action * n_atoms_);
  return {std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n_atoms_))};
}

TabularValues::TabularValues(std::size_t n_states, std::size_t n_actions, std::size_t n_atoms, double init)
    : ValueFunction(n_states, n_actions, n_atoms), table_(n_states * n_actions * n_atoms, init) {
  if (n_states == 0 || n_actions == 0 || n_atoms == 0) throw UsageError("empty value table");
}

std::unique_ptr<ValueFunction> TabularValues::clone() const { return std::make_unique<TabularValues>(*this); }

void TabularValues::evaluate(std::size_t state, std::span<double> out) const {
  if (state >= n_states()) throw UsageError("state index out of range");
  const auto width = n_actions() * n_atoms();
  if (out.size() != width) throw UsageError("output span has the wrong size");
  std::copy_n(table_.begin() + static_cast<std::ptrdiff_t>(state * width), width, out.begin());
}

void TabularValues::descend(std::size_t state, std::size_t action, std::span<const double> atom_grad, double lr) {
  check_index(state, action);
  if (atom_grad.size() != n_atoms()) throw UsageError("atom gradient has the wrong size");
  for (std::size_t m = 0; m < n_atoms(); ++m) at(state, action, m) -= lr * atom_grad[m];
}

void TabularValues::blend_from(const ValueFunction& online, double tau) {
  const auto& src = dynamic_cast<const TabularValues&>(online);
  if (src.table_.size() != table_.size()) throw UsageError("target and online shapes differ");
  if (tau == 1.0) {
    table_ = src.table_;
    return;
  }
  for (std::size_t i = 0; i < table_.size(); ++i) table_[i] = (1.0 - tau) * table_[i] + tau * src.table_[i];
}

namespace {

std::vector<std::size_t> mlp_layers(std::size_t n_states, std::size_t width, const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> sizes{n_states};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(width);
  return sizes;
}

}  // namespace

MlpValues::MlpValues(std::size_t n_states, std::size_t n_actions, std::size_t n_atoms,
                     const std::vector<std::size_t>& hidden, Rng& rng)
    : ValueFunction(n_states, n_actions, n_atoms), net_(mlp_layers(n_states, n_actions * n_atoms, hidden), rng) {}

MlpValues::MlpValues(std::size_t n_states, std::size_t n_actions, std::size_t n_atoms, Mlp net)
    : ValueFunction(n_states, n_actions, n_atoms), net_(std::move(net)) {
  if (net_.input_size() != n_states || net_.output_size() != n_actions * n_atoms)
    throw UsageError("network shape does not match the value layout");
}

std::unique_ptr<ValueFunction> MlpValues::clone() const { return std::make_unique<MlpValues>(*this); }

std::vector<double> MlpValues::one_hot(std::size_t state) const {
  if (state >= n_states()) throw UsageError("state index out of range");
  std::vector<double> x(n_states(), 0.0);
  x[state] = 1.0;
  return x;
}

void MlpValues::evaluate(std::size_t state, std::span<double> out) const {
  if (out.size() != n_actions() * n_atoms()) throw UsageError("output span has the wrong size");
  const auto y = net_.forward(one_hot(state));
  std::copy(y.begin(), y.end(), out.begin());
}

void MlpValues::descend(std::size_t state, std::size_t action, std::span<const double> atom_grad, double lr) {
  check_index(state, action);
  if (atom_grad.size() != n_atoms()) throw UsageError("atom gradient has the wrong size");
  std::vector<double> out_grad(n_actions() * n_atoms(), 0.0);
  std::copy(atom_grad.begin(), atom_grad.end(), out_grad.begin() + static_cast<std::ptrdiff_t>(action * n_atoms()));
  net_.sgd_step(net_.backward(one_hot(state), out_grad), lr);
}

void MlpValues::blend_from(const ValueFunction& online, double tau) {
  const auto src = dynamic_cast<const MlpValues&>(online).net_.parameters();
  auto dst = net_.parameters();
  if (src.size() != dst.size()) throw UsageError("target and online shapes differ");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = tau == 1.0 ? src[i] : (1.0 - tau) * dst[i] + tau * src[i];
}

CriticEnsemble::CriticEnsemble(const CriticShape& shape, Rng& rng) {
  if (shape.n_members == 0) throw UsageError("an ensemble needs at least one member");
  for (std::size_t i = 0; i < shape.n_members; ++i) {
    if (shape.representation == Representation::tabular)
      online_.push_back(std::make_unique<TabularValues>(shape.n_states, shape.n_actions, shape.n_atoms));
    else
      online_.push_back(std::make_unique<MlpValues>(shape.n_states, shape.n_actions, shape.n_atoms, shape.hidden, rng));
    target_.push_back(online_.back()->clone());
  }
}

CriticEnsemble::CriticEnsemble(std::vector<std::unique_ptr<ValueFunction>> members) : online_(std::move(members)) {
  if (online_.empty()) throw UsageError("an ensemble needs at least one member");
  for (const auto& m : online_) {
    if (!m) throw UsageError("null ensemble member");
    if (m->n_states() != online_.front()->n_states() || m->n_actions() != online_.front()->n_actions() ||
        m->n_atoms() != online_.front()->n_atoms())
      throw UsageError("ensemble members must share one shape");
    target_.push_back(m->clone());
  }
}

CriticEnsemble::CriticEnsemble(const CriticEnsemble& other) {
  for (const auto& m : other.online_) online_.push_back(m->clone());
  for (const auto& m : other.target_) target_.push_back(m->clone());
}

CriticEnsemble& CriticEnsemble::operator=(const CriticEnsemble& other) {
  if (this != &other) *this = CriticEnsemble(other);
  return *this;
}

void CriticEnsemble::sync_targets(double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw UsageError("target smoothing coefficient must lie in (0, 1]");
  for (std::size_t i = 0; i < online_.size(); ++i) target_[i]->blend_from(*online_[i], tau);
}

void sync_targets(CriticEnsemble& ensemble, double tau) { ensemble.sync_targets(tau); }

std::vector<double> CriticEnsemble::action_values(std::size_t state, ValueAggregate how) const {
  if (how == ValueAggregate::member0) return online_.front()->action_values(state);
  std::vector<double> out(n_actions(), how == ValueAggregate::min ? std::numeric_limits<double>::infinity() : 0.0);
  for (const auto& m : online_) {
    const auto v = m->action_values(state);
    for (std::size_t a = 0; a < out.size(); ++a) out[a] = how == ValueAggregate::min ? std::min(out[a], v[a]) : out[a] + v[a];
  }
  if (how == ValueAggregate::mean)
    for (auto& v : out) v /= static_cast<double>(online_.size());
  return out;
}

double CriticEnsemble::value(std::size_t state, std::size_t action, ValueAggregate how) const {
  if (action >= n_actions()) throw UsageError("action index out of range");
  return action_values(state, how)[action];
}

namespace {

// Per-action mean over all target members and atoms.
std::vector<double> target_mean_values(const CriticEnsemble& ens, std::size_t state) {
  std::vector<double> out(ens.n_actions(), 0.0);
  for (std::size_t i = 0; i < ens.size(); ++i) {
    const auto v = ens.target(i).action_values(state);
    for (std::size_t a = 0; a < out.size(); ++a) out[a] += v[a];
  }
  for (auto& v : out) v /= static_cast<double>(ens.size());
  return out;
}

void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw UsageError("discount must lie in [0, 1]");
}

}  // namespace

std::vector<double> truncated_quantile_target(const CriticEnsemble& ensemble, const Transition& tr, int eta,
                                              double gamma) {
  check_gamma(gamma);
  const std::size_t pooled = ensemble.size() * ensemble.n_atoms();
  if (eta < 0 || static_cast<std::size_t>(eta) >= pooled)
    throw UsageError("truncated atom count must lie in [0, N*M - 1]");
  const std::size_t kept = pooled - static_cast<std::size_t>(eta);
  if (tr.done) return std::vector<double>(kept, tr.reward);

  const auto next_action = argmax(target_mean_values(ensemble, tr.next_state));
  std::vector<double> atoms;
  atoms.reserve(pooled);
  const auto M = ensemble.n_atoms();
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const auto raw = ensemble.target(i).evaluate(tr.next_state);
    atoms.insert(atoms.end(), raw.begin() + static_cast<std::ptrdiff_t>(next_action * M),
                 raw.begin() + static_cast<std::ptrdiff_t>((next_action + 1) * M));
  }
  std::sort(atoms.begin(), atoms.end());
  atoms.resize(kept);
  for (auto& z : atoms) z = tr.reward + gamma * z;
  return atoms;
}

double wd3_target(const CriticEnsemble& pair, const Transition& tr, double eta, double gamma) {
  check_gamma(gamma);
  if (pair.size() != 2) throw UsageError("the weighted min/avg target needs exactly two critics");
  if (!(eta >= 0.0 && eta <= 1.0)) throw UsageError("min weight must lie in [0, 1]");
  if (tr.done) return tr.reward;
  const auto q1 = pair.target(0).action_values(tr.next_state);
  const auto q2 = pair.target(1).action_values(tr.next_state);
  std::vector<double> avg(q1.size());
  for (std::size_t a = 0; a < avg.size(); ++a) avg[a] = 0.5 * (q1[a] + q2[a]);
  const auto a = argmax(avg);
  return tr.reward + gamma * (eta * std::min(q1[a], q2[a]) + (1.0 - eta) * avg[a]);
}

double maxmin_target(const CriticEnsemble& pool, const Transition& tr, std::span<const std::size_t> subset,
                     double gamma) {
  check_gamma(gamma);
  if (subset.empty()) throw UsageError("maxmin target needs a non-empty member subset");
  if (tr.done) return tr.reward;
  std::vector<double> lowest(pool.n_actions(), std::numeric_limits<double>::infinity());
  for (auto i : subset) {
    const auto v = pool.target(i).action_values(tr.next_state);
    for (std::size_t a = 0; a < lowest.size(); ++a) lowest[a] = std::min(lowest[a], v[a]);
  }
  return tr.reward + gamma * *std::max_element(lowest.begin(), lowest.end());
}

double maxmin_target(const CriticEnsemble& pool, const Transition& tr, int eta, double gamma, Rng& rng) {
  if (eta < 1 || static_cast<std::size_t>(eta) > pool.size())
    throw UsageError("maxmin ensemble size must lie in [1, N_tot]");
  const auto subset = sample_without_replacement(pool.size(), static_cast<std::size_t>(eta), rng);
  return maxmin_target(pool, tr, subset, gamma);
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) throw UsageError("cannot draw more distinct items than exist");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (k == n) return idx;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

QuantileLoss quantile_huber_loss(std::span<const double> predicted_atoms, std::span<const double> target_samples,
                                 double kappa) {
  if (target_samples.empty() || predicted_atoms.empty()) throw UsageError("quantile loss needs atoms and targets");
  if (!(kappa > 0.0)) throw UsageError("Huber threshold must be positive");
  const auto M = predicted_atoms.size();
  const auto J = target_samples.size();
  const double norm = 1.0 / static_cast<double>(M * J);
  QuantileLoss out;
  out.grad.assign(M, 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    const double tau = quantile_level(m, M);
    for (double y : target_samples) {
      const double u = y - predicted_atoms[m];
      const double weight = std::abs(tau - (u < 0.0 ? 1.0 : 0.0));
      const double au = std::abs(u);
      const double huber = au <= kappa ? 0.5 * u * u : kappa * (au - 0.5 * kappa);
      out.loss += norm * weight * huber;
      out.grad[m] -= norm * weight * std::clamp(u, -kappa, kappa);
    }
  }
  return out;
}

double tqc_update_step(CriticEnsemble& ensemble, std::span<const Transition> batch, int eta, double gamma, double lr,
                       double kappa) {
  if (batch.empty()) return 0.0;
  const auto M = ensemble.n_atoms();
  double total = 0.0;
  for (const auto& tr : batch) {
    const auto targets = truncated_quantile_target(ensemble, tr, eta, gamma);
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
      const auto atoms = ensemble.online(i).distribution(tr.state, tr.action).atoms;
      auto loss = quantile_huber_loss(atoms, targets, kappa);
      total += loss.loss;
      for (auto& g : loss.grad) g *= static_cast<double>(M);
      ensemble.online(i).descend(tr.state, tr.action, loss.grad, lr);
    }
  }
  return total / static_cast<double>(batch.size() * ensemble.size());
}

namespace {

// Squared-error step 0.5 (q - y)^2 on a scalar member; returns the pre-step squared error.
double regress(ValueFunction& member, const Transition& tr, double y, double lr) {
  const double q = member.action_values(tr.state)[tr.action];
  const double grad = q - y;
  member.descend(tr.state, tr.action, std::span<const double>(&grad, 1), lr);
  return grad * grad;
}

}  // namespace

double wd3_update_step(CriticEnsemble& pair, std::span<const Transition> batch, double eta, double gamma, double lr) {
  if (pair.n_atoms() != 1) throw UsageError("weighted min/avg critics are scalar");
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& tr : batch) {
    const double y = wd3_target(pair, tr, eta, gamma);
    for (std::size_t i = 0; i < pair.size(); ++i) total += regress(pair.online(i), tr, y, lr);
  }
  return total / static_cast<double>(batch.size() * pair.size());
}

double maxmin_update_step(CriticEnsemble& pool, std::span<const Transition> batch, int eta, std::size_t n_update,
                          double gamma, double lr, Rng& rng) {
  if (pool.n_atoms() != 1) throw UsageError("maxmin critics are scalar");
  if (eta < 1 || static_cast<std::size_t>(eta) > pool.size())
    throw UsageError("maxmin ensemble size must lie in [1, N_tot]");
  if (n_update == 0 || n_update > pool.size()) throw UsageError("updated member count must lie in [1, N_tot]");
  const auto subset = sample_without_replacement(pool.size(), static_cast<std::size_t>(eta), rng);
  const auto updated = sample_without_replacement(pool.size(), n_update, rng);
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& tr : batch) {
    const double y = maxmin_target(pool, tr, subset, gamma);
    for (auto i : updated) total += regress(pool.online(i), tr, y, lr);
  }
  return total / static_cast<double>(batch.size() * updated.size());
}

double maxmin_update_step(CriticEnsemble& pool, std::span<const std::vector<Transition>> batches, int eta, double gamma,
                          double lr, Rng& rng) {
  if (pool.n_atoms() != 1) throw UsageError("maxmin critics are scalar");
  if (eta < 1 || static_cast<std::size_t>(eta) > pool.size())
    throw UsageError("maxmin ensemble size must lie in [1, N_tot]");
  if (batches.empty() || batches.size() > pool.size())
    throw UsageError("updated member count must lie in [1, N_tot]");
  const auto subset = sample_without_replacement(pool.size(), static_cast<std::size_t>(eta), rng);
  const auto updated = sample_without_replacement(pool.size(), batches.size(), rng);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < updated.size(); ++j) {
    for (const auto& tr : batches[j]) {
      total += regress(pool.online(updated[j]), tr, maxmin_target(pool, tr, subset, gamma), lr);
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace biasctl
