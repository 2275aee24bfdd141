#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "biasctl/mdp.hpp"
#include "biasctl/mlp.hpp"

namespace biasctl {

/// Midpoint quantile level of atom m (0-based) out of M: (2m + 1) / 2M.
double quantile_level(std::size_t m, std::size_t n_atoms);

/// M quantile atoms of one return distribution. Atoms are kept unsorted while
/// learning; targets sort at construction time.
struct QuantileDistribution {
  std::vector<double> atoms;

  double mean() const;
};

/// A value approximator with n_actions x n_atoms outputs per state (n_atoms = 1
/// for a scalar critic). Outputs are laid out [action][atom].
class ValueFunction {
 public:
  ValueFunction(std::size_t n_states, std::size_t n_actions, std::size_t n_atoms)
      : n_states_(n_states), n_actions_(n_actions), n_atoms_(n_atoms) {}
  virtual ~ValueFunction() = default;

  virtual std::unique_ptr<ValueFunction> clone() const = 0;
  virtual void evaluate(std::size_t state, std::span<double> out) const = 0;
  /// One descent step on the parameters given d(loss)/d(atoms of (state, action)).
  virtual void descend(std::size_t state, std::size_t action, std::span<const double> atom_grad, double lr) = 0;
  /// this <- (1 - tau) * this + tau * online. online must share the concrete type.
  virtual void blend_from(const ValueFunction& online, double tau) = 0;

  std::vector<double> evaluate(std::size_t state) const;
  /// Atom-averaged value per action.
  std::vector<double> action_values(std::size_t state) const;
  QuantileDistribution distribution(std::size_t state, std::size_t action) const;

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  std::size_t n_atoms() const { return n_atoms_; }

 protected:
  void check_index(std::size_t state, std::size_t action) const;

 private:
  std::size_t n_states_;
  std::size_t n_actions_;
  std::size_t n_atoms_;
};

class TabularValues final : public ValueFunction {
 public:
  TabularValues(std::size_t n_states, std::size_t n_actions, std::size_t n_atoms, double init = 0.0);

  std::unique_ptr<ValueFunction> clone() const override;
  void evaluate(std::size_t state, std::span<double> out) const override;
  void descend(std::size_t state, std::size_t action, std::span<const double> atom_grad, double lr) override;
  void blend_from(const ValueFunction& online, double tau) override;

  double& at(std::size_t s, std::size_t a, std::size_t m = 0) { return table_[(s * n_actions() + a) * n_atoms() + m]; }
  double at(std::size_t s, std::size_t a, std::size_t m = 0) const {
    return table_[(s * n_actions() + a) * n_atoms() + m];
  }

 private:
  std::vector<double> table_;
};

/// MLP over a one-hot state encoding.
class MlpValues final : public ValueFunction {
 public:
  MlpValues(std::size_t n_states, std::size_t n_actions, std::size_t n_atoms, const std::vector<std::size_t>& hidden,
            Rng& rng);
  explicit MlpValues(std::size_t n_states, std::size_t n_actions, std::size_t n_atoms, Mlp net);

  std::unique_ptr<ValueFunction> clone() const override;
  void evaluate(std::size_t state, std::span<double> out) const override;
  void descend(std::size_t state, std::size_t action, std::span<const double> atom_grad, double lr) override;
  void blend_from(const ValueFunction& online, double tau) override;

  const Mlp& net() const { return net_; }

 private:
  std::vector<double> one_hot(std::size_t state) const;
  Mlp net_;
};

enum class Representation { tabular, mlp };

/// How an ensemble collapses to one value per action.
enum class ValueAggregate { mean, min, member0 };

struct CriticShape {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::size_t n_members = 1;
  std::size_t n_atoms = 1;
  Representation representation = Representation::tabular;
  std::vector<std::size_t> hidden{32, 32};
};

/// N online approximators plus lagged target copies of identical shape.
class CriticEnsemble {
 public:
  /// Target copies start as exact copies of the online members.
  CriticEnsemble(const CriticShape& shape, Rng& rng);
  explicit CriticEnsemble(std::vector<std::unique_ptr<ValueFunction>> members);
  CriticEnsemble(const CriticEnsemble& other);
  CriticEnsemble& operator=(const CriticEnsemble& other);
  CriticEnsemble(CriticEnsemble&&) noexcept = default;
  CriticEnsemble& operator=(CriticEnsemble&&) noexcept = default;

  std::size_t size() const { return online_.size(); }
  std::size_t n_states() const { return online_.front()->n_states(); }
  std::size_t n_actions() const { return online_.front()->n_actions(); }
  std::size_t n_atoms() const { return online_.front()->n_atoms(); }

  const ValueFunction& online(std::size_t i) const { return *online_.at(i); }
  ValueFunction& online(std::size_t i) { return *online_.at(i); }
  const ValueFunction& target(std::size_t i) const { return *target_.at(i); }
  ValueFunction& target(std::size_t i) { return *target_.at(i); }

  /// target <- (1 - tau) target + tau online; tau = 1 is a hard copy.
  void sync_targets(double tau);

  /// Per-action value at a state from the online members.
  std::vector<double> action_values(std::size_t state, ValueAggregate how = ValueAggregate::mean) const;
  double value(std::size_t state, std::size_t action, ValueAggregate how = ValueAggregate::mean) const;

 private:
  std::vector<std::unique_ptr<ValueFunction>> online_;
  std::vector<std::unique_ptr<ValueFunction>> target_;
};

void sync_targets(CriticEnsemble& ensemble, double tau);

// TD targets. Each bootstraps from the target copies at next_state and returns
// the reward alone when the transition is done; time-limit truncation still bootstraps.

/// Pools all N*M target atoms at (s', a'), with a' greedy over the pooled mean,
/// sorts them, drops the eta largest and returns r + gamma * z for the rest.
std::vector<double> truncated_quantile_target(const CriticEnsemble& ensemble, const Transition& tr, int eta,
                                              double gamma);

/// r + gamma * (eta * min(Q1, Q2) + (1 - eta) * avg(Q1, Q2)) at the a' greedy over avg.
double wd3_target(const CriticEnsemble& pair, const Transition& tr, double eta, double gamma);

/// r + gamma * max_a' min_{i in subset} Q_i(s', a') for an explicit member subset.
double maxmin_target(const CriticEnsemble& pool, const Transition& tr, std::span<const std::size_t> subset,
                     double gamma);
/// Same, with eta distinct members drawn uniformly.
double maxmin_target(const CriticEnsemble& pool, const Transition& tr, int eta, double gamma, Rng& rng);

/// k distinct indices out of [0, n), uniformly.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng);

struct QuantileLoss {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d predicted atom
};

/// Asymmetric Huber quantile loss averaged over (atom, target) pairs, with
/// midpoint levels and L(u) = u^2/2 for |u| <= kappa, kappa (|u| - kappa/2) beyond.
QuantileLoss quantile_huber_loss(std::span<const double> predicted_atoms, std::span<const double> target_samples,
                                 double kappa);

// Update steps over a minibatch. Each sample takes its own step (in batch order)
// toward a target computed from the frozen target copies. Returns the mean loss
// measured before stepping.

/// Every member learns the shared truncated target with the quantile Huber loss.
/// The step on each atom is scaled by M so tabular atoms move at rate lr.
double tqc_update_step(CriticEnsemble& ensemble, std::span<const Transition> batch, int eta, double gamma, double lr,
                       double kappa);
/// Both members regress on the weighted min/avg target.
double wd3_update_step(CriticEnsemble& pair, std::span<const Transition> batch, double eta, double gamma, double lr);
/// Draws eta members for the target and n_update members to train, both without
/// repetition; untouched members are left bit-identical.
double maxmin_update_step(CriticEnsemble& pool, std::span<const Transition> batch, int eta, std::size_t n_update,
                          double gamma, double lr, Rng& rng);
/// Same, with one minibatch per updated member (batches.size() members are trained).
double maxmin_update_step(CriticEnsemble& pool, std::span<const std::vector<Transition>> batches, int eta, double gamma,
                          double lr, Rng& rng);

}  // namespace biasctl
