#include "biasctl/disttheory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "biasctl/errors.hpp"

namespace biasctl {

namespace {

constexpr double kOrderTolerance = 1e-12;
constexpr double kNegligibleMass = 1e-14;

}  // namespace

EmpiricalDist EmpiricalDist::uniform(std::vector<double> atoms) {
  if (atoms.empty()) throw UsageError("a distribution needs at least one atom");
  std::vector<double> w(atoms.size(), 1.0 / static_cast<double>(atoms.size()));
  return weighted(std::move(atoms), std::move(w));
}

EmpiricalDist EmpiricalDist::weighted(std::vector<double> atoms, std::vector<double> weights) {
  if (atoms.empty() || atoms.size() != weights.size()) throw UsageError("atoms and weights must be non-empty and paired");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw UsageError("weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw UsageError("weights must sum to 1");
  std::vector<std::size_t> order(atoms.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return atoms[a] < atoms[b]; });
  EmpiricalDist d;
  for (auto i : order) {
    if (weights[i] <= 0.0) continue;
    if (!d.atoms_.empty() && d.atoms_.back() == atoms[i]) {
      d.weights_.back() += weights[i];
    } else {
      d.atoms_.push_back(atoms[i]);
      d.weights_.push_back(weights[i]);
    }
  }
  for (auto& w : d.weights_) w /= total;
  return d;
}

double EmpiricalDist::mean() const {
  double m = 0.0;
  for (std::size_t i = 0; i < atoms_.size(); ++i) m += atoms_[i] * weights_[i];
  return m;
}

double EmpiricalDist::cdf(double z) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < atoms_.size() && atoms_[i] <= z; ++i) acc += weights_[i];
  return std::min(acc, 1.0);
}

EmpiricalDist truncate(const EmpiricalDist& dist, double eta) {
  if (!(eta >= 0.0 && eta < 1.0)) throw UsageError("truncated mass must lie in [0, 1)");
  if (eta == 0.0) return dist;
  const double keep = 1.0 - eta;
  std::vector<double> atoms;
  std::vector<double> weights;
  double acc = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (keep - acc <= kNegligibleMass) break;
    const double w = std::min(dist.weights()[i], keep - acc);
    atoms.push_back(dist.atoms()[i]);
    weights.push_back(w);
    acc += w;
  }
  for (auto& w : weights) w /= acc;
  return EmpiricalDist::weighted(std::move(atoms), std::move(weights));
}

bool stochastically_leq(const EmpiricalDist& d1, const EmpiricalDist& d2) {
  std::vector<double> support(d1.atoms());
  support.insert(support.end(), d2.atoms().begin(), d2.atoms().end());
  for (double z : support)
    if (d1.cdf(z) < d2.cdf(z) - kOrderTolerance) return false;
  return true;
}

EmpiricalDist convolve(const EmpiricalDist& x, const EmpiricalDist& y) {
  std::vector<double> atoms;
  std::vector<double> weights;
  atoms.reserve(x.size() * y.size());
  weights.reserve(x.size() * y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      atoms.push_back(x.atoms()[i] + y.atoms()[j]);
      weights.push_back(x.weights()[i] * y.weights()[j]);
    }
  }
  return EmpiricalDist::weighted(std::move(atoms), std::move(weights));
}

EmpiricalDist affine(const EmpiricalDist& x, double shift, double scale) {
  if (scale < 0.0) throw UsageError("scale must be non-negative");
  std::vector<double> atoms(x.atoms());
  for (auto& a : atoms) a = shift + scale * a;
  return EmpiricalDist::weighted(std::move(atoms), x.weights());
}

EmpiricalDist mixture(const std::vector<EmpiricalDist>& parts, const std::vector<double>& probs) {
  if (parts.empty() || parts.size() != probs.size()) throw UsageError("mixture parts and weights must be paired");
  std::vector<double> atoms;
  std::vector<double> weights;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (probs[i] == 0.0) continue;
    for (std::size_t j = 0; j < parts[i].size(); ++j) {
      atoms.push_back(parts[i].atoms()[j]);
      weights.push_back(probs[i] * parts[i].weights()[j]);
    }
  }
  return EmpiricalDist::weighted(std::move(atoms), std::move(weights));
}

double sufficient_stochasticity_gap(const DistSampler& sampler, double eta, std::size_t n_samples, Rng& rng) {
  if (!(eta > 0.0 && eta < 1.0)) throw UsageError("gap is defined for eta in (0, 1)");
  if (n_samples == 0) throw UsageError("need at least one sample");
  double acc = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto d = sampler(rng);
    acc += truncate(d, eta).mean() - d.mean();
  }
  return acc / static_cast<double>(n_samples);
}

EmpiricalDist two_point_reward(const TabularMdp& mdp, std::size_t s, std::size_t a) {
  const double m = mdp.reward_mean(s, a);
  const double sd = mdp.reward_std(s, a);
  if (sd == 0.0) return EmpiricalDist::point(m);
  return EmpiricalDist::weighted({m - sd, m + sd}, {0.5, 0.5});
}

DistField distributional_backup(const TabularMdp& mdp, const StochasticPolicy& policy, const DistField& field,
                                 double eta) {
  const auto S = mdp.n_states();
  const auto A = mdp.n_actions();
  if (field.size() != S * A) throw UsageError("distribution field has the wrong size");
  DistField truncated;
  truncated.reserve(field.size());
  for (const auto& d : field) truncated.push_back(truncate(d, eta));

  DistField out;
  out.reserve(S * A);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t a = 0; a < A; ++a) {
      if (mdp.terminal(s)) {
        out.push_back(EmpiricalDist::point(0.0));
        continue;
      }
      std::vector<EmpiricalDist> parts;
      std::vector<double> probs;
      const auto row = mdp.row(s, a);
      for (std::size_t n = 0; n < S; ++n) {
        if (row[n] == 0.0) continue;
        if (mdp.terminal(n)) {
          parts.push_back(EmpiricalDist::point(0.0));
          probs.push_back(row[n]);
          continue;
        }
        for (std::size_t b = 0; b < A; ++b) {
          const double p = row[n] * policy.prob(n, b);
          if (p == 0.0) continue;
          parts.push_back(truncated[n * A + b]);
          probs.push_back(p);
        }
      }
      const auto next = mixture(parts, probs);
      out.push_back(convolve(two_point_reward(mdp, s, a), affine(next, 0.0, mdp.discount())));
    }
  }
  return out;
}

EmpiricalDist project_quantiles(const EmpiricalDist& dist, std::size_t n_atoms) {
  if (n_atoms == 0) throw UsageError("projection needs at least one atom");
  std::vector<double> atoms;
  atoms.reserve(n_atoms);
  std::size_t i = 0;
  double acc = dist.weights()[0];
  for (std::size_t m = 0; m < n_atoms; ++m) {
    const double level = (2.0 * static_cast<double>(m) + 1.0) / (2.0 * static_cast<double>(n_atoms));
    while (acc < level && i + 1 < dist.size()) acc += dist.weights()[++i];
    atoms.push_back(dist.atoms()[i]);
  }
  return EmpiricalDist::uniform(std::move(atoms));
}

DistField projected_truncated_evaluation(const TabularMdp& mdp, const StochasticPolicy& policy, double eta,
                                         std::size_t n_atoms, std::size_t iterations) {
  DistField field(mdp.n_states() * mdp.n_actions(), EmpiricalDist::point(0.0));
  for (std::size_t it = 0; it < iterations; ++it) {
    field = distributional_backup(mdp, policy, field, eta);
    for (auto& d : field) d = project_quantiles(d, n_atoms);
  }
  return field;
}

namespace {

EmpiricalDist random_dist(Rng& rng, std::size_t max_atoms = 6) {
  std::uniform_int_distribution<std::size_t> count(1, max_atoms);
  std::uniform_int_distribution<int> grid(-6, 6);  // integer grid forces ties and shared support points
  std::uniform_real_distribution<double> real(-5.0, 5.0);
  std::uniform_real_distribution<double> weight(0.05, 1.0);
  std::bernoulli_distribution on_grid(0.5);
  const auto n = count(rng);
  const bool use_grid = on_grid(rng);
  std::vector<double> atoms(n), weights(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    atoms[i] = use_grid ? static_cast<double>(grid(rng)) : real(rng);
    weights[i] = weight(rng);
    total += weights[i];
  }
  for (auto& w : weights) w /= total;
  return EmpiricalDist::weighted(std::move(atoms), std::move(weights));
}

// Couples d with a pointwise-larger copy: every atom moves up by a non-negative amount.
EmpiricalDist dominating_copy(const EmpiricalDist& d, Rng& rng) {
  std::uniform_real_distribution<double> shift(0.0, 2.0);
  std::bernoulli_distribution stay(0.3);
  std::vector<double> atoms(d.atoms());
  for (auto& a : atoms)
    if (!stay(rng)) a += shift(rng);
  return EmpiricalDist::weighted(std::move(atoms), d.weights());
}

double random_eta(Rng& rng) {
  // Mix exact multiples of common atom masses with arbitrary cuts.
  std::bernoulli_distribution snap(0.3);
  if (snap(rng)) {
    std::uniform_int_distribution<int> k(0, 7);
    return k(rng) / 8.0;
  }
  std::uniform_real_distribution<double> u(0.0, 0.95);
  return u(rng);
}

struct RandomModel {
  TabularMdp mdp;
  StochasticPolicy policy;
};

RandomModel random_model(Rng& rng) {
  std::uniform_int_distribution<std::size_t> states(2, 4);
  std::uniform_int_distribution<std::size_t> actions(1, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> discount(0.3, 0.95);
  std::uniform_real_distribution<double> reward(-2.0, 2.0);
  std::bernoulli_distribution sparse(0.4);
  std::bernoulli_distribution has_terminal(0.4);
  const auto S = states(rng);
  const auto A = actions(rng);
  auto t = MdpTables::zeros(S, A, discount(rng), 10);
  if (has_terminal(rng)) t.terminal[S - 1] = true;
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t a = 0; a < A; ++a) {
      double total = 0.0;
      for (std::size_t n = 0; n < S; ++n) {
        const double p = sparse(rng) ? 0.0 : unit(rng);
        t.p(s, a, n) = p;
        total += p;
      }
      if (total == 0.0) {
        t.p(s, a, s) = 1.0;
        total = 1.0;
      }
      for (std::size_t n = 0; n < S; ++n) t.p(s, a, n) /= total;
      t.reward_mean[s * A + a] = reward(rng);
      t.reward_noise_std[s * A + a] = sparse(rng) ? 0.0 : unit(rng);
    }
  }
  std::vector<double> probs(S * A);
  for (std::size_t s = 0; s < S; ++s) {
    double total = 0.0;
    for (std::size_t a = 0; a < A; ++a) total += (probs[s * A + a] = 0.1 + unit(rng));
    for (std::size_t a = 0; a < A; ++a) probs[s * A + a] /= total;
  }
  return {TabularMdp(std::move(t)), StochasticPolicy(S, A, std::move(probs))};
}

}  // namespace

PropertyReport check_mean_order(std::size_t instances, Rng& rng) {
  PropertyReport r{"order_implies_mean_order", instances, 0};
  for (std::size_t i = 0; i < instances; ++i) {
    const auto d1 = random_dist(rng);
    const auto d2 = dominating_copy(d1, rng);
    if (!stochastically_leq(d1, d2) || d1.mean() > d2.mean() + 1e-12) ++r.violations;
  }
  return r;
}

PropertyReport check_truncation_preserves_order(std::size_t instances, Rng& rng) {
  PropertyReport r{"truncation_preserves_order", instances, 0};
  for (std::size_t i = 0; i < instances; ++i) {
    const auto d1 = random_dist(rng);
    const auto d2 = dominating_copy(d1, rng);
    const double eta = random_eta(rng);
    if (!stochastically_leq(truncate(d1, eta), truncate(d2, eta))) ++r.violations;
  }
  return r;
}

PropertyReport check_truncation_monotone(std::size_t instances, Rng& rng) {
  PropertyReport r{"more_truncation_is_lower", instances, 0};
  for (std::size_t i = 0; i < instances; ++i) {
    const auto d = random_dist(rng);
    double a = random_eta(rng), b = random_eta(rng);
    if (a < b) std::swap(a, b);
    if (!stochastically_leq(truncate(d, a), truncate(d, b))) ++r.violations;
  }
  return r;
}

PropertyReport check_combined_truncation(std::size_t instances, Rng& rng) {
  PropertyReport r{"order_and_truncation_combined", instances, 0};
  for (std::size_t i = 0; i < instances; ++i) {
    const auto d1 = random_dist(rng);
    const auto d2 = dominating_copy(d1, rng);
    double a = random_eta(rng), b = random_eta(rng);
    if (a < b) std::swap(a, b);
    if (!stochastically_leq(truncate(d1, a), truncate(d2, b))) ++r.violations;
  }
  return r;
}

PropertyReport check_convolution_preserves_order(std::size_t instances, Rng& rng) {
  PropertyReport r{"independent_sum_preserves_order", instances, 0};
  for (std::size_t i = 0; i < instances; ++i) {
    const auto d1 = random_dist(rng);
    const auto d2 = dominating_copy(d1, rng);
    const auto x = random_dist(rng, 4);
    if (!stochastically_leq(convolve(d1, x), convolve(d2, x))) ++r.violations;
  }
  return r;
}

PropertyReport check_backup_preserves_order(std::size_t instances, Rng& rng) {
  PropertyReport r{"bellman_step_preserves_order", instances, 0};
  for (std::size_t i = 0; i < instances; ++i) {
    const auto model = random_model(rng);
    const auto n = model.mdp.n_states() * model.mdp.n_actions();
    DistField z1, z2;
    for (std::size_t j = 0; j < n; ++j) {
      z1.push_back(random_dist(rng, 3));
      z2.push_back(dominating_copy(z1.back(), rng));
    }
    const double eta = random_eta(rng);
    const auto t1 = distributional_backup(model.mdp, model.policy, z1, eta);
    const auto t2 = distributional_backup(model.mdp, model.policy, z2, eta);
    for (std::size_t j = 0; j < n; ++j) {
      if (!stochastically_leq(t1[j], t2[j])) {
        ++r.violations;
        break;
      }
    }
  }
  return r;
}

PropertyReport check_backup_contraction(std::size_t instances, Rng& rng) {
  PropertyReport r{"expected_backup_contracts", instances, 0};
  for (std::size_t i = 0; i < instances; ++i) {
    const auto model = random_model(rng);
    const auto exact = exact_policy_eval(model.mdp, model.policy, 1e-12);
    const auto n = model.mdp.n_states() * model.mdp.n_actions();
    DistField z;
    for (std::size_t j = 0; j < n; ++j) z.push_back(random_dist(rng, 3));
    const auto tz = distributional_backup(model.mdp, model.policy, z);
    double before = 0.0, after = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      before = std::max(before, std::abs(z[j].mean() - exact.q_pi[j]));
      after = std::max(after, std::abs(tz[j].mean() - exact.q_pi[j]));
    }
    if (after > model.mdp.discount() * before + 1e-9) ++r.violations;
  }
  return r;
}

PropertyReport check_gap_monotone(std::size_t n_samplers, Rng& rng) {
  PropertyReport r{"sufficient_stochasticity_gap_monotone", n_samplers, 0};
  std::uniform_int_distribution<std::size_t> atoms(1, 8);
  std::uniform_real_distribution<double> scale(0.1, 5.0);
  for (std::size_t i = 0; i < n_samplers; ++i) {
    const auto max_atoms = atoms(rng);
    const double spread = scale(rng);
    const DistSampler sampler = [max_atoms, spread](Rng& g) {
      const auto d = random_dist(g, max_atoms);
      return affine(d, 0.0, spread);
    };
    const auto seed = rng();
    double previous = 0.0;
    for (int step = 1; step < 20; ++step) {
      Rng common(seed);  // common random numbers across eta
      const double gap = sufficient_stochasticity_gap(sampler, step / 20.0, 50, common);
      if (gap > previous + 1e-12) {
        ++r.violations;
        break;
      }
      previous = gap;
    }
  }
  return r;
}

std::vector<PropertyReport> run_lemma_suite(std::uint64_t seed) {
  Rng rng(seed);
  constexpr std::size_t kInstances = 1000;
  return {check_mean_order(kInstances, rng),
          check_truncation_preserves_order(kInstances, rng),
          check_truncation_monotone(kInstances, rng),
          check_combined_truncation(kInstances, rng),
          check_convolution_preserves_order(kInstances, rng),
          check_backup_preserves_order(kInstances, rng),
          check_backup_contraction(kInstances, rng),
          check_gap_monotone(100, rng)};
}

}  // namespace biasctl
