// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "biasctl/bias.hpp"
#include "biasctl/config.hpp"
#include "biasctl/critics.hpp"
#include "biasctl/disttheory.hpp"
#include "biasctl/harness.hpp"
#include "biasctl/replay.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace biasctl;

namespace {

// Pinned tolerances.
constexpr double kSigmas = 3.0;               // criteria 1, 2
constexpr double kOffset = 5.0;               // criterion 2
constexpr std::size_t kRollouts = 10000;      // criteria 1, 2
constexpr double kUnbiasedSeconds = 10.0;     // criterion 1
constexpr double kLemmaSeconds = 60.0;        // criterion 4
constexpr double kMonotoneSlack = 1e-12;      // criterion 3, rounding only
constexpr double kGradTolerance = 1e-4;       // criterion 9
constexpr std::size_t kSeeds = 8;             // criteria 5, 6, 8
constexpr double kLastQuarter = 0.75;         // criterion 5
constexpr std::size_t kReferenceEpisodes = 2000;  // criterion 8

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;
std::map<int, std::string> lines;  // printed in criterion order at the end

void report(int id, bool ok, const std::string& detail) {
  char head[32];
  std::snprintf(head, sizeof head, "criterion %2d: %s  ", id, ok ? "PASS" : "FAIL");
  lines[id] = head + detail;
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <class... T>
std::string fmt(const char* f, T... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

ExperimentConfig load(const std::string& name) { return load_config(std::string(BIASCTL_CONFIG_DIR) + "/" + name); }

std::string run_command(const std::string& cmd, int& status) {
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) {
    status = -1;
    return out;
  }
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) out += buf.data();
  status = pclose(p);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------- 1, 2

void unbiasedness() {
  const auto t0 = Clock::now();
  const auto est = testing::unbiasedness_protocol(0.0, kRollouts, 1);
  const double secs = seconds_since(t0);
  report(1, std::fabs(est.mean) < kSigmas * est.std_error && secs < kUnbiasedSeconds,
         fmt("bias %.5f, se %.5f (%.2f sigma), %zu rollouts, %.2fs", est.mean, est.std_error,
             std::fabs(est.mean) / est.std_error, est.count, secs));

  const auto off = testing::unbiasedness_protocol(kOffset, kRollouts, 1);
  report(2, std::fabs(off.mean - kOffset) < kSigmas * off.std_error,
         fmt("estimate %.5f for offset %.1f, se %.5f", off.mean, kOffset, off.std_error));
}

// ---------------------------------------------------------------- 3

CriticEnsemble pool_at_next_state(const std::vector<std::vector<double>>& values, std::size_t A, std::size_t M) {
  std::vector<std::unique_ptr<ValueFunction>> members;
  for (const auto& v : values) {
    auto t = std::make_unique<TabularValues>(2, A, M);
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t m = 0; m < M; ++m) t->at(1, a, m) = v[a * M + m];
    members.push_back(std::move(t));
  }
  return CriticEnsemble(std::move(members));
}

void monotonicity() {
  Rng rng(3);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> small(1, 4);
  const Transition t{0, 0, 0.0, 1, false, false};
  std::size_t tqc_bad = 0, wd3_bad = 0, mm_bad = 0, mm_cases = 0;

  for (int i = 0; i < 1000; ++i) {
    const std::size_t N = small(rng), M = small(rng), A = small(rng);
    std::vector<std::vector<double>> v(N, std::vector<double>(A * M));
    for (auto& m : v)
      for (auto& x : m) x = n01(rng);
    const auto pool = pool_at_next_state(v, A, M);
    double prev = INFINITY;
    for (int eta = 0; eta < static_cast<int>(N * M); ++eta) {
      const auto z = truncated_quantile_target(pool, t, eta, 0.9);
      const double mean = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(z.size());
      if (mean > prev + kMonotoneSlack) ++tqc_bad;
      prev = mean;
    }
  }

  for (int i = 0; i < 1000; ++i) {
    const std::size_t A = small(rng);
    std::vector<std::vector<double>> v(2, std::vector<double>(A));
    for (auto& m : v)
      for (auto& x : m) x = n01(rng);
    const auto pair = pool_at_next_state(v, A, 1);
    double prev = INFINITY;
    for (int k = 0; k <= 100; ++k) {
      const double y = wd3_target(pair, t, k / 100.0, 0.9);
      if (y > prev + kMonotoneSlack) ++wd3_bad;
      prev = y;
    }
  }

  for (std::size_t n_tot = 2; n_tot <= 8; ++n_tot) {
    for (int i = 0; i < 30; ++i) {
      const std::size_t A = small(rng);
      std::vector<std::vector<double>> v(n_tot, std::vector<double>(A));
      for (auto& m : v)
        for (auto& x : m) x = n01(rng);
      const auto pool = pool_at_next_state(v, A, 1);
      double prev = INFINITY;
      for (std::size_t eta = 1; eta <= n_tot; ++eta) {
        std::vector<bool> pick(n_tot, false);
        std::fill(pick.begin(), pick.begin() + static_cast<long>(eta), true);
        double total = 0.0;
        int count = 0;
        do {
          std::vector<std::size_t> subset;
          for (std::size_t j = 0; j < n_tot; ++j)
            if (pick[j]) subset.push_back(j);
          total += maxmin_target(pool, t, subset, 0.9);
          ++count;
        } while (std::prev_permutation(pick.begin(), pick.end()));
        const double e = total / count;
        if (e > prev + kMonotoneSlack) ++mm_bad;
        prev = e;
      }
      ++mm_cases;
    }
  }
  report(3, tqc_bad + wd3_bad + mm_bad == 0,
         fmt("violations: truncated %zu/1000 pools, weighted %zu/1000, maxmin %zu/%zu exhaustive pools", tqc_bad,
             wd3_bad, mm_bad, mm_cases));
}

// ---------------------------------------------------------------- 4

void lemmas() {
  const auto t0 = Clock::now();
  const auto reports = run_lemma_suite(4);
  const double secs = seconds_since(t0);
  std::size_t bad = 0;
  std::string detail;
  for (const auto& r : reports) {
    bad += r.violations;
    detail += fmt("%s %zu/%zu; ", r.name.c_str(), r.violations, r.instances);
  }
  report(4, bad == 0 && secs < kLemmaSeconds, fmt("%.2fs, violations: ", secs) + detail);
}

// ---------------------------------------------------------------- 5, 6, 8

struct Testbed {
  std::string name;
  std::map<double, std::vector<RunRecord>> grid;
  std::vector<RunRecord> adaptive;
  std::vector<double> k1_error, k10_error;
};

double mean_abs_smoothed_last_quarter(const RunRecord& r, std::size_t total) {
  double sum = 0.0;
  int n = 0;
  for (const auto& row : r.rows) {
    if (static_cast<double>(row.step) <= kLastQuarter * static_cast<double>(total) || std::isnan(row.bias_smoothed))
      continue;
    sum += std::fabs(row.bias_smoothed);
    ++n;
  }
  return n ? sum / n : NAN;
}

// Bias estimate from every valid k-rollout in the fresh buffer, against the on-policy reference.
double k_error(Experiment& e, int k, Rng& rng) {
  const auto critic = e.bias_critic();
  const auto rollouts = extract_valid_rollouts(e.fresh(), k);
  const auto est = aggregated_bias(rollouts, critic, e.mdp().discount());
  const double ref = onpolicy_reference_bias(e.mdp(), e.behaviour_policy(), critic, kReferenceEpisodes, rng);
  return est ? std::fabs(*est - ref) : INFINITY;
}

Testbed run_testbed(const std::string& file, bool probe_k) {
  Testbed tb;
  auto config = load(file);
  config.seeds.resize(kSeeds);
  std::iota(config.seeds.begin(), config.seeds.end(), 0);
  tb.name = file;
  tb.grid = grid_search(config, {2, 4, 6, 8});
  for (auto seed : config.seeds) {
    Experiment e(config, seed);
    tb.adaptive.push_back(e.run_to_end());
    if (probe_k) {
      Rng rng(1000 + seed);
      tb.k1_error.push_back(k_error(e, 1, rng));
      tb.k10_error.push_back(k_error(e, 10, rng));
    }
  }
  return tb;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

void closed_loop() {
  const auto chain = run_testbed("noisy_chain.ini", false);
  const auto grid = run_testbed("loopy_grid.ini", true);
  const auto total = load("noisy_chain.ini").total_steps;

  std::vector<double> ada, fixed2;
  for (const auto& r : chain.adaptive) ada.push_back(mean_abs_smoothed_last_quarter(r, total));
  for (const auto& r : chain.grid.at(2.0)) fixed2.push_back(mean_abs_smoothed_last_quarter(r, total));
  report(5, mean(ada) < mean(fixed2),
         fmt("noisy chain mean |smoothed bias| over the last quarter: adaptive %.4f, fixed eta=2 %.4f", mean(ada),
             mean(fixed2)));

  bool ok = true;
  std::string detail;
  std::vector<double> best_eta;
  for (const auto* tb : {&chain, &grid}) {
    double grid_avg = 0.0, best = -INFINITY, arg = 0.0;
    std::string finals;
    for (const auto& [eta, rs] : tb->grid) {
      const double f = mean_final(rs);
      grid_avg += f / static_cast<double>(tb->grid.size());
      finals += fmt("%g:%.4f ", eta, f);
      if (f > best) {
        best = f;
        arg = eta;
      }
    }
    best_eta.push_back(arg);
    const double a = mean_final(tb->adaptive);
    ok = ok && a >= grid_avg;
    detail += fmt("%s adaptive %.4f vs grid average %.4f (%s); ", tb->name.c_str(), a, grid_avg, finals.c_str());
  }
  detail += fmt("best eta per testbed %g and %g (%s)", best_eta[0], best_eta[1],
                best_eta[0] != best_eta[1] ? "differs" : "same");
  report(6, ok, detail);

  // suitable_share on the time-limited testbed, and the T = 10 example.
  auto g = load("loopy_grid.ini");
  Experiment e(g, 0);
  for (int i = 0; i < 5000; ++i) e.step();
  bool share_monotone = true;
  double prev = 1.0;
  for (int k = 1; k <= 60; ++k) {
    const double s = suitable_share(e.fresh(), k).value_or(0.0);
    share_monotone = share_monotone && s <= prev;
    prev = s;
  }
  FreshReplay ten(1);
  ten.add_trajectory(testing::trajectory(10, false));
  const double half = *suitable_share(ten, 5);
  const double k1 = mean(grid.k1_error), k10 = mean(grid.k10_error);
  report(8, k1 > k10 && share_monotone && half == 0.5,
         fmt("loopy grid |estimate - reference| k=1 %.4f, k=10 %.4f; share monotone %s; T=10 k=5 share %g", k1, k10,
             share_monotone ? "yes" : "no", half));
}

// ---------------------------------------------------------------- 7

void ise_examples() {
  const auto a = ise({{0, 1.0}, {1, 3.0}}, 2.0);
  const auto b = ise({{0, 1.0}, {1, 2.0}, {2, 3.0}}, 2.5);
  const auto c = ise({{2, 1.0}, {4, 2.0}, {6, 3.0}, {8, 2.5}}, 3.5);
  const bool ok = a.to_string() == "1" && b.to_string() == "2" && c.to_string() == ">4" &&
                  b.expected_best[1] == 8.0 / 3.0;
  report(7, ok, "{1,3}/2 -> " + a.to_string() + ", {1,2,3}/2.5 -> " + b.to_string() + ", above all -> " + c.to_string());
}

// ---------------------------------------------------------------- 9

void gradients() {
  Rng rng(9);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> width(1, 8);
  double worst = 0.0;
  std::size_t params = 0;
  for (int i = 0; i < 20; ++i) {
    std::vector<std::size_t> sizes{width(rng)};
    for (int h = 0; h < 1 + i % 3; ++h) sizes.push_back(width(rng) + 2);
    sizes.push_back(width(rng));
    Mlp net(sizes, rng);
    for (auto& p : net.parameters()) p += 0.1 * n01(rng);
    std::vector<double> x(sizes.front()), w(sizes.back());
    for (auto& v : x) v = n01(rng);
    for (auto& v : w) v = n01(rng);
    params += net.parameters().size();
    worst = std::max(worst, testing::max_relative_gradient_error(net, x, w));
  }
  report(9, worst < kGradTolerance, fmt("20 nets, %zu parameters, worst relative error %.3g", params, worst));
}

// ---------------------------------------------------------------- 10

void defaults_audit() {
  const std::map<std::string, std::string> expected{
      {"discount", "0.99"},           {"bias_averaging_coefficient", "0.999"}, {"bias_evaluation_period", "10"},
      {"fresh_replay_size", "200"},   {"fresh_batch_size", "4000"},            {"huber_loss_parameter", "1"},
      {"target_smoothing_coefficient", "0.005"}, {"number_of_atoms", "25"},    {"number_of_critics", "2"},
      {"total_networks", "8"},        {"updated_networks", "2"},               {"eta_learning_rate", "3e-05"},
  };
  int status = 0;
  const auto out = run_command(std::string("\"") + BIASCTL_CLI + "\" defaults", status);
  std::map<std::string, std::string> full;
  std::istringstream in(out);
  std::string line, name, value;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::istringstream row(line);
    if (row >> name >> value) full[name] = value;
  }
  std::string mismatches;
  for (const auto& [k, v] : expected) {
    const auto it = full.find(k);
    if (it == full.end() || std::stod(it->second) != std::stod(v)) mismatches += k + " ";
  }
  report(10, status == 0 && mismatches.empty(),
         fmt("%zu fields checked, mismatches: %s", expected.size(), mismatches.empty() ? "none" : mismatches.c_str()));
}

// ---------------------------------------------------------------- 11

void determinism() {
  const auto base = fs::temp_directory_path() / "biasctl_acceptance";
  fs::remove_all(base);
  std::vector<std::string> files;
  bool ran = true;
  for (const char* dir : {"a", "b"}) {
    const auto out = base / dir;
    fs::create_directories(out);
    int status = 0;
    run_command("BIASCTL_OUT=\"" + out.string() + "\" \"" + BIASCTL_CLI + "\" run --config \"" + BIASCTL_CONFIG_DIR +
                    "/noisy_chain.ini\" --seed 3",
                status);
    ran = ran && status == 0;
    files.push_back(slurp(out / "run_seed_3.csv"));
  }
  const bool same = ran && !files[0].empty() && files[0] == files[1];
  report(11, same, fmt("two runs of noisy_chain.ini seed 3: %zu and %zu bytes, %s", files[0].size(), files[1].size(),
                       same ? "identical" : "different"));
  fs::remove_all(base);
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  unbiasedness();
  monotonicity();
  lemmas();
  ise_examples();
  gradients();
  defaults_audit();
  determinism();
  closed_loop();
  for (const auto& [id, line] : lines) std::printf("%s\n", line.c_str());
  std::printf("%d criteria failed, %.1fs\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
