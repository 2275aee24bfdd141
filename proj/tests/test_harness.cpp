#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "biasctl/errors.hpp"
#include "biasctl/harness.hpp"

using namespace biasctl;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.mdp.testbed = "chain";
  c.mdp.length = 4;
  c.mdp.gambles = 3;
  c.total_steps = 1200;
  c.eval_every = 200;
  c.learning_starts = 100;
  c.bias_update_interval = 200;
  c.fresh_replay_size = 20;
  c.fresh_batch_size = 50;
  c.seeds = {0, 1, 2, 3};
  return c;
}

// Oracle: expected best over all size-n subsets by enumeration.
double enumerated_best(const std::vector<double>& finals, std::size_t n) {
  std::vector<bool> pick(finals.size(), false);
  std::fill(pick.begin(), pick.begin() + static_cast<long>(n), true);
  double total = 0.0;
  int count = 0;
  do {
    double best = -INFINITY;
    for (std::size_t i = 0; i < finals.size(); ++i)
      if (pick[i]) best = std::max(best, finals[i]);
    total += best;
    ++count;
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return total / count;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("biasctl_test_" + name);
}

}  // namespace

TEST_CASE("zero total steps gives an empty record") {
  auto c = small_config();
  c.total_steps = 0;
  const auto r = run(c, 0);
  CHECK(r.rows.empty());
  CHECK(std::isnan(r.final_performance));
}

TEST_CASE("runs are deterministic per seed") {
  const auto c = small_config();
  const auto a = run(c, 5);
  const auto b = run(c, 5);
  REQUIRE(a.rows.size() == 6);
  CHECK(a.rows == b.rows);
  CHECK(a.final_performance == b.final_performance);
  CHECK_FALSE(run(c, 6).rows == a.rows);
}

TEST_CASE("rows are strictly increasing in step") {
  const auto r = run(small_config(), 1);
  for (std::size_t i = 1; i < r.rows.size(); ++i) CHECK(r.rows[i].step > r.rows[i - 1].step);
  CHECK(r.rows.back().step == 1200);
}

TEST_CASE("fixed eta never changes") {
  for (auto m : {Method::mmql_style, Method::tqc_style, Method::wd3_style}) {
    auto c = small_config();
    c.method = m;
    c.number_of_atoms = 3;
    c.adaptive = false;
    c.eta = m == Method::wd3_style ? 0.75 : (m == Method::tqc_style ? 2.0 : 3.0);
    const auto r = run(c, 2);
    for (const auto& row : r.rows) CHECK(row.eta == *c.eta);
  }
}

TEST_CASE("adaptive runs move eta on a noisy chain") {
  auto c = small_config();
  c.total_steps = 4000;
  c.bias_update_interval = 100;
  const auto r = run(c, 0);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& row : r.rows) {
    lo = std::min(lo, row.eta);
    hi = std::max(hi, row.eta);
    CHECK(row.eta >= 2.0);
    CHECK(row.eta <= 8.0);
  }
  CHECK(hi > lo);
}

TEST_CASE("every method and representation runs") {
  for (auto m : {Method::mmql_style, Method::tqc_style, Method::wd3_style}) {
    for (auto rep : {Representation::tabular, Representation::mlp}) {
      auto c = small_config();
      c.method = m;
      c.number_of_atoms = 3;
      c.representation = rep;
      c.hidden_layers = {8};
      c.total_steps = 400;
      const auto r = run(c, 0);
      CHECK(r.rows.size() == 2);
      CHECK(std::isfinite(r.final_performance));
    }
  }
}

TEST_CASE("invalid configs fail before stepping") {
  auto c = small_config();
  c.seeds.clear();
  CHECK_THROWS_AS(run(c, 0), UsageError);
}

TEST_CASE("final performance averages the last window") {
  std::vector<RunRow> rows;
  for (std::size_t s = 100; s <= 1000; s += 100) rows.push_back({s, static_cast<double>(s), 0, 0, 0, 0});
  CHECK(final_performance(rows, 1000, 0.1) == 1000.0);
  CHECK(final_performance(rows, 1000, 0.25) == doctest::Approx((800 + 900 + 1000) / 3.0));
  CHECK(std::isnan(final_performance({}, 1000, 0.1)));
}

TEST_CASE("grid search produces one record per eta and seed") {
  auto c = small_config();
  c.total_steps = 200;
  const auto g = grid_search(c, {2, 4, 6, 8, 3, 5});
  CHECK(g.size() == 6);
  std::size_t records = 0;
  for (const auto& [eta, rs] : g) {
    records += rs.size();
    for (const auto& r : rs)
      for (const auto& row : r.rows) CHECK(row.eta == eta);
  }
  CHECK(records == 24);
}

TEST_CASE("grid search is independent of the thread count and matches single runs") {
  auto c = small_config();
  c.total_steps = 400;
  const auto one = grid_search(c, {2, 4}, 1);
  const auto three = grid_search(c, {2, 4}, 3);
  for (double eta : {2.0, 4.0})
    for (std::size_t i = 0; i < 4; ++i) CHECK(one.at(eta)[i].rows == three.at(eta)[i].rows);

  auto fixed = c;
  fixed.adaptive = false;
  fixed.eta = 4.0;
  CHECK(run(fixed, c.seeds[2]).rows == one.at(4.0)[2].rows);
}

TEST_CASE("ise examples") {
  const auto a = ise({{0, 1.0}, {1, 3.0}}, 2.0);
  CHECK(a.tries == 1u);
  CHECK(a.to_string() == "1");
  const auto b = ise({{0, 1.0}, {1, 2.0}, {2, 3.0}}, 2.5);
  CHECK(b.tries == 2u);
  CHECK(b.expected_best[1] == doctest::Approx(8.0 / 3.0));
  const auto c = ise({{2, 1.0}, {4, 2.0}, {6, 3.0}, {8, 2.5}}, 3.5);
  CHECK_FALSE(c.tries.has_value());
  CHECK(c.to_string() == ">4");
  CHECK_THROWS_AS(ise({}, 1.0), UsageError);
}

TEST_CASE("ise matches subset enumeration and is monotone") {
  Rng rng(70);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t g = 1 + trial % 7;
    std::map<double, double> finals;
    std::vector<double> values;
    for (std::size_t i = 0; i < g; ++i) {
      values.push_back(n01(rng));
      finals[static_cast<double>(i)] = values.back();
    }
    const double adaptive = n01(rng);
    const auto r = ise(finals, adaptive);
    REQUIRE(r.expected_best.size() == g);
    std::optional<std::size_t> expect;
    for (std::size_t n = 1; n <= g; ++n) {
      CHECK(r.expected_best[n - 1] == doctest::Approx(enumerated_best(values, n)).epsilon(1e-12));
      if (!expect && enumerated_best(values, n) >= adaptive - 1e-12) expect = n;
    }
    CHECK(r.tries == expect);

    std::size_t prev = 0;
    for (int k = -30; k <= 30; ++k) {
      const auto s = ise(finals, 0.1 * k);
      const std::size_t v = s.tries ? *s.tries : g + 1;
      CHECK(v >= prev);
      prev = v;
    }
  }
}

TEST_CASE("csv of an empty record is the header only") {
  std::ostringstream out;
  write_csv(RunRecord{}, out);
  CHECK(out.str() == std::string(kCsvHeader) + "\n");
  CHECK(std::string(kCsvHeader) == "step,return,eta,bias_raw,bias_smoothed,suitable_share");
}

TEST_CASE("csv round-trips exactly") {
  RunRecord r;
  r.rows.push_back({10, 1.0 / 3.0, 2.0, -0.1234567890123, NAN, 0.5});
  r.rows.push_back({20, -1e-300, 0.25, 7e22, 0.1, 1.0});
  const auto path = temp_file("roundtrip.csv");
  emit_csv(r, path.string());
  CHECK(read_csv(path.string()) == r.rows);
  std::ifstream in(path, std::ios::binary);
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  CHECK(text.find('\r') == std::string::npos);
  std::filesystem::remove(path);

  CHECK_THROWS(emit_csv(r, "/nonexistent_dir/x.csv"));
  std::istringstream bad("step,return\n1,2\n");
  CHECK_THROWS_AS(parse_csv(bad), UsageError);
}

TEST_CASE("eta histogram recounts the eta column") {
  auto c = small_config();
  c.total_steps = 4000;
  c.eval_every = 50;
  c.bias_update_interval = 100;
  const auto r = run(c, 3);
  std::map<double, std::size_t> tally;
  for (const auto& row : r.rows) ++tally[row.eta];

  const auto path = temp_file("hist.csv");
  emit_csv(r, path.string());
  CHECK(eta_histogram(read_csv(path.string())) == tally);
  std::filesystem::remove(path);

  const std::vector<RunRow> rows{{1, 0, 0.1, 0, 0, 0}, {2, 0, 0.3, 0, 0, 0}, {3, 0, 0.55, 0, 0, 0}};
  const auto binned = eta_histogram(rows, 0.5);
  CHECK(binned.at(0.0) == 2);
  CHECK(binned.at(0.5) == 1);
}

TEST_CASE("rng streams are independent per purpose") {
  auto a = derive_rng(1, 1);
  auto b = derive_rng(1, 2);
  auto c = derive_rng(2, 1);
  auto a2 = derive_rng(1, 1);
  const auto x = a();
  CHECK(x == a2());
  CHECK(x != b());
  CHECK(x != c());
}
