// Command-line front end: run, grid, ise, check, defaults, hist.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <regex>
#include <string>
#include <vector>

#include "biasctl/config.hpp"
#include "biasctl/disttheory.hpp"
#include "biasctl/errors.hpp"
#include "biasctl/harness.hpp"

namespace fs = std::filesystem;
using namespace biasctl;

namespace {

fs::path output_dir() {
  const char* env = std::getenv("BIASCTL_OUT");
  fs::path dir = (env && *env) ? fs::path(env) : fs::current_path();
  fs::create_directories(dir);
  return dir;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("grid entry '" + item + "' is not a number");
    }
  }
  if (grid.empty()) throw UsageError("grid must not be empty");
  return grid;
}

// Final performance of a stored run: the last `fraction` of its step range.
double csv_final(const std::string& path, double fraction) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw UsageError("'" + path + "' holds no rows");
  return final_performance(rows, rows.back().step, fraction);
}

int cmd_run(const std::string& config_path, std::uint64_t seed) {
  const auto config = load_config(config_path);
  const auto record = run(config, seed);
  const auto path = output_dir() / ("run_seed_" + std::to_string(seed) + ".csv");
  emit_csv(record, path.string());
  std::cout << path.string() << '\n' << "final_performance " << format_double(record.final_performance) << '\n';
  return 0;
}

int cmd_grid(const std::string& config_path, const std::string& grid_text, std::size_t n_seeds, std::size_t threads) {
  auto config = load_config(config_path);
  if (n_seeds > 0) {
    config.seeds.clear();
    for (std::size_t s = 0; s < n_seeds; ++s) config.seeds.push_back(s);
  }
  const auto grid = parse_grid(grid_text);
  const auto results = grid_search(config, grid, threads);
  const auto dir = output_dir();
  for (const auto& [eta, records] : results) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto name = "eta_" + format_double(eta) + "_seed_" + std::to_string(config.seeds[i]) + ".csv";
      emit_csv(records[i], (dir / name).string());
    }
    std::cout << "eta " << format_double(eta) << " final_performance " << format_double(mean_final(records)) << '\n';
  }
  return 0;
}

int cmd_ise(const std::string& grid_dir, const std::vector<std::string>& adaptive_files, double fraction) {
  static const std::regex name(R"(eta_(.+)_seed_(\d+)\.csv)");
  std::map<double, std::vector<double>> per_eta;
  if (!fs::is_directory(grid_dir)) throw UsageError("'" + grid_dir + "' is not a directory");
  for (const auto& entry : fs::directory_iterator(grid_dir)) {
    std::smatch m;
    const auto file = entry.path().filename().string();
    if (!std::regex_match(file, m, name)) continue;
    per_eta[std::stod(m[1].str())].push_back(csv_final(entry.path().string(), fraction));
  }
  if (per_eta.empty()) throw UsageError("no eta_<v>_seed_<n>.csv files in '" + grid_dir + "'");
  std::map<double, double> finals;
  for (const auto& [eta, values] : per_eta) {
    double sum = 0.0;
    for (double v : values) sum += v;
    finals[eta] = sum / static_cast<double>(values.size());
  }
  double adaptive = 0.0;
  for (const auto& f : adaptive_files) adaptive += csv_final(f, fraction);
  adaptive /= static_cast<double>(adaptive_files.size());

  const auto result = ise(finals, adaptive);
  for (const auto& [eta, final] : finals) std::cout << "grid eta " << format_double(eta) << " final " << format_double(final) << '\n';
  std::cout << "adaptive final " << format_double(adaptive) << '\n';
  for (std::size_t n = 0; n < result.expected_best.size(); ++n)
    std::cout << "tries " << n + 1 << " expected_best " << format_double(result.expected_best[n]) << '\n';
  std::cout << "ise " << result.to_string() << '\n';
  return 0;
}

int cmd_check(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_lemma_suite(seed)) {
    std::cout << (r.passed() ? "PASS " : "FAIL ") << r.name << " instances=" << r.instances
              << " violations=" << r.violations << '\n';
    ok = ok && r.passed();
  }
  return ok ? 0 : 2;
}

int cmd_hist(const std::string& file, double bin_width) {
  for (const auto& [eta, count] : eta_histogram(read_csv(file), bin_width))
    std::cout << format_double(eta) << ' ' << count << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive overestimation-bias control on tabular MDPs"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  auto* run_cmd = app.add_subcommand("run", "Train one seed and write its CSV");
  run_cmd->add_option("--config", config_path, "Experiment config file")->required();
  run_cmd->add_option("--seed", seed, "Random seed");

  std::string grid_text;
  std::size_t n_seeds = 0;
  std::size_t threads = 1;
  auto* grid_cmd = app.add_subcommand("grid", "Fixed-eta runs over a grid");
  grid_cmd->add_option("--config", config_path, "Experiment config file")->required();
  grid_cmd->add_option("--grid", grid_text, "Comma-separated eta values")->required();
  grid_cmd->add_option("--seeds", n_seeds, "Use seeds 0..n-1 instead of the config's list");
  grid_cmd->add_option("--threads", threads, "Concurrent runs");

  std::string grid_dir;
  std::vector<std::string> adaptive_files;
  double fraction = 0.1;
  auto* ise_cmd = app.add_subcommand("ise", "Grid tries needed to match an adaptive run");
  ise_cmd->add_option("--grid-dir", grid_dir, "Directory written by grid")->required();
  ise_cmd->add_option("--adaptive-file", adaptive_files, "Adaptive run CSV (repeatable)")->required();
  ise_cmd->add_option("--window", fraction, "Final window as a fraction of the run")->check(CLI::Range(1e-9, 1.0));

  auto* check_cmd = app.add_subcommand("check", "Run the distributional property suite");
  check_cmd->add_option("--seed", seed, "Random seed");

  auto* defaults_cmd = app.add_subcommand("defaults", "Print full-scale and desk-scale defaults");

  std::string hist_file;
  double bin_width = 0.0;
  auto* hist_cmd = app.add_subcommand("hist", "Histogram of the eta column of a run CSV");
  hist_cmd->add_option("--file", hist_file, "Run CSV")->required();
  hist_cmd->add_option("--bin-width", bin_width, "Bin width; 0 counts exact values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run_cmd) return cmd_run(config_path, seed);
    if (*grid_cmd) return cmd_grid(config_path, grid_text, n_seeds, threads);
    if (*ise_cmd) return cmd_ise(grid_dir, adaptive_files, fraction);
    if (*check_cmd) return cmd_check(seed);
    if (*defaults_cmd) {
      print_default_table(std::cout);
      return 0;
    }
    if (*hist_cmd) return cmd_hist(hist_file, bin_width);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
