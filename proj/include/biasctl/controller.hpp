#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>

namespace biasctl {

/// Which bias-control mechanism an eta belongs to.
enum class Method { tqc_style, wd3_style, mmql_style };

std::string to_string(Method m);
/// Throws UsageError for anything but tqc_style, wd3_style or mmql_style.
Method parse_method(const std::string& name);

/// discrete: integer eta, smoothed bias, unit steps every m_update env steps.
/// continuous: eta moves by lambda * sign(raw) on every probe, no smoothing stage.
/// fixed: probes are smoothed for reporting but eta never moves.
enum class ControlMode { discrete, continuous, fixed };

std::string to_string(ControlMode m);
ControlMode parse_control_mode(const std::string& name);

struct EtaBounds {
  double min = 0.0;
  double max = 0.0;
};

/// Clamp range of eta per mechanism: [0, N*M - 1] truncated atoms, [0, 1] min
/// weight, [2, N_tot] maxmin members. `members` is N (or N_tot), `atoms` is M.
EtaBounds clamp_bounds_for(Method method, std::size_t members, std::size_t atoms = 1);

/// Default starting eta: the weakest correction for the integer mechanisms, 0.5 for the min weight.
double default_initial_eta(Method method);

/// eta + lambda * sign(raw_bias), with sign(0) = 0.
double sign_meta_step(double eta, double raw_bias, double lambda);

struct ControllerParams {
  ControlMode mode = ControlMode::discrete;
  EtaBounds bounds{};
  double initial_eta = 0.0;
  double lambda = 1.0;
  double gamma_eta = 0.999;
  std::size_t m_compute = 10;
  std::size_t m_update = 2500;
};

struct ControllerState {
  double eta = 0.0;
  double b_smooth = 0.0;
  std::optional<double> last_raw;
  std::size_t steps_since_compute = 0;
  std::size_t steps_since_update = 0;
  std::size_t probes = 0;          // probes folded in
  std::size_t skipped_probes = 0;  // probe attempts that returned no estimate
  std::size_t updates = 0;         // update ticks (discrete) or steps on raw (continuous)
};

/// The eta adaptation loop. Call on_env_step once per environment step.
class BiasController {
 public:
  using Probe = std::function<std::optional<double>()>;

  explicit BiasController(const ControllerParams& params);

  /// Runs a probe every m_compute steps and, in discrete mode, an eta update every
  /// m_update steps. An absent probe result leaves the compute counter due, so the
  /// probe is retried on the next step. Returns the new eta when it changed.
  std::optional<double> on_env_step(const Probe& probe);

  const ControllerState& state() const { return state_; }
  const ControllerParams& params() const { return params_; }
  double eta() const { return state_.eta; }

 private:
  double clamp(double eta) const;

  ControllerParams params_;
  ControllerState state_;
};

}  // namespace biasctl
