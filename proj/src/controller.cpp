#include "biasctl/controller.hpp"

#include <algorithm>
#include <cmath>

#include "biasctl/bias.hpp"
#include "biasctl/errors.hpp"

namespace biasctl {

std::string to_string(Method m) {
  switch (m) {
    case Method::tqc_style: return "tqc_style";
    case Method::wd3_style: return "wd3_style";
    case Method::mmql_style: return "mmql_style";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "tqc_style") return Method::tqc_style;
  if (name == "wd3_style") return Method::wd3_style;
  if (name == "mmql_style") return Method::mmql_style;
  throw UsageError("unknown method '" + name + "' (expected tqc_style, wd3_style or mmql_style)");
}

std::string to_string(ControlMode m) {
  switch (m) {
    case ControlMode::discrete: return "discrete";
    case ControlMode::continuous: return "continuous";
    case ControlMode::fixed: return "fixed";
  }
  return "unknown";
}

ControlMode parse_control_mode(const std::string& name) {
  if (name == "discrete") return ControlMode::discrete;
  if (name == "continuous") return ControlMode::continuous;
  if (name == "fixed") return ControlMode::fixed;
  throw UsageError("unknown controller mode '" + name + "'");
}

EtaBounds clamp_bounds_for(Method method, std::size_t members, std::size_t atoms) {
  switch (method) {
    case Method::tqc_style:
      if (members * atoms < 1) throw UsageError("quantile ensemble needs at least one atom");
      return {0.0, static_cast<double>(members * atoms - 1)};
    case Method::wd3_style:
      return {0.0, 1.0};
    case Method::mmql_style:
      if (members < 2) throw UsageError("maxmin needs at least two networks");
      return {2.0, static_cast<double>(members)};
  }
  throw UsageError("unknown method");
}

double default_initial_eta(Method method) {
  switch (method) {
    case Method::tqc_style: return 0.0;
    case Method::wd3_style: return 0.5;
    case Method::mmql_style: return 2.0;
  }
  throw UsageError("unknown method");
}

double sign_meta_step(double eta, double raw_bias, double lambda) {
  if (!(lambda > 0.0)) throw UsageError("eta step size must be positive");
  if (raw_bias > 0.0) return eta + lambda;
  if (raw_bias < 0.0) return eta - lambda;
  return eta;
}

BiasController::BiasController(const ControllerParams& params) : params_(params) {
  if (params_.bounds.min > params_.bounds.max) throw UsageError("eta bounds are inverted");
  if (params_.m_compute == 0) throw UsageError("bias evaluation period must be positive");
  if (params_.mode == ControlMode::discrete && params_.m_update == 0)
    throw UsageError("eta update interval must be positive");
  if (!(params_.lambda > 0.0)) throw UsageError("eta step size must be positive");
  if (!(params_.gamma_eta >= 0.0 && params_.gamma_eta < 1.0))
    throw UsageError("bias averaging coefficient must lie in [0, 1)");
  if (params_.mode == ControlMode::discrete) {
    params_.lambda = 1.0;
    if (params_.initial_eta != std::round(params_.initial_eta))
      throw UsageError("discrete eta must start at an integer");
  }
  state_.eta = clamp(params_.initial_eta);
}

double BiasController::clamp(double eta) const { return std::clamp(eta, params_.bounds.min, params_.bounds.max); }

std::optional<double> BiasController::on_env_step(const Probe& probe) {
  const double before = state_.eta;
  if (++state_.steps_since_compute >= params_.m_compute) {
    if (const auto raw = probe()) {
      state_.steps_since_compute = 0;
      state_.last_raw = *raw;
      state_.b_smooth = smooth(state_.b_smooth, *raw, params_.gamma_eta);
      ++state_.probes;
      if (params_.mode == ControlMode::continuous) {
        state_.eta = clamp(sign_meta_step(state_.eta, *raw, params_.lambda));
        ++state_.updates;
      }
    } else {
      ++state_.skipped_probes;
    }
  }
  if (params_.mode == ControlMode::discrete && ++state_.steps_since_update >= params_.m_update) {
    state_.steps_since_update = 0;
    state_.eta = clamp(sign_meta_step(state_.eta, state_.b_smooth, 1.0));
    ++state_.updates;
  }
  if (state_.eta != before) return state_.eta;
  return std::nullopt;
}

}  // namespace biasctl
