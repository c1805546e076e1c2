#pragma once

#include <functional>
#include <vector>

#include "dform/common.hpp"

namespace dform {

using FieldFn = std::function<Vec(const Vec&)>;

struct AdaptiveOptions {
  double rtol = 1e-5;
  double atol = 1e-8;
  double initial_dt = 0.01;
};

/// Classic fourth-order Runge-Kutta on an autonomous field, `steps` equal steps over [0, t_span].
/// A negative t_span integrates backward in time.
Vec rk4_flow(const FieldFn& field, Vec x, double t_span, int steps);

/// Dormand-Prince 5(4) with step-size control (boost::odeint controlled stepper).
Vec dopri5_flow(const FieldFn& field, Vec x, double t0, double t1, const AdaptiveOptions& opt = {});

struct Trajectory {
  std::vector<double> t;
  std::vector<Vec> x;
  bool diverged = false;
};

/// Simulates x' = field(x) on [0, T] and records n_out + 1 equally spaced states.
/// Stops early and flags divergence once |x|_inf exceeds `blowup`.
Trajectory simulate(const FieldFn& field, const Vec& x0, double T, int n_out,
                    const AdaptiveOptions& opt = {}, double blowup = 1e6);

}  // namespace dform
