#include "dform/ode.hpp"

#include <boost/numeric/odeint.hpp>
#include <boost/numeric/odeint/external/eigen/eigen.hpp>

namespace dform {

namespace odeint = boost::numeric::odeint;

namespace {

using Dopri5 = odeint::runge_kutta_dopri5<Vec, double, Vec, double, odeint::vector_space_algebra>;

struct Diverged {};

}  // namespace

Vec rk4_flow(const FieldFn& field, Vec x, double t_span, int steps) {
  if (steps < 1) throw ConfigError("rk4_flow: steps must be >= 1");
  const double h = t_span / steps;
  for (int s = 0; s < steps; ++s) {
    const Vec k1 = field(x);
    const Vec k2 = field(x + 0.5 * h * k1);
    const Vec k3 = field(x + 0.5 * h * k2);
    const Vec k4 = field(x + h * k3);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

Vec dopri5_flow(const FieldFn& field, Vec x, double t0, double t1, const AdaptiveOptions& opt) {
  if (t0 == t1) return x;
  auto rhs = [&](const Vec& s, Vec& ds, double) { ds = field(s); };
  const double dt = (t1 > t0 ? 1.0 : -1.0) * opt.initial_dt;
  odeint::integrate_adaptive(odeint::make_controlled(opt.atol, opt.rtol, Dopri5()), rhs, x, t0, t1,
                             dt);
  if (!x.allFinite()) throw NumericalError("dopri5_flow: non-finite state");
  return x;
}

Trajectory simulate(const FieldFn& field, const Vec& x0, double T, int n_out,
                    const AdaptiveOptions& opt, double blowup) {
  Trajectory traj;
  if (n_out < 1) n_out = 1;
  std::vector<double> times(static_cast<std::size_t>(n_out) + 1);
  for (int i = 0; i <= n_out; ++i) times[static_cast<std::size_t>(i)] = T * i / n_out;

  auto rhs = [&](const Vec& s, Vec& ds, double) { ds = field(s); };
  auto observer = [&](const Vec& s, double t) {
    if (!s.allFinite() || s.lpNorm<Eigen::Infinity>() > blowup) throw Diverged{};
    traj.t.push_back(t);
    traj.x.push_back(s);
  };
  Vec x = x0;
  try {
    odeint::integrate_times(odeint::make_dense_output(opt.atol, opt.rtol, Dopri5()), rhs, x,
                            times.begin(), times.end(), opt.initial_dt, observer);
  } catch (const Diverged&) {
    traj.diverged = true;
  }
  return traj;
}

}  // namespace dform
