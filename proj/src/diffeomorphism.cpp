#include "dform/diffeomorphism.hpp"

#include <cmath>

#include "dform/io.hpp"
#include "dform/ode.hpp"

namespace dform {

namespace {

constexpr double kMinRcond = 1e-12;

void append(Vec& out, Index& at, const Mat& m) {
  out.segment(at, m.size()) = Eigen::Map<const Vec>(m.data(), m.size());
  at += m.size();
}

void extract(const Vec& in, Index& at, Mat& m) {
  m = Eigen::Map<const Mat>(in.data() + at, m.rows(), m.cols());
  at += m.size();
}

void extract(const Vec& in, Index& at, Vec& v) {
  v = in.segment(at, v.size());
  at += v.size();
}

void append_field(Vec& out, Index& at, const MlpParams& p) {
  append(out, at, p.W1);
  append(out, at, p.b1);
  append(out, at, p.W2);
  append(out, at, p.b2);
  append(out, at, p.W3);
  append(out, at, p.b3);
}

}  // namespace

const char* solver_name(Solver s) { return s == Solver::FixedRk4 ? "fixed_rk4" : "dopri5"; }

Solver solver_from_name(const std::string& s) {
  if (s == "fixed_rk4") return Solver::FixedRk4;
  if (s == "dopri5") return Solver::Dopri5;
  throw ConfigError("unknown solver '" + s + "' (expected fixed_rk4 or dopri5)");
}

nlohmann::json FlowConfig::to_json() const {
  return {{"solver", solver_name(solver)}, {"steps", steps}, {"rtol", rtol}, {"atol", atol}};
}

FlowConfig FlowConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"solver", "steps", "rtol", "atol"}, "flow_config");
  FlowConfig c;
  if (j.contains("solver")) c.solver = solver_from_name(j["solver"].get<std::string>());
  c.steps = j.value("steps", c.steps);
  c.rtol = j.value("rtol", c.rtol);
  c.atol = j.value("atol", c.atol);
  if (c.steps < 1) throw ConfigError("flow_config: steps must be >= 1");
  if (!(c.rtol > 0) || !(c.atol > 0)) throw ConfigError("flow_config: tolerances must be > 0");
  return c;
}

DiffeoGrad& DiffeoGrad::operator+=(const DiffeoGrad& o) {
  if (H.size()) H += o.H;
  if (b.size()) b += o.b;
  if (field.W1.size()) field += o.field;
  return *this;
}

DiffeoGrad& DiffeoGrad::operator*=(double s) {
  H *= s;
  b *= s;
  field *= s;
  return *this;
}

// ---------------------------------------------------------------------------
// RK4 with tape

void rk4_integrate(const DeformationField& v, Mat& Z, Mat* T, double span, int steps,
                   FlowTape* tape) {
  const double h = span / steps;
  if (tape) {
    tape->h = h;
    tape->tangent = T != nullptr;
    tape->Z.clear();
    tape->T.clear();
    tape->Z.reserve(4 * static_cast<std::size_t>(steps));
    if (T) tape->T.reserve(4 * static_cast<std::size_t>(steps));
  }
  const double c[4] = {0.0, 0.5, 0.5, 1.0};
  const double w[4] = {1.0, 2.0, 2.0, 1.0};
  Mat K, dK, Zs, Ts, accZ, accT;
  for (int s = 0; s < steps; ++s) {
    accZ = Mat::Zero(Z.rows(), Z.cols());
    if (T) accT = Mat::Zero(T->rows(), T->cols());
    for (int st = 0; st < 4; ++st) {
      if (st == 0) {
        Zs = Z;
        if (T) Ts = *T;
      } else {
        Zs = Z + (c[st] * h) * K;
        if (T) Ts = *T + (c[st] * h) * dK;
      }
      if (tape) {
        tape->Z.push_back(Zs);
        if (T) tape->T.push_back(Ts);
      }
      if (T) {
        v.eval_tangent(Zs, Ts, K, dK);
        accT += w[st] * dK;
      } else {
        K = v.eval(Zs);
      }
      accZ += w[st] * K;
    }
    Z += (h / 6.0) * accZ;
    if (T) *T += (h / 6.0) * accT;
  }
  if (!Z.allFinite() || (T && !T->allFinite()))
    throw NumericalError("flow integration produced a non-finite state");
}

void rk4_backprop(const DeformationField& v, const FlowTape& tape, Mat& Zbar, Mat* Tbar,
                  MlpParams& grad) {
  const bool tangent = tape.tangent;
  const double h = tape.h;
  const std::size_t steps = tape.Z.size() / 4;
  const double c[4] = {0.0, 0.5, 0.5, 1.0};
  const double w[4] = {1.0, 2.0, 2.0, 1.0};
  Mat Tb_local;
  if (tangent && !Tbar) Tbar = &Tb_local;
  if (tangent && Tbar->size() == 0) *Tbar = Mat::Zero(Zbar.rows(), Zbar.cols());

  Mat Kz[4], Kt[4];
  Mat uz, ut;
  for (std::size_t s = steps; s-- > 0;) {
    for (int st = 0; st < 4; ++st) {
      Kz[st] = (w[st] * h / 6.0) * Zbar;
      if (tangent) Kt[st] = (w[st] * h / 6.0) * (*Tbar);
    }
    for (int st = 3; st >= 0; --st) {
      const std::size_t idx = 4 * s + static_cast<std::size_t>(st);
      if (tangent) {
        v.backprop(tape.Z[idx], &tape.T[idx], Kz[st], &Kt[st], grad, uz, &ut);
      } else {
        v.backprop(tape.Z[idx], nullptr, Kz[st], nullptr, grad, uz, nullptr);
      }
      Zbar += uz;
      if (tangent) *Tbar += ut;
      if (st > 0) {
        Kz[st - 1] += (c[st] * h) * uz;
        if (tangent) Kt[st - 1] += (c[st] * h) * ut;
      }
    }
  }
}

// ---------------------------------------------------------------------------

Diffeomorphism::Diffeomorphism(Index n, bool has_affine, bool has_flow, Index hidden)
    : n_(n), has_affine_(has_affine), has_flow_(has_flow) {
  if (n < 1) throw ConfigError("Diffeomorphism: dimension must be >= 1");
  H_ = Mat::Identity(n, n);
  b_ = Vec::Zero(n);
  if (has_flow) field_ = DeformationField(n, hidden < 0 ? DeformationField::default_hidden(n) : hidden);
  refresh();
}

Diffeomorphism Diffeomorphism::identity(Index n, Rng& rng, bool has_affine, bool has_flow) {
  Diffeomorphism phi(n, has_affine, has_flow);
  if (has_flow) phi.field_ = DeformationField::identity_init(n, rng);
  return phi;
}

Diffeomorphism Diffeomorphism::affine_only(const Mat& H, const Vec& b) {
  Diffeomorphism phi(H.rows(), true, false);
  phi.set_affine(H, b);
  return phi;
}

void Diffeomorphism::set_affine(const Mat& H, const Vec& b) {
  require_dim(H.rows(), n_, "set_affine H rows");
  require_dim(H.cols(), n_, "set_affine H cols");
  require_dim(b.size(), n_, "set_affine b");
  H_ = H;
  b_ = b;
  refresh();
}

void Diffeomorphism::set_field(const DeformationField& v) {
  require_dim(v.dim(), n_, "set_field");
  field_ = v;
}

void Diffeomorphism::refresh() {
  if (!has_affine_) {
    singular_ = false;
    rcond_ = 1.0;
    return;
  }
  if (!H_.allFinite()) {
    singular_ = true;
    rcond_ = 0.0;
    return;
  }
  lu_.compute(H_);
  // rcond() alone can miss an exactly zero pivot, so check the diagonal of U as well.
  const Vec pivots = lu_.matrixLU().diagonal().cwiseAbs();
  rcond_ = pivots.minCoeff() > 0 ? lu_.rcond() : 0.0;
  singular_ = !(rcond_ > kMinRcond);
}

void Diffeomorphism::require_invertible() const {
  if (singular_)
    throw SingularMatrixError("affine layer H is numerically singular (rcond " +
                              std::to_string(rcond_) + ")");
}

Mat Diffeomorphism::apply_flow(const Mat& Z, double span, Solver s) const {
  if (s == Solver::FixedRk4) {
    Mat out = Z;
    rk4_integrate(field_, out, nullptr, span, config_.steps, nullptr);
    return out;
  }
  const Index rows = Z.rows(), cols = Z.cols();
  auto rhs = [&](const Vec& state) -> Vec {
    const Mat V = field_.eval(Mat(Eigen::Map<const Mat>(state.data(), rows, cols)));
    return Eigen::Map<const Vec>(V.data(), V.size());
  };
  AdaptiveOptions opt{config_.rtol, config_.atol, 0.01};
  const Vec out = dopri5_flow(rhs, Eigen::Map<const Vec>(Z.data(), Z.size()), 0.0, span, opt);
  return Eigen::Map<const Mat>(out.data(), rows, cols);
}

void Diffeomorphism::apply_flow_tangent(Mat& Z, Mat& T, double span, Solver s) const {
  if (s == Solver::FixedRk4) {
    rk4_integrate(field_, Z, &T, span, config_.steps, nullptr);
    return;
  }
  const Index rows = Z.rows(), cols = Z.cols();
  Mat state(2 * rows, cols);
  state << Z, T;
  auto rhs = [&](const Vec& st) -> Vec {
    Eigen::Map<const Mat> S(st.data(), 2 * rows, cols);
    Mat V, dV;
    field_.eval_tangent(S.topRows(rows), S.bottomRows(rows), V, dV);
    Mat out(2 * rows, cols);
    out << V, dV;
    return Eigen::Map<const Vec>(out.data(), out.size());
  };
  AdaptiveOptions opt{config_.rtol, config_.atol, 0.01};
  const Vec out =
      dopri5_flow(rhs, Eigen::Map<const Vec>(state.data(), state.size()), 0.0, span, opt);
  Eigen::Map<const Mat> S(out.data(), 2 * rows, cols);
  Z = S.topRows(rows);
  T = S.bottomRows(rows);
}

Mat Diffeomorphism::forward(const Mat& X, Solver s) const {
  require_dim(X.rows(), n_, "Diffeomorphism::forward");
  Mat Z = has_affine_ ? Mat((H_ * X).colwise() + b_) : X;
  if (has_flow_) Z = apply_flow(Z, 1.0, s);
  return Z;
}

Mat Diffeomorphism::inverse(const Mat& Y, Solver s) const {
  require_dim(Y.rows(), n_, "Diffeomorphism::inverse");
  Mat Z = has_flow_ ? apply_flow(Y, -1.0, s) : Y;
  if (has_affine_) {
    require_invertible();
    const Mat rhs = Z.colwise() - b_;
    Z = lu_.solve(rhs);
  }
  return Z;
}

void Diffeomorphism::forward_tangent(const Mat& X, const Mat& T, Mat& Y, Mat& U, Solver s) const {
  require_dim(X.rows(), n_, "Diffeomorphism::forward_tangent");
  require_dim(T.rows(), n_, "Diffeomorphism::forward_tangent (tangent)");
  if (has_affine_) {
    Y = (H_ * X).colwise() + b_;
    U = H_ * T;
  } else {
    Y = X;
    U = T;
  }
  if (has_flow_) apply_flow_tangent(Y, U, 1.0, s);
}

void Diffeomorphism::inverse_tangent(const Mat& Y, const Mat& W, Mat& X, Mat& U, Solver s) const {
  require_dim(Y.rows(), n_, "Diffeomorphism::inverse_tangent");
  require_dim(W.rows(), n_, "Diffeomorphism::inverse_tangent (tangent)");
  X = Y;
  U = W;
  if (has_flow_) apply_flow_tangent(X, U, -1.0, s);
  if (has_affine_) {
    require_invertible();
    const Mat rhs = X.colwise() - b_;
    X = lu_.solve(rhs);
    U = lu_.solve(Mat(U));
  }
}

Vec Diffeomorphism::forward(const Vec& x) const { return forward(Mat(x), config_.solver).col(0); }
Vec Diffeomorphism::inverse(const Vec& y) const { return inverse(Mat(y), config_.solver).col(0); }

std::pair<Vec, Vec> Diffeomorphism::jvp(const Vec& x, const Vec& v) const {
  Mat Y, U;
  forward_tangent(Mat(x), Mat(v), Y, U, config_.solver);
  return {Y.col(0), U.col(0)};
}

std::pair<Vec, Vec> Diffeomorphism::inverse_jvp(const Vec& y, const Vec& w) const {
  Mat X, U;
  inverse_tangent(Mat(y), Mat(w), X, U, config_.solver);
  return {X.col(0), U.col(0)};
}

Mat Diffeomorphism::jacobian(const Vec& x) const {
  // One tangent per column; the base point is replicated so each column carries its own tangent.
  Mat Y, U;
  forward_tangent(Mat(x).replicate(1, n_), Mat::Identity(n_, n_), Y, U, config_.solver);
  return U;
}

Mat Diffeomorphism::inverse_jacobian(const Vec& y) const {
  Mat X, U;
  inverse_tangent(Mat(y).replicate(1, n_), Mat::Identity(n_, n_), X, U, config_.solver);
  return U;
}

// ---------------------------------------------------------------------------
// Taped training path

void Diffeomorphism::forward_taped(const Mat& X, const Mat* T, Mat& Y, Mat* U, MapTape& tape,
                                   bool use_flow) const {
  require_dim(X.rows(), n_, "Diffeomorphism::forward_taped");
  tape.tangent = T != nullptr;
  tape.used_flow = use_flow && has_flow_;
  tape.X = X;
  if (T) tape.T = *T;
  Mat Tz;
  if (has_affine_) {
    Y = (H_ * X).colwise() + b_;
    if (T) Tz = H_ * (*T);
  } else {
    Y = X;
    if (T) Tz = *T;
  }
  if (tape.used_flow) rk4_integrate(field_, Y, T ? &Tz : nullptr, 1.0, config_.steps, &tape.flow);
  if (U && T) *U = std::move(Tz);
}

void Diffeomorphism::forward_backprop(const MapTape& tape, const Mat& Ybar, const Mat* Ubar,
                                      DiffeoGrad& g, Mat& Xbar, Mat* Tbar) const {
  Mat Zb = Ybar;
  Mat Tb;
  if (tape.tangent) Tb = Ubar ? *Ubar : Mat::Zero(Ybar.rows(), Ybar.cols());
  if (tape.used_flow) rk4_backprop(field_, tape.flow, Zb, tape.tangent ? &Tb : nullptr, g.field);
  if (has_affine_) {
    g.H += Zb * tape.X.transpose();
    g.b += Zb.rowwise().sum();
    Xbar = H_.transpose() * Zb;
    if (tape.tangent) {
      g.H += Tb * tape.T.transpose();
      if (Tbar) *Tbar = H_.transpose() * Tb;
    }
  } else {
    Xbar = std::move(Zb);
    if (tape.tangent && Tbar) *Tbar = std::move(Tb);
  }
}

void Diffeomorphism::inverse_taped(const Mat& Y, const Mat* W, Mat& X, Mat* U, MapTape& tape,
                                   bool use_flow) const {
  require_dim(Y.rows(), n_, "Diffeomorphism::inverse_taped");
  tape.tangent = W != nullptr;
  tape.used_flow = use_flow && has_flow_;
  X = Y;
  Mat Tz;
  if (W) Tz = *W;
  if (tape.used_flow) rk4_integrate(field_, X, W ? &Tz : nullptr, -1.0, config_.steps, &tape.flow);
  if (has_affine_) {
    require_invertible();
    const Mat rhs = X.colwise() - b_;
    X = lu_.solve(rhs);
    if (W) Tz = lu_.solve(Mat(Tz));
    tape.X = X;
    if (W) tape.T = Tz;
  }
  if (U && W) *U = std::move(Tz);
}

void Diffeomorphism::inverse_backprop(const MapTape& tape, const Mat& Xbar, const Mat* Ubar,
                                      DiffeoGrad& g, Mat& Ybar, Mat* Wbar) const {
  Mat Zb, Tb;
  if (has_affine_) {
    Zb = lu_.transpose().solve(Xbar);
    g.H -= Zb * tape.X.transpose();
    g.b -= Zb.rowwise().sum();
    if (tape.tangent && Ubar) {
      Tb = lu_.transpose().solve(*Ubar);
      g.H -= Tb * tape.T.transpose();
    }
  } else {
    Zb = Xbar;
    if (tape.tangent && Ubar) Tb = *Ubar;
  }
  if (tape.tangent && Tb.size() == 0) Tb = Mat::Zero(Xbar.rows(), Xbar.cols());
  if (tape.used_flow) rk4_backprop(field_, tape.flow, Zb, tape.tangent ? &Tb : nullptr, g.field);
  Ybar = std::move(Zb);
  if (tape.tangent && Wbar) *Wbar = std::move(Tb);
}

DiffeoGrad Diffeomorphism::zero_grad() const {
  DiffeoGrad g;
  if (has_affine_) {
    g.H = Mat::Zero(n_, n_);
    g.b = Vec::Zero(n_);
  }
  if (has_flow_) g.field = MlpParams::zeros(n_, field_.hidden());
  return g;
}

// ---------------------------------------------------------------------------
// Parameters

Index Diffeomorphism::parameter_count(bool affine_only) const {
  Index c = has_affine_ ? n_ * n_ + n_ : 0;
  if (has_flow_ && !affine_only) c += field_.params().count();
  return c;
}

Vec Diffeomorphism::pack(bool affine_only) const {
  Vec p(parameter_count(affine_only));
  Index at = 0;
  if (has_affine_) {
    append(p, at, H_);
    append(p, at, b_);
  }
  if (has_flow_ && !affine_only) append_field(p, at, field_.params());
  return p;
}

void Diffeomorphism::unpack(const Vec& p, bool affine_only) {
  require_dim(p.size(), parameter_count(affine_only), "Diffeomorphism::unpack");
  Index at = 0;
  if (has_affine_) {
    extract(p, at, H_);
    extract(p, at, b_);
  }
  if (has_flow_ && !affine_only) {
    MlpParams& q = field_.params();
    extract(p, at, q.W1);
    extract(p, at, q.b1);
    extract(p, at, q.W2);
    extract(p, at, q.b2);
    extract(p, at, q.W3);
    extract(p, at, q.b3);
  }
  refresh();
}

Vec Diffeomorphism::pack_grad(const DiffeoGrad& g, bool affine_only) const {
  Vec p(parameter_count(affine_only));
  Index at = 0;
  if (has_affine_) {
    append(p, at, g.H);
    append(p, at, g.b);
  }
  if (has_flow_ && !affine_only) append_field(p, at, g.field);
  return p;
}

nlohmann::json Diffeomorphism::to_json() const {
  nlohmann::json j;
  j["dim"] = n_;
  j["has_affine"] = has_affine_;
  j["has_flow"] = has_flow_;
  if (has_affine_) {
    j["H"] = matrix_to_json(H_);
    j["b"] = vector_to_json(b_);
  }
  if (has_flow_) j["flow"] = field_.to_json();
  j["flow_config"] = config_.to_json();
  return j;
}

Diffeomorphism Diffeomorphism::from_json(const nlohmann::json& j) {
  check_keys(j, {"dim", "has_affine", "has_flow", "H", "b", "flow", "flow_config"}, "model");
  const Index n = j.at("dim").get<Index>();
  const bool ha = j.at("has_affine").get<bool>();
  const bool hf = j.at("has_flow").get<bool>();
  Diffeomorphism phi(n, ha, hf);
  if (ha) phi.set_affine(matrix_from_json(j.at("H")), vector_from_json(j.at("b")));
  if (hf) phi.set_field(DeformationField::from_json(j.at("flow")));
  if (j.contains("flow_config")) phi.config_ = FlowConfig::from_json(j["flow_config"]);
  return phi;
}

Diffeomorphism random_flow_diffeo(Index n, double weight_scale, double damping_scale,
                                  std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xD1FFu);
  DeformationField v(n, 10);
  const double k1 = weight_scale / std::sqrt(static_cast<double>(n));
  const double k2 = weight_scale / std::sqrt(10.0);
  v.params().W1 = uniform_matrix(rng, 10, n, -k1, k1);
  v.params().W2 = uniform_matrix(rng, 10, 10, -k2, k2);
  v.params().W3 = uniform_matrix(rng, n, 10, -k2, k2);
  v.set_damping(damping_scale);
  Diffeomorphism phi(n, false, true, 10);
  phi.set_field(v);
  // Ground-truth maps are evaluated more tightly than learned ones so that planted
  // systems are accurate well below the alignment tolerances.
  FlowConfig cfg;
  cfg.solver = Solver::Dopri5;
  cfg.rtol = 1e-8;
  cfg.atol = 1e-10;
  phi.set_config(cfg);
  return phi;
}

Index full_parameter_count(Index n) {
  const Index h = DeformationField::default_hidden(n);
  return n * n + n + (h * n + h) + (h * h + h) + (n * h + n);
}

}  // namespace dform
