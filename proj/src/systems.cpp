#include "dform/systems.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dform/io.hpp"
#include "dform/ode.hpp"

namespace dform {

namespace {

double fd_step(const Vec& x) { return 1e-6 * std::max(1.0, x.lpNorm<Eigen::Infinity>()); }

}  // namespace

// ---------------------------------------------------------------------------
// VectorField defaults

Vec VectorField::eval(const Vec& x) const {
  require_dim(x.size(), dim(), kind().c_str());
  return eval_batch(Mat(x)).col(0);
}

Mat VectorField::jacobian(const Vec& x) const {
  const Index n = dim();
  const double h = fd_step(x);
  Mat Xp = x.replicate(1, n), Xm = x.replicate(1, n);
  Xp.diagonal().array() += h;
  Xm.diagonal().array() -= h;
  return (eval_batch(Xp) - eval_batch(Xm)) / (2 * h);
}

Mat VectorField::jvp_batch(const Mat& X, const Mat& T) const {
  Mat out(X.rows(), X.cols());
  for (Index j = 0; j < X.cols(); ++j) out.col(j) = jacobian(X.col(j)) * T.col(j);
  return out;
}

Mat VectorField::vjp_batch(const Mat& X, const Mat& G) const {
  // Column k of every Jacobian from one pair of batched evaluations, then dot with G.
  const Index n = dim(), B = X.cols();
  Vec h(B);
  for (Index j = 0; j < B; ++j) h[j] = fd_step(X.col(j));
  Mat out(n, B);
  for (Index k = 0; k < n; ++k) {
    Mat Xp = X, Xm = X;
    Xp.row(k) += h.transpose();
    Xm.row(k) -= h.transpose();
    const Mat Dk = eval_batch(Xp) - eval_batch(Xm);
    for (Index j = 0; j < B; ++j) out(k, j) = Dk.col(j).dot(G.col(j)) / (2 * h[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear and RNN

LinearSystem::LinearSystem(Mat A) : A_(std::move(A)) {
  if (A_.rows() != A_.cols()) throw DimensionError("linear system: A must be square");
  if (!A_.allFinite()) throw ConfigError("linear system: non-finite entries");
}

nlohmann::json LinearSystem::to_json() const {
  return {{"kind", kind()}, {"dim", dim()}, {"A", matrix_to_json(A_)}};
}

RnnSystem::RnnSystem(Mat W) : W_(std::move(W)) {
  if (W_.rows() != W_.cols()) throw DimensionError("rnn: W must be square");
}

Mat RnnSystem::eval_batch(const Mat& X) const {
  require_dim(X.rows(), dim(), "rnn");
  return -X + W_ * X.array().tanh().matrix();
}

Mat RnnSystem::jacobian(const Vec& x) const {
  const Vec s = 1.0 - x.array().tanh().square();
  return -Mat::Identity(dim(), dim()) + W_ * s.asDiagonal();
}

Mat RnnSystem::jvp_batch(const Mat& X, const Mat& T) const {
  const Mat s = 1.0 - X.array().tanh().square();
  return -T + W_ * s.cwiseProduct(T);
}

Mat RnnSystem::vjp_batch(const Mat& X, const Mat& G) const {
  const Mat s = 1.0 - X.array().tanh().square();
  return -G + s.cwiseProduct(W_.transpose() * G);
}

nlohmann::json RnnSystem::to_json() const {
  return {{"kind", kind()}, {"dim", dim()}, {"W", matrix_to_json(W_)}};
}

// ---------------------------------------------------------------------------
// Planar templates

Mat VanDerPol::eval_batch(const Mat& X) const {
  require_dim(X.rows(), 2, "vdp");
  Mat F(2, X.cols());
  F.row(0) = X.row(1);
  F.row(1) = (mu_ * (1.0 - X.row(0).array().square()) * X.row(1).array() - X.row(0).array()).matrix();
  return F;
}

Mat VanDerPol::jacobian(const Vec& x) const {
  Mat J(2, 2);
  J << 0, 1, -2 * mu_ * x[0] * x[1] - 1, mu_ * (1 - x[0] * x[0]);
  return J;
}

Mat VanDerPol::jvp_batch(const Mat& X, const Mat& T) const {
  Mat out(2, X.cols());
  for (Index j = 0; j < X.cols(); ++j) out.col(j) = jacobian(X.col(j)) * T.col(j);
  return out;
}

Mat VanDerPol::vjp_batch(const Mat& X, const Mat& G) const {
  Mat out(2, X.cols());
  for (Index j = 0; j < X.cols(); ++j) out.col(j) = jacobian(X.col(j)).transpose() * G.col(j);
  return out;
}

nlohmann::json VanDerPol::to_json() const { return {{"kind", kind()}, {"dim", 2}, {"mu", mu_}}; }

Mat HopfSystem::eval_batch(const Mat& X) const {
  require_dim(X.rows(), 2, "hopf");
  const Eigen::ArrayXXd x = X.row(0).array(), y = X.row(1).array();
  const Eigen::ArrayXXd a = mu_ - x.square() - y.square();
  Mat F(2, X.cols());
  F.row(0) = (a * x - y).matrix();
  F.row(1) = (x + a * y).matrix();
  return F;
}

Mat HopfSystem::jacobian(const Vec& p) const {
  const double x = p[0], y = p[1], a = mu_ - x * x - y * y;
  Mat J(2, 2);
  J << a - 2 * x * x, -1 - 2 * x * y, 1 - 2 * x * y, a - 2 * y * y;
  return J;
}

Mat HopfSystem::jvp_batch(const Mat& X, const Mat& T) const {
  Mat out(2, X.cols());
  for (Index j = 0; j < X.cols(); ++j) out.col(j) = jacobian(X.col(j)) * T.col(j);
  return out;
}

Mat HopfSystem::vjp_batch(const Mat& X, const Mat& G) const {
  Mat out(2, X.cols());
  for (Index j = 0; j < X.cols(); ++j) out.col(j) = jacobian(X.col(j)).transpose() * G.col(j);
  return out;
}

nlohmann::json HopfSystem::to_json() const { return {{"kind", kind()}, {"dim", 2}, {"mu", mu_}}; }

Mat SnicSystem::eval_batch(const Mat& X) const {
  require_dim(X.rows(), 2, "snic");
  Mat F(2, X.cols());
  for (Index j = 0; j < X.cols(); ++j) {
    const double x = X(0, j), y = X(1, j);
    const double r2 = x * x + y * y, r = std::sqrt(r2);
    const double q = r > 0 ? std::abs(y) / r : 0.0;  // |sin theta|
    F(0, j) = (1 - r2) * x - mu_ * y + y * q;
    F(1, j) = (1 - r2) * y + mu_ * x - x * q;
  }
  return F;
}

Mat SnicSystem::jacobian(const Vec& p) const {
  const double x = p[0], y = p[1];
  const double r2 = x * x + y * y, r = std::sqrt(r2);
  Mat J(2, 2);
  J << 1 - r2 - 2 * x * x, -2 * x * y - mu_, -2 * x * y + mu_, 1 - r2 - 2 * y * y;
  if (r > 0) {
    const double ay = std::abs(y), sy = (y > 0) - (y < 0), r3 = r2 * r;
    J(0, 0) += -y * ay * x / r3;
    J(0, 1) += 2 * ay / r - ay * y * y / r3;
    J(1, 0) += -(ay / r - ay * x * x / r3);
    J(1, 1) += -x * (sy / r - ay * y / r3);
  }
  return J;
}

Mat SnicSystem::jvp_batch(const Mat& X, const Mat& T) const {
  Mat out(2, X.cols());
  for (Index j = 0; j < X.cols(); ++j) out.col(j) = jacobian(X.col(j)) * T.col(j);
  return out;
}

Mat SnicSystem::vjp_batch(const Mat& X, const Mat& G) const {
  Mat out(2, X.cols());
  for (Index j = 0; j < X.cols(); ++j) out.col(j) = jacobian(X.col(j)).transpose() * G.col(j);
  return out;
}

Mat SnicSystem::stable_points() const {
  const double c = std::sqrt(std::max(0.0, 1 - mu_ * mu_));
  Mat P(2, 2);
  P << c, -c, mu_, -mu_;
  return P;
}

Mat SnicSystem::saddle_points() const {
  const double c = std::sqrt(std::max(0.0, 1 - mu_ * mu_));
  Mat P(2, 2);
  P << -c, c, mu_, -mu_;
  return P;
}

nlohmann::json SnicSystem::to_json() const { return {{"kind", kind()}, {"dim", 2}, {"mu", mu_}}; }

BlaSystem::BlaSystem(double w1, double w2) : w1_(w1), w2_(w2) {
  Mat W0(2, 2), V1(2, 2), V2(2, 2);
  W0 << 0, -1, -1, 0;
  V1 << -2, 1, 1, -2;
  V2 << 1, -2, -2, 1;
  W_ = W0 + w1 * V1 + w2 * V2;
  b_ = Vec::Ones(2);
}

Mat BlaSystem::eval_batch(const Mat& X) const {
  require_dim(X.rows(), 2, "bla");
  return -X + ((W_ * X).colwise() + b_).cwiseMax(0.0);
}

Mat BlaSystem::jacobian(const Vec& x) const {
  const Vec a = W_ * x + b_;
  Mat J = -Mat::Identity(2, 2);
  for (int i = 0; i < 2; ++i)
    if (a[i] > 0) J.row(i) += W_.row(i);
  return J;
}

Mat BlaSystem::jvp_batch(const Mat& X, const Mat& T) const {
  const Mat A = (W_ * X).colwise() + b_;
  const Mat mask = (A.array() > 0).cast<double>();
  return -T + mask.cwiseProduct(W_ * T);
}

Mat BlaSystem::vjp_batch(const Mat& X, const Mat& G) const {
  const Mat A = (W_ * X).colwise() + b_;
  const Mat mask = (A.array() > 0).cast<double>();
  return -G + W_.transpose() * mask.cwiseProduct(G);
}

std::vector<Vec> BlaSystem::analytic_fixed_points() const {
  std::vector<Vec> out;
  const double tol = 1e-12;
  for (int pattern = 0; pattern < 4; ++pattern) {
    Vec d(2);
    d << (pattern & 1), ((pattern >> 1) & 1);
    const Mat M = Mat::Identity(2, 2) - d.asDiagonal() * W_;
    const Vec rhs = d.asDiagonal() * b_;
    Eigen::FullPivLU<Mat> lu(M);
    if (lu.rank() < 2) continue;  // continuum of equilibria, see attractor_segment()
    const Vec x = lu.solve(rhs);
    const Vec a = W_ * x + b_;
    bool ok = true;
    for (int i = 0; i < 2; ++i) {
      if (d[i] > 0 && a[i] < -tol) ok = false;
      if (d[i] == 0 && a[i] > tol) ok = false;
    }
    if (!ok) continue;
    bool dup = false;
    for (const Vec& p : out) dup = dup || (p - x).norm() < 1e-9;
    if (!dup) out.push_back(x);
  }
  return out;
}

std::pair<Vec, Vec> BlaSystem::attractor_segment() const {
  // With both units active, x = W x + b; for the unperturbed W this is x1 + x2 = 1 and both
  // pre-activations stay non-negative exactly on the segment between the axes.
  Vec a(2), b(2);
  a << 1, 0;
  b << 0, 1;
  return {a, b};
}

nlohmann::json BlaSystem::to_json() const {
  return {{"kind", kind()}, {"dim", 2}, {"w1", w1_}, {"w2", w2_}};
}

// ---------------------------------------------------------------------------
// MINDy form

MindySystem::MindySystem(Mat W, Vec alpha, Vec D, double b_slope, std::string dynamics_class)
    : W_(std::move(W)), alpha_(std::move(alpha)), D_(std::move(D)), b_(b_slope),
      class_(std::move(dynamics_class)) {
  require_dim(W_.cols(), W_.rows(), "mindy W");
  require_dim(alpha_.size(), W_.rows(), "mindy alpha");
  require_dim(D_.size(), W_.rows(), "mindy D");
  if ((alpha_.array() <= 0).any()) throw ConfigError("mindy: alpha must be positive");
}

Mat MindySystem::psi(const Mat& X) const {
  const Eigen::ArrayXXd bx = b_ * X.array();
  const Eigen::ArrayXXd a2 = alpha_.array().square().replicate(1, X.cols());
  return ((a2 + (bx + 0.5).square()).sqrt() - (a2 + (bx - 0.5).square()).sqrt()).matrix();
}

Mat MindySystem::psi_prime(const Mat& X) const {
  const Eigen::ArrayXXd bx = b_ * X.array();
  const Eigen::ArrayXXd a2 = alpha_.array().square().replicate(1, X.cols());
  return (b_ * ((bx + 0.5) / (a2 + (bx + 0.5).square()).sqrt() -
                (bx - 0.5) / (a2 + (bx - 0.5).square()).sqrt()))
      .matrix();
}

Mat MindySystem::eval_batch(const Mat& X) const {
  require_dim(X.rows(), dim(), "mindy");
  return W_ * psi(X) - D_.asDiagonal() * X;
}

Mat MindySystem::jacobian(const Vec& x) const {
  const Vec dp = psi_prime(Mat(x)).col(0);
  Mat J = W_ * dp.asDiagonal();
  J.diagonal() -= D_;
  return J;
}

Mat MindySystem::jvp_batch(const Mat& X, const Mat& T) const {
  return W_ * psi_prime(X).cwiseProduct(T) - D_.asDiagonal() * T;
}

Mat MindySystem::vjp_batch(const Mat& X, const Mat& G) const {
  return psi_prime(X).cwiseProduct(W_.transpose() * G) - D_.asDiagonal() * G;
}

nlohmann::json MindySystem::to_json() const {
  return {{"kind", kind()},       {"dim", dim()},
          {"W", matrix_to_json(W_)}, {"alpha", vector_to_json(alpha_)},
          {"D", vector_to_json(D_)}, {"b_slope", b_},
          {"dynamics_class", class_}, {"synthetic", true}};
}

// ---------------------------------------------------------------------------
// Composite and transformed systems

CompositeSystem::CompositeSystem(SystemPtr low, SystemPtr high, Mat O)
    : low_(std::move(low)), high_(std::move(high)), O_(std::move(O)) {
  require_dim(O_.rows(), low_->dim() + high_->dim(), "composite O");
  require_dim(O_.cols(), O_.rows(), "composite O");
  if ((O_.transpose() * O_ - Mat::Identity(O_.rows(), O_.rows())).norm() > 1e-8)
    throw ConfigError("composite: mixing matrix is not orthogonal");
}

Mat CompositeSystem::eval_batch(const Mat& X) const {
  require_dim(X.rows(), dim(), "composite");
  const Index m = low_->dim();
  const Mat Z = O_.transpose() * X;
  Mat F(dim(), X.cols());
  F.topRows(m) = low_->eval_batch(Z.topRows(m));
  F.bottomRows(dim() - m) = high_->eval_batch(Z.bottomRows(dim() - m));
  return O_ * F;
}

Mat CompositeSystem::jacobian(const Vec& x) const {
  const Index m = low_->dim(), n = dim();
  const Vec z = O_.transpose() * x;
  Mat J = Mat::Zero(n, n);
  J.topLeftCorner(m, m) = low_->jacobian(z.head(m));
  J.bottomRightCorner(n - m, n - m) = high_->jacobian(z.tail(n - m));
  return O_ * J * O_.transpose();
}

Mat CompositeSystem::jvp_batch(const Mat& X, const Mat& T) const {
  const Index m = low_->dim(), n = dim();
  const Mat Z = O_.transpose() * X, S = O_.transpose() * T;
  Mat out(n, X.cols());
  out.topRows(m) = low_->jvp_batch(Z.topRows(m), S.topRows(m));
  out.bottomRows(n - m) = high_->jvp_batch(Z.bottomRows(n - m), S.bottomRows(n - m));
  return O_ * out;
}

Mat CompositeSystem::vjp_batch(const Mat& X, const Mat& G) const {
  const Index m = low_->dim(), n = dim();
  const Mat Z = O_.transpose() * X, Gz = O_.transpose() * G;
  Mat out(n, X.cols());
  out.topRows(m) = low_->vjp_batch(Z.topRows(m), Gz.topRows(m));
  out.bottomRows(n - m) = high_->vjp_batch(Z.bottomRows(n - m), Gz.bottomRows(n - m));
  return O_ * out;
}

nlohmann::json CompositeSystem::to_json() const {
  return {{"kind", kind()},
          {"dim", dim()},
          {"low", low_->to_json()},
          {"high", high_->to_json()},
          {"O", matrix_to_json(O_)}};
}

AffineTransformedSystem::AffineTransformedSystem(SystemPtr base, Mat H, Vec b)
    : base_(std::move(base)), H_(std::move(H)), b_(std::move(b)) {
  require_dim(H_.rows(), base_->dim(), "transformed_affine H");
  require_dim(H_.cols(), base_->dim(), "transformed_affine H");
  require_dim(b_.size(), base_->dim(), "transformed_affine b");
  lu_.compute(H_);
  if (!(lu_.matrixLU().diagonal().cwiseAbs().minCoeff() > 0) || !(lu_.rcond() > 1e-12))
    throw SingularMatrixError("transformed_affine: H is singular");
}

Mat AffineTransformedSystem::eval_batch(const Mat& Y) const {
  require_dim(Y.rows(), dim(), "transformed_affine");
  const Mat rhs = Y.colwise() - b_;
  return H_ * base_->eval_batch(lu_.solve(rhs));
}

Mat AffineTransformedSystem::jacobian(const Vec& y) const {
  const Vec x = lu_.solve(Vec(y - b_));
  const Mat JH = base_->jacobian(x) * lu_.inverse();
  return H_ * JH;
}

Mat AffineTransformedSystem::vjp_batch(const Mat& Y, const Mat& G) const {
  const Mat rhs = Y.colwise() - b_;
  const Mat X = lu_.solve(rhs);
  const Mat inner = base_->vjp_batch(X, H_.transpose() * G);
  return lu_.transpose().solve(inner);
}

nlohmann::json AffineTransformedSystem::to_json() const {
  return {{"kind", kind()},
          {"dim", dim()},
          {"base", base_->to_json()},
          {"H", matrix_to_json(H_)},
          {"b", vector_to_json(b_)}};
}

DiffeoTransformedSystem::DiffeoTransformedSystem(SystemPtr base, Diffeomorphism phi0, int steps)
    : base_(std::move(base)), phi_(std::move(phi0)), steps_(steps) {
  require_dim(phi_.dim(), base_->dim(), "transformed_diffeo");
  FlowConfig cfg = phi_.config();
  cfg.solver = Solver::FixedRk4;
  cfg.steps = steps;
  phi_.set_config(cfg);
}

Mat DiffeoTransformedSystem::eval_batch(const Mat& Y) const {
  const Mat X = phi_.inverse(Y, Solver::FixedRk4);
  Mat Yb, U;
  phi_.forward_tangent(X, base_->eval_batch(X), Yb, U, Solver::FixedRk4);
  return U;
}

Mat DiffeoTransformedSystem::vjp_batch(const Mat& Y, const Mat& G) const {
  MapTape inv, fwd;
  Mat X, Yb, U;
  phi_.inverse_taped(Y, nullptr, X, nullptr, inv);
  const Mat F = base_->eval_batch(X);
  phi_.forward_taped(X, &F, Yb, &U, fwd);
  DiffeoGrad scratch = phi_.zero_grad();
  Mat Xbar, Fbar, Ybar;
  phi_.forward_backprop(fwd, Mat::Zero(Y.rows(), Y.cols()), &G, scratch, Xbar, &Fbar);
  Xbar += base_->vjp_batch(X, Fbar);
  phi_.inverse_backprop(inv, Xbar, nullptr, scratch, Ybar, nullptr);
  return Ybar;
}

Mat DiffeoTransformedSystem::jacobian(const Vec& y) const {
  const Index n = dim();
  return vjp_batch(y.replicate(1, n), Mat::Identity(n, n)).transpose();
}

nlohmann::json DiffeoTransformedSystem::to_json() const {
  return {{"kind", kind()},
          {"dim", dim()},
          {"base", base_->to_json()},
          {"map", phi_.to_json()},
          {"steps", steps_}};
}

FieldFlowMap::FieldFlowMap(SystemPtr field, double scale, double damping, int steps)
    : field_(std::move(field)), scale_(scale), damping_(damping), steps_(steps) {
  if (steps < 1) throw ConfigError("field flow: steps must be >= 1");
}

Mat FieldFlowMap::velocity(const Mat& X) const {
  Mat V = scale_ * field_->eval_batch(X);
  if (damping_ > 0)
    for (Index j = 0; j < X.cols(); ++j) V.col(j) *= std::exp(-X.col(j).norm() / damping_);
  return V;
}

Mat FieldFlowMap::velocity_tangent(const Mat& X, const Mat& T) const {
  Mat dV = scale_ * field_->jvp_batch(X, T);
  if (damping_ > 0) {
    const Mat F = scale_ * field_->eval_batch(X);
    for (Index j = 0; j < X.cols(); ++j) {
      const double r = X.col(j).norm(), s = std::exp(-r / damping_);
      const double ds = r > 0 ? -(s / damping_) * X.col(j).dot(T.col(j)) / r : 0.0;
      dV.col(j) = s * dV.col(j) + ds * F.col(j);
    }
  }
  return dV;
}

void FieldFlowMap::integrate(Mat& Z, Mat* T, double span) const {
  const double h = span / steps_;
  for (int s = 0; s < steps_; ++s) {
    if (T) {
      const Mat k1 = velocity(Z), d1 = velocity_tangent(Z, *T);
      const Mat z2 = Z + 0.5 * h * k1, t2 = *T + 0.5 * h * d1;
      const Mat k2 = velocity(z2), d2 = velocity_tangent(z2, t2);
      const Mat z3 = Z + 0.5 * h * k2, t3 = *T + 0.5 * h * d2;
      const Mat k3 = velocity(z3), d3 = velocity_tangent(z3, t3);
      const Mat z4 = Z + h * k3, t4 = *T + h * d3;
      const Mat k4 = velocity(z4), d4 = velocity_tangent(z4, t4);
      Z += (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
      *T += (h / 6) * (d1 + 2 * d2 + 2 * d3 + d4);
    } else {
      const Mat k1 = velocity(Z);
      const Mat k2 = velocity(Z + 0.5 * h * k1);
      const Mat k3 = velocity(Z + 0.5 * h * k2);
      const Mat k4 = velocity(Z + h * k3);
      Z += (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
    }
  }
  if (!Z.allFinite()) throw NumericalError("field flow: non-finite state");
}

Mat FieldFlowMap::forward(const Mat& X) const {
  Mat Z = X;
  integrate(Z, nullptr, 1.0);
  return Z;
}

Mat FieldFlowMap::inverse(const Mat& Y) const {
  Mat Z = Y;
  integrate(Z, nullptr, -1.0);
  return Z;
}

void FieldFlowMap::forward_tangent(const Mat& X, const Mat& T, Mat& Y, Mat& U) const {
  Y = X;
  U = T;
  integrate(Y, &U, 1.0);
}

nlohmann::json FieldFlowMap::to_json() const {
  return {{"field", field_->to_json()}, {"scale", scale_}, {"damping", damping_}, {"steps", steps_}};
}

FieldFlowMap FieldFlowMap::from_json(const nlohmann::json& j) {
  check_keys(j, {"field", "scale", "damping", "steps"}, "field flow map");
  return FieldFlowMap(system_from_json(j.at("field")), j.value("scale", 1.0),
                      j.value("damping", 0.0), j.value("steps", 100));
}

FlowTransformedSystem::FlowTransformedSystem(SystemPtr base, FieldFlowMap map)
    : base_(std::move(base)), map_(std::move(map)) {
  require_dim(map_.dim(), base_->dim(), "transformed_flow");
}

Mat FlowTransformedSystem::eval_batch(const Mat& Y) const {
  const Mat X = map_.inverse(Y);
  Mat Yb, U;
  map_.forward_tangent(X, base_->eval_batch(X), Yb, U);
  return U;
}

nlohmann::json FlowTransformedSystem::to_json() const {
  return {{"kind", kind()}, {"dim", dim()}, {"base", base_->to_json()}, {"map", map_.to_json()}};
}

// ---------------------------------------------------------------------------

SystemPtr system_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  auto keys = [&](std::vector<std::string> allowed) {
    allowed.push_back("kind");
    allowed.push_back("dim");
    check_keys(j, allowed, "system '" + kind + "'");
  };
  SystemPtr out;
  if (kind == "linear") {
    keys({"A"});
    out = std::make_shared<LinearSystem>(matrix_from_json(j.at("A")));
  } else if (kind == "rnn") {
    keys({"W"});
    out = std::make_shared<RnnSystem>(matrix_from_json(j.at("W")));
  } else if (kind == "vdp") {
    keys({"mu"});
    out = std::make_shared<VanDerPol>(j.at("mu").get<double>());
  } else if (kind == "hopf") {
    keys({"mu"});
    out = std::make_shared<HopfSystem>(j.at("mu").get<double>());
  } else if (kind == "snic") {
    keys({"mu"});
    out = std::make_shared<SnicSystem>(j.at("mu").get<double>());
  } else if (kind == "bla") {
    keys({"w1", "w2"});
    out = std::make_shared<BlaSystem>(j.at("w1").get<double>(), j.at("w2").get<double>());
  } else if (kind == "mindy") {
    keys({"W", "alpha", "D", "b_slope", "dynamics_class", "synthetic"});
    out = std::make_shared<MindySystem>(matrix_from_json(j.at("W")), vector_from_json(j.at("alpha")),
                                        vector_from_json(j.at("D")), j.value("b_slope", 20.0 / 3.0),
                                        j.value("dynamics_class", std::string()));
  } else if (kind == "composite") {
    keys({"low", "high", "O"});
    out = std::make_shared<CompositeSystem>(system_from_json(j.at("low")),
                                            system_from_json(j.at("high")), matrix_from_json(j.at("O")));
  } else if (kind == "transformed_affine") {
    keys({"base", "H", "b"});
    out = std::make_shared<AffineTransformedSystem>(system_from_json(j.at("base")),
                                                    matrix_from_json(j.at("H")), vector_from_json(j.at("b")));
  } else if (kind == "transformed_diffeo") {
    keys({"base", "map", "steps"});
    out = std::make_shared<DiffeoTransformedSystem>(system_from_json(j.at("base")),
                                                    Diffeomorphism::from_json(j.at("map")),
                                                    j.value("steps", 100));
  } else if (kind == "transformed_flow") {
    keys({"base", "map"});
    out = std::make_shared<FlowTransformedSystem>(system_from_json(j.at("base")),
                                                  FieldFlowMap::from_json(j.at("map")));
  } else {
    throw ConfigError("unknown system kind '" + kind + "'");
  }
  if (j.contains("dim") && j["dim"].get<Index>() != out->dim())
    throw DimensionError("system '" + kind + "': dim field disagrees with parameters");
  return out;
}

// ---------------------------------------------------------------------------
// Generators

Signature signature(const Mat& A, double tol) {
  if (A.rows() != A.cols()) throw DimensionError("signature: matrix must be square");
  Eigen::EigenSolver<Mat> es(A, false);
  if (es.info() != Eigen::Success) throw NumericalError("signature: eigensolver failed");
  Signature s;
  for (Index i = 0; i < A.rows(); ++i) {
    const double re = es.eigenvalues()[i].real();
    if (re > tol)
      ++s.p;
    else if (re < -tol)
      ++s.q;
    else
      ++s.r;
  }
  return s;
}

Signature parse_signature(const std::string& text) {
  Signature s;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> s.p >> c1 >> s.q >> c2 >> s.r) || c1 != ',' || c2 != ',' || s.p < 0 || s.q < 0 ||
      s.r < 0)
    throw ConfigError("signature must look like p,q,r with non-negative integers: " + text);
  return s;
}

Mat random_linear(Index n, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x11u);
  return normal_matrix(rng, n, n, 1.0 / std::sqrt(static_cast<double>(n)));
}

Mat random_orthogonal_seeded(Index n, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x0Fu);
  return random_orthogonal(n, rng);
}

Mat random_general_seeded(Index n, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x6Eu);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Mat H = normal_matrix(rng, n, n, 1.0 / std::sqrt(static_cast<double>(n)));
    Eigen::JacobiSVD<Mat> svd(H);
    const Vec sv = svd.singularValues();
    if (sv(sv.size() - 1) > 0 && sv(0) / sv(sv.size() - 1) < 1e3) return H;
  }
  throw NumericalError("random_general_seeded: could not draw a well-conditioned matrix");
}

Mat linear_with_signature(const Signature& sig, std::uint64_t seed) {
  const Index n = sig.p + sig.q + sig.r;
  if (n < 1) throw ConfigError("signature must describe at least one eigenvalue");
  Rng rng = make_rng(seed, 0x51u);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto positive = [&] {
    double v = 0.0;
    while (v <= 1e-6) v = u01(rng);  // keep real parts clear of the signature tolerance
    return v;
  };
  Mat A0 = Mat::Zero(n, n);
  Index at = 0;
  auto fill = [&](int count, double sign) {
    for (int k = 0; k + 1 < count; k += 2) {
      const double a = sign == 0 ? 0.0 : sign * positive();
      const double b = positive();
      A0(at, at) = a;
      A0(at, at + 1) = -b;
      A0(at + 1, at) = b;
      A0(at + 1, at + 1) = a;
      at += 2;
    }
    if (count % 2 == 1) {
      A0(at, at) = sign == 0 ? 0.0 : sign * positive();
      at += 1;
    }
  };
  fill(sig.p, 1.0);
  fill(sig.q, -1.0);
  fill(sig.r, 0.0);
  const Mat Q = random_orthogonal(n, rng);
  return Q * A0 * Q.transpose();
}

LowRankRnnParts low_rank_rnn(Index n, std::uint64_t seed) {
  if (n < 2) throw ConfigError("low_rank_rnn: n must be >= 2");
  const double g = 0.9, theta0 = 1.5;
  Rng rng = make_rng(seed, 0x22u);
  LowRankRnnParts p;
  p.J = normal_matrix(rng, n, n, g / std::sqrt(static_cast<double>(n)));
  p.m = normal_vector(rng, n);
  // Remove the overlap of m with J m, J^2 m, J^3 m so n^T J^j m = 0 for those j.
  const Index k = std::min<Index>(3, n - 1);
  Mat K(n, k);
  Vec v = p.m;
  for (Index j = 0; j < k; ++j) {
    v = p.J * v;
    K.col(j) = v;
  }
  const Vec u = p.m - K * K.colPivHouseholderQr().solve(p.m);
  p.n_vec = theta0 * u / u.dot(p.m);
  p.W = p.J + p.m * p.n_vec.transpose();
  return p;
}

std::shared_ptr<CompositeSystem> composite_and_mix(SystemPtr low, SystemPtr high,
                                                   std::uint64_t seed) {
  const Index n = low->dim() + high->dim();
  return std::make_shared<CompositeSystem>(std::move(low), std::move(high),
                                           random_orthogonal_seeded(n, seed));
}

AttractorSummary classify_attractors(const VectorField& f, int n_traj, double T,
                                     std::uint64_t seed, double init_sd) {
  AttractorSummary s;
  Rng rng = make_rng(seed, 0xA7u);
  FieldFn fn = [&f](const Vec& x) { return f.eval(x); };
  AdaptiveOptions opt;
  opt.rtol = 1e-7;
  opt.atol = 1e-9;
  const int n_out = 200;
  for (int i = 0; i < n_traj; ++i) {
    const Vec x0 = normal_vector(rng, f.dim(), init_sd);
    const Trajectory tr = simulate(fn, x0, T, n_out, opt);
    if (tr.diverged || tr.x.empty()) {
      ++s.diverged;
      continue;
    }
    const Vec& end = tr.x.back();
    s.endpoints.push_back(end);
    if (f.eval(end).norm() < 1e-5) {
      ++s.converged;
    } else {
      ++s.oscillating;
      Vec lo = end, hi = end;
      for (std::size_t t = tr.x.size() * 3 / 4; t < tr.x.size(); ++t) {
        lo = lo.cwiseMin(tr.x[t]);
        hi = hi.cwiseMax(tr.x[t]);
      }
      s.max_amplitude = std::max(s.max_amplitude, (hi - lo).maxCoeff());
    }
  }
  return s;
}

std::shared_ptr<MindySystem> synth_mindy(Index n, std::uint64_t seed,
                                         const std::string& dynamics_class) {
  if (dynamics_class != "multistable" && dynamics_class != "limit_cycle" &&
      dynamics_class != "monostable")
    throw ConfigError("synth_mindy: dynamics_class must be multistable, limit_cycle or monostable");
  if (n < 2) throw ConfigError("synth_mindy: n must be >= 2");
  const double b_slope = 20.0 / 3.0;
  for (int attempt = 0; attempt < 20; ++attempt) {
    Rng rng = make_rng(seed, 0x3000u + static_cast<std::uint64_t>(attempt));
    const Vec alpha = uniform_matrix(rng, n, 1, 1.0, 3.0).col(0);
    const Vec D = uniform_matrix(rng, n, 1, 0.1, 0.5).col(0);
    // Effective Jacobian at the origin, W diag(psi'(0)) - diag(D), is built as a shifted
    // random bulk plus a low-rank outlier that sets the class.
    const Vec slope0 = (b_slope / (alpha.array().square() + 0.25).sqrt()).matrix();
    const double shift = 0.5;
    Mat E = -shift * Mat::Identity(n, n) +
            normal_matrix(rng, n, n, 0.3 / std::sqrt(static_cast<double>(n)));
    const Mat Q = random_orthogonal(n, rng);
    const Vec u = Q.col(0), v = Q.col(1);
    if (dynamics_class == "multistable") {
      E += (shift + 0.5) * u * u.transpose();
    } else if (dynamics_class == "limit_cycle") {
      const double sigma = 0.3, omega = 1.0;
      E += (shift + sigma) * (u * u.transpose() + v * v.transpose()) +
           omega * (v * u.transpose() - u * v.transpose());
    }
    Mat W = (Mat(D.asDiagonal()) + E) * slope0.cwiseInverse().asDiagonal();
    auto sys = std::make_shared<MindySystem>(W, alpha, D, b_slope, dynamics_class);

    const AttractorSummary s = classify_attractors(*sys, 20, 400.0, seed + 977u * attempt, 1.0);
    if (s.diverged > 0) continue;
    bool ok = false;
    if (dynamics_class == "monostable") {
      ok = s.converged == 20;
      for (const Vec& e : s.endpoints) ok = ok && (e - s.endpoints[0]).norm() < 1e-3;
    } else if (dynamics_class == "multistable") {
      ok = s.converged == 20;
      bool distinct = false;
      for (const Vec& e : s.endpoints) distinct = distinct || (e - s.endpoints[0]).norm() > 1e-2;
      ok = ok && distinct;
    } else {
      ok = s.oscillating == 20 && s.max_amplitude > 0.05;
    }
    if (ok) return sys;
  }
  throw NumericalError("synth_mindy: could not produce a '" + dynamics_class +
                       "' model in 20 attempts");
}

}  // namespace dform
