#include <doctest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include "dform/diffeomorphism.hpp"

using namespace dform;

namespace {

Diffeomorphism random_diffeo(Index n, std::uint64_t seed, double out_scale = 0.3,
                             double damping = 0.0) {
  Rng rng = make_rng(seed);
  Diffeomorphism phi = Diffeomorphism::identity(n, rng);
  DeformationField v = phi.field();
  v.params().W3 = normal_matrix(rng, n, v.hidden(), out_scale / std::sqrt(double(v.hidden())));
  v.params().b3 = normal_vector(rng, n, 0.1);
  v.set_damping(damping);
  phi.set_field(v);
  phi.set_affine(Mat::Identity(n, n) + normal_matrix(rng, n, n, 0.3), normal_vector(rng, n, 0.5));
  return phi;
}

double rel_err(const Mat& a, const Mat& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

}  // namespace

TEST_CASE("identity map leaves points unchanged") {
  Rng rng = make_rng(1);
  Diffeomorphism phi = Diffeomorphism::identity(3, rng);
  Vec x(3);
  x << 0.3, -1.2, 2.5;
  CHECK((phi.forward(x) - x).norm() < 1e-12);
  CHECK((phi.inverse(x) - x).norm() < 1e-12);
  auto [y, w] = phi.inverse_jvp(x, Vec::Ones(3));
  CHECK((y - x).norm() < 1e-12);
  CHECK((w - Vec::Ones(3)).norm() < 1e-12);
}

TEST_CASE("affine-only forward, inverse and jvp") {
  Vec b(2);
  b << 1, 0;
  Diffeomorphism phi = Diffeomorphism::affine_only(2 * Mat::Identity(2, 2), b);
  Vec x(2);
  x << 1, 1;
  Vec expect(2);
  expect << 3, 2;
  CHECK((phi.forward(x) - expect).norm() == doctest::Approx(0.0));
  CHECK((phi.inverse(expect) - x).norm() < 1e-15);
  Mat H(2, 2);
  H << 1, 2, -0.5, 3;
  phi.set_affine(H, b);
  Vec v(2);
  v << 0.7, -0.2;
  CHECK((phi.jvp(x, v).second - H * v).norm() < 1e-14);
  CHECK((phi.inverse_jvp(x, v).second - H.partialPivLu().solve(v)).norm() < 1e-14);
}

TEST_CASE("linear deformation field integrates to the matrix exponential") {
  // Hidden units stay in the linear ELU regime thanks to a large bias, so v(z) = M z exactly.
  const Index n = 3, h = 20;
  const double c = 50.0;
  Rng rng = make_rng(2);
  Mat M = normal_matrix(rng, n, n, 0.4);
  DeformationField v(n, h);
  v.params().W1.topRows(n) = Mat::Identity(n, n);
  v.params().b1.setConstant(c);
  v.params().W2 = Mat::Identity(h, h);
  v.params().W3.leftCols(n) = M;
  v.params().b3 = -M * Vec::Constant(n, c);
  Diffeomorphism phi(n, true, true);
  phi.set_field(v);
  Mat H = Mat::Identity(n, n) + normal_matrix(rng, n, n, 0.2);
  Vec b = normal_vector(rng, n, 0.3);
  phi.set_affine(H, b);
  Vec x = normal_vector(rng, n);
  const Vec expect = M.exp() * (H * x + b);

  FlowConfig cfg;
  cfg.solver = Solver::Dopri5;
  phi.set_config(cfg);
  CHECK(rel_err(phi.forward(x), expect) < 1e-5);
  cfg.solver = Solver::FixedRk4;
  phi.set_config(cfg);
  CHECK(rel_err(phi.forward(x), expect) < 1e-6);
  CHECK(rel_err(phi.jacobian(x), M.exp() * H) < 1e-6);
}

TEST_CASE("round trip, jvp against finite differences, inverse chain rule") {
  for (Index n : {2, 3, 5}) {
    Diffeomorphism phi = random_diffeo(n, 10 + n);
    Rng rng = make_rng(99, n);
    for (int k = 0; k < 5; ++k) {
      Vec x = normal_vector(rng, n);
      Vec v = normal_vector(rng, n);
      CHECK((phi.inverse(phi.forward(x)) - x).lpNorm<Eigen::Infinity>() < 1e-4);

      const double eps = 1e-5;
      const Vec fd = (phi.forward(Vec(x + eps * v)) - phi.forward(Vec(x - eps * v))) / (2 * eps);
      auto [y, u] = phi.jvp(x, v);
      CHECK(rel_err(u, fd) < 1e-5);

      auto [xb, vb] = phi.inverse_jvp(y, u);
      CHECK(rel_err(vb, v) < 1e-4);

      const Vec fdi = (phi.inverse(Vec(y + eps * v)) - phi.inverse(Vec(y - eps * v))) / (2 * eps);
      CHECK(rel_err(phi.inverse_jvp(y, v).second, fdi) < 1e-5);
    }
  }
}

TEST_CASE("jvp is linear in the tangent") {
  Diffeomorphism phi = random_diffeo(4, 7, 0.5, 3.0);
  Rng rng = make_rng(5);
  Vec x = normal_vector(rng, 4), v = normal_vector(rng, 4), w = normal_vector(rng, 4);
  const double a = 0.7, c = -1.9;
  const Vec lhs = phi.jvp(x, a * v + c * w).second;
  const Vec rhs = a * phi.jvp(x, v).second + c * phi.jvp(x, w).second;
  CHECK((lhs - rhs).norm() < 1e-10 * std::max(1.0, lhs.norm()));
}

TEST_CASE("dopri5 evaluation agrees with fixed-step evaluation") {
  Diffeomorphism phi = random_diffeo(3, 8);
  Rng rng = make_rng(6);
  Mat X = normal_matrix(rng, 3, 10);
  const Mat a = phi.forward(X, Solver::FixedRk4);
  const Mat b = phi.forward(X, Solver::Dopri5);
  CHECK(rel_err(a, b) < 1e-4);
  CHECK((phi.inverse(b, Solver::Dopri5) - X).lpNorm<Eigen::Infinity>() < 1e-4);
}

TEST_CASE("parameter count formula") {
  for (Index n : {1, 2, 3, 5, 9}) CHECK(full_parameter_count(n) == n * n + 42 * n + 440);
  for (Index n : {10, 16, 24, 32}) CHECK(full_parameter_count(n) == 9 * n * n + 6 * n);
  Rng rng = make_rng(0);
  CHECK(Diffeomorphism::identity(7, rng).parameter_count() == full_parameter_count(7));
  CHECK(Diffeomorphism::identity(12, rng).parameter_count() == full_parameter_count(12));
}

TEST_CASE("flow-only map preserves orientation") {
  Diffeomorphism phi = random_flow_diffeo(2, 2.5, 2.0, 3);
  Rng rng = make_rng(11);
  const double eps = 1e-5;
  int positive = 0;
  for (int k = 0; k < 1000; ++k) {
    Vec x = uniform_matrix(rng, 2, 1, -4, 4).col(0);
    Mat J(2, 2);
    for (int i = 0; i < 2; ++i) {
      Vec e = Vec::Zero(2);
      e[i] = eps;
      J.col(i) = (phi.forward(Vec(x + e)) - phi.forward(Vec(x - e))) / (2 * eps);
    }
    positive += J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0) > 0;
  }
  CHECK(positive == 1000);
}

TEST_CASE("random flow diffeomorphism: damping and round trip") {
  Diffeomorphism phi = random_flow_diffeo(3, 2.5, 5.0, 4);
  DeformationField undamped = phi.field();
  undamped.set_damping(0.0);
  Vec x = Vec::Zero(3);
  x[0] = 50.0;
  CHECK(phi.field().eval(x).norm() < 1e-4 * undamped.eval(x).norm());
  Rng rng = make_rng(12);
  for (int k = 0; k < 5; ++k) {
    Vec z = normal_vector(rng, 3, 2.0);
    CHECK((phi.forward(phi.inverse(z)) - z).norm() < 1e-4);
  }
  Diffeomorphism tiny = random_flow_diffeo(3, 0.0, 5.0, 4);
  CHECK((tiny.forward(x) - x).norm() == 0.0);
}

TEST_CASE("model JSON round trip is bit-identical") {
  Diffeomorphism phi = random_diffeo(3, 21, 0.4, 2.5);
  const Diffeomorphism back = Diffeomorphism::from_json(nlohmann::json::parse(phi.to_json().dump()));
  Rng rng = make_rng(13);
  Mat X = normal_matrix(rng, 3, 8);
  CHECK((phi.forward(X, Solver::FixedRk4) - back.forward(X, Solver::FixedRk4)).norm() == 0.0);
  CHECK((phi.pack() - back.pack()).norm() == 0.0);
}

TEST_CASE("singular H is rejected on inversion") {
  Mat H = Mat::Zero(2, 2);
  H(0, 0) = 1.0;
  Diffeomorphism phi = Diffeomorphism::affine_only(H, Vec::Zero(2));
  CHECK(phi.singular());
  CHECK_THROWS_AS(phi.inverse(Vec(Vec::Ones(2))), SingularMatrixError);
}

// Reverse mode through the taped maps against central differences over every parameter.
namespace {

double taped_objective(const Diffeomorphism& phi, const Mat& X, const Mat& T, const Mat& C,
                       const Mat& D, bool inverse, bool use_flow) {
  MapTape tape;
  Mat Y, U;
  if (inverse)
    phi.inverse_taped(X, &T, Y, &U, tape, use_flow);
  else
    phi.forward_taped(X, &T, Y, &U, tape, use_flow);
  return (C.cwiseProduct(Y)).sum() + (D.cwiseProduct(U)).sum();
}

void check_taped_gradient(Diffeomorphism phi, bool inverse, bool use_flow) {
  const Index n = phi.dim();
  Rng rng = make_rng(31, n);
  const Mat X = normal_matrix(rng, n, 4), T = normal_matrix(rng, n, 4);
  const Mat C = normal_matrix(rng, n, 4), D = normal_matrix(rng, n, 4);

  MapTape tape;
  Mat Y, U, Xbar, Tbar;
  DiffeoGrad g = phi.zero_grad();
  if (inverse) {
    phi.inverse_taped(X, &T, Y, &U, tape, use_flow);
    phi.inverse_backprop(tape, C, &D, g, Xbar, &Tbar);
  } else {
    phi.forward_taped(X, &T, Y, &U, tape, use_flow);
    phi.forward_backprop(tape, C, &D, g, Xbar, &Tbar);
  }
  const Vec grad = phi.pack_grad(g);
  const Vec p0 = phi.pack();
  const double eps = 1e-6;
  double worst = 0.0;
  for (Index i = 0; i < p0.size(); ++i) {
    Vec p = p0;
    p[i] += eps;
    phi.unpack(p);
    const double fp = taped_objective(phi, X, T, C, D, inverse, use_flow);
    p[i] -= 2 * eps;
    phi.unpack(p);
    const double fm = taped_objective(phi, X, T, C, D, inverse, use_flow);
    const double fd = (fp - fm) / (2 * eps);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-3}));
  }
  phi.unpack(p0);
  CHECK(worst < 1e-5);

  // Input cotangents.
  double worst_in = 0.0;
  for (Index i = 0; i < X.size(); ++i) {
    Mat Xp = X, Xm = X;
    Xp.data()[i] += eps;
    Xm.data()[i] -= eps;
    const double fd = (taped_objective(phi, Xp, T, C, D, inverse, use_flow) -
                       taped_objective(phi, Xm, T, C, D, inverse, use_flow)) / (2 * eps);
    worst_in = std::max(worst_in, std::abs(fd - Xbar.data()[i]) / std::max(std::abs(fd), 1e-3));
    Mat Tp = T, Tm = T;
    Tp.data()[i] += eps;
    Tm.data()[i] -= eps;
    const double fdt = (taped_objective(phi, X, Tp, C, D, inverse, use_flow) -
                        taped_objective(phi, X, Tm, C, D, inverse, use_flow)) / (2 * eps);
    worst_in = std::max(worst_in, std::abs(fdt - Tbar.data()[i]) / std::max(std::abs(fdt), 1e-3));
  }
  CHECK(worst_in < 1e-5);
}

}  // namespace

TEST_CASE("taped reverse mode matches finite differences") {
  for (Index n : {2, 3}) {
    for (bool inverse : {false, true}) {
      CAPTURE(n);
      CAPTURE(inverse);
      check_taped_gradient(random_diffeo(n, 40 + n, 0.5), inverse, true);
      check_taped_gradient(random_diffeo(n, 50 + n, 0.5, 2.0), inverse, true);
      check_taped_gradient(random_diffeo(n, 60 + n, 0.5), inverse, false);
    }
  }
}
