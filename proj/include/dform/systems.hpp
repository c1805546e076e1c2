#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dform/diffeomorphism.hpp"

namespace dform {

/// Autonomous vector field f: R^n -> R^n. Batched routines take points as columns.
class VectorField {
 public:
  virtual ~VectorField() = default;
  virtual std::string kind() const = 0;
  virtual Index dim() const = 0;
  virtual Mat eval_batch(const Mat& X) const = 0;
  virtual nlohmann::json to_json() const = 0;

  Vec eval(const Vec& x) const;

  /// Df(x). Default: central differences with step 1e-6 * max(1, |x|).
  virtual Mat jacobian(const Vec& x) const;
  /// Columns Df(x_j) t_j.
  virtual Mat jvp_batch(const Mat& X, const Mat& T) const;
  /// Columns Df(x_j)^T gbar_j.
  virtual Mat vjp_batch(const Mat& X, const Mat& Gbar) const;
};

using SystemPtr = std::shared_ptr<const VectorField>;

class LinearSystem : public VectorField {
 public:
  explicit LinearSystem(Mat A);
  std::string kind() const override { return "linear"; }
  Index dim() const override { return A_.rows(); }
  Mat eval_batch(const Mat& X) const override { return A_ * X; }
  Mat jacobian(const Vec&) const override { return A_; }
  Mat jvp_batch(const Mat&, const Mat& T) const override { return A_ * T; }
  Mat vjp_batch(const Mat&, const Mat& G) const override { return A_.transpose() * G; }
  nlohmann::json to_json() const override;
  const Mat& A() const { return A_; }

 private:
  Mat A_;
};

/// x' = -x + W tanh(x), W = J + m n^T.
class RnnSystem : public VectorField {
 public:
  explicit RnnSystem(Mat W);
  std::string kind() const override { return "rnn"; }
  Index dim() const override { return W_.rows(); }
  Mat eval_batch(const Mat& X) const override;
  Mat jacobian(const Vec& x) const override;
  Mat jvp_batch(const Mat& X, const Mat& T) const override;
  Mat vjp_batch(const Mat& X, const Mat& G) const override;
  nlohmann::json to_json() const override;
  const Mat& W() const { return W_; }

 private:
  Mat W_;
};

class VanDerPol : public VectorField {
 public:
  explicit VanDerPol(double mu) : mu_(mu) {}
  std::string kind() const override { return "vdp"; }
  Index dim() const override { return 2; }
  Mat eval_batch(const Mat& X) const override;
  Mat jacobian(const Vec& x) const override;
  Mat jvp_batch(const Mat& X, const Mat& T) const override;
  Mat vjp_batch(const Mat& X, const Mat& G) const override;
  nlohmann::json to_json() const override;
  double mu() const { return mu_; }

 private:
  double mu_;
};

/// Supercritical Hopf normal form; limit cycle r = sqrt(mu) for mu > 0.
class HopfSystem : public VectorField {
 public:
  explicit HopfSystem(double mu) : mu_(mu) {}
  std::string kind() const override { return "hopf"; }
  Index dim() const override { return 2; }
  Mat eval_batch(const Mat& X) const override;
  Mat jacobian(const Vec& x) const override;
  Mat jvp_batch(const Mat& X, const Mat& T) const override;
  Mat vjp_batch(const Mat& X, const Mat& G) const override;
  nlohmann::json to_json() const override;
  double mu() const { return mu_; }

 private:
  double mu_;
};

/// Reflection-symmetric SNIC template, r' = r(1 - r^2), theta' = mu - |sin theta|, in
/// Euclidean coordinates. Not differentiable at the origin; jacobian() there returns
/// the smooth part [[1, -mu], [mu, 1]].
class SnicSystem : public VectorField {
 public:
  explicit SnicSystem(double mu) : mu_(mu) {}
  std::string kind() const override { return "snic"; }
  Index dim() const override { return 2; }
  Mat eval_batch(const Mat& X) const override;
  Mat jacobian(const Vec& x) const override;
  Mat jvp_batch(const Mat& X, const Mat& T) const override;
  Mat vjp_batch(const Mat& X, const Mat& G) const override;
  nlohmann::json to_json() const override;
  double mu() const { return mu_; }

  /// Stable points (+-sqrt(1-mu^2), +-mu) and saddles (-+sqrt(1-mu^2), +-mu), as columns.
  Mat stable_points() const;
  Mat saddle_points() const;

 private:
  double mu_;
};

/// Bounded line attractor x' = -x + ReLU(W x + b) with W perturbed by w1 V1 + w2 V2.
class BlaSystem : public VectorField {
 public:
  BlaSystem(double w1, double w2);
  std::string kind() const override { return "bla"; }
  Index dim() const override { return 2; }
  Mat eval_batch(const Mat& X) const override;
  Mat jacobian(const Vec& x) const override;
  Mat vjp_batch(const Mat& X, const Mat& G) const override;
  Mat jvp_batch(const Mat& X, const Mat& T) const override;
  nlohmann::json to_json() const override;
  const Mat& W() const { return W_; }
  const Vec& b() const { return b_; }
  double w1() const { return w1_; }
  double w2() const { return w2_; }

  /// Fixed points found by solving every ReLU activation pattern exactly.
  /// For (w1, w2) = (0, 0) the attractor is a segment; its endpoints are returned instead.
  std::vector<Vec> analytic_fixed_points() const;
  /// Endpoints of the line attractor for the unperturbed system.
  std::pair<Vec, Vec> attractor_segment() const;

 private:
  double w1_, w2_;
  Mat W_;
  Vec b_;
};

/// x' = W psi_alpha(x) - D * x, psi(x) = sqrt(a^2 + (bx + .5)^2) - sqrt(a^2 + (bx - .5)^2).
class MindySystem : public VectorField {
 public:
  MindySystem(Mat W, Vec alpha, Vec D, double b_slope, std::string dynamics_class = "");
  std::string kind() const override { return "mindy"; }
  Index dim() const override { return W_.rows(); }
  Mat eval_batch(const Mat& X) const override;
  Mat jacobian(const Vec& x) const override;
  Mat jvp_batch(const Mat& X, const Mat& T) const override;
  Mat vjp_batch(const Mat& X, const Mat& G) const override;
  nlohmann::json to_json() const override;
  Mat psi(const Mat& X) const;
  Mat psi_prime(const Mat& X) const;
  const std::string& dynamics_class() const { return class_; }
  const Mat& W() const { return W_; }
  const Vec& alpha() const { return alpha_; }
  const Vec& D() const { return D_; }

 private:
  Mat W_;
  Vec alpha_, D_;
  double b_;
  std::string class_;
};

/// f(x) = O [low(z_1..m); high(z_m+1..n)], z = O^T x.
class CompositeSystem : public VectorField {
 public:
  CompositeSystem(SystemPtr low, SystemPtr high, Mat O);
  std::string kind() const override { return "composite"; }
  Index dim() const override { return O_.rows(); }
  Mat eval_batch(const Mat& X) const override;
  Mat jacobian(const Vec& x) const override;
  Mat jvp_batch(const Mat& X, const Mat& T) const override;
  Mat vjp_batch(const Mat& X, const Mat& G) const override;
  nlohmann::json to_json() const override;
  const Mat& O() const { return O_; }
  const SystemPtr& low() const { return low_; }
  const SystemPtr& high() const { return high_; }

 private:
  SystemPtr low_, high_;
  Mat O_;
};

/// Pushforward by an affine map: g(y) = H f(H^-1 (y - b)).
class AffineTransformedSystem : public VectorField {
 public:
  AffineTransformedSystem(SystemPtr base, Mat H, Vec b);
  std::string kind() const override { return "transformed_affine"; }
  Index dim() const override { return H_.rows(); }
  Mat eval_batch(const Mat& Y) const override;
  Mat jacobian(const Vec& y) const override;
  Mat vjp_batch(const Mat& Y, const Mat& G) const override;
  nlohmann::json to_json() const override;
  const Mat& H() const { return H_; }
  const Vec& b() const { return b_; }
  const SystemPtr& base() const { return base_; }

 private:
  SystemPtr base_;
  Mat H_;
  Vec b_;
  Eigen::PartialPivLU<Mat> lu_;
};

/// Pushforward by a Diffeomorphism phi0: g(y) = Dphi0|_x f(x), x = phi0^-1(y).
/// Evaluated with fixed-step RK4 (`steps` steps) so the VJP is exact for the discretized map.
class DiffeoTransformedSystem : public VectorField {
 public:
  DiffeoTransformedSystem(SystemPtr base, Diffeomorphism phi0, int steps = 100);
  std::string kind() const override { return "transformed_diffeo"; }
  Index dim() const override { return phi_.dim(); }
  Mat eval_batch(const Mat& Y) const override;
  Mat jacobian(const Vec& y) const override;
  Mat vjp_batch(const Mat& Y, const Mat& G) const override;
  nlohmann::json to_json() const override;
  const Diffeomorphism& map() const { return phi_; }
  const SystemPtr& base() const { return base_; }

 private:
  SystemPtr base_;
  Diffeomorphism phi_;
  int steps_;
};

/// Ground-truth map given by the time-1 flow of scale * exp(-|x|/damping) * field(x)
/// (damping <= 0 disables the factor).
class FieldFlowMap {
 public:
  FieldFlowMap(SystemPtr field, double scale, double damping, int steps = 100);
  Index dim() const { return field_->dim(); }
  Mat velocity(const Mat& X) const;
  Mat velocity_tangent(const Mat& X, const Mat& T) const;
  Mat forward(const Mat& X) const;
  Mat inverse(const Mat& Y) const;
  /// Returns phi(X) and Dphi(X) T.
  void forward_tangent(const Mat& X, const Mat& T, Mat& Y, Mat& U) const;
  nlohmann::json to_json() const;
  static FieldFlowMap from_json(const nlohmann::json& j);
  const SystemPtr& field() const { return field_; }
  double scale() const { return scale_; }
  double damping() const { return damping_; }
  int steps() const { return steps_; }

 private:
  void integrate(Mat& Z, Mat* T, double span) const;
  SystemPtr field_;
  double scale_, damping_;
  int steps_;
};

/// Pushforward by a FieldFlowMap. Jacobian and VJP use central differences of eval.
class FlowTransformedSystem : public VectorField {
 public:
  FlowTransformedSystem(SystemPtr base, FieldFlowMap map);
  std::string kind() const override { return "transformed_flow"; }
  Index dim() const override { return map_.dim(); }
  Mat eval_batch(const Mat& Y) const override;
  nlohmann::json to_json() const override;
  const FieldFlowMap& map() const { return map_; }
  const SystemPtr& base() const { return base_; }

 private:
  SystemPtr base_;
  FieldFlowMap map_;
};

SystemPtr system_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Generators

struct Signature {
  int p = 0, q = 0, r = 0;
  bool operator==(const Signature& o) const { return p == o.p && q == o.q && r == o.r; }
};

Signature signature(const Mat& A, double tol = 1e-9);
Signature parse_signature(const std::string& s);

/// Entries N(0, 1/n).
Mat random_linear(Index n, std::uint64_t seed);
/// A = Q A0 Q^T with A0 block diagonal (real parts and imaginary parts |.| ~ U[0, 1]).
Mat linear_with_signature(const Signature& sig, std::uint64_t seed);
/// Random orthogonal matrix from the QR factorization of a N(0, 1/n) matrix.
Mat random_orthogonal_seeded(Index n, std::uint64_t seed);
/// Random (generally non-orthogonal) invertible matrix with N(0, 1/n) entries.
Mat random_general_seeded(Index n, std::uint64_t seed);

struct LowRankRnnParts {
  Mat J;
  Vec m, n_vec;
  Mat W;
};
/// J ~ N(0, g^2/n) with g = 0.9, m ~ N(0, I), n_vec with n^T m = 1.5 and n^T J^j m = 0 (j = 1..3).
LowRankRnnParts low_rank_rnn(Index n, std::uint64_t seed);

std::shared_ptr<CompositeSystem> composite_and_mix(SystemPtr low, SystemPtr high,
                                                   std::uint64_t seed);

/// Synthetic MINDy-form model whose class (multistable, limit_cycle, monostable) is
/// confirmed by simulation. Throws after 20 failed attempts.
std::shared_ptr<MindySystem> synth_mindy(Index n, std::uint64_t seed,
                                         const std::string& dynamics_class);

/// Classification of long-run behavior from forward simulation.
struct AttractorSummary {
  int converged = 0;      // trajectories whose speed fell below tolerance
  int oscillating = 0;    // trajectories that kept moving
  int diverged = 0;
  std::vector<Vec> endpoints;
  double max_amplitude = 0.0;  // spread of late-time states of oscillating runs
};
AttractorSummary classify_attractors(const VectorField& f, int n_traj, double T,
                                     std::uint64_t seed, double init_sd = 1.0);

}  // namespace dform
