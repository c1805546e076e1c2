#pragma once

#include <utility>
#include <vector>

#include "dform/deformation_field.hpp"

namespace dform {

enum class Solver { FixedRk4, Dopri5 };

struct FlowConfig {
  Solver solver = Solver::FixedRk4;
  int steps = 20;
  double rtol = 1e-5;
  double atol = 1e-8;

  nlohmann::json to_json() const;
  static FlowConfig from_json(const nlohmann::json& j);
};

const char* solver_name(Solver s);
Solver solver_from_name(const std::string& s);

/// Gradient container matching the trainable parameters of a Diffeomorphism.
struct DiffeoGrad {
  Mat H;
  Vec b;
  MlpParams field;
  DiffeoGrad& operator+=(const DiffeoGrad& o);
  DiffeoGrad& operator*=(double s);
};

/// Stage inputs of every RK4 step, kept for reverse mode.
struct FlowTape {
  double h = 0.0;
  bool tangent = false;
  std::vector<Mat> Z, T;  // 4 entries per step
};

struct MapTape {
  bool tangent = false;
  bool used_flow = false;
  Mat X, T;  // forward: inputs; inverse: outputs (needed for the H adjoint)
  FlowTape flow;
};

/// phi = flow_1 o affine, with affine x -> Hx + b and flow_1 the time-1 map of a
/// DeformationField. Either part may be absent. Batched routines take points as columns.
class Diffeomorphism {
 public:
  Diffeomorphism() = default;
  Diffeomorphism(Index n, bool has_affine, bool has_flow, Index hidden = -1);

  /// H = I, b = 0 and an identity-initialized deformation field.
  static Diffeomorphism identity(Index n, Rng& rng, bool has_affine = true, bool has_flow = true);
  static Diffeomorphism affine_only(const Mat& H, const Vec& b);

  Index dim() const { return n_; }
  bool has_affine() const { return has_affine_; }
  bool has_flow() const { return has_flow_; }

  const Mat& H() const { return H_; }
  const Vec& b() const { return b_; }
  void set_affine(const Mat& H, const Vec& b);
  const DeformationField& field() const { return field_; }
  void set_field(const DeformationField& v);
  const FlowConfig& config() const { return config_; }
  void set_config(const FlowConfig& c) { config_ = c; }

  // Single-point API using config().solver.
  Vec forward(const Vec& x) const;
  Vec inverse(const Vec& y) const;
  std::pair<Vec, Vec> jvp(const Vec& x, const Vec& v) const;
  std::pair<Vec, Vec> inverse_jvp(const Vec& y, const Vec& w) const;
  Mat jacobian(const Vec& x) const;
  Mat inverse_jacobian(const Vec& y) const;

  // Batched evaluation with an explicit solver.
  Mat forward(const Mat& X, Solver s) const;
  Mat inverse(const Mat& Y, Solver s) const;
  void forward_tangent(const Mat& X, const Mat& T, Mat& Y, Mat& U, Solver s) const;
  void inverse_tangent(const Mat& Y, const Mat& W, Mat& X, Mat& U, Solver s) const;

  // Training path: fixed-step RK4 with a tape for exact reverse mode. When use_flow is
  // false the flow is skipped (affine-only pretraining of a full model).
  void forward_taped(const Mat& X, const Mat* T, Mat& Y, Mat* U, MapTape& tape,
                     bool use_flow = true) const;
  void inverse_taped(const Mat& Y, const Mat* W, Mat& X, Mat* U, MapTape& tape,
                     bool use_flow = true) const;
  void forward_backprop(const MapTape& tape, const Mat& Ybar, const Mat* Ubar, DiffeoGrad& g,
                        Mat& Xbar, Mat* Tbar) const;
  void inverse_backprop(const MapTape& tape, const Mat& Xbar, const Mat* Ubar, DiffeoGrad& g,
                        Mat& Ybar, Mat* Wbar) const;

  DiffeoGrad zero_grad() const;

  /// Trainable parameters flattened as [H (column-major), b, W1, b1, W2, b2, W3, b3],
  /// omitting absent parts. affine_only restricts to [H, b].
  Index parameter_count(bool affine_only = false) const;
  Vec pack(bool affine_only = false) const;
  void unpack(const Vec& p, bool affine_only = false);
  Vec pack_grad(const DiffeoGrad& g, bool affine_only = false) const;

  /// Reciprocal condition estimate of H from the cached LU factorization.
  double rcond() const { return rcond_; }
  bool singular() const { return singular_; }

  nlohmann::json to_json() const;
  static Diffeomorphism from_json(const nlohmann::json& j);

 private:
  void refresh();
  void require_invertible() const;
  Mat apply_flow(const Mat& Z, double span, Solver s) const;
  void apply_flow_tangent(Mat& Z, Mat& T, double span, Solver s) const;

  Index n_ = 0;
  bool has_affine_ = false;
  bool has_flow_ = false;
  Mat H_;
  Vec b_;
  DeformationField field_;
  FlowConfig config_;
  Eigen::PartialPivLU<Mat> lu_;
  double rcond_ = 1.0;
  bool singular_ = false;
};

/// Flow-only map whose field has 10 hidden units per layer, zero biases and weights
/// U(+-weight_scale/sqrt(fan_in)); the field is damped by exp(-|x|/damping_scale).
Diffeomorphism random_flow_diffeo(Index n, double weight_scale, double damping_scale,
                                  std::uint64_t seed);

/// Parameter count of a full model with the default hidden width.
Index full_parameter_count(Index n);

// RK4 on the field (and its tangent when T != nullptr), recording stage inputs if tape != nullptr.
void rk4_integrate(const DeformationField& v, Mat& Z, Mat* T, double span, int steps,
                   FlowTape* tape);
void rk4_backprop(const DeformationField& v, const FlowTape& tape, Mat& Zbar, Mat* Tbar,
                  MlpParams& grad);

}  // namespace dform
