#pragma once

#include <json.hpp>

#include "dform/common.hpp"

namespace dform {

/// Weights of the two-hidden-layer perceptron n -> h -> h -> n.
struct MlpParams {
  Mat W1, W2, W3;
  Vec b1, b2, b3;

  static MlpParams zeros(Index n, Index h);
  Index count() const;
  void set_zero();
  MlpParams& operator+=(const MlpParams& o);
  MlpParams& operator*=(double s);
  double squared_norm() const;
};

/// Time-invariant deformation field v(z) = s(z) * MLP(z), ELU activations (alpha = 1).
/// s(z) = exp(-|z|/c) when a damping scale c > 0 is set, otherwise 1.
///
/// Batched routines take points as columns (n x B).
class DeformationField {
 public:
  DeformationField() = default;
  DeformationField(Index n, Index hidden);

  /// Hidden width used for an n-dimensional model: max(2n, 20).
  static Index default_hidden(Index n);

  /// Hidden layers drawn U(+-1/sqrt(fan_in)) (weights and biases), output layer zero,
  /// so that the field starts identically zero.
  static DeformationField identity_init(Index n, Rng& rng, Index hidden = -1);

  Index dim() const { return n_; }
  Index hidden() const { return h_; }
  double damping() const { return damping_; }
  void set_damping(double c) { damping_ = c; }

  const MlpParams& params() const { return p_; }
  MlpParams& params() { return p_; }

  Mat eval(const Mat& Z) const;
  Vec eval(const Vec& z) const;

  /// V = v(Z) and dV = Dv(Z) T column by column.
  void eval_tangent(const Mat& Z, const Mat& T, Mat& V, Mat& dV) const;

  /// Dense Jacobian of v at a single point.
  Mat jacobian(const Vec& z) const;

  /// Reverse mode through eval (T == nullptr) or eval_tangent.
  /// Accumulates parameter gradients into `grad` and writes input cotangents.
  void backprop(const Mat& Z, const Mat* T, const Mat& Vbar, const Mat* dVbar, MlpParams& grad,
                Mat& Zbar, Mat* Tbar) const;

  nlohmann::json to_json() const;
  static DeformationField from_json(const nlohmann::json& j);

 private:
  Index n_ = 0;
  Index h_ = 0;
  double damping_ = 0.0;
  MlpParams p_;
};

}  // namespace dform
