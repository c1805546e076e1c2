#pragma once

#include "dform/diffeomorphism.hpp"
#include "dform/systems.hpp"

namespace dform {

/// Floor used when normalizing field vectors to unit length.
inline constexpr double kEpsNorm = 1e-8;

struct LossWeights {
  double l1 = 1.0, l2 = 1.0, l3 = 0.0, l4 = 0.0;
  double reg_v = 1e-3, reg_orth = 1e-3;
  bool warp_time = true;  // compare directions only

  void validate() const;
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
};

/// Zero padding P (m -> n) and truncation T (n -> m) between a template space and a full space.
struct DimensionAdapter {
  Index n = 0, m = 0;
  DimensionAdapter() = default;
  DimensionAdapter(Index n_full, Index m_template);
  bool trivial() const { return n == m; }
  Mat pad(const Mat& Y) const;
  Mat truncate(const Mat& X) const;
};

/// Terms that were not computed (zero weight) are NaN; total only sums computed terms.
struct LossBreakdown {
  double l1 = 0, l2 = 0, l3 = 0, l4 = 0, reg_v = 0, reg_orth = 0, total = 0;
  int degenerate = 0;  // point pairs with both vectors below kEpsNorm
};

double master_loss(const LossWeights& w, const LossBreakdown& b);

/// Mean over columns of (1/k) |a^ - b^|^2 (or |a - b|^2 without warp_time).
struct DirectionLoss {
  double value = 0.0;
  int degenerate = 0;
  Mat Abar, Bbar;  // d value / dA, dB (only when requested)
};
DirectionLoss direction_loss(const Mat& A, const Mat& B, double k, bool warp_time,
                             bool need_grad);

/// Guarded cosine 1 - |a^ - b^|^2 / 2, equal to 1 when both vectors vanish.
double guarded_cosine(const Vec& a, const Vec& b);

/// f lives in the full space (dim n), g in the template space (dim m <= n), phi on R^n.
/// xs are samples of f's space (n x B), ys of g's space (m x B), reg_batch n x B.
struct LossProblem {
  const VectorField* f = nullptr;
  const VectorField* g = nullptr;
  DimensionAdapter adapter;
  LossWeights weights;
  LossProblem(const VectorField& f_, const VectorField& g_, const LossWeights& w);
};

struct LossBatches {
  Mat xs, ys, reg;
};

/// Loss and (optionally) its exact gradient through the fixed-step RK4 discretization.
/// use_flow = false evaluates phi without its flow part (affine pretraining).
LossBreakdown loss_and_gradient(const LossProblem& p, const Diffeomorphism& phi,
                                const LossBatches& b, bool use_flow, DiffeoGrad* grad);

/// Same terms evaluated with the chosen solver, no gradients.
LossBreakdown evaluate_losses(const LossProblem& p, const Diffeomorphism& phi,
                              const LossBatches& b, Solver s);

/// (reg_v, reg_orth); reg_v is 0 when the flow is absent or unused.
std::pair<double, double> regularizers(const Diffeomorphism& phi, const Mat& reg_batch,
                                       bool use_flow = true);

// Single-term evaluators (same-dimension or cross-dimension through the adapter).
double orbital_loss_forward(const VectorField& f, const VectorField& g, const Diffeomorphism& phi,
                            const Mat& ys, bool warp_time = true, Solver s = Solver::Dopri5);
double orbital_loss_backward(const VectorField& f, const VectorField& g, const Diffeomorphism& phi,
                             const Mat& xs, bool warp_time = true, Solver s = Solver::Dopri5);

}  // namespace dform
