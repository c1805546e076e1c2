#include "dform/losses.hpp"

#include <cmath>
#include <limits>

#include "dform/io.hpp"

namespace dform {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool grad_finite(const DiffeoGrad& g) {
  const MlpParams& p = g.field;
  return g.H.allFinite() && g.b.allFinite() && p.W1.allFinite() && p.W2.allFinite() &&
         p.W3.allFinite() && p.b1.allFinite() && p.b2.allFinite() && p.b3.allFinite();
}

void accumulate(DiffeoGrad* total, const DiffeoGrad& term, double weight, const char* name) {
  if (!grad_finite(term))
    throw NumericalError(std::string("gradient of loss term ") + name + " is not finite");
  DiffeoGrad scaled = term;
  scaled *= weight;
  *total += scaled;
}

void check_value(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericalError(std::string("loss term ") + name + " is not finite");
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {l1, l2, l3, l4, reg_v, reg_orth})
    if (!(v >= 0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
  if (l1 + l2 + l3 + l4 <= 0) throw ConfigError("at least one of l1..l4 must be positive");
}

nlohmann::json LossWeights::to_json() const {
  return {{"l1", l1},       {"l2", l2},         {"l3", l3},          {"l4", l4},
          {"reg_v", reg_v}, {"reg_orth", reg_orth}, {"warp_time", warp_time}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  check_keys(j, {"l1", "l2", "l3", "l4", "reg_v", "reg_orth", "warp_time"}, "loss weights");
  LossWeights w;
  w.l1 = j.value("l1", w.l1);
  w.l2 = j.value("l2", w.l2);
  w.l3 = j.value("l3", w.l3);
  w.l4 = j.value("l4", w.l4);
  w.reg_v = j.value("reg_v", w.reg_v);
  w.reg_orth = j.value("reg_orth", w.reg_orth);
  w.warp_time = j.value("warp_time", w.warp_time);
  w.validate();
  return w;
}

DimensionAdapter::DimensionAdapter(Index n_full, Index m_template) : n(n_full), m(m_template) {
  if (m < 1 || m > n) throw DimensionError("template dimension must satisfy 1 <= m <= n");
}

Mat DimensionAdapter::pad(const Mat& Y) const {
  require_dim(Y.rows(), m, "pad");
  Mat X = Mat::Zero(n, Y.cols());
  X.topRows(m) = Y;
  return X;
}

Mat DimensionAdapter::truncate(const Mat& X) const {
  require_dim(X.rows(), n, "truncate");
  return X.topRows(m);
}

double master_loss(const LossWeights& w, const LossBreakdown& b) {
  double t = 0.0;
  auto add = [&](double lam, double v) {
    if (lam != 0.0 && !std::isnan(v)) t += lam * v;
  };
  add(w.l1, b.l1);
  add(w.l2, b.l2);
  add(w.l3, b.l3);
  add(w.l4, b.l4);
  add(w.reg_v, b.reg_v);
  add(w.reg_orth, b.reg_orth);
  return t;
}

DirectionLoss direction_loss(const Mat& A, const Mat& B, double k, bool warp_time,
                             bool need_grad) {
  require_dim(A.rows(), B.rows(), "direction_loss");
  require_dim(A.cols(), B.cols(), "direction_loss");
  const Index N = A.cols();
  if (N == 0) throw Error("direction_loss: empty batch");
  DirectionLoss out;
  if (need_grad) {
    out.Abar = Mat::Zero(A.rows(), N);
    out.Bbar = Mat::Zero(B.rows(), N);
  }
  const double scale = 1.0 / (k * static_cast<double>(N));
  double sum = 0.0;
  for (Index j = 0; j < N; ++j) {
    if (!warp_time) {
      const Vec d = A.col(j) - B.col(j);
      sum += d.squaredNorm();
      if (need_grad) {
        out.Abar.col(j) = 2 * scale * d;
        out.Bbar.col(j) = -2 * scale * d;
      }
      continue;
    }
    const double na = A.col(j).norm(), nb = B.col(j).norm();
    if (na < kEpsNorm && nb < kEpsNorm) {
      ++out.degenerate;
      continue;
    }
    const double da = std::max(na, kEpsNorm), db = std::max(nb, kEpsNorm);
    const Vec ah = A.col(j) / da, bh = B.col(j) / db;
    const Vec d = ah - bh;
    sum += d.squaredNorm();
    if (need_grad) {
      // d/da of |a/|a||^2-type terms: project out the radial part when not floored.
      Vec ga = 2 * scale * d, gb = -2 * scale * d;
      if (na >= kEpsNorm) ga = (ga - ah * ah.dot(ga)) / na;
      else ga /= kEpsNorm;
      if (nb >= kEpsNorm) gb = (gb - bh * bh.dot(gb)) / nb;
      else gb /= kEpsNorm;
      out.Abar.col(j) = ga;
      out.Bbar.col(j) = gb;
    }
  }
  out.value = sum * scale;
  return out;
}

double guarded_cosine(const Vec& a, const Vec& b) {
  const double na = a.norm(), nb = b.norm();
  if (na < kEpsNorm && nb < kEpsNorm) return 1.0;
  const Vec d = a / std::max(na, kEpsNorm) - b / std::max(nb, kEpsNorm);
  return 1.0 - 0.5 * d.squaredNorm();
}

LossProblem::LossProblem(const VectorField& f_, const VectorField& g_, const LossWeights& w)
    : f(&f_), g(&g_), adapter(f_.dim(), g_.dim()), weights(w) {
  weights.validate();
}

std::pair<double, double> regularizers(const Diffeomorphism& phi, const Mat& reg_batch,
                                       bool use_flow) {
  const double n = static_cast<double>(phi.dim());
  double rv = 0.0, ro = 0.0;
  if (phi.has_flow() && use_flow && reg_batch.cols() > 0) {
    const Mat V = phi.field().eval(reg_batch);
    rv = V.colwise().squaredNorm().mean() / n;
  }
  if (phi.has_affine()) {
    const Mat E = phi.H() * phi.H().transpose() - Mat::Identity(phi.dim(), phi.dim());
    ro = E.squaredNorm() / n;
  }
  return {rv, ro};
}

LossBreakdown loss_and_gradient(const LossProblem& p, const Diffeomorphism& phi,
                                const LossBatches& b, bool use_flow, DiffeoGrad* grad) {
  const VectorField& f = *p.f;
  const VectorField& g = *p.g;
  const DimensionAdapter& ad = p.adapter;
  const LossWeights& w = p.weights;
  require_dim(phi.dim(), ad.n, "loss: diffeomorphism");
  const double n = static_cast<double>(ad.n), m = static_cast<double>(ad.m);
  const bool want = grad != nullptr;
  LossBreakdown out;
  out.l1 = out.l2 = out.l3 = out.l4 = kNaN;

  if (w.l1 > 0) {
    // Template points padded into phi's image; pushforward of f compared in template coordinates.
    MapTape inv, fwd;
    Mat X, Yb, U;
    phi.inverse_taped(ad.pad(b.ys), nullptr, X, nullptr, inv, use_flow);
    const Mat F = f.eval_batch(X);
    phi.forward_taped(X, &F, Yb, &U, fwd, use_flow);
    const DirectionLoss dl = direction_loss(ad.truncate(U), g.eval_batch(b.ys), m, w.warp_time, want);
    out.l1 = dl.value;
    out.degenerate += dl.degenerate;
    check_value(out.l1, "l1");
    if (want) {
      DiffeoGrad tg = phi.zero_grad();
      const Mat Ubar = ad.pad(dl.Abar);
      Mat Xbar, Fbar, Ybar;
      phi.forward_backprop(fwd, Mat::Zero(ad.n, U.cols()), &Ubar, tg, Xbar, &Fbar);
      Xbar += f.vjp_batch(X, Fbar);
      phi.inverse_backprop(inv, Xbar, nullptr, tg, Ybar, nullptr);
      accumulate(grad, tg, w.l1, "l1");
    }
  }

  if (w.l2 > 0) {
    // Pullback of the padded template field compared with f in its own space.
    MapTape fwd, inv;
    Mat Y, Xb, W;
    phi.forward_taped(b.xs, nullptr, Y, nullptr, fwd, use_flow);
    const Mat TY = ad.truncate(Y);
    const Mat Gt = ad.pad(g.eval_batch(TY));
    phi.inverse_taped(Y, &Gt, Xb, &W, inv, use_flow);
    const DirectionLoss dl = direction_loss(W, f.eval_batch(b.xs), n, w.warp_time, want);
    out.l2 = dl.value;
    out.degenerate += dl.degenerate;
    check_value(out.l2, "l2");
    if (want) {
      DiffeoGrad tg = phi.zero_grad();
      Mat Ybar, Gtbar, Xbar;
      phi.inverse_backprop(inv, Mat::Zero(ad.n, W.cols()), &dl.Abar, tg, Ybar, &Gtbar);
      Ybar += ad.pad(g.vjp_batch(TY, ad.truncate(Gtbar)));
      phi.forward_backprop(fwd, Ybar, nullptr, tg, Xbar, nullptr);
      accumulate(grad, tg, w.l2, "l2");
    }
  }

  if (w.l3 > 0) {
    // Pushforward at the images of f's samples.
    MapTape fwd;
    Mat Y, U;
    const Mat F = f.eval_batch(b.xs);
    phi.forward_taped(b.xs, &F, Y, &U, fwd, use_flow);
    const Mat TY = ad.truncate(Y);
    const DirectionLoss dl = direction_loss(ad.truncate(U), g.eval_batch(TY), m, w.warp_time, want);
    out.l3 = dl.value;
    out.degenerate += dl.degenerate;
    check_value(out.l3, "l3");
    if (want) {
      DiffeoGrad tg = phi.zero_grad();
      const Mat Ubar = ad.pad(dl.Abar);
      const Mat Ybar = ad.pad(g.vjp_batch(TY, dl.Bbar));
      Mat Xbar, Fbar;
      phi.forward_backprop(fwd, Ybar, &Ubar, tg, Xbar, &Fbar);
      accumulate(grad, tg, w.l3, "l3");
    }
  }

  if (w.l4 > 0) {
    // Pullback of the template evaluated at preimages of padded template samples.
    MapTape inv;
    Mat X, W;
    const Mat Gp = ad.pad(g.eval_batch(b.ys));
    phi.inverse_taped(ad.pad(b.ys), &Gp, X, &W, inv, use_flow);
    const DirectionLoss dl = direction_loss(W, f.eval_batch(X), n, w.warp_time, want);
    out.l4 = dl.value;
    out.degenerate += dl.degenerate;
    check_value(out.l4, "l4");
    if (want) {
      DiffeoGrad tg = phi.zero_grad();
      const Mat Xbar = f.vjp_batch(X, dl.Bbar);
      Mat Ybar, Gbar;
      phi.inverse_backprop(inv, Xbar, &dl.Abar, tg, Ybar, &Gbar);
      accumulate(grad, tg, w.l4, "l4");
    }
  }

  const auto [rv, ro] = regularizers(phi, b.reg, use_flow);
  out.reg_v = rv;
  out.reg_orth = ro;
  if (want && w.reg_v > 0 && phi.has_flow() && use_flow && b.reg.cols() > 0) {
    DiffeoGrad tg = phi.zero_grad();
    const Mat V = phi.field().eval(b.reg);
    const Mat Vbar = (2.0 / (n * static_cast<double>(b.reg.cols()))) * V;
    Mat Zbar;
    phi.field().backprop(b.reg, nullptr, Vbar, nullptr, tg.field, Zbar, nullptr);
    accumulate(grad, tg, w.reg_v, "reg_v");
  }
  if (want && w.reg_orth > 0 && phi.has_affine()) {
    DiffeoGrad tg = phi.zero_grad();
    const Mat E = phi.H() * phi.H().transpose() - Mat::Identity(ad.n, ad.n);
    tg.H = (4.0 / n) * E * phi.H();
    accumulate(grad, tg, w.reg_orth, "reg_orth");
  }
  out.total = master_loss(w, out);
  return out;
}

LossBreakdown evaluate_losses(const LossProblem& p, const Diffeomorphism& phi,
                              const LossBatches& b, Solver s) {
  if (s == Solver::FixedRk4) return loss_and_gradient(p, phi, b, true, nullptr);
  const VectorField& f = *p.f;
  const VectorField& g = *p.g;
  const DimensionAdapter& ad = p.adapter;
  const LossWeights& w = p.weights;
  const double n = static_cast<double>(ad.n), m = static_cast<double>(ad.m);
  LossBreakdown out;
  out.l1 = out.l2 = out.l3 = out.l4 = kNaN;
  auto record = [&](double& slot, const DirectionLoss& dl) {
    slot = dl.value;
    out.degenerate += dl.degenerate;
  };
  if (w.l1 > 0) {
    const Mat X = phi.inverse(ad.pad(b.ys), s);
    Mat Y, U;
    phi.forward_tangent(X, f.eval_batch(X), Y, U, s);
    record(out.l1, direction_loss(ad.truncate(U), g.eval_batch(b.ys), m, w.warp_time, false));
  }
  if (w.l2 > 0) {
    const Mat Y = phi.forward(b.xs, s);
    Mat X, W;
    phi.inverse_tangent(Y, ad.pad(g.eval_batch(ad.truncate(Y))), X, W, s);
    record(out.l2, direction_loss(W, f.eval_batch(b.xs), n, w.warp_time, false));
  }
  if (w.l3 > 0) {
    Mat Y, U;
    phi.forward_tangent(b.xs, f.eval_batch(b.xs), Y, U, s);
    record(out.l3, direction_loss(ad.truncate(U), g.eval_batch(ad.truncate(Y)), m, w.warp_time, false));
  }
  if (w.l4 > 0) {
    Mat X, W;
    phi.inverse_tangent(ad.pad(b.ys), ad.pad(g.eval_batch(b.ys)), X, W, s);
    record(out.l4, direction_loss(W, f.eval_batch(X), n, w.warp_time, false));
  }
  const auto [rv, ro] = regularizers(phi, b.reg, true);
  out.reg_v = rv;
  out.reg_orth = ro;
  out.total = master_loss(w, out);
  return out;
}

double orbital_loss_forward(const VectorField& f, const VectorField& g, const Diffeomorphism& phi,
                            const Mat& ys, bool warp_time, Solver s) {
  LossWeights w;
  w.l2 = 0;
  w.reg_v = w.reg_orth = 0;
  w.warp_time = warp_time;
  LossBatches b;
  b.ys = ys;
  return evaluate_losses(LossProblem(f, g, w), phi, b, s).l1;
}

double orbital_loss_backward(const VectorField& f, const VectorField& g, const Diffeomorphism& phi,
                             const Mat& xs, bool warp_time, Solver s) {
  LossWeights w;
  w.l1 = 0;
  w.reg_v = w.reg_orth = 0;
  w.warp_time = warp_time;
  LossBatches b;
  b.xs = xs;
  return evaluate_losses(LossProblem(f, g, w), phi, b, s).l2;
}

}  // namespace dform
