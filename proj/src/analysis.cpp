#include "dform/analysis.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>

#include "dform/io.hpp"
#include "dform/ode.hpp"

namespace dform {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_cosine(const Mat& A, const Mat& B) {
  double s = 0.0;
  for (Index j = 0; j < A.cols(); ++j) s += guarded_cosine(A.col(j), B.col(j));
  return s / static_cast<double>(A.cols());
}

double plain_cosine(const Vec& a, const Vec& b) {
  const double d = a.norm() * b.norm();
  return d > 0 ? a.dot(b) / d : 0.0;
}

}  // namespace

nlohmann::json AlignmentScores::to_json() const {
  nlohmann::json j = {{"forward", forward},
                      {"backward", backward},
                      {"orbital_similarity", orbital_similarity},
                      {"cross_dimensional", cross}};
  j["cross_dim"] = cross ? nlohmann::json(cross_dim) : nlohmann::json(nullptr);
  return j;
}

AlignmentScores alignment_scores(const VectorField& f, const VectorField& g,
                                 const Diffeomorphism& phi, const Mat& xs, const Mat& ys,
                                 Solver s) {
  const DimensionAdapter ad(f.dim(), g.dim());
  require_dim(phi.dim(), ad.n, "alignment_scores");
  AlignmentScores out;
  out.cross = !ad.trivial();
  {
    const Mat X = phi.inverse(ad.pad(ys), s);
    Mat Y, U;
    phi.forward_tangent(X, f.eval_batch(X), Y, U, s);
    out.forward = mean_cosine(ad.truncate(U), g.eval_batch(ys));
  }
  {
    const Mat Y = phi.forward(xs, s);
    Mat X, W;
    phi.inverse_tangent(Y, ad.pad(g.eval_batch(ad.truncate(Y))), X, W, s);
    out.backward = mean_cosine(W, f.eval_batch(xs));
  }
  if (out.cross) {
    Mat Y, U;
    phi.forward_tangent(xs, f.eval_batch(xs), Y, U, s);
    out.cross_dim = mean_cosine(ad.truncate(U), g.eval_batch(ad.truncate(Y)));
    out.orbital_similarity = std::min(out.forward, out.cross_dim);
  } else {
    out.cross_dim = kNaN;
    out.orbital_similarity = std::min(out.forward, out.backward);
  }
  return out;
}

AlignmentScores alignment_scores(const VectorField& f, const VectorField& g,
                                 const Diffeomorphism& phi, const Distribution& px,
                                 const Distribution& py, Index k_eval, std::uint64_t seed) {
  if (k_eval < 1) throw ConfigError("alignment_scores: k_eval must be >= 1");
  Rng rng = make_rng(seed, 0xE7A1u);
  const Mat xs = px.sample(k_eval, rng);
  const Mat ys = py.sample(k_eval, rng);
  return alignment_scores(f, g, phi, xs, ys, Solver::Dopri5);
}

AlignmentScores identity_alignment(const VectorField& f, const VectorField& g, const Mat& xs,
                                   const Mat& ys) {
  const Index n = f.dim();
  const Diffeomorphism id = Diffeomorphism::affine_only(Mat::Identity(n, n), Vec::Zero(n));
  return alignment_scores(f, g, id, xs, ys, Solver::Dopri5);
}

double jacobian_similarity_at_origin(const VectorField& f, const VectorField& g,
                                     const Diffeomorphism& phi) {
  const Index n = f.dim();
  require_dim(g.dim(), n, "jacobian_similarity_at_origin");
  const Vec zero = Vec::Zero(n);
  if (f.eval(zero).norm() > 1e-6) throw Error("jacobian similarity: origin is not fixed for f");
  if (g.eval(zero).norm() > 1e-6) throw Error("jacobian similarity: origin is not fixed for g");
  // At a fixed point the pushforward's Jacobian is the similarity transform D A D^-1.
  const Mat D = phi.jacobian(zero);
  const Mat Jp = D * f.jacobian(zero) * D.inverse();
  const Mat Jg = g.jacobian(zero);
  return (Jp.array() * Jg.array()).sum() / (Jp.norm() * Jg.norm());
}

const char* stability_name(Stability s) {
  switch (s) {
    case Stability::Stable: return "stable";
    case Stability::Unstable: return "unstable";
    case Stability::Saddle: return "saddle";
    default: return "marginal";
  }
}

std::vector<Vec> FixedPointSet::nonzero_stable(double radius) const {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (stability[i] == Stability::Stable && points[i].norm() > radius) out.push_back(points[i]);
  return out;
}

FixedPointSet find_fixed_points(const VectorField& f, const FixedPointOptions& opt) {
  const Index n = f.dim();
  Rng rng = make_rng(opt.seed, 0xF1u);
  FieldFn fn = [&f](const Vec& x) { return f.eval(x); };

  // Candidate seeds: clustered simulation endpoints, the starts themselves, and the origin.
  std::vector<Vec> starts, centers;
  for (int i = 0; i < opt.n_starts; ++i) starts.push_back(normal_vector(rng, n, opt.init_sd));
  for (const Vec& x0 : starts) {
    Trajectory tr;
    try {
      tr = simulate(fn, x0, opt.sim_T, 2);
    } catch (const NumericalError&) {
      continue;
    }
    if (tr.diverged || tr.x.empty()) continue;
    const Vec& e = tr.x.back();
    bool near = false;
    for (const Vec& c : centers) near = near || (c - e).norm() < opt.cluster_radius;
    if (!near) centers.push_back(e);
  }
  std::vector<Vec> candidates = centers;
  candidates.insert(candidates.end(), starts.begin(), starts.end());
  if (opt.include_origin) candidates.push_back(Vec::Zero(n));

  FixedPointSet out;
  for (Vec x : candidates) {
    double res = f.eval(x).norm();
    for (int it = 0; it < opt.newton_iters && res > 1e-13; ++it) {
      const Vec fx = f.eval(x);
      const Vec step = f.jacobian(x).colPivHouseholderQr().solve(fx);
      x -= opt.newton_damping * step;
      if (!x.allFinite() || x.norm() > 1e6) break;
      res = f.eval(x).norm();
    }
    if (!x.allFinite() || !(res < opt.fp_tol)) {
      ++out.discarded;
      continue;
    }
    bool dup = false;
    for (std::size_t k = 0; k < out.points.size(); ++k) {
      if ((out.points[k] - x).norm() < opt.cluster_radius) {
        dup = true;
        if (res < out.residuals[k]) {
          out.points[k] = x;
          out.residuals[k] = res;
        }
        break;
      }
    }
    if (dup) continue;
    out.points.push_back(x);
    out.residuals.push_back(res);
  }
  for (std::size_t k = 0; k < out.points.size(); ++k) {
    if (!(out.residuals[k] < opt.fp_tol)) throw NumericalError("fixed point residual bound violated");
    Eigen::EigenSolver<Mat> es(f.jacobian(out.points[k]), false);
    const Vec re = es.eigenvalues().real();
    const double tol = 1e-9;
    Stability s = Stability::Marginal;
    if (re.maxCoeff() < -tol) s = Stability::Stable;
    else if (re.minCoeff() > tol) s = Stability::Unstable;
    else if (re.maxCoeff() > tol && re.minCoeff() < -tol) s = Stability::Saddle;
    out.stability.push_back(s);
  }
  return out;
}

FixedPointMatch greedy_cosine_match(const std::vector<Vec>& A, const std::vector<Vec>& B) {
  FixedPointMatch m;
  if (A.empty() || B.empty()) {
    m.similarity = kNaN;
    m.unmatched = static_cast<int>(A.size() + B.size());
    return m;
  }
  m.absent = false;
  std::vector<bool> ua(A.size(), false), ub(B.size(), false);
  const std::size_t k = std::min(A.size(), B.size());
  double sum = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    double best = -2.0;
    int bi = -1, bj = -1;
    for (std::size_t i = 0; i < A.size(); ++i) {
      if (ua[i]) continue;
      for (std::size_t j = 0; j < B.size(); ++j) {
        if (ub[j]) continue;
        const double c = plain_cosine(A[i], B[j]);
        if (c > best) {
          best = c;
          bi = static_cast<int>(i);
          bj = static_cast<int>(j);
        }
      }
    }
    ua[bi] = ub[bj] = true;
    m.pairs.emplace_back(bi, bj);
    m.cosines.push_back(best);
    sum += best;
  }
  m.matched = static_cast<int>(k);
  m.unmatched = static_cast<int>(A.size() + B.size() - 2 * k);
  m.similarity = sum / static_cast<double>(k);
  return m;
}

FixedPointMatch fixed_point_similarity(const FixedPointSet& fp_f, const FixedPointSet& fp_g,
                                       const Diffeomorphism& phi) {
  std::vector<Vec> mapped;
  for (const Vec& p : fp_f.nonzero_stable()) mapped.push_back(phi.forward(Mat(p), Solver::Dopri5).col(0));
  return greedy_cosine_match(mapped, fp_g.nonzero_stable());
}

FixedPointMatch fixed_point_similarity(const VectorField& f, const VectorField& g,
                                       const Diffeomorphism& phi, const FixedPointOptions& opt) {
  return fixed_point_similarity(find_fixed_points(f, opt), find_fixed_points(g, opt), phi);
}

double concordance(int p1, int p2, int n) {
  if (n < 1 || p1 < 0 || p2 < 0 || p1 > n || p2 > n)
    throw ConfigError("concordance: need 0 <= p1, p2 <= n and n >= 1");
  return static_cast<double>(n - std::abs(p1 - p2)) / n;
}

Mat reconstruct_feature(const Diffeomorphism& phi, const Mat& template_points) {
  const DimensionAdapter ad(phi.dim(), template_points.rows());
  return phi.inverse(ad.pad(template_points), Solver::Dopri5);
}

TrajectoryTable export_trajectories(const VectorField& f, const Diffeomorphism* phi, int n_traj,
                                    double T, int n_out, const Projection& proj,
                                    std::uint64_t seed, double init_sd) {
  const Index n = f.dim();
  Rng rng = make_rng(seed, 0x7Au);
  FieldFn fn = [&f](const Vec& x) { return f.eval(x); };
  TrajectoryTable tab;
  std::vector<Vec> pts;
  for (int k = 0; k < n_traj; ++k) {
    const Trajectory tr = simulate(fn, normal_vector(rng, n, init_sd), T, n_out);
    if (tr.diverged) tab.diverged.push_back(k);
    for (std::size_t i = 0; i < tr.x.size(); ++i) {
      tab.traj.push_back(k);
      tab.t.push_back(tr.t[i]);
      pts.push_back(tr.x[i]);
    }
  }
  Mat P(n, static_cast<Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) P.col(static_cast<Index>(i)) = pts[i];
  if (phi) P = phi->forward(P, Solver::Dopri5);
  if (proj.kind == Projection::Coords) {
    if (proj.i < 0 || proj.j < 0 || proj.i >= n || proj.j >= n)
      throw ConfigError("export_trajectories: coordinate index out of range");
    tab.coords.resize(2, P.cols());
    tab.coords.row(0) = P.row(proj.i);
    tab.coords.row(1) = P.row(proj.j);
  } else {
    const Vec mean = P.rowwise().mean();
    const Mat C = P.colwise() - mean;
    Eigen::SelfAdjointEigenSolver<Mat> es(C * C.transpose() / std::max<Index>(1, C.cols() - 1));
    Mat V(n, 2);
    V.col(0) = es.eigenvectors().col(n - 1);
    V.col(1) = n > 1 ? Vec(es.eigenvectors().col(n - 2)) : Vec::Zero(n);
    for (int c = 0; c < 2; ++c) {
      Index at = 0;
      V.col(c).cwiseAbs().maxCoeff(&at);
      if (V(at, c) < 0) V.col(c) *= -1;  // fixed sign convention
    }
    tab.coords = V.transpose() * C;
  }
  return tab;
}

void write_trajectory_csv(const std::string& path, const TrajectoryTable& t) {
  std::vector<std::vector<double>> rows;
  rows.reserve(t.t.size());
  for (std::size_t i = 0; i < t.t.size(); ++i)
    rows.push_back({double(t.traj[i]), t.t[i], t.coords(0, Index(i)), t.coords(1, Index(i))});
  write_csv(path, {"trajectory", "t", "c1", "c2"}, rows);
}

double hausdorff(const Mat& A, const Mat& B) {
  auto directed = [](const Mat& P, const Mat& Q) {
    double worst = 0.0;
    for (Index i = 0; i < P.cols(); ++i)
      worst = std::max(worst, (Q.colwise() - P.col(i)).colwise().norm().minCoeff());
    return worst;
  };
  return std::max(directed(A, B), directed(B, A));
}

}  // namespace dform
