#pragma once

#include <optional>

#include "dform/losses.hpp"
#include "dform/sampling.hpp"

namespace dform {

/// Mean guarded cosines. For m < n: forward compares T(phi_* f)(P y) with g(y) over p_y,
/// backward compares (phi^-1)_* (P g T) with f over p_x, cross_dim compares T(phi_* f)(x)
/// with g(T phi(x)) over p_x, and orbital_similarity = min(forward, cross_dim).
/// For m = n: orbital_similarity = min(forward, backward) and cross_dim is NaN.
struct AlignmentScores {
  double forward = 0, backward = 0, orbital_similarity = 0, cross_dim = 0;
  bool cross = false;
  nlohmann::json to_json() const;
};

/// Scores on explicit samples (xs from f's space, ys from g's space).
AlignmentScores alignment_scores(const VectorField& f, const VectorField& g,
                                 const Diffeomorphism& phi, const Mat& xs, const Mat& ys,
                                 Solver s = Solver::Dopri5);
/// Fresh Monte-Carlo samples from p_x and p_y.
AlignmentScores alignment_scores(const VectorField& f, const VectorField& g,
                                 const Diffeomorphism& phi, const Distribution& px,
                                 const Distribution& py, Index k_eval, std::uint64_t seed);
/// Baseline "before alignment": phi replaced by the identity.
AlignmentScores identity_alignment(const VectorField& f, const VectorField& g, const Mat& xs,
                                   const Mat& ys);

/// Cosine between the flattened Jacobian of phi_* f at phi(0) and that of g at 0.
double jacobian_similarity_at_origin(const VectorField& f, const VectorField& g,
                                     const Diffeomorphism& phi);

enum class Stability { Stable, Unstable, Saddle, Marginal };
const char* stability_name(Stability s);

struct FixedPointOptions {
  int n_starts = 64;
  double sim_T = 100.0;
  int newton_iters = 50;
  double newton_damping = 0.5;
  double fp_tol = 1e-6;
  double cluster_radius = 1e-3;
  double init_sd = 1.0;
  bool include_origin = true;
  std::uint64_t seed = 0;
};

struct FixedPointSet {
  std::vector<Vec> points;
  std::vector<Stability> stability;
  std::vector<double> residuals;
  int discarded = 0;  // Newton candidates that failed to converge
  /// Stable points with norm above the cluster radius.
  std::vector<Vec> nonzero_stable(double radius = 1e-3) const;
};

/// Simulation endpoints and the random starts themselves are refined by damped Newton;
/// converged points are deduplicated and labelled by Jacobian eigenvalues.
FixedPointSet find_fixed_points(const VectorField& f, const FixedPointOptions& opt = {});

struct FixedPointMatch {
  double similarity = 0;  // mean matched cosine, NaN when absent
  int matched = 0;
  int unmatched = 0;
  bool absent = true;
  std::vector<std::pair<int, int>> pairs;
  std::vector<double> cosines;
};

/// Greedy matching by descending cosine between columns of A and columns of B.
FixedPointMatch greedy_cosine_match(const std::vector<Vec>& A, const std::vector<Vec>& B);

/// phi(nonzero stable fixed points of f) matched to those of g.
FixedPointMatch fixed_point_similarity(const VectorField& f, const VectorField& g,
                                       const Diffeomorphism& phi,
                                       const FixedPointOptions& opt = {});
FixedPointMatch fixed_point_similarity(const FixedPointSet& fp_f, const FixedPointSet& fp_g,
                                       const Diffeomorphism& phi);

double concordance(int p1, int p2, int n);

/// phi^-1(P y) for template points y (columns, m x k).
Mat reconstruct_feature(const Diffeomorphism& phi, const Mat& template_points);

struct Projection {
  enum Kind { Pca, Coords } kind = Coords;
  int i = 0, j = 1;
};

struct TrajectoryTable {
  std::vector<int> traj;
  std::vector<double> t;
  Mat coords;  // 2 x rows
  std::vector<int> diverged;  // trajectory ids flagged as divergent
};

/// Simulates n_traj trajectories from N(0, init_sd^2 I), optionally maps them through phi,
/// and projects the pooled points.
TrajectoryTable export_trajectories(const VectorField& f, const Diffeomorphism* phi, int n_traj,
                                    double T, int n_out, const Projection& proj,
                                    std::uint64_t seed, double init_sd = 1.0);
void write_trajectory_csv(const std::string& path, const TrajectoryTable& t);

/// Symmetric Hausdorff distance between two point clouds (columns).
double hausdorff(const Mat& A, const Mat& B);

}  // namespace dform
