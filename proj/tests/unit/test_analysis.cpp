#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "dform/analysis.hpp"
#include "helpers.hpp"

using namespace dform;

namespace {

Mat randn(Index r, Index c, std::uint64_t seed) {
  Rng rng = make_rng(seed, 8);
  return normal_matrix(rng, r, c);
}

Diffeomorphism identity(Index n) {
  return Diffeomorphism::affine_only(Mat::Identity(n, n), Vec::Zero(n));
}

}  // namespace

TEST_CASE("alignment of a system with itself and with its negation") {
  auto f = std::make_shared<VanDerPol>(1.0);
  const Mat X = randn(2, 200, 1), Y = randn(2, 200, 2);
  const AlignmentScores s = alignment_scores(*f, *f, identity(2), X, Y);
  CHECK(std::abs(s.forward - 1) < 1e-10);
  CHECK(std::abs(s.backward - 1) < 1e-10);
  CHECK(std::abs(s.orbital_similarity - 1) < 1e-10);
  CHECK(!s.cross);
  auto A = std::make_shared<LinearSystem>(random_linear(2, 3));
  auto mA = std::make_shared<LinearSystem>(-A->A());
  const AlignmentScores t = identity_alignment(*A, *mA, X, Y);
  CHECK(std::abs(t.forward + 1) < 1e-10);
  CHECK(std::abs(t.backward + 1) < 1e-10);
  CHECK(t.orbital_similarity == std::min(t.forward, t.backward));
}

TEST_CASE("orthogonal maps give equal forward and backward alignment on paired samples") {
  auto f = std::make_shared<VanDerPol>(1.5);
  auto g = std::make_shared<SnicSystem>(0.5);
  const Diffeomorphism phi = Diffeomorphism::affine_only(random_orthogonal_seeded(2, 4), Vec::Zero(2));
  const Mat X = randn(2, 300, 5);
  const Mat Y = phi.forward(X, Solver::Dopri5);
  const AlignmentScores s = alignment_scores(*f, *g, phi, X, Y);
  CHECK(std::abs(s.forward - s.backward) < 1e-10);
  CHECK(s.forward >= -1.0);
  CHECK(s.forward <= 1.0);
}

TEST_CASE("cross-dimensional scores for an embedded template") {
  auto tmpl = std::make_shared<HopfSystem>(1.0);
  auto f = composite_and_mix(tmpl, std::make_shared<LinearSystem>(-Mat::Identity(3, 3)), 2);
  // The ideal linear map undoes the mixing.
  const Diffeomorphism phi = Diffeomorphism::affine_only(f->O().transpose(), Vec::Zero(5));
  const AlignmentScores s = alignment_scores(*f, *tmpl, phi, randn(5, 100, 1), randn(2, 100, 2));
  CHECK(s.cross);
  CHECK(s.forward > 1 - 1e-10);
  CHECK(s.cross_dim > 1 - 1e-10);
  CHECK(s.orbital_similarity == std::min(s.forward, s.cross_dim));
  CHECK(s.backward < 0.99);  // stable block is not visible to the padded template
}

TEST_CASE("jacobian similarity at the origin") {
  const Mat A = random_linear(3, 5);
  auto f = std::make_shared<LinearSystem>(A);
  const Mat H = random_general_seeded(3, 6);
  auto g = std::make_shared<LinearSystem>(H * A * H.inverse());
  const Diffeomorphism phi = Diffeomorphism::affine_only(H, Vec::Zero(3));
  CHECK(jacobian_similarity_at_origin(*f, *g, phi) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(jacobian_similarity_at_origin(*f, *f, identity(3)) == doctest::Approx(1.0).epsilon(1e-12));
  // Analytic H A H^-1 against finite differences of the pushforward field.
  AffineTransformedSystem pf(f, H, Vec::Zero(3));
  const Mat Jfd = pf.VectorField::jacobian(Vec::Zero(3));
  CHECK((Jfd - H * A * H.inverse()).norm() < 1e-6);
  auto vdp = std::make_shared<VanDerPol>(1.0);
  auto shifted = std::make_shared<AffineTransformedSystem>(vdp, Mat::Identity(2, 2), Vec::Ones(2));
  CHECK_THROWS_AS(jacobian_similarity_at_origin(*shifted, *vdp, identity(2)), Error);
}

TEST_CASE("fixed points of a bistable low-rank rnn") {
  const LowRankRnnParts p = low_rank_rnn(16, 3);
  RnnSystem f(p.W);
  FixedPointOptions opt;
  opt.n_starts = 24;
  const FixedPointSet fp = find_fixed_points(f, opt);
  const auto stable = fp.nonzero_stable();
  REQUIRE(stable.size() == 2);
  CHECK((stable[0] + stable[1]).norm() < 1e-6);  // symmetric pair
  bool origin = false;
  for (std::size_t k = 0; k < fp.points.size(); ++k) {
    CHECK(fp.residuals[k] < 1e-6);
    CHECK(f.eval(fp.points[k]).norm() < 1e-6);
    if (fp.points[k].norm() < 1e-9) {
      origin = true;
      CHECK(fp.stability[k] == Stability::Saddle);
    }
  }
  CHECK(origin);
}

TEST_CASE("fixed points of a monostable linear system and of the perturbed line attractor") {
  LinearSystem lin(linear_with_signature({0, 4, 0}, 2));
  const FixedPointSet a = find_fixed_points(lin);
  REQUIRE(a.points.size() == 1);
  CHECK(a.points[0].norm() < 1e-9);
  CHECK(a.stability[0] == Stability::Stable);

  BlaSystem bla(0.0, 0.3);
  FixedPointOptions opt;
  opt.init_sd = 1.0;
  const FixedPointSet b = find_fixed_points(bla, opt);
  int stable = 0, saddle = 0;
  for (Stability s : b.stability) {
    stable += s == Stability::Stable;
    saddle += s == Stability::Saddle;
  }
  CHECK(b.points.size() == 3);
  CHECK(stable == 2);
  CHECK(saddle == 1);
}

TEST_CASE("fixed point similarity under an exact pushforward") {
  const LowRankRnnParts p = low_rank_rnn(8, 5);
  auto f = std::make_shared<RnnSystem>(p.W);
  const Mat H = random_orthogonal_seeded(8, 9);
  AffineTransformedSystem g(f, H, Vec::Zero(8));
  const Diffeomorphism phi = Diffeomorphism::affine_only(H, Vec::Zero(8));
  FixedPointOptions opt;
  opt.n_starts = 16;
  const FixedPointMatch m = fixed_point_similarity(*f, g, phi, opt);
  CHECK(!m.absent);
  CHECK(m.matched == 2);
  CHECK(m.similarity > 1 - 1e-6);
  // Mapping with -H swaps the pair; the greedy matcher still pairs by best cosine.
  const Diffeomorphism flip = Diffeomorphism::affine_only(-H, Vec::Zero(8));
  CHECK(fixed_point_similarity(*f, g, flip, opt).similarity > 1 - 1e-6);
  // A monostable system has no nonzero stable points: reported as absent.
  LinearSystem lin(-Mat::Identity(8, 8));
  const FixedPointMatch none = fixed_point_similarity(lin, g, phi, opt);
  CHECK(none.absent);
  CHECK(std::isnan(none.similarity));
}

TEST_CASE("greedy matching against brute-force assignment on up to four points") {
  Rng rng = make_rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + trial % 4;
    const bool flipped = trial % 3 == 0;
    std::vector<Vec> A, B;
    for (int i = 0; i < k; ++i) {
      A.push_back(normal_vector(rng, 3));
      // Targets near (possibly sign-flipped) rotated copies, as produced by a good alignment.
      B.push_back(A.back() * (flipped && i == 0 ? -1.0 : 1.0) + normal_vector(rng, 3, 0.05));
    }
    std::shuffle(B.begin(), B.end(), rng);
    const FixedPointMatch g = greedy_cosine_match(A, B);
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    double best = -1e9;
    do {
      double s = 0;
      for (int i = 0; i < k; ++i) s += A[i].dot(B[perm[i]]) / (A[i].norm() * B[perm[i]].norm());
      best = std::max(best, s / k);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(g.similarity <= best + 1e-12);
    // Without a flipped pair the alignment is near-ideal and greedy is optimal.
    if (!flipped) CHECK(g.similarity == doctest::Approx(best).epsilon(1e-12));
    // The first greedy pair is the global best cosine.
    double top = -2;
    for (const Vec& a : A)
      for (const Vec& b : B) top = std::max(top, a.dot(b) / (a.norm() * b.norm()));
    CHECK(g.cosines.front() == doctest::Approx(top).epsilon(1e-12));
  }
  Vec x(2);
  x << 1, 2;
  CHECK(greedy_cosine_match({x}, {Vec(-x)}).similarity == doctest::Approx(-1.0));
}

TEST_CASE("concordance") {
  CHECK(concordance(5, 5, 16) == 1.0);
  CHECK(concordance(16, 0, 16) == 0.0);
  CHECK(concordance(12, 4, 16) == 0.5);
  for (int a = 0; a <= 8; ++a)
    for (int b = 0; b <= 8; ++b) {
      CHECK(concordance(a, b, 8) == concordance(b, a, 8));
      CHECK(concordance(a, b, 8) >= 0.0);
      CHECK(concordance(a, b, 8) <= 1.0);
    }
  CHECK_THROWS_AS(concordance(9, 0, 8), ConfigError);
}

TEST_CASE("feature reconstruction and trajectory export") {
  const Mat Y = randn(2, 5, 3);
  CHECK((reconstruct_feature(identity(2), Y) - Y).norm() < 1e-14);
  const Mat P = reconstruct_feature(identity(4), Y);
  CHECK(P.bottomRows(2).norm() == 0.0);

  LinearSystem stable(-Mat::Identity(3, 3) + 0.3 * random_linear(3, 1));
  const TrajectoryTable t = export_trajectories(stable, nullptr, 5, 60.0, 20, {}, 1);
  CHECK(t.diverged.empty());
  for (std::size_t i = 0; i < t.t.size(); ++i)
    if (t.t[i] == 60.0) CHECK(t.coords.col(Index(i)).norm() < 1e-3);

  VanDerPol vdp(1.0);
  const TrajectoryTable raw = export_trajectories(vdp, nullptr, 2, 5.0, 6, {}, 2);
  const TrajectoryTable pca = export_trajectories(vdp, nullptr, 2, 5.0, 6, {Projection::Pca, 0, 1}, 2);
  CHECK(raw.coords.cols() == 14);  // n_out + 1 samples per trajectory, t = 0 included
  // PCA of 2-D data is a rigid motion of the centered points: pairwise distances agree.
  for (Index i = 1; i < raw.coords.cols(); ++i)
    CHECK((raw.coords.col(i) - raw.coords.col(0)).norm() ==
          doctest::Approx((pca.coords.col(i) - pca.coords.col(0)).norm()).epsilon(1e-9));
}

TEST_CASE("hausdorff distance") {
  Mat A(2, 2), B(2, 3);
  A << 0, 1, 0, 0;
  B << 0, 1, 1, 0, 0, 2;
  CHECK(hausdorff(A, B) == doctest::Approx(2.0));
  CHECK(hausdorff(A, A) == 0.0);
}
