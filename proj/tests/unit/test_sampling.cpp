#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "dform/sampling.hpp"

using namespace dform;

TEST_CASE("standard normal moments") {
  StandardNormal d(16);
  Rng rng = make_rng(1);
  const Mat X = d.sample(10000, rng);
  const Vec mean = X.rowwise().mean();
  const Vec var = (X.colwise() - mean).array().square().rowwise().mean();
  CHECK(mean.cwiseAbs().maxCoeff() < 0.05);
  CHECK((var.array() - 1).abs().maxCoeff() < 0.1);
}

TEST_CASE("van der pol box stays inside its bounds") {
  const double mu = 2.0;
  Vec lo(2), hi(2);
  lo << -3, -1.5 * mu - 3;
  hi << 3, 1.5 * mu + 3;
  UniformBox d(lo, hi);
  Rng rng = make_rng(2);
  const Mat X = d.sample(5000, rng);
  for (Index j = 0; j < X.cols(); ++j) {
    CHECK((X.col(j).array() >= lo.array()).all());
    CHECK((X.col(j).array() <= hi.array()).all());
  }
  CHECK_THROWS_AS(UniformBox(hi, lo), ConfigError);
}

TEST_CASE("polar annulus radii and angle coverage") {
  PolarAnnulus d(0.8, 1.2);
  Rng rng = make_rng(3);
  const Mat X = d.sample(4000, rng);
  std::vector<int> bins(8, 0);
  for (Index j = 0; j < X.cols(); ++j) {
    const double r = X.col(j).norm();
    CHECK(r >= 0.8 - 1e-12);
    CHECK(r <= 1.2 + 1e-12);
    double t = std::atan2(X(1, j), X(0, j));
    if (t < 0) t += 2 * M_PI;
    ++bins[std::min(7, int(t / (2 * M_PI) * 8))];
  }
  for (int b : bins) CHECK(b > 350);
  PolarAnnulus scaled(0.8, 1.2, std::sqrt(4.0));
  const Mat Y = scaled.sample(100, rng);
  CHECK(Y.colwise().norm().minCoeff() >= 1.6 - 1e-12);
  CHECK(Y.colwise().norm().maxCoeff() <= 2.4 + 1e-12);
}

TEST_CASE("affine pushforward of a standard normal has covariance H H^T") {
  for (Index n : {2, 5, 8}) {
    const Mat H = random_general_seeded(n, 40 + n);
    PushforwardAffine d(std::make_shared<StandardNormal>(n), H, Vec::Zero(n));
    Rng rng = make_rng(n);
    const Mat X = d.sample(100000, rng);
    const Mat C = X * X.transpose() / double(X.cols());
    const Mat T = H * H.transpose();
    const double err = Eigen::JacobiSVD<Mat>(C - T).singularValues()(0);
    const double ref = Eigen::JacobiSVD<Mat>(T).singularValues()(0);
    CHECK(err < 0.1 * ref);
  }
}

TEST_CASE("asymptotic samples of a noisy hopf system concentrate near its cycle") {
  AsymptoticOptions opt;
  opt.noise_sd = 0.05;
  opt.dt = 0.01;
  opt.pool_size = 20000;
  opt.seed = 5;
  AsymptoticNoisy d(std::make_shared<HopfSystem>(1.0), opt);
  Rng rng = make_rng(6);
  const Mat X = d.sample(5000, rng);
  int inside = 0;
  for (Index j = 0; j < X.cols(); ++j) {
    const double r = X.col(j).norm();
    inside += (r >= 0.8 && r <= 1.2);
  }
  CHECK(inside >= 0.95 * X.cols());
  CHECK(d.restarts() == 0);
}

TEST_CASE("doubling the burn-in does not move the asymptotic mean") {
  auto vdp = std::make_shared<VanDerPol>(1.0);
  AsymptoticOptions opt;
  opt.noise_sd = 0.05;
  opt.dt = 0.01;
  opt.pool_size = 16000;
  opt.seed = 9;
  AsymptoticNoisy a(vdp, opt);
  opt.burn_in *= 2;
  AsymptoticNoisy b(vdp, opt);
  // Standard error from per-chain means (chains are independent; samples within are not).
  auto chain_means = [&](const Mat& P) {
    Mat M = Mat::Zero(2, opt.chains);
    for (Index j = 0; j < P.cols(); ++j) M.col(j % opt.chains) += P.col(j);
    return Mat(M / double(P.cols() / opt.chains));
  };
  const Mat Ma = chain_means(a.pool()), Mb = chain_means(b.pool());
  for (Index i = 0; i < 2; ++i) {
    const double ma = Ma.row(i).mean(), mb = Mb.row(i).mean();
    const double va = (Ma.row(i).array() - ma).square().sum() / (opt.chains - 1);
    const double vb = (Mb.row(i).array() - mb).square().sum() / (opt.chains - 1);
    const double se = std::sqrt((va + vb) / opt.chains);
    CHECK(std::abs(ma - mb) < 2 * se + 1e-12);
  }
}

TEST_CASE("mixture fractions and determinism") {
  auto hopf = std::make_shared<HopfSystem>(1.0);
  AsymptoticOptions opt;
  opt.pool_size = 4000;
  CHECK(mindy_mixture(hopf, 0.0, opt)->kind() == "standard_normal");
  CHECK(mindy_mixture(hopf, 1.0, opt)->kind() == "asymptotic_noisy");
  const DistPtr mix = mindy_mixture(hopf, 0.85, opt);
  CHECK(mix->kind() == "mixture");
  CHECK_THROWS_AS(mindy_mixture(hopf, 1.5, opt), ConfigError);
  Rng r1 = make_rng(3), r2 = make_rng(3);
  CHECK(mix->sample(50, r1) == mix->sample(50, r2));
  // Fraction of draws far from the cycle roughly matches the normal component's share.
  Rng rng = make_rng(4);
  const Mat X = mix->sample(20000, rng);
  int far = 0;
  for (Index j = 0; j < X.cols(); ++j) far += std::abs(X.col(j).norm() - 1.0) > 0.3;
  // P(| |z| - 1 | > 0.3) for a 2-D standard normal is about 0.58.
  CHECK(std::abs(far / 20000.0 - 0.15 * 0.58) < 0.02);
  CHECK_THROWS_AS(Mixture({0.5, 0.6}, {mix, mix}), ConfigError);
}

TEST_CASE("distribution json round trip") {
  auto base = std::make_shared<StandardNormal>(3);
  std::vector<DistPtr> ds = {
      base,
      std::make_shared<UniformBox>(Vec::Constant(2, -0.5), Vec::Constant(2, 2.0)),
      std::make_shared<PolarAnnulus>(0.8, 1.2, 2.0),
      std::make_shared<PushforwardAffine>(base, random_orthogonal_seeded(3, 1), Vec::Ones(3)),
      std::make_shared<PushforwardDiffeo>(base, random_flow_diffeo(3, 1.0, 5.0, 2)),
      std::make_shared<Product>(std::vector<DistPtr>{std::make_shared<PolarAnnulus>(0.8, 1.2), base}),
      std::make_shared<Mixture>(std::vector<double>{0.3, 0.7}, std::vector<DistPtr>{base, base}),
  };
  AsymptoticOptions opt;
  opt.pool_size = 500;
  opt.burn_in = 100;
  ds.push_back(std::make_shared<AsymptoticNoisy>(std::make_shared<HopfSystem>(1.0), opt));
  for (const DistPtr& d : ds) {
    CAPTURE(d->kind());
    const DistPtr e = distribution_from_json(nlohmann::json::parse(d->to_json().dump()));
    Rng r1 = make_rng(11), r2 = make_rng(11);
    CHECK(d->sample(20, r1) == e->sample(20, r2));
  }
  CHECK_THROWS_AS(distribution_from_json({{"kind", "standard_normal"}, {"dim", 2}, {"x", 1}}),
                  ConfigError);
}
