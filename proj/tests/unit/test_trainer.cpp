#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "dform/io.hpp"
#include "dform/trainer.hpp"
#include "helpers.hpp"

using namespace dform;

namespace {

// Throws on evaluation, to exercise failure reporting.
class Exploding : public VectorField {
 public:
  explicit Exploding(Index n) : n_(n) {}
  std::string kind() const override { return "exploding"; }
  Index dim() const override { return n_; }
  Mat eval_batch(const Mat&) const override { throw NumericalError("field blew up"); }
  nlohmann::json to_json() const override { return {}; }

 private:
  Index n_;
};

TrainProblem self_problem(Index n, std::uint64_t seed) {
  auto f = std::make_shared<LinearSystem>(random_linear(n, seed));
  auto px = std::make_shared<StandardNormal>(n);
  return {f, f, px, px};
}

TrainConfig small_config() {
  TrainConfig c;
  c.batch_size = 16;
  c.n_batch_linear = 30;
  c.n_batch_full = 20;
  c.eval_samples = 64;
  c.reg_samples = 16;
  c.loss_weights.reg_v = 1e-3;
  return c;
}

// Scalar NADAM written out from the update formulas, used as an oracle for the vector class.
struct ScalarNadam {
  double m = 0, v = 0, prod = 1;
  long t = 0;
  double step(double x, double g, double lr) {
    ++t;
    const double mu = 0.9 * (1 - 0.5 * std::pow(0.96, t * 0.004));
    const double mu1 = 0.9 * (1 - 0.5 * std::pow(0.96, (t + 1) * 0.004));
    prod *= mu;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = mu1 * m / (1 - prod * mu1) + (1 - mu) * g / (1 - prod);
    const double vhat = v / (1 - std::pow(0.999, double(t)));
    return x - lr * mhat / (std::sqrt(vhat) + 1e-8);
  }
};

}  // namespace

TEST_CASE("nadam: zero gradient, descent direction, scalar quadratic") {
  Nadam z(3);
  Vec p(3);
  p << 1, -2, 3;
  const Vec p0 = p;
  for (int k = 0; k < 10; ++k) z.step(p, Vec::Zero(3), 0.01);
  CHECK(p == p0);

  Nadam c(2);
  Vec q = Vec::Zero(2);
  Vec g(2);
  g << 0.5, -3.0;
  for (int k = 0; k < 100; ++k) c.step(q, g, 0.002);
  CHECK(q(0) < 0);
  CHECK(q(1) > 0);

  Nadam o(1);
  ScalarNadam ref;
  Vec x(1);
  x << 1.0;
  double xr = 1.0;
  for (int k = 0; k < 2000; ++k) {
    Vec gx(1);
    gx << x(0);  // d/dx x^2 / 2
    o.step(x, gx, 0.002);
    xr = ref.step(xr, xr, 0.002);
    REQUIRE(std::abs(x(0) - xr) < 1e-12);
  }
  CHECK(std::abs(x(0)) < 1e-4);

  const Nadam back = Nadam::from_json(o.to_json());
  CHECK(back.steps() == o.steps());
  CHECK(back.m() == o.m());
}

TEST_CASE("packed gradient matches finite differences in both phases") {
  auto f = std::make_shared<VanDerPol>(1.0);
  auto g = std::make_shared<HopfSystem>(1.0);
  LossWeights w;
  w.l3 = 0.5;
  w.l4 = 0.5;
  w.reg_v = 0.1;
  w.reg_orth = 0.1;
  const LossProblem lp(*f, *g, w);
  Rng rng = make_rng(3);
  LossBatches b{normal_matrix(rng, 2, 8), normal_matrix(rng, 2, 8), normal_matrix(rng, 2, 8)};
  for (bool use_flow : {false, true}) {
    Diffeomorphism phi = testing::random_diffeo(2, 11);
    Vec grad;
    loss_gradient(lp, phi, b, use_flow, grad);
    const Vec th = phi.pack(!use_flow);
    REQUIRE(grad.size() == th.size());
    const double floor = std::max(1e-5, 1e-4 * grad.cwiseAbs().maxCoeff());
    for (Index i = 0; i < th.size(); ++i) {
      Diffeomorphism q = phi;
      Vec t = th;
      t(i) += 1e-6;
      q.unpack(t, !use_flow);
      const double up = loss_and_gradient(lp, q, b, use_flow, nullptr).total;
      t(i) -= 2e-6;
      q.unpack(t, !use_flow);
      const double dn = loss_and_gradient(lp, q, b, use_flow, nullptr).total;
      const double fd = (up - dn) / 2e-6;
      CHECK(std::abs(fd - grad(i)) / std::max(std::abs(fd), floor) < 1e-4);
    }
  }
}

TEST_CASE("phase 1 leaves the flow untouched and phase 2 starts a fresh optimizer") {
  const TrainProblem p = self_problem(3, 1);
  TrainConfig c = small_config();
  TrainState st = initial_state(testing::random_diffeo(3, 5), c, 0);
  const MlpParams before = st.phi.field().params();
  bool checked_boundary = false;
  run_training(p, c, st, [&](const TrainState& s) {
    if (s.phase == 1 && s.step == c.n_batch_linear) {
      const MlpParams& now = s.phi.field().params();
      CHECK(now.W1 == before.W1);
      CHECK(now.b1 == before.b1);
      CHECK(now.W2 == before.W2);
      CHECK(now.W3 == before.W3);
      CHECK(now.b3 == before.b3);
      CHECK(s.opt.steps() == c.n_batch_linear);
      checked_boundary = true;
    }
    if (s.phase == 2) CHECK(s.opt.steps() == s.step);
  });
  CHECK(checked_boundary);
  CHECK(st.phase == 3);
  CHECK(st.trace.size() == std::size_t(c.n_batch_linear + c.n_batch_full));
  CHECK(st.clip_events == 0);
  CHECK(!(st.phi.field().params().W3 == before.W3));
}

TEST_CASE("linear-only training builds no flow") {
  TrainConfig c = small_config();
  c.n_batch_full = 0;
  const Diffeomorphism phi = initial_model(4, c, 9);
  CHECK(!phi.has_flow());
  CHECK((phi.H() - Mat::Identity(4, 4)).norm() > 0);
  CHECK((phi.H() - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 0.1);
  CHECK(phi.b().norm() == 0);
  CHECK(initial_model(4, c, 9).H() == phi.H());
  CHECK(!(initial_model(4, c, 10).H() == phi.H()));
}

TEST_CASE("training is deterministic and resumable") {
  const TrainProblem p = self_problem(3, 2);
  const TrainConfig c = small_config();
  TrainState a = initial_state(p, c, 0), b = initial_state(p, c, 0);
  nlohmann::json snapshot;
  run_training(p, c, a, [&](const TrainState& s) {
    if (s.trace.size() == 35) snapshot = s.to_json();
  });
  run_training(p, c, b);
  CHECK(a.phi.pack() == b.phi.pack());

  // Round trip through a file, then finish from the mid-phase-2 snapshot.
  const std::string path = "test_trainer_ckpt.json";
  write_json_file(path, snapshot);
  TrainState r = TrainState::from_json(read_json_file(path));
  std::remove(path.c_str());
  CHECK(r.phase == 2);
  CHECK(r.step == 5);
  run_training(p, c, r);
  CHECK(r.phi.pack() == a.phi.pack());
  CHECK(r.trace.size() == a.trace.size());
  CHECK(r.trace.back().total == a.trace.back().total);

  // Periodic checkpoints end with the finished state.
  TrainConfig cc = c;
  cc.checkpoint_every = 10;
  cc.checkpoint_path = "test_trainer_ckpt2.json";
  TrainState d = initial_state(p, cc, 0);
  run_training(p, cc, d);
  const TrainState done = TrainState::from_json(read_json_file(cc.checkpoint_path));
  std::remove(cc.checkpoint_path.c_str());
  CHECK(done.phase == 3);
  CHECK(done.phi.pack() == a.phi.pack());
}

TEST_CASE("self-alignment of a random linear system") {
  const TrainProblem p = self_problem(4, 7);
  TrainConfig c;
  c.n_batch_linear = 2000;
  c.loss_weights.reg_v = 0;
  const TrainReport r = train_multi(p, c);
  REQUIRE(r.selected == 0);
  CHECK(r.best().scores.orbital_similarity >= 0.99);
  CHECK(r.best().clip_events == 0);
  const auto& tr = r.best().trace;
  CHECK(tr.back().total < tr.front().total);
}

TEST_CASE("train_multi selection and failures") {
  auto f = std::make_shared<LinearSystem>(random_linear(3, 3));
  auto g = std::make_shared<LinearSystem>(random_linear(3, 4));
  auto px = std::make_shared<StandardNormal>(3);
  const TrainProblem p{f, g, px, px};
  TrainConfig c = small_config();
  c.n_batch_full = 0;
  c.n_rep = 3;
  const TrainReport r = train_multi(p, c);
  for (const RepResult& x : r.reps) {
    CHECK(x.ok);
    CHECK(r.best().metric >= x.metric);
  }
  CHECK(r.to_json()["reps"].size() == 3);

  // n_rep = 1 reproduces the first repetition exactly.
  TrainConfig one = c;
  one.n_rep = 1;
  const TrainReport s = train_multi(p, one);
  CHECK(s.best().phi.pack() == r.reps[0].phi.pack());
  CHECK(s.best().metric == r.reps[0].metric);

  auto bad = std::make_shared<Exploding>(3);
  const TrainProblem q{bad, g, px, px};
  try {
    train_multi(q, c);
    FAIL("expected failure");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("rep 2") != std::string::npos);
    CHECK(msg.find("blew up") != std::string::npos);
  }
}

TEST_CASE("config json and validation") {
  TrainConfig c = small_config();
  c.selection_metric = SelectionMetric::FixedPointSimilarity;
  const TrainConfig d = TrainConfig::from_json(c.to_json());
  CHECK(d.to_json() == c.to_json());
  nlohmann::json j = c.to_json();
  j["lr_lineer"] = 0.1;
  CHECK_THROWS_AS(TrainConfig::from_json(j), ConfigError);
  j = c.to_json();
  j["lr_full"] = 0.0;
  CHECK_THROWS_AS(TrainConfig::from_json(j), ConfigError);
  j = c.to_json();
  j["n_rep"] = 0;
  CHECK_THROWS_AS(TrainConfig::from_json(j), ConfigError);

  const std::string path = "test_trainer_trace.csv";
  write_trace_csv(path, {LossBreakdown{}, LossBreakdown{}});
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,l1,l2,l3,l4,reg_v,reg_orth,total");
  std::remove(path.c_str());
}
