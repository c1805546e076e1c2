// Acceptance checks: one PASS/FAIL line per criterion.
//   acceptance            run all criteria
//   acceptance 3 7        run selected criteria
// Experiment summaries are written under $DFORM_ACCEPTANCE_OUT (default ./acceptance_out).
#include <Eigen/Eigenvalues>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "dform/analysis.hpp"
#include "dform/experiments.hpp"
#include "dform/trainer.hpp"
#include "helpers.hpp"

using namespace dform;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string out_root() {
  const char* e = std::getenv("DFORM_ACCEPTANCE_OUT");
  return e ? e : "acceptance_out";
}

std::string f4(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.4f", v);
  return b;
}

std::string g3(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3g", v);
  return b;
}

double num(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

json experiment(const std::string& id, Scale scale, std::uint64_t seed, const json& overrides,
                const std::string& tag) {
  ExperimentOptions o;
  o.scale = scale;
  o.seed = seed;
  o.overrides = overrides;
  o.out_dir = (std::filesystem::path(out_root()) / tag).string();
  o.verbose = true;
  return run_experiment(id, o);
}

// Clip-guard activations are reported but do not decide the verdict.
std::string clip_note(int clips) { return ", clip guard fired " + std::to_string(clips) + "x"; }

// ------------------------------------------------------------------------------------------
// 1. gradients against central differences

double max_grad_error(const VectorField& f, const VectorField& g, const LossWeights& w, Index n,
                      std::uint64_t seed) {
  const LossProblem lp(f, g, w);
  Rng rng = make_rng(seed, 1);
  const LossBatches b{normal_matrix(rng, n, 8), normal_matrix(rng, g.dim(), 8), normal_matrix(rng, n, 8)};
  double worst = 0;
  for (bool use_flow : {false, true}) {
    Diffeomorphism phi = testing::random_diffeo(n, seed);
    Vec grad;
    loss_gradient(lp, phi, b, use_flow, grad);
    const Vec th = phi.pack(!use_flow);
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
      worst = std::max(worst, std::abs(fd - grad(i)) / std::max(std::abs(fd), floor));
    }
  }
  return worst;
}

Outcome c1_gradients() {
  double worst = 0;
  int instances = 0;
  for (Index n : {2, 3, 5}) {
    for (std::uint64_t s = 0; s < 2; ++s) {
      const std::uint64_t seed = 100 * std::uint64_t(n) + s;
      Rng rng = make_rng(seed, 2);
      // same dimension: both orbital terms and both regularizers
      RnnSystem f(normal_matrix(rng, n, n, 1.2 / std::sqrt(double(n))));
      LinearSystem g(random_linear(n, seed));
      LossWeights w;
      w.reg_v = 0.1;
      w.reg_orth = 0.1;
      worst = std::max(worst, max_grad_error(f, g, w, n, seed));
      // template of dimension n - 1: adds the two invariance terms
      const Index m = n - 1;
      LinearSystem tm(random_linear(m, seed + 1));
      w.l3 = 0.5;
      w.l4 = 0.5;
      worst = std::max(worst, max_grad_error(f, tm, w, n, seed + 7));
      instances += 2;
    }
  }
  return {worst < 1e-4, std::to_string(instances) + " instances, max relative error " + g3(worst) + " (< 1e-4)"};
}

// 2. self-alignment
Outcome c2_self() {
  auto f = std::make_shared<LinearSystem>(random_linear(4, 2024));
  auto px = std::make_shared<StandardNormal>(4);
  TrainConfig c;
  c.n_batch_linear = 2000;
  c.seed = 1;
  const TrainReport r = train_multi({f, f, px, px}, c);
  const double os = r.best().scores.orbital_similarity;
  return {os >= 0.99,
          "orbital similarity " + f4(os) + " (>= 0.99)" + clip_note(r.best().clip_events)};
}

// 3. orthogonal recovery of linear systems
Outcome c3_linear() {
  const json s = experiment("linear_equiv", Scale::Desk, 0, {{"categories", {"orthogonal"}}}, "c03_linear_equiv");
  const json& m = s["metrics"];
  const double med = num(m["median_forward_orthogonal_n16"]);
  const int clips = m["clip_events"];
  return {med >= 0.95, "median forward alignment " + f4(med) + " (>= 0.95)" + clip_note(clips)};
}

// 4. signature concordance
Outcome c4_signature() {
  const json s = experiment("signature_grid", Scale::Desk, 0, json::object(), "c04_signature_grid");
  const json& m = s["metrics"];
  const bool inc = m["level_means_increasing"];
  const double same = num(m["same_signature_mean"]), opp = num(m["opposite_signature_mean"]);
  const int clips = m["clip_events"];
  std::string levels;
  for (const auto& l : m["levels"]) levels += (levels.empty() ? "" : " < ") + f4(num(l["mean"]));
  return {inc && same >= opp + 0.2 && same >= 0.75,
          "level means " + levels + (inc ? " (increasing)" : " (NOT increasing)") + ", same " + f4(same) +
              " (>= 0.75 and >= opposite + 0.2), opposite " + f4(opp) + clip_note(clips)};
}

// 5. RNN transformations
Outcome c5_rnn() {
  const json s = experiment("rnn_transform", Scale::Desk, 0, json::object(), "c05_rnn_transform");
  const json& m = s["metrics"];
  const double fo = num(m["median_fixed_point_orthogonal_n16"]), jo = num(m["median_jacobian_orthogonal_n16"]);
  const double fg = num(m["median_fixed_point_general_n16"]);
  const int clips = m["clip_events"];
  return {fo >= 0.98 && jo >= 0.98 && fg >= 0.9,
          "orthogonal: median fixed-point " + f4(fo) + " (>= 0.98), median Jacobian " + f4(jo) +
              " (>= 0.98); general: median fixed-point " + f4(fg) + " (>= 0.9)" + clip_note(clips)};
}

// 6. Van der Pol at paper scale, three seeds
Outcome c6_vdp() {
  std::vector<double> lin, non;
  bool ordered = true;
  int clips = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    const json s = experiment("vdp", Scale::Paper, seed, json::object(), "c06_vdp_seed" + std::to_string(seed));
    lin.push_back(num(s["metrics"]["linear_forward"]));
    non.push_back(num(s["metrics"]["nonlinear_forward"]));
    ordered = ordered && non.back() > lin.back();
    clips += s["metrics"]["clip_events"].get<int>();
  }
  const double ml = mean(lin), mn = mean(non);
  std::string per;
  for (std::size_t i = 0; i < lin.size(); ++i) per += " " + f4(lin[i]) + "/" + f4(non[i]);
  return {std::abs(ml - 0.904) <= 0.05 && std::abs(mn - 0.971) <= 0.02 && ordered,
          "mean linear " + f4(ml) + " (0.904 +- 0.05), mean nonlinear " + f4(mn) +
              " (0.971 +- 0.02), linear/nonlinear per seed" + per +
              (ordered ? " (nonlinear higher in every seed)" : " (ordering violated)") + clip_note(clips)};
}

// 7. flow-transformed 2-D system
Outcome c7_flow2d() {
  const json s = experiment("flow2d", Scale::Paper, 0, json::object(), "c07_flow2d");
  const double os = num(s["metrics"]["nonlinear_orbital"]);
  const int clips = s["metrics"]["clip_events"];
  return {os >= 0.95, "nonlinear orbital similarity " + f4(os) + " (>= 0.95), linear " +
                                        f4(num(s["metrics"]["linear_orbital"])) + clip_note(clips)};
}

// 8. flow-transformed 8-D systems
Outcome c8_flow8d() {
  const json s = experiment("flow8d", Scale::Desk, 0, json::object(), "c08_flow8d");
  const json& m = s["metrics"];
  const double ps = num(m["similarity_test"]["p"]), pl = num(m["loss_test"]["p"]);
  const int clips = m["clip_events"];
  return {ps < 0.05 && pl < 0.05,
          "one-sided paired t-test p: similarity " + g3(ps) + ", final loss " + g3(pl) + " (< 0.05)" + clip_note(clips)};
}

// 9. bounded-line-attractor similarity matrix
Outcome c9_bla() {
  const json s = experiment("bla_matrix", Scale::Desk, 0, json::object(), "c09_bla_matrix");
  const json& m = s["metrics"];
  const double w12 = num(m["within_12"]), w45 = num(m["within_45"]);
  const double cmin = num(m["cross_min"]), cmax = num(m["cross_max"]), s3 = num(m["system3_min"]);
  const int clips = m["clip_events"];
  const bool ok = w12 >= 0.95 && w45 >= 0.95 && cmax < std::min(w12, w45) && s3 >= cmin;
  return {ok, "within 1-2 " + f4(w12) + ", 4-5 " + f4(w45) + " (>= 0.95); cross-group max " + f4(cmax) +
                  " (< within); system 3 min " + f4(s3) + " (>= cross-group min " + f4(cmin) + ")" + clip_note(clips)};
}

// 10. SNIC recovery
Outcome c10_snic() {
  const json s = experiment("snic_recover", Scale::Desk, 0, json::object(), "c10_snic_recover");
  const json& m = s["metrics"];
  const double cd = num(m["cross_dim"]), c1 = num(m["cos_stable"]), c2 = num(m["cos_saddle"]);
  const double r1 = num(m["residual_stable"]), r2 = num(m["residual_saddle"]);
  const int clips = m["clip_events"];
  return {cd >= 0.9 && c1 >= 0.95 && c2 >= 0.95 && r1 < 1e-2 && r2 < 1e-2,
          "cross-dim " + f4(cd) + " (>= 0.9); cosines " + f4(c1) + ", " + f4(c2) + " (>= 0.95); residuals " +
              g3(r1) + ", " + g3(r2) + " (< 1e-2)" + clip_note(clips)};
}

// 11. saddle limit cycle
Outcome c11_saddle() {
  const json s = experiment("saddle_cycle", Scale::Desk, 0, json::object(), "c11_saddle_cycle");
  const json& m = s["metrics"];
  const double os = num(m["orbital_similarity"]), hd = num(m["hausdorff"]);
  const int clips = m["clip_events"];
  return {os >= 0.95 && hd <= 0.1,
          "orbital similarity " + f4(os) + " (>= 0.95), Hausdorff " + g3(hd) + " (<= 0.1)" + clip_note(clips)};
}

// 12. template matching on MINDy-form models
Outcome c12_mindy() {
  const json s = experiment("mindy_template", Scale::Desk, 0, json::object(), "c12_mindy_template");
  const json& m = s["metrics"];
  const double lmin = num(m["limit_cycle_min"]), lm = num(m["limit_cycle_mean"]), om = num(m["other_mean"]);
  const int clips = m["clip_events"];
  return {lmin >= 0.8 && lm - om >= 0.1,
          "limit-cycle min " + f4(lmin) + " (>= 0.8), class means " + f4(lm) + " vs " + f4(om) +
              " (difference >= 0.1)" + clip_note(clips)};
}

// 13. theory oracles
Outcome c13_theory() {
  std::vector<std::string> notes;
  bool ok = true;
  Rng rng = make_rng(13, 0);
  const Mat Y = normal_matrix(rng, 6, 100);

  // (a) a map commuting with the dynamics leaves the field unchanged under pushforward
  {
    const Mat A = random_linear(6, 5);
    const Mat H = Mat::Identity(6, 6) + 0.3 * A + 0.1 * A * A;  // polynomial in A
    LinearSystem f(A);
    AffineTransformedSystem push(std::make_shared<LinearSystem>(A), H, Vec::Zero(6));
    double err = (push.eval_batch(Y) - f.eval_batch(Y)).cwiseAbs().maxCoeff();
    // rotation-equivariant Hopf field and a rotation
    auto hopf = std::make_shared<HopfSystem>(1.0);
    Mat R(2, 2);
    R << std::cos(0.7), -std::sin(0.7), std::sin(0.7), std::cos(0.7);
    AffineTransformedSystem hp(hopf, R, Vec::Zero(2));
    err = std::max(err, (hp.eval_batch(Y.topRows(2)) - hopf->eval_batch(Y.topRows(2))).cwiseAbs().maxCoeff());
    ok = ok && err <= 1e-8;
    notes.push_back("commutant " + g3(err) + " (<= 1e-8)");
  }
  // (b) the time-tau flow of f is a symmetry of f
  {
    auto f = std::make_shared<LinearSystem>(linear_with_signature({0, 6, 0}, 9));
    const FieldFlowMap flow(f, 0.3, 0.0, 100);
    FlowTransformedSystem push(f, flow);
    const double err = (push.eval_batch(Y) - f->eval_batch(Y)).norm() / f->eval_batch(Y).norm();
    ok = ok && err <= 1e-6;
    notes.push_back("flow symmetry " + g3(err) + " (<= 1e-6)");
  }
  // (c) orthogonal maps: forward loss on phi(x) equals backward loss on x
  {
    LinearSystem f(random_linear(6, 3));
    RnnSystem g(normal_matrix(rng, 6, 6, 0.5));
    const Diffeomorphism phi = Diffeomorphism::affine_only(random_orthogonal_seeded(6, 4), Vec::Zero(6));
    const double fw = orbital_loss_forward(f, g, phi, phi.forward(Y, Solver::Dopri5));
    const double bw = orbital_loss_backward(f, g, phi, Y);
    const double err = std::abs(fw - bw);
    ok = ok && err <= 1e-10;
    notes.push_back("orthogonal loss symmetry " + g3(err) + " (<= 1e-10)");
  }
  // (d) matching the linearization at the origin does not match the nonlinear system
  {
    const Index n = 8;
    std::shared_ptr<RnnSystem> f;
    Vec xstar;
    for (std::uint64_t s = 1; s < 50 && !f; ++s) {
      auto cand = std::make_shared<RnnSystem>(low_rank_rnn(n, s).W);
      FixedPointOptions fo;
      fo.seed = s;
      const auto st = find_fixed_points(*cand, fo).nonzero_stable();
      if (!st.empty()) {
        f = cand;
        xstar = st.front();
      }
    }
    const Mat H = random_orthogonal_seeded(n, 77);
    auto g = std::make_shared<AffineTransformedSystem>(f, H, Vec::Zero(n));
    const Mat J0 = f->jacobian(Vec::Zero(n));
    const Mat C = Mat::Identity(n, n) + 0.5 * (J0 + Mat::Identity(n, n));  // commutes with J0
    const Mat H2 = H * C;
    const Diffeomorphism phi2 = Diffeomorphism::affine_only(H2, Vec::Zero(n));
    const double js = jacobian_similarity_at_origin(*f, *g, phi2);
    const double gn = g->eval(Vec(H2 * xstar)).norm();
    ok = ok && js >= 0.99 && gn >= 0.1;
    notes.push_back("linearization: Jacobian similarity " + f4(js) + " (>= 0.99), |g| at mapped fixed point " +
                    g3(gn) + " (>= 0.1)");
  }
  std::string d;
  for (const auto& s : notes) d += (d.empty() ? "" : "; ") + s;
  return {ok, d};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "gradient oracle", c1_gradients},
      {2, "self-alignment", c2_self},
      {3, "orthogonal linear recovery", c3_linear},
      {4, "signature concordance", c4_signature},
      {5, "RNN transformation", c5_rnn},
      {6, "Van der Pol linear vs nonlinear", c6_vdp},
      {7, "flow-transformed 2-D system", c7_flow2d},
      {8, "flow-transformed 8-D systems", c8_flow8d},
      {9, "bounded-line-attractor similarity matrix", c9_bla},
      {10, "SNIC recovery", c10_snic},
      {11, "saddle limit cycle", c11_saddle},
      {12, "template matching on MINDy-form models", c12_mindy},
      {13, "theory oracles", c13_theory},
  };
  std::vector<int> pick;
  for (int i = 1; i < argc; ++i) pick.push_back(std::atoi(argv[i]));
  int failed = 0;
  for (const Criterion& c : all) {
    if (!pick.empty() && std::find(pick.begin(), pick.end(), c.id) == pick.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char t[32];
    std::snprintf(t, sizeof t, "%.1f s", secs);
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << c.id << " " << c.name << ": " << o.detail << " [" << t
              << "]" << std::endl;
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
