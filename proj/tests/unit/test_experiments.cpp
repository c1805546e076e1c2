#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <filesystem>

#include "dform/experiments.hpp"
#include "dform/io.hpp"
#include "helpers.hpp"

using namespace dform;

TEST_CASE("eigen type counts survive construction") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Mat A = linear_with_types(3, 2, 1, 3, s);
    CHECK(A.rows() == 14);
    const EigenTypes t = eigen_types(A);
    CHECK(t.pos_real == 3);
    CHECK(t.pos_pairs == 2);
    CHECK(t.neg_real == 1);
    CHECK(t.neg_pairs == 3);
  }
  CHECK_THROWS_AS(linear_with_types(0, 0, 0, 0, 1), ConfigError);
  // random_linear draws are classified consistently with their spectrum
  const Mat R = random_linear(9, 4);
  const EigenTypes t = eigen_types(R);
  CHECK(t.pos_real + 2 * t.pos_pairs + t.neg_real + 2 * t.neg_pairs == 9);
}

TEST_CASE("monostable rnn has a stable origin") {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Mat J = monostable_rnn(10, s);
    Eigen::EigenSolver<Mat> es(J - Mat::Identity(10, 10), false);
    CHECK(es.eigenvalues().real().maxCoeff() < 0);
  }
  CHECK((monostable_rnn(6, 2) - monostable_rnn(6, 2)).norm() == 0);
}

TEST_CASE("paired t-test matches reference values") {
  // reference: scipy.stats.ttest_rel(a, b, alternative="greater")
  const std::vector<double> a{1.2, 0.8, 1.9, 1.4, 0.3, 1.1}, b{1.0, 0.9, 1.1, 0.7, 0.4, 0.6};
  const PairedTTest r = paired_t_test(a, b);
  CHECK(r.t == doctest::Approx(2.0761369963434992).epsilon(1e-12));
  CHECK(r.p == doctest::Approx(0.04625750277521381).epsilon(1e-9));
  CHECK(r.df == 5);
  const PairedTTest s = paired_t_test(b, a);
  CHECK(s.p == doctest::Approx(1 - r.p).epsilon(1e-9));
  CHECK(paired_t_test({2, 3}, {1, 2}).p == 0.0);  // constant positive difference
  CHECK_THROWS_AS(paired_t_test({1}, {0}), ConfigError);
}

TEST_CASE("summary statistics") {
  const std::vector<double> v{3, 1, 4, 1, 5, 9, 2, 6};
  // reference: numpy.quantile (linear interpolation)
  CHECK(quantile(v, 0.25) == doctest::Approx(1.75));
  CHECK(median(v) == doctest::Approx(3.5));
  CHECK(quantile(v, 0.75) == doctest::Approx(5.25));
  CHECK(mean(v) == doctest::Approx(31.0 / 8));
  CHECK(std::isnan(median({})));
  std::vector<double> c(500, 2.0);
  CHECK(smoothed_last(c) == doctest::Approx(2.0));
  std::vector<double> step(1000, 0.0);
  step[0] = 1.0;
  CHECK(smoothed_last(step, 0.5) == doctest::Approx(std::pow(0.5, 999)));
}

TEST_CASE("every preset has parameters at both scales") {
  CHECK(preset_ids().size() == 10);
  for (const std::string& id : preset_ids()) {
    const auto d = preset_parameters(id, Scale::Desk);
    const auto p = preset_parameters(id, Scale::Paper);
    CHECK(d.is_object());
    CHECK(p.is_object());
    CHECK_FALSE(p.contains("desk_changes"));
  }
  CHECK(preset_parameters("flow8d", Scale::Paper)["experiments"] == 30);
  CHECK(preset_parameters("vdp", Scale::Paper)["nonlinear"]["n_batch_full"] == 3000);
  CHECK_THROWS_AS(preset_parameters("nope", Scale::Desk), ConfigError);
  CHECK_FALSE(is_preset("nope"));
  CHECK(scale_from_name("paper") == Scale::Paper);
  CHECK_THROWS_AS(scale_from_name("huge"), ConfigError);
}

namespace {

nlohmann::json tiny(const std::string& id) {
  using nlohmann::json;
  if (id == "linear_equiv") return {{"pairs", 1}, {"n_rep", 1}, {"n_batch_linear", 20}, {"dims", {4}}};
  if (id == "signature_grid")
    return {{"n", 2}, {"pos_counts", {2, 0}}, {"pairs_per_cell", 1}, {"n_rep", 1}, {"n_batch_linear", 20}};
  if (id == "rnn_transform") return {{"systems_per_type", 1}, {"n_rep", 2}, {"n_batch_linear", 20}, {"dims", {8}}};
  if (id == "vdp") return {{"linear", {{"n_batch_linear", 10}}}, {"nonlinear", {{"n_batch_linear", 5}, {"n_batch_full", 5}}}};
  if (id == "flow2d") return {{"n_batch", 5}, {"ground_truth_steps", 10}};
  if (id == "flow8d") return {{"experiments", 2}, {"n_rep", 1}, {"n_batch", 5}, {"n", 3}, {"ground_truth_steps", 5}};
  if (id == "bla_matrix") return {{"n_rep", 1}, {"n_batch_linear", 5}, {"n_batch_full", 5}};
  if (id == "snic_recover") return {{"rnn_dim", 2}, {"n_batch_linear", 20}};
  if (id == "saddle_cycle") return {{"linear_signature", {1, 1, 0}}, {"n_batch_linear", 20}, {"cycle_points", 8}};
  return {{"n", 6}, {"models", {{"limit_cycle", 1}, {"multistable", 1}, {"monostable", 1}}}, {"n_batch_linear", 10}, {"n_rep", 1}};
}

}  // namespace

TEST_CASE("presets run end to end at tiny budgets") {
  const auto dir = std::filesystem::temp_directory_path() / "dform_test_experiments";
  std::filesystem::remove_all(dir);
  for (const std::string& id : preset_ids()) {
    CAPTURE(id);
    ExperimentOptions o;
    o.seed = 3;
    o.out_dir = (dir / id).string();
    o.overrides = tiny(id);
    const auto s = run_experiment(id, o);
    CHECK(s["preset"] == id);
    CHECK(s["metrics"].is_object());
    CHECK(s["metrics"].contains("clip_events"));
    CHECK(std::filesystem::exists(dir / id / "summary.json"));
  }
  // determinism
  ExperimentOptions o;
  o.seed = 5;
  o.overrides = tiny("linear_equiv");
  const auto a = run_experiment("linear_equiv", o)["metrics"];
  const auto b = run_experiment("linear_equiv", o)["metrics"];
  CHECK(a == b);
  std::filesystem::remove_all(dir);
}

TEST_CASE("bad overrides are rejected") {
  ExperimentOptions o;
  o.overrides = {{"no_such_parameter", 1}};
  CHECK_THROWS_AS(run_experiment("vdp", o), ConfigError);
  CHECK_THROWS_AS(run_experiment("nope", ExperimentOptions{}), ConfigError);
}
