#pragma once

#include <string>
#include <vector>

#include "dform/trainer.hpp"

namespace dform {

enum class Scale { Desk, Paper };
const char* scale_name(Scale s);
Scale scale_from_name(const std::string& s);

struct ExperimentOptions {
  Scale scale = Scale::Desk;
  std::uint64_t seed = 0;
  std::string out_dir;  // empty: no files written
  bool verbose = false;
  // Merged into the preset parameters (JSON merge patch) before running; used for shortened
  // runs. Applied overrides are listed in the summary.
  nlohmann::json overrides = nlohmann::json::object();
};

/// Preset ids in a fixed order.
const std::vector<std::string>& preset_ids();
bool is_preset(const std::string& id);

/// Resolved parameters of a preset at a scale (systems, budgets, weights), with notes on how
/// the desk values differ from the published ones.
nlohmann::json preset_parameters(const std::string& id, Scale scale);

/// Runs a preset end to end. The summary carries "preset", "scale", "seed", "parameters",
/// "metrics" (the numbers the acceptance checks read) and "wall_time". Plot data goes to
/// out_dir as CSV when set.
nlohmann::json run_experiment(const std::string& id, const ExperimentOptions& opt);

// Helpers shared with the command-line tool and the tests.

/// Linear system with the given counts of real eigenvalues and complex pairs on each side of
/// the imaginary axis; magnitudes of real and imaginary parts ~ U(0, 1], orthogonally mixed.
Mat linear_with_types(int pos_real, int pos_pairs, int neg_real, int neg_pairs,
                      std::uint64_t seed);

struct EigenTypes {
  int pos_real = 0, pos_pairs = 0, neg_real = 0, neg_pairs = 0;
};
EigenTypes eigen_types(const Mat& A, double tol = 1e-9);

/// Stable-origin RNN x' = -x + J tanh x with J ~ N(0, 0.81/n), redrawn until -I + J is stable.
Mat monostable_rnn(Index n, std::uint64_t seed);

/// One-sided paired t-test of mean(a - b) > 0.
struct PairedTTest {
  double t = 0, p = 1;
  int df = 0;
  double mean_diff = 0;
};
PairedTTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

double median(std::vector<double> v);
double quantile(std::vector<double> v, double q);
double mean(const std::vector<double>& v);

/// Exponentially smoothed last value of a series (weight alpha on each new value).
double smoothed_last(const std::vector<double>& v, double alpha = 0.01);

}  // namespace dform
