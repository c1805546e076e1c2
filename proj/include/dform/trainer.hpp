#pragma once

#include <functional>
#include <limits>

#include "dform/analysis.hpp"

namespace dform {

enum class SelectionMetric { OrbitalSimilarity, FixedPointSimilarity, CrossDimAlignment };
const char* selection_metric_name(SelectionMetric s);
SelectionMetric selection_metric_from_name(const std::string& s);

struct TrainConfig {
  Index batch_size = 128;
  int n_batch_linear = 0;
  int n_batch_full = 0;
  double lr_linear = 0.002;
  double lr_full = 0.0002;
  int n_rep = 1;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  SelectionMetric selection_metric = SelectionMetric::OrbitalSimilarity;
  Index eval_samples = 1024;

  // Model and solver knobs.
  bool has_affine = true;
  bool has_flow = true;  // ignored (no flow built) when n_batch_full == 0
  Index hidden = -1;     // -1: max(2n, 20)
  int flow_steps = 20;
  double init_noise = 0.01;  // H = I + N(0, init_noise^2)
  Index reg_samples = 128;   // N(0, I) points for the flow-magnitude regularizer
  double clip_norm = 100.0;

  int checkpoint_every = 0;  // 0: off
  std::string checkpoint_path;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// NADAM with the momentum-decay schedule mu_t = b1 (1 - 0.5 * 0.96^(t * psi)).
class Nadam {
 public:
  Nadam() = default;
  explicit Nadam(Index n_params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                 double psi = 0.004);
  void step(Vec& params, const Vec& grad, double lr);
  long steps() const { return t_; }
  const Vec& m() const { return m_; }
  const Vec& v() const { return v_; }
  nlohmann::json to_json() const;
  static Nadam from_json(const nlohmann::json& j);

 private:
  double mu(long t) const;
  double b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8, psi_ = 0.004;
  Vec m_, v_;
  double mu_prod_ = 1.0;
  long t_ = 0;
};

/// Systems and sampling laws for one alignment problem. f on R^n, g on R^m (m <= n).
struct TrainProblem {
  SystemPtr f, g;
  DistPtr px, py;
};

/// Mutable state of one training run; serializable as a checkpoint.
struct TrainState {
  int phase = 1;  // 1: affine only, 2: all parameters, 3: done
  int step = 0;   // steps completed within the current phase
  Diffeomorphism phi;
  Nadam opt;
  Rng rng;
  std::vector<LossBreakdown> trace;
  int clip_events = 0;

  nlohmann::json to_json() const;
  static TrainState from_json(const nlohmann::json& j);
};

struct RepResult {
  int rep = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Diffeomorphism phi;
  std::vector<LossBreakdown> trace;
  LossBreakdown final_loss;  // dopri5 evaluation on the held-out set
  AlignmentScores scores;
  double fixed_point_similarity = std::numeric_limits<double>::quiet_NaN();
  double metric = std::numeric_limits<double>::quiet_NaN();
  int clip_events = 0;
  double wall_time = 0;
};

struct TrainReport {
  std::vector<RepResult> reps;
  int selected = -1;
  double wall_time = 0;
  const RepResult& best() const { return reps.at(static_cast<std::size_t>(selected)); }
  nlohmann::json to_json() const;  // without models and traces
};

/// Initial model for a repetition seed: identity flow, H = I + N(0, init_noise^2), b = 0.
Diffeomorphism initial_model(Index n, const TrainConfig& c, std::uint64_t rep_seed);

/// Fixed held-out evaluation batches (shared by all repetitions of a config).
LossBatches evaluation_batches(const TrainProblem& p, const TrainConfig& c);

/// Loss and flattened gradient for the trainable block (affine only when use_flow is false).
LossBreakdown loss_gradient(const LossProblem& lp, const Diffeomorphism& phi,
                            const LossBatches& b, bool use_flow, Vec& grad);

/// Runs the two-phase schedule from `state` to completion. Fresh optimizer at phase 2.
/// `on_step` (optional) sees the state after every step.
void run_training(const TrainProblem& p, const TrainConfig& c, TrainState& state,
                  const std::function<void(const TrainState&)>& on_step = {});

/// One repetition from initial_model(seed), then dopri5 evaluation on `eval`.
RepResult train(const TrainProblem& p, const TrainConfig& c, int rep, const LossBatches& eval,
                const FixedPointSet* fp_f = nullptr, const FixedPointSet* fp_g = nullptr);
/// Same, continuing from a given start state (resume or a custom phi_init).
RepResult train_from(const TrainProblem& p, const TrainConfig& c, TrainState state, int rep,
                     const LossBatches& eval, const FixedPointSet* fp_f = nullptr,
                     const FixedPointSet* fp_g = nullptr);
TrainState initial_state(const TrainProblem& p, const TrainConfig& c, int rep);
TrainState initial_state(const Diffeomorphism& phi_init, const TrainConfig& c, int rep);

/// n_rep repetitions (seeds seed .. seed + n_rep - 1) in parallel; selects the maximizer of
/// the selection metric on the common evaluation set. Throws if every repetition failed.
TrainReport train_multi(const TrainProblem& p, const TrainConfig& c);

void write_trace_csv(const std::string& path, const std::vector<LossBreakdown>& trace);

}  // namespace dform
