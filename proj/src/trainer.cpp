#include "dform/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dform/io.hpp"
#include "dform/parallel.hpp"

namespace dform {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

nlohmann::json breakdown_json(const LossBreakdown& b) {
  return {{"l1", num(b.l1)},       {"l2", num(b.l2)},       {"l3", num(b.l3)},
          {"l4", num(b.l4)},       {"reg_v", num(b.reg_v)}, {"reg_orth", num(b.reg_orth)},
          {"total", num(b.total)}, {"degenerate", b.degenerate}};
}

LossBreakdown breakdown_from_json(const nlohmann::json& j) {
  auto get = [&](const char* k) { return j.at(k).is_null() ? kNaN : j.at(k).get<double>(); };
  LossBreakdown b;
  b.l1 = get("l1");
  b.l2 = get("l2");
  b.l3 = get("l3");
  b.l4 = get("l4");
  b.reg_v = get("reg_v");
  b.reg_orth = get("reg_orth");
  b.total = get("total");
  b.degenerate = j.at("degenerate").get<int>();
  return b;
}

}  // namespace

const char* selection_metric_name(SelectionMetric s) {
  switch (s) {
    case SelectionMetric::OrbitalSimilarity: return "orbital_similarity";
    case SelectionMetric::FixedPointSimilarity: return "fixed_point_similarity";
    case SelectionMetric::CrossDimAlignment: return "cross_dim_alignment";
  }
  return "?";
}

SelectionMetric selection_metric_from_name(const std::string& s) {
  if (s == "orbital_similarity") return SelectionMetric::OrbitalSimilarity;
  if (s == "fixed_point_similarity") return SelectionMetric::FixedPointSimilarity;
  if (s == "cross_dim_alignment") return SelectionMetric::CrossDimAlignment;
  throw ConfigError("unknown selection metric '" + s + "'");
}

// ---------------------------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (n_batch_linear < 0 || n_batch_full < 0) throw ConfigError("batch counts must be >= 0");
  if (!(lr_linear > 0) || !(lr_full > 0)) throw ConfigError("learning rates must be > 0");
  if (n_rep < 1) throw ConfigError("n_rep must be >= 1");
  if (eval_samples < 1) throw ConfigError("eval_samples must be >= 1");
  if (flow_steps < 1) throw ConfigError("flow_steps must be >= 1");
  if (init_noise < 0) throw ConfigError("init_noise must be >= 0");
  if (reg_samples < 0) throw ConfigError("reg_samples must be >= 0");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be > 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (checkpoint_every > 0 && checkpoint_path.empty())
    throw ConfigError("checkpoint_every needs checkpoint_path");
  if (n_batch_linear > 0 && !has_affine)
    throw ConfigError("a linear phase needs the affine layer (has_affine = false)");
  if (!has_affine && !(has_flow && n_batch_full > 0))
    throw ConfigError("model would have no trainable part");
  loss_weights.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"n_batch_linear", n_batch_linear},
          {"n_batch_full", n_batch_full},
          {"lr_linear", lr_linear},
          {"lr_full", lr_full},
          {"n_rep", n_rep},
          {"seed", seed},
          {"loss_weights", loss_weights.to_json()},
          {"selection_metric", selection_metric_name(selection_metric)},
          {"eval_samples", eval_samples},
          {"has_affine", has_affine},
          {"has_flow", has_flow},
          {"hidden", hidden},
          {"flow_steps", flow_steps},
          {"init_noise", init_noise},
          {"reg_samples", reg_samples},
          {"clip_norm", clip_norm},
          {"checkpoint_every", checkpoint_every},
          {"checkpoint_path", checkpoint_path}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  check_keys(j,
             {"batch_size", "n_batch_linear", "n_batch_full", "lr_linear", "lr_full", "n_rep",
              "seed", "loss_weights", "selection_metric", "eval_samples", "has_affine",
              "has_flow", "hidden", "flow_steps", "init_noise", "reg_samples", "clip_norm",
              "checkpoint_every", "checkpoint_path"},
             "train config");
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.n_batch_linear = j.value("n_batch_linear", c.n_batch_linear);
  c.n_batch_full = j.value("n_batch_full", c.n_batch_full);
  c.lr_linear = j.value("lr_linear", c.lr_linear);
  c.lr_full = j.value("lr_full", c.lr_full);
  c.n_rep = j.value("n_rep", c.n_rep);
  c.seed = j.value("seed", c.seed);
  if (j.contains("loss_weights")) c.loss_weights = LossWeights::from_json(j.at("loss_weights"));
  if (j.contains("selection_metric"))
    c.selection_metric = selection_metric_from_name(j.at("selection_metric").get<std::string>());
  c.eval_samples = j.value("eval_samples", c.eval_samples);
  c.has_affine = j.value("has_affine", c.has_affine);
  c.has_flow = j.value("has_flow", c.has_flow);
  c.hidden = j.value("hidden", c.hidden);
  c.flow_steps = j.value("flow_steps", c.flow_steps);
  c.init_noise = j.value("init_noise", c.init_noise);
  c.reg_samples = j.value("reg_samples", c.reg_samples);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.checkpoint_path = j.value("checkpoint_path", c.checkpoint_path);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------------------------

Nadam::Nadam(Index n_params, double beta1, double beta2, double eps, double psi)
    : b1_(beta1), b2_(beta2), eps_(eps), psi_(psi), m_(Vec::Zero(n_params)),
      v_(Vec::Zero(n_params)) {}

double Nadam::mu(long t) const {
  return b1_ * (1.0 - 0.5 * std::pow(0.96, static_cast<double>(t) * psi_));
}

void Nadam::step(Vec& params, const Vec& grad, double lr) {
  require_dim(params.size(), m_.size(), "nadam params");
  require_dim(grad.size(), m_.size(), "nadam grad");
  ++t_;
  const double mu_t = mu(t_), mu_next = mu(t_ + 1);
  mu_prod_ *= mu_t;
  m_ = b1_ * m_ + (1.0 - b1_) * grad;
  v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
  const double bias2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const Vec denom = (v_ / bias2).cwiseSqrt().array() + eps_;
  const double cg = lr * (1.0 - mu_t) / (1.0 - mu_prod_);
  const double cm = lr * mu_next / (1.0 - mu_prod_ * mu_next);
  params.array() -= (cg * grad.array() + cm * m_.array()) / denom.array();
}

nlohmann::json Nadam::to_json() const {
  return {{"beta1", b1_},           {"beta2", b2_}, {"eps", eps_}, {"psi", psi_},
          {"m", vector_to_json(m_)}, {"v", vector_to_json(v_)},
          {"mu_prod", mu_prod_},     {"t", t_}};
}

Nadam Nadam::from_json(const nlohmann::json& j) {
  check_keys(j, {"beta1", "beta2", "eps", "psi", "m", "v", "mu_prod", "t"}, "optimizer state");
  Nadam o;
  o.b1_ = j.at("beta1").get<double>();
  o.b2_ = j.at("beta2").get<double>();
  o.eps_ = j.at("eps").get<double>();
  o.psi_ = j.at("psi").get<double>();
  o.m_ = vector_from_json(j.at("m"));
  o.v_ = vector_from_json(j.at("v"));
  require_dim(o.v_.size(), o.m_.size(), "optimizer state v");
  o.mu_prod_ = j.at("mu_prod").get<double>();
  o.t_ = j.at("t").get<long>();
  return o;
}

// ---------------------------------------------------------------------------------------------

nlohmann::json TrainState::to_json() const {
  std::ostringstream rs;
  rs << rng;
  nlohmann::json tr = nlohmann::json::array();
  for (const auto& b : trace) tr.push_back(breakdown_json(b));
  return {{"phase", phase}, {"step", step},         {"model", phi.to_json()},
          {"optimizer", opt.to_json()}, {"rng", rs.str()}, {"trace", tr},
          {"clip_events", clip_events}};
}

TrainState TrainState::from_json(const nlohmann::json& j) {
  check_keys(j, {"phase", "step", "model", "optimizer", "rng", "trace", "clip_events"},
             "checkpoint");
  TrainState s;
  s.phase = j.at("phase").get<int>();
  s.step = j.at("step").get<int>();
  if (s.phase < 1 || s.phase > 3 || s.step < 0) throw ConfigError("checkpoint: bad phase/step");
  s.phi = Diffeomorphism::from_json(j.at("model"));
  s.opt = Nadam::from_json(j.at("optimizer"));
  std::istringstream rs(j.at("rng").get<std::string>());
  rs >> s.rng;
  if (!rs) throw ConfigError("checkpoint: unreadable rng state");
  for (const auto& b : j.at("trace")) s.trace.push_back(breakdown_from_json(b));
  s.clip_events = j.at("clip_events").get<int>();
  return s;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const RepResult& r : reps) {
    nlohmann::json e = {{"rep", r.rep}, {"seed", r.seed}, {"ok", r.ok}};
    if (r.ok) {
      e["final_loss"] = breakdown_json(r.final_loss);
      e["scores"] = r.scores.to_json();
      e["fixed_point_similarity"] = num(r.fixed_point_similarity);
      e["metric"] = num(r.metric);
      e["clip_events"] = r.clip_events;
      e["steps"] = r.trace.size();
    } else {
      e["error"] = r.error;
    }
    rs.push_back(e);
  }
  return {{"reps", rs}, {"selected", selected}};
}

// ---------------------------------------------------------------------------------------------

Diffeomorphism initial_model(Index n, const TrainConfig& c, std::uint64_t rep_seed) {
  Rng rng = make_rng(rep_seed, 0xA1);
  const bool flow = c.has_flow && c.n_batch_full > 0;
  Diffeomorphism phi(n, c.has_affine, flow, c.hidden);
  if (flow) phi.set_field(DeformationField::identity_init(n, rng, c.hidden));
  if (c.has_affine)
    phi.set_affine(Mat::Identity(n, n) + normal_matrix(rng, n, n, c.init_noise), Vec::Zero(n));
  FlowConfig fc;
  fc.steps = c.flow_steps;
  phi.set_config(fc);
  return phi;
}

LossBatches evaluation_batches(const TrainProblem& p, const TrainConfig& c) {
  Rng rng = make_rng(c.seed, 0xE7A1);
  LossBatches b;
  b.xs = p.px->sample(c.eval_samples, rng);
  b.ys = p.py->sample(c.eval_samples, rng);
  b.reg = normal_matrix(rng, p.f->dim(), c.reg_samples);
  return b;
}

LossBreakdown loss_gradient(const LossProblem& lp, const Diffeomorphism& phi,
                            const LossBatches& b, bool use_flow, Vec& grad) {
  DiffeoGrad g = phi.zero_grad();
  const LossBreakdown out = loss_and_gradient(lp, phi, b, use_flow, &g);
  grad = phi.pack_grad(g, !use_flow);
  return out;
}

void run_training(const TrainProblem& p, const TrainConfig& c, TrainState& st,
                  const std::function<void(const TrainState&)>& on_step) {
  c.validate();
  const Index n = p.f->dim();
  require_dim(st.phi.dim(), n, "model dimension");
  require_dim(p.px->dim(), n, "p_x dimension");
  require_dim(p.py->dim(), p.g->dim(), "p_y dimension");
  const LossProblem lp(*p.f, *p.g, c.loss_weights);

  auto run_phase = [&](int steps, double lr, bool use_flow) {
    const bool affine_only = !use_flow;
    if (st.step == 0) st.opt = Nadam(st.phi.parameter_count(affine_only));
    while (st.step < steps) {
      LossBatches b;
      b.xs = p.px->sample(c.batch_size, st.rng);
      b.ys = p.py->sample(c.batch_size, st.rng);
      b.reg = normal_matrix(st.rng, n, c.reg_samples);
      Vec grad;
      const LossBreakdown lb = loss_gradient(lp, st.phi, b, use_flow, grad);
      const double gn = grad.norm();
      if (gn > c.clip_norm) {
        grad *= c.clip_norm / gn;
        ++st.clip_events;
        std::cerr << "dform: gradient norm " << gn << " clipped (phase " << st.phase << ", step "
                  << st.step << ")\n";
      }
      Vec theta = st.phi.pack(affine_only);
      st.opt.step(theta, grad, lr);
      st.phi.unpack(theta, affine_only);
      st.trace.push_back(lb);
      ++st.step;
      if (on_step) on_step(st);
      if (c.checkpoint_every > 0 && st.trace.size() % std::size_t(c.checkpoint_every) == 0)
        write_json_file(c.checkpoint_path, st.to_json());
    }
  };

  if (st.phase == 1) {
    if (c.n_batch_linear > 0) run_phase(c.n_batch_linear, c.lr_linear, false);
    st.phase = 2;
    st.step = 0;
  }
  if (st.phase == 2) {
    if (c.n_batch_full > 0) run_phase(c.n_batch_full, c.lr_full, st.phi.has_flow());
    st.phase = 3;
    st.step = 0;
  }
  if (c.checkpoint_every > 0) write_json_file(c.checkpoint_path, st.to_json());
}

TrainState initial_state(const Diffeomorphism& phi_init, const TrainConfig& c, int rep) {
  TrainState s;
  s.phi = phi_init;
  s.rng = make_rng(c.seed + static_cast<std::uint64_t>(rep), 0xB7);
  return s;
}

TrainState initial_state(const TrainProblem& p, const TrainConfig& c, int rep) {
  return initial_state(initial_model(p.f->dim(), c, c.seed + static_cast<std::uint64_t>(rep)),
                       c, rep);
}

RepResult train_from(const TrainProblem& p, const TrainConfig& c, TrainState state, int rep,
                     const LossBatches& eval, const FixedPointSet* fp_f,
                     const FixedPointSet* fp_g) {
  const auto t0 = std::chrono::steady_clock::now();
  RepResult r;
  r.rep = rep;
  r.seed = c.seed + static_cast<std::uint64_t>(rep);
  run_training(p, c, state, {});
  r.phi = state.phi;
  r.trace = std::move(state.trace);
  r.clip_events = state.clip_events;
  const LossProblem lp(*p.f, *p.g, c.loss_weights);
  r.final_loss = evaluate_losses(lp, r.phi, eval, Solver::Dopri5);
  r.scores = alignment_scores(*p.f, *p.g, r.phi, eval.xs, eval.ys, Solver::Dopri5);
  if (fp_f && fp_g) r.fixed_point_similarity = fixed_point_similarity(*fp_f, *fp_g, r.phi).similarity;
  switch (c.selection_metric) {
    case SelectionMetric::OrbitalSimilarity: r.metric = r.scores.orbital_similarity; break;
    case SelectionMetric::FixedPointSimilarity: r.metric = r.fixed_point_similarity; break;
    case SelectionMetric::CrossDimAlignment:
      r.metric = r.scores.cross ? r.scores.cross_dim : r.scores.orbital_similarity;
      break;
  }
  r.ok = true;
  r.wall_time = seconds_since(t0);
  return r;
}

RepResult train(const TrainProblem& p, const TrainConfig& c, int rep, const LossBatches& eval,
                const FixedPointSet* fp_f, const FixedPointSet* fp_g) {
  return train_from(p, c, initial_state(p, c, rep), rep, eval, fp_f, fp_g);
}

TrainReport train_multi(const TrainProblem& p, const TrainConfig& c) {
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const LossBatches eval = evaluation_batches(p, c);
  std::optional<FixedPointSet> fp_f, fp_g;
  if (c.selection_metric == SelectionMetric::FixedPointSimilarity) {
    FixedPointOptions fo;
    fo.seed = c.seed;
    fp_f = find_fixed_points(*p.f, fo);
    fp_g = find_fixed_points(*p.g, fo);
  }
  TrainReport rep;
  rep.reps.resize(static_cast<std::size_t>(c.n_rep));
  // Checkpoints are per-run files; with several repetitions they would overwrite each other.
  TrainConfig cr = c;
  if (c.n_rep > 1) cr.checkpoint_every = 0;
  parallel_for(c.n_rep, [&](int k) {
    RepResult& slot = rep.reps[static_cast<std::size_t>(k)];
    try {
      slot = train(p, cr, k, eval, fp_f ? &*fp_f : nullptr, fp_g ? &*fp_g : nullptr);
    } catch (const std::exception& e) {
      slot.rep = k;
      slot.seed = c.seed + static_cast<std::uint64_t>(k);
      slot.ok = false;
      slot.error = e.what();
    }
  });
  // NaN metrics (e.g. no nonzero stable points) rank below every finite value; ties keep the
  // lowest repetition index.
  double best = -std::numeric_limits<double>::infinity();
  std::string causes;
  for (const RepResult& r : rep.reps) {
    if (!r.ok) {
      causes += "\n  rep " + std::to_string(r.rep) + ": " + r.error;
      continue;
    }
    const double m = std::isnan(r.metric) ? -std::numeric_limits<double>::infinity() : r.metric;
    if (rep.selected < 0 || m > best) {
      best = m;
      rep.selected = r.rep;
    }
  }
  if (rep.selected < 0) throw Error("all repetitions failed:" + causes);
  rep.wall_time = seconds_since(t0);
  return rep;
}

void write_trace_csv(const std::string& path, const std::vector<LossBreakdown>& trace) {
  std::vector<std::vector<double>> rows;
  rows.reserve(trace.size());
  for (std::size_t k = 0; k < trace.size(); ++k) {
    const LossBreakdown& b = trace[k];
    rows.push_back({static_cast<double>(k), b.l1, b.l2, b.l3, b.l4, b.reg_v, b.reg_orth, b.total});
  }
  write_csv(path, {"step", "l1", "l2", "l3", "l4", "reg_v", "reg_orth", "total"}, rows);
}

}  // namespace dform
