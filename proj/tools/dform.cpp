// dform: command-line front end (align, template, zoo, experiment).
#include <CLI11.hpp>

#include <Eigen/Core>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <sstream>

#include "dform/analysis.hpp"
#include "dform/experiments.hpp"
#include "dform/io.hpp"
#include "dform/parallel.hpp"
#include "dform/trainer.hpp"

#ifndef DFORM_VERSION
#define DFORM_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dform;

namespace {

// Usage errors (exit 2) as opposed to runtime failures (exit 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string(flag) + " is required");
  if (!fs::is_regular_file(path)) throw UsageError(std::string(flag) + ": no such file '" + path + "'");
}

json versions() {
  std::ostringstream eig;
  eig << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION;
  return {{"dform", DFORM_VERSION}, {"eigen", eig.str()}, {"threads", worker_count()}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ----------------------------------------------------------------------------------------------
// align / template share the training flags

struct TrainFlags {
  std::string config;
  std::string px, py;
  std::string out;
  bool linear_only = false;
  int reps = 0;
  long long seed = -1;
};

void add_train_flags(CLI::App* c, TrainFlags& t) {
  c->add_option("--config", t.config, "training config JSON (TrainConfig fields)");
  c->add_option("--px", t.px, "sampling distribution JSON for the source system");
  c->add_option("--py", t.py, "sampling distribution JSON for the target system");
  c->add_option("--out", t.out, "output directory")->required();
  c->add_flag("--linear-only", t.linear_only, "affine model only (no full phase)");
  c->add_option("--reps", t.reps, "repetitions (overrides config)")->check(CLI::PositiveNumber);
  c->add_option("--seed", t.seed, "seed (overrides config)")->check(CLI::NonNegativeNumber);
}

TrainConfig resolve_config(const TrainFlags& t, TrainConfig c) {
  if (!t.config.empty()) {
    require_file(t.config, "--config");
    c = TrainConfig::from_json(read_json_file(t.config));
  }
  if (t.linear_only) {
    c.n_batch_full = 0;
    c.has_flow = false;
  }
  if (t.reps > 0) c.n_rep = t.reps;
  if (t.seed >= 0) c.seed = std::uint64_t(t.seed);
  c.validate();
  return c;
}

DistPtr load_dist(const std::string& path, Index n) {
  if (path.empty()) return std::make_shared<StandardNormal>(n);
  DistPtr d = distribution_from_json(read_json_file(path));
  if (d->dim() != n)
    throw UsageError("distribution '" + path + "' has dimension " + std::to_string(d->dim()) +
                     ", expected " + std::to_string(n));
  return d;
}

json write_training_artifacts(const fs::path& out, const TrainReport& r) {
  const RepResult& b = r.best();
  write_json_file((out / "model.json").string(), b.phi.to_json());
  write_trace_csv((out / "trace.csv").string(), b.trace);
  return {{"model", (out / "model.json").string()}, {"trace", (out / "trace.csv").string()},
          {"report", (out / "report.json").string()}};
}

int cmd_align(const std::string& f_path, const std::string& g_path, const TrainFlags& t) {
  require_file(f_path, "--f");
  require_file(g_path, "--g");
  if (!t.px.empty()) require_file(t.px, "--px");
  if (!t.py.empty()) require_file(t.py, "--py");
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig c0;
  c0.n_batch_linear = 2000;
  const TrainConfig c = resolve_config(t, c0);
  SystemPtr f = system_from_json(read_json_file(f_path));
  SystemPtr g = system_from_json(read_json_file(g_path));
  if (f->dim() != g->dim())
    throw UsageError("align needs systems of equal dimension (got " + std::to_string(f->dim()) +
                     " and " + std::to_string(g->dim()) + "); use the template command");
  const TrainProblem p{f, g, load_dist(t.px, f->dim()), load_dist(t.py, g->dim())};
  fs::create_directories(t.out);
  const TrainReport r = train_multi(p, c);
  const json artifacts = write_training_artifacts(t.out, r);
  const RepResult& b = r.best();
  json report = {{"scores", b.scores.to_json()},
                 {"orbital_similarity", b.scores.orbital_similarity},
                 {"final_loss", r.to_json()["reps"][r.selected]["final_loss"]},
                 {"training", r.to_json()},
                 {"manifest",
                  {{"command", "align"},
                   {"f", f_path},
                   {"g", g_path},
                   {"config", c.to_json()},
                   {"config_path", t.config},
                   {"seed", c.seed},
                   {"artifacts", artifacts},
                   {"versions", versions()},
                   {"wall_time", seconds_since(t0)}}}};
  write_json_file((fs::path(t.out) / "report.json").string(), report);
  std::cout << "orbital_similarity " << b.scores.orbital_similarity << "\n";
  return 0;
}

SystemPtr template_system(const std::string& spec, double mu) {
  if (spec == "hopf") return std::make_shared<HopfSystem>(std::isnan(mu) ? 1.0 : mu);
  if (spec == "snic") return std::make_shared<SnicSystem>(std::isnan(mu) ? 0.5 : mu);
  require_file(spec, "--template");
  return system_from_json(read_json_file(spec));
}

// Points of the template's defining feature: fixed points for SNIC, a 64-point cycle for Hopf.
Mat template_features(const VectorField& tm, std::string& label) {
  const json j = tm.to_json();
  const std::string kind = j.at("kind");
  if (kind == "snic") {
    const double mu = j.at("mu");
    const double c = std::sqrt(std::max(0.0, 1 - mu * mu));
    label = "fixed_point";
    Mat X(2, 2);
    X << c, -c, mu, mu;
    return X;
  }
  if (kind == "hopf") {
    const double r = std::sqrt(std::max(0.0, j.at("mu").get<double>()));
    label = "cycle";
    Mat X(2, 64);
    for (int i = 0; i < 64; ++i) {
      X(0, i) = r * std::cos(2 * M_PI * i / 64);
      X(1, i) = r * std::sin(2 * M_PI * i / 64);
    }
    return X;
  }
  label = "origin";
  return Mat::Zero(tm.dim(), 1);
}

int cmd_template(const std::string& f_path, const std::string& tspec, double mu, int m,
                 const TrainFlags& t) {
  require_file(f_path, "--f");
  if (m < 1) throw UsageError("--m must be >= 1");
  if (!t.px.empty()) require_file(t.px, "--px");
  if (!t.py.empty()) require_file(t.py, "--py");
  const auto t0 = std::chrono::steady_clock::now();
  SystemPtr f = system_from_json(read_json_file(f_path));
  SystemPtr tm = template_system(tspec, mu);
  if (m > f->dim())
    throw UsageError("--m " + std::to_string(m) + " exceeds the system dimension " + std::to_string(f->dim()));
  if (tm->dim() != m)
    throw UsageError("template dimension " + std::to_string(tm->dim()) + " does not match --m " + std::to_string(m));
  TrainConfig c0;
  c0.n_batch_linear = 3000;
  c0.batch_size = 32;
  if (m < f->dim()) {
    // cross-dimensional defaults: invariance terms on, flow off
    c0.loss_weights.l3 = 10;
    c0.loss_weights.l4 = 10;
    c0.loss_weights.reg_v = 0;
    c0.loss_weights.reg_orth = 1e-3;
    c0.selection_metric = SelectionMetric::CrossDimAlignment;
  }
  const TrainConfig c = resolve_config(t, c0);
  DistPtr py;
  if (!t.py.empty())
    py = load_dist(t.py, m);
  else if (m == 2 && (tspec == "hopf" || tspec == "snic"))
    py = std::make_shared<PolarAnnulus>(0.8, 1.2);
  else
    py = std::make_shared<StandardNormal>(m);
  const TrainProblem p{f, tm, load_dist(t.px, f->dim()), py};
  fs::create_directories(t.out);
  const TrainReport r = train_multi(p, c);
  json artifacts = write_training_artifacts(t.out, r);
  const RepResult& b = r.best();

  std::string label;
  const Mat X = template_features(*tm, label);
  const Mat R = reconstruct_feature(b.phi, X);
  // Ground truth exists when f is a mixed composite whose low block is the template space.
  Mat truth;
  if (auto comp = std::dynamic_pointer_cast<const CompositeSystem>(f); comp && m < f->dim()) {
    const DimensionAdapter ad(f->dim(), m);
    truth = comp->O() * ad.pad(X);
  }
  auto cosv = [](const Vec& a, const Vec& bb) { return a.dot(bb) / (a.norm() * bb.norm()); };
  double sign = 1.0;
  if (truth.size()) {
    double s = 0;
    for (Index i = 0; i < X.cols(); ++i) s += cosv(R.col(i), truth.col(i));
    sign = s >= 0 ? 1.0 : -1.0;  // templates here are symmetric under x -> -x
  }
  std::vector<std::string> header{"feature", "index"};
  for (Index i = 0; i < f->dim(); ++i) header.push_back("x" + std::to_string(i));
  header.push_back("residual");
  if (truth.size()) header.push_back("cosine_to_ground_truth");
  const fs::path fpath = fs::path(t.out) / "features.csv";
  {
    std::ofstream o(fpath);
    o << std::setprecision(17);
    for (std::size_t i = 0; i < header.size(); ++i) o << (i ? "," : "") << header[i];
    o << "\n";
    for (Index k = 0; k < R.cols(); ++k) {
      o << label << "," << k;
      for (Index i = 0; i < R.rows(); ++i) o << "," << R(i, k);
      o << "," << f->eval(Vec(R.col(k))).norm();
      if (truth.size()) o << "," << cosv(R.col(k), sign * truth.col(k));
      o << "\n";
    }
  }
  artifacts["features"] = fpath.string();
  json report = {{"scores", b.scores.to_json()},
                 {"cross_dim", b.scores.cross_dim},
                 {"orbital_similarity", b.scores.orbital_similarity},
                 {"training", r.to_json()},
                 {"manifest",
                  {{"command", "template"},
                   {"f", f_path},
                   {"template", tm->to_json()},
                   {"m", m},
                   {"config", c.to_json()},
                   {"config_path", t.config},
                   {"seed", c.seed},
                   {"artifacts", artifacts},
                   {"versions", versions()},
                   {"wall_time", seconds_since(t0)}}}};
  write_json_file((fs::path(t.out) / "report.json").string(), report);
  std::cout << "cross_dim " << b.scores.cross_dim << "\n";
  return 0;
}

// ----------------------------------------------------------------------------------------------
// zoo

struct ZooFlags {
  std::string generator, out, transform, signature, dyn_class = "limit_cycle";
  Index n = 0;
  double mu = std::numeric_limits<double>::quiet_NaN(), w1 = 0, w2 = 0;
  std::uint64_t seed = 0;
};

SystemPtr zoo_system(const ZooFlags& z) {
  auto need_n = [&] {
    if (z.n < 1) throw UsageError("zoo " + z.generator + " needs --n >= 1");
    return z.n;
  };
  auto mu_or = [&](double d) { return std::isnan(z.mu) ? d : z.mu; };
  if (z.generator == "linear") {
    if (!z.signature.empty()) {
      const Signature s = parse_signature(z.signature);
      if (z.n > 0 && s.p + s.q + s.r != z.n)
        throw UsageError("--signature does not add up to --n");
      return std::make_shared<LinearSystem>(linear_with_signature(s, z.seed));
    }
    return std::make_shared<LinearSystem>(random_linear(need_n(), z.seed));
  }
  if (z.generator == "rnn") return std::make_shared<RnnSystem>(low_rank_rnn(need_n(), z.seed).W);
  if (z.generator == "rnn-monostable") return std::make_shared<RnnSystem>(monostable_rnn(need_n(), z.seed));
  if (z.generator == "vdp") return std::make_shared<VanDerPol>(mu_or(1.0));
  if (z.generator == "hopf") return std::make_shared<HopfSystem>(mu_or(1.0));
  if (z.generator == "snic") return std::make_shared<SnicSystem>(mu_or(0.5));
  if (z.generator == "bla") return std::make_shared<BlaSystem>(z.w1, z.w2);
  if (z.generator == "mindy") return synth_mindy(need_n(), z.seed, z.dyn_class);
  throw UsageError("unknown generator '" + z.generator + "'");
}

int cmd_zoo(const ZooFlags& z) {
  SystemPtr f = zoo_system(z);
  const fs::path out(z.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_json_file(out.string(), f->to_json());
  std::cout << out.string() << "\n";
  if (z.transform.empty()) return 0;
  const Index n = f->dim();
  const fs::path stem = out.parent_path() / out.stem();
  SystemPtr g;
  json map;
  if (z.transform == "orthogonal" || z.transform == "general") {
    const Mat H = z.transform == "orthogonal" ? random_orthogonal_seeded(n, z.seed + 1)
                                              : random_general_seeded(n, z.seed + 1);
    g = std::make_shared<AffineTransformedSystem>(f, H, Vec::Zero(n));
    map = Diffeomorphism::affine_only(H, Vec::Zero(n)).to_json();
  } else if (z.transform == "flow") {
    const Diffeomorphism phi0 = random_flow_diffeo(n, 2.5, 5.0, z.seed + 1);
    g = std::make_shared<DiffeoTransformedSystem>(f, phi0, 20);
    map = phi0.to_json();
  } else {
    throw UsageError("--transform must be orthogonal, general or flow");
  }
  write_json_file(stem.string() + "_transformed.json", g->to_json());
  write_json_file(stem.string() + "_map.json", map);
  std::cout << stem.string() << "_transformed.json\n" << stem.string() << "_map.json\n";
  return 0;
}

// ----------------------------------------------------------------------------------------------

std::string preset_list() {
  std::string s;
  for (const auto& id : preset_ids()) s += (s.empty() ? "" : ", ") + id;
  return s;
}

int cmd_experiment(const std::string& preset, const std::string& scale, long long seed,
                   const std::string& out, const std::vector<std::string>& sets, bool quiet,
                   bool list) {
  if (list) {
    for (const auto& id : preset_ids())
      std::cout << id << "\n" << preset_parameters(id, scale_from_name(scale)).dump(2) << "\n";
    return 0;
  }
  if (preset.empty()) throw UsageError("--preset is required (one of: " + preset_list() + ")");
  if (!is_preset(preset)) throw UsageError("unknown preset '" + preset + "'; available: " + preset_list());
  ExperimentOptions o;
  o.scale = scale_from_name(scale);
  o.seed = seed >= 0 ? std::uint64_t(seed) : 0;
  o.out_dir = out;
  o.verbose = !quiet;
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=json, got '" + kv + "'");
    json v;
    try {
      v = json::parse(kv.substr(eq + 1));
    } catch (const json::exception&) {
      throw UsageError("--set " + kv.substr(0, eq) + ": value is not valid JSON");
    }
    o.overrides[kv.substr(0, eq)] = v;
  }
  json s = run_experiment(preset, o);
  if (!out.empty()) {
    s["manifest"] = {{"command", "experiment"}, {"versions", versions()}, {"out_dir", out}};
    write_json_file((fs::path(out) / "summary.json").string(), s);
  }
  std::cout << s["metrics"].dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dform: diffeomorphic alignment of dynamical systems"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DFORM_VERSION);

  std::string f_path, g_path, tspec;
  double mu = std::numeric_limits<double>::quiet_NaN();
  int m = 0;
  TrainFlags tf_align, tf_tmpl;
  auto* align = app.add_subcommand("align", "align system f to system g");
  align->add_option("--f", f_path, "source system JSON")->required();
  align->add_option("--g", g_path, "target system JSON")->required();
  add_train_flags(align, tf_align);

  auto* tmpl = app.add_subcommand("template", "align a system to a low-dimensional template");
  tmpl->add_option("--f", f_path, "system JSON")->required();
  tmpl->add_option("--template", tspec, "hopf, snic or a system JSON file")->required();
  tmpl->add_option("--mu", mu, "template parameter for hopf/snic");
  tmpl->add_option("--m", m, "template dimension")->required();
  add_train_flags(tmpl, tf_tmpl);

  ZooFlags zf;
  auto* zoo = app.add_subcommand("zoo", "write a generated system as JSON");
  zoo->add_option("generator", zf.generator,
                  "linear, rnn, rnn-monostable, vdp, hopf, snic, bla, mindy")->required();
  zoo->add_option("--n", zf.n, "dimension");
  zoo->add_option("--signature", zf.signature, "eigenvalue signature p,q,r (linear)");
  zoo->add_option("--mu", zf.mu, "parameter of vdp/hopf/snic");
  zoo->add_option("--w1", zf.w1, "bla w1");
  zoo->add_option("--w2", zf.w2, "bla w2");
  zoo->add_option("--class", zf.dyn_class, "mindy class: limit_cycle, multistable, monostable");
  zoo->add_option("--transform", zf.transform, "also write a transformed copy: orthogonal, general, flow");
  zoo->add_option("--seed", zf.seed, "seed");
  zoo->add_option("--out", zf.out, "output file")->required();

  std::string preset, scale = "desk", out;
  long long seed = 0;
  std::vector<std::string> sets;
  bool quiet = false, list = false;
  auto* exp = app.add_subcommand("experiment", "run a preset experiment");
  exp->add_option("--preset", preset, "preset id");
  exp->add_option("--scale", scale, "desk or paper");
  exp->add_option("--seed", seed, "seed")->check(CLI::NonNegativeNumber);
  exp->add_option("--out", out, "output directory");
  exp->add_option("--set", sets, "override a preset parameter: key=json");
  exp->add_flag("--quiet", quiet, "no progress output");
  exp->add_flag("--list", list, "print presets and their parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (*align) return cmd_align(f_path, g_path, tf_align);
    if (*tmpl) return cmd_template(f_path, tspec, mu, m, tf_tmpl);
    if (*zoo) return cmd_zoo(zf);
    return cmd_experiment(preset, scale, seed, out, sets, quiet, list);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
