#include "dform/sampling.hpp"

#include <cmath>
#include <numeric>

#include "dform/io.hpp"
#include "dform/parallel.hpp"

namespace dform {

StandardNormal::StandardNormal(Index n) : n_(n) {
  if (n < 1) throw ConfigError("standard_normal: dimension must be >= 1");
}

Mat StandardNormal::sample(Index k, Rng& rng) const { return normal_matrix(rng, n_, k); }

nlohmann::json StandardNormal::to_json() const { return {{"kind", kind()}, {"dim", n_}}; }

UniformBox::UniformBox(Vec lo, Vec hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
  require_dim(hi_.size(), lo_.size(), "uniform_box");
  if (lo_.size() < 1 || !(lo_.array() < hi_.array()).all())
    throw ConfigError("uniform_box: need lo < hi in every dimension");
}

Mat UniformBox::sample(Index k, Rng& rng) const {
  Mat U = uniform_matrix(rng, lo_.size(), k, 0.0, 1.0);
  return (U.array().colwise() * (hi_ - lo_).array()).colwise() + lo_.array();
}

nlohmann::json UniformBox::to_json() const {
  return {{"kind", kind()}, {"lo", vector_to_json(lo_)}, {"hi", vector_to_json(hi_)}};
}

PolarAnnulus::PolarAnnulus(double r_lo, double r_hi, double scale)
    : r_lo_(r_lo), r_hi_(r_hi), scale_(scale) {
  if (!(r_lo >= 0 && r_lo < r_hi) || !(scale > 0))
    throw ConfigError("polar_annulus: need 0 <= r_lo < r_hi and scale > 0");
}

Mat PolarAnnulus::sample(Index k, Rng& rng) const {
  std::uniform_real_distribution<double> ur(r_lo_, r_hi_), ut(0.0, 2 * M_PI);
  Mat X(2, k);
  for (Index j = 0; j < k; ++j) {
    const double r = scale_ * ur(rng), t = ut(rng);
    X(0, j) = r * std::cos(t);
    X(1, j) = r * std::sin(t);
  }
  return X;
}

nlohmann::json PolarAnnulus::to_json() const {
  return {{"kind", kind()}, {"r_lo", r_lo_}, {"r_hi", r_hi_}, {"scale", scale_}};
}

PushforwardAffine::PushforwardAffine(DistPtr base, Mat H, Vec b)
    : base_(std::move(base)), H_(std::move(H)), b_(std::move(b)) {
  require_dim(H_.cols(), base_->dim(), "pushforward_affine H");
  require_dim(b_.size(), H_.rows(), "pushforward_affine b");
}

Mat PushforwardAffine::sample(Index k, Rng& rng) const {
  return (H_ * base_->sample(k, rng)).colwise() + b_;
}

nlohmann::json PushforwardAffine::to_json() const {
  return {{"kind", kind()},
          {"base", base_->to_json()},
          {"H", matrix_to_json(H_)},
          {"b", vector_to_json(b_)}};
}

PushforwardDiffeo::PushforwardDiffeo(DistPtr base, Diffeomorphism phi0)
    : base_(std::move(base)), phi_(std::move(phi0)) {
  require_dim(phi_.dim(), base_->dim(), "pushforward_diffeo");
}

Mat PushforwardDiffeo::sample(Index k, Rng& rng) const {
  return phi_.forward(base_->sample(k, rng), phi_.config().solver);
}

nlohmann::json PushforwardDiffeo::to_json() const {
  return {{"kind", kind()}, {"base", base_->to_json()}, {"map", phi_.to_json()}};
}

PushforwardFlow::PushforwardFlow(DistPtr base, FieldFlowMap map)
    : base_(std::move(base)), map_(std::move(map)) {
  require_dim(map_.dim(), base_->dim(), "pushforward_flow");
}

Mat PushforwardFlow::sample(Index k, Rng& rng) const { return map_.forward(base_->sample(k, rng)); }

nlohmann::json PushforwardFlow::to_json() const {
  return {{"kind", kind()}, {"base", base_->to_json()}, {"map", map_.to_json()}};
}

nlohmann::json AsymptoticOptions::to_json() const {
  return {{"noise_sd", noise_sd}, {"dt", dt},       {"burn_in", burn_in}, {"thin", thin},
          {"chains", chains},     {"pool_size", pool_size}, {"init_sd", init_sd}, {"seed", seed}};
}

AsymptoticOptions AsymptoticOptions::from_json(const nlohmann::json& j) {
  check_keys(j, {"noise_sd", "dt", "burn_in", "thin", "chains", "pool_size", "init_sd", "seed"},
             "asymptotic options");
  AsymptoticOptions o;
  o.noise_sd = j.value("noise_sd", o.noise_sd);
  o.dt = j.value("dt", o.dt);
  o.burn_in = j.value("burn_in", o.burn_in);
  o.thin = j.value("thin", o.thin);
  o.chains = j.value("chains", o.chains);
  o.pool_size = j.value("pool_size", o.pool_size);
  o.init_sd = j.value("init_sd", o.init_sd);
  o.seed = j.value("seed", o.seed);
  return o;
}

AsymptoticNoisy::AsymptoticNoisy(SystemPtr system, AsymptoticOptions opt)
    : system_(std::move(system)), opt_(opt) {
  if (!(opt_.noise_sd > 0) || !(opt_.dt > 0) || opt_.burn_in < 0 || opt_.thin < 1 ||
      opt_.chains < 1 || opt_.pool_size < 1)
    throw ConfigError("asymptotic_noisy: invalid options");
  const Index n = system_->dim();
  const int C = opt_.chains;
  pool_.resize(n, opt_.pool_size);
  std::vector<int> restarts(C, 0);
  const double sq = opt_.noise_sd * std::sqrt(opt_.dt);
  parallel_for(C, [&](int c) {
    // Chain c fills columns c, c + C, c + 2C, ...
    Rng rng = make_rng(opt_.seed, 0xC0000u + static_cast<std::uint64_t>(c));
    std::normal_distribution<double> nd(0.0, 1.0);
    auto draw = [&] {
      Vec z(n);
      for (Index i = 0; i < n; ++i) z[i] = nd(rng);
      return z;
    };
    Index col = c;
    while (col < opt_.pool_size) {
      Vec x = opt_.init_sd * draw();
      bool blew_up = false;
      long step = 0;
      while (col < opt_.pool_size) {
        x += opt_.dt * system_->eval(x) + sq * draw();
        ++step;
        if (!x.allFinite() || x.norm() > 1e6) {
          blew_up = true;
          break;
        }
        if (step > opt_.burn_in && (step - opt_.burn_in) % opt_.thin == 0) {
          pool_.col(col) = x;
          col += C;
        }
      }
      if (blew_up && ++restarts[c] > 10)
        throw NumericalError("asymptotic_noisy: chain diverged more than 10 times");
    }
  });
  restarts_ = std::accumulate(restarts.begin(), restarts.end(), 0);
}

Mat AsymptoticNoisy::sample(Index k, Rng& rng) const {
  std::uniform_int_distribution<Index> pick(0, pool_.cols() - 1);
  Mat X(pool_.rows(), k);
  for (Index j = 0; j < k; ++j) X.col(j) = pool_.col(pick(rng));
  return X;
}

nlohmann::json AsymptoticNoisy::to_json() const {
  return {{"kind", kind()}, {"system", system_->to_json()}, {"options", opt_.to_json()}};
}

Mixture::Mixture(std::vector<double> weights, std::vector<DistPtr> components)
    : w_(std::move(weights)), comps_(std::move(components)) {
  if (w_.empty() || w_.size() != comps_.size())
    throw ConfigError("mixture: need one positive weight per component");
  double s = 0;
  for (double v : w_) {
    if (!(v > 0)) throw ConfigError("mixture: weights must be positive");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ConfigError("mixture: weights must sum to 1");
  for (const auto& c : comps_) require_dim(c->dim(), comps_.front()->dim(), "mixture component");
}

Mat Mixture::sample(Index k, Rng& rng) const {
  std::discrete_distribution<int> pick(w_.begin(), w_.end());
  std::vector<int> which(k);
  std::vector<Index> counts(comps_.size(), 0);
  for (Index j = 0; j < k; ++j) ++counts[which[j] = pick(rng)];
  std::vector<Mat> draws(comps_.size());
  for (std::size_t c = 0; c < comps_.size(); ++c)
    if (counts[c] > 0) draws[c] = comps_[c]->sample(counts[c], rng);
  std::vector<Index> used(comps_.size(), 0);
  Mat X(dim(), k);
  for (Index j = 0; j < k; ++j) X.col(j) = draws[which[j]].col(used[which[j]]++);
  return X;
}

nlohmann::json Mixture::to_json() const {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : comps_) comps.push_back(c->to_json());
  return {{"kind", kind()}, {"weights", w_}, {"components", comps}};
}

Product::Product(std::vector<DistPtr> blocks) : blocks_(std::move(blocks)) {
  if (blocks_.empty()) throw ConfigError("product: need at least one block");
  for (const auto& b : blocks_) n_ += b->dim();
}

Mat Product::sample(Index k, Rng& rng) const {
  Mat X(n_, k);
  Index at = 0;
  for (const auto& b : blocks_) {
    X.middleRows(at, b->dim()) = b->sample(k, rng);
    at += b->dim();
  }
  return X;
}

nlohmann::json Product::to_json() const {
  nlohmann::json bl = nlohmann::json::array();
  for (const auto& b : blocks_) bl.push_back(b->to_json());
  return {{"kind", kind()}, {"blocks", bl}};
}

DistPtr distribution_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  auto keys = [&](std::vector<std::string> allowed) {
    allowed.push_back("kind");
    check_keys(j, allowed, "distribution '" + kind + "'");
  };
  if (kind == "standard_normal") {
    keys({"dim"});
    return std::make_shared<StandardNormal>(j.at("dim").get<Index>());
  }
  if (kind == "uniform_box") {
    keys({"lo", "hi"});
    return std::make_shared<UniformBox>(vector_from_json(j.at("lo")), vector_from_json(j.at("hi")));
  }
  if (kind == "polar_annulus") {
    keys({"r_lo", "r_hi", "scale"});
    return std::make_shared<PolarAnnulus>(j.at("r_lo").get<double>(), j.at("r_hi").get<double>(),
                                          j.value("scale", 1.0));
  }
  if (kind == "pushforward_affine") {
    keys({"base", "H", "b"});
    return std::make_shared<PushforwardAffine>(distribution_from_json(j.at("base")),
                                               matrix_from_json(j.at("H")), vector_from_json(j.at("b")));
  }
  if (kind == "pushforward_diffeo") {
    keys({"base", "map"});
    return std::make_shared<PushforwardDiffeo>(distribution_from_json(j.at("base")),
                                               Diffeomorphism::from_json(j.at("map")));
  }
  if (kind == "pushforward_flow") {
    keys({"base", "map"});
    return std::make_shared<PushforwardFlow>(distribution_from_json(j.at("base")),
                                             FieldFlowMap::from_json(j.at("map")));
  }
  if (kind == "asymptotic_noisy") {
    keys({"system", "options"});
    return std::make_shared<AsymptoticNoisy>(
        system_from_json(j.at("system")),
        AsymptoticOptions::from_json(j.value("options", nlohmann::json::object())));
  }
  if (kind == "mixture") {
    keys({"weights", "components"});
    std::vector<DistPtr> comps;
    for (const auto& c : j.at("components")) comps.push_back(distribution_from_json(c));
    return std::make_shared<Mixture>(j.at("weights").get<std::vector<double>>(), comps);
  }
  if (kind == "product") {
    keys({"blocks"});
    std::vector<DistPtr> bl;
    for (const auto& c : j.at("blocks")) bl.push_back(distribution_from_json(c));
    return std::make_shared<Product>(bl);
  }
  throw ConfigError("unknown distribution kind '" + kind + "'");
}

DistPtr mindy_mixture(SystemPtr system, double asymptotic_frac, AsymptoticOptions opt) {
  if (!(asymptotic_frac >= 0 && asymptotic_frac <= 1))
    throw ConfigError("mindy_mixture: fraction must lie in [0, 1]");
  const Index n = system->dim();
  if (asymptotic_frac == 0) return std::make_shared<StandardNormal>(n);
  opt.noise_sd = 0.05;
  auto asym = std::make_shared<AsymptoticNoisy>(std::move(system), opt);
  if (asymptotic_frac == 1) return asym;
  return std::make_shared<Mixture>(std::vector<double>{asymptotic_frac, 1 - asymptotic_frac},
                                   std::vector<DistPtr>{asym, std::make_shared<StandardNormal>(n)});
}

}  // namespace dform
