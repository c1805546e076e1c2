#pragma once

#include <memory>
#include <vector>

#include "dform/systems.hpp"

namespace dform {

/// A sampling law over a state space. sample() is const and deterministic given the rng state.
class Distribution {
 public:
  virtual ~Distribution() = default;
  virtual std::string kind() const = 0;
  virtual Index dim() const = 0;
  /// k draws as columns.
  virtual Mat sample(Index k, Rng& rng) const = 0;
  virtual nlohmann::json to_json() const = 0;
};

using DistPtr = std::shared_ptr<const Distribution>;

class StandardNormal : public Distribution {
 public:
  explicit StandardNormal(Index n);
  std::string kind() const override { return "standard_normal"; }
  Index dim() const override { return n_; }
  Mat sample(Index k, Rng& rng) const override;
  nlohmann::json to_json() const override;

 private:
  Index n_;
};

class UniformBox : public Distribution {
 public:
  UniformBox(Vec lo, Vec hi);
  std::string kind() const override { return "uniform_box"; }
  Index dim() const override { return lo_.size(); }
  Mat sample(Index k, Rng& rng) const override;
  nlohmann::json to_json() const override;
  const Vec& lo() const { return lo_; }
  const Vec& hi() const { return hi_; }

 private:
  Vec lo_, hi_;
};

/// 2-D points with radius U[r_lo, r_hi] * scale and angle U[0, 2 pi).
class PolarAnnulus : public Distribution {
 public:
  PolarAnnulus(double r_lo, double r_hi, double scale = 1.0);
  std::string kind() const override { return "polar_annulus"; }
  Index dim() const override { return 2; }
  Mat sample(Index k, Rng& rng) const override;
  nlohmann::json to_json() const override;

 private:
  double r_lo_, r_hi_, scale_;
};

/// H z + b for z drawn from base.
class PushforwardAffine : public Distribution {
 public:
  PushforwardAffine(DistPtr base, Mat H, Vec b);
  std::string kind() const override { return "pushforward_affine"; }
  Index dim() const override { return H_.rows(); }
  Mat sample(Index k, Rng& rng) const override;
  nlohmann::json to_json() const override;

 private:
  DistPtr base_;
  Mat H_;
  Vec b_;
};

/// phi0(z) for a stored Diffeomorphism, evaluated with its own configured solver.
class PushforwardDiffeo : public Distribution {
 public:
  PushforwardDiffeo(DistPtr base, Diffeomorphism phi0);
  std::string kind() const override { return "pushforward_diffeo"; }
  Index dim() const override { return phi_.dim(); }
  Mat sample(Index k, Rng& rng) const override;
  nlohmann::json to_json() const override;

 private:
  DistPtr base_;
  Diffeomorphism phi_;
};

/// Image of base draws under a FieldFlowMap.
class PushforwardFlow : public Distribution {
 public:
  PushforwardFlow(DistPtr base, FieldFlowMap map);
  std::string kind() const override { return "pushforward_flow"; }
  Index dim() const override { return map_.dim(); }
  Mat sample(Index k, Rng& rng) const override;
  nlohmann::json to_json() const override;

 private:
  DistPtr base_;
  FieldFlowMap map_;
};

struct AsymptoticOptions {
  double noise_sd = 0.05;
  double dt = 0.01;
  int burn_in = 2000;
  int thin = 10;
  int chains = 8;
  Index pool_size = 50000;
  double init_sd = 1.0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static AsymptoticOptions from_json(const nlohmann::json& j);
};

/// Stationary law of dx = f dt + sd dW, approximated by Euler-Maruyama chains. The pool is
/// generated once at construction; sample() resamples it with replacement.
class AsymptoticNoisy : public Distribution {
 public:
  AsymptoticNoisy(SystemPtr system, AsymptoticOptions opt);
  std::string kind() const override { return "asymptotic_noisy"; }
  Index dim() const override { return system_->dim(); }
  Mat sample(Index k, Rng& rng) const override;
  nlohmann::json to_json() const override;
  const Mat& pool() const { return pool_; }
  int restarts() const { return restarts_; }

 private:
  SystemPtr system_;
  AsymptoticOptions opt_;
  Mat pool_;
  int restarts_ = 0;
};

class Mixture : public Distribution {
 public:
  Mixture(std::vector<double> weights, std::vector<DistPtr> components);
  std::string kind() const override { return "mixture"; }
  Index dim() const override { return comps_.front()->dim(); }
  Mat sample(Index k, Rng& rng) const override;
  nlohmann::json to_json() const override;

 private:
  std::vector<double> w_;
  std::vector<DistPtr> comps_;
};

/// Independent blocks stacked: [z_1; z_2; ...] (joint law of a composite system before mixing).
class Product : public Distribution {
 public:
  explicit Product(std::vector<DistPtr> blocks);
  std::string kind() const override { return "product"; }
  Index dim() const override { return n_; }
  Mat sample(Index k, Rng& rng) const override;
  nlohmann::json to_json() const override;

 private:
  std::vector<DistPtr> blocks_;
  Index n_ = 0;
};

DistPtr distribution_from_json(const nlohmann::json& j);

/// Mixture of the asymptotic law of `system` (noise 0.05) with weight frac and N(0, I).
DistPtr mindy_mixture(SystemPtr system, double asymptotic_frac, AsymptoticOptions opt = {});

}  // namespace dform
