#pragma once

#include <algorithm>
#include <cmath>

#include "dform/diffeomorphism.hpp"

namespace dform::testing {

// Full model with a nontrivial flow and affine part; small enough for finite differences.
inline Diffeomorphism random_diffeo(Index n, std::uint64_t seed, double out_scale = 0.3,
                                    double damping = 0.0, bool affine = true, bool flow = true) {
  Rng rng = make_rng(seed);
  Diffeomorphism phi = Diffeomorphism::identity(n, rng, affine, flow);
  if (flow) {
    DeformationField v = phi.field();
    v.params().W3 = normal_matrix(rng, n, v.hidden(), out_scale / std::sqrt(double(v.hidden())));
    v.params().b3 = normal_vector(rng, n, 0.1);
    v.set_damping(damping);
    phi.set_field(v);
  }
  if (affine)
    phi.set_affine(Mat::Identity(n, n) + normal_matrix(rng, n, n, 0.3), normal_vector(rng, n, 0.5));
  return phi;
}

inline double rel_err(const Mat& a, const Mat& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

}  // namespace dform::testing
