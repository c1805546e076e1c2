#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace dform {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// H (or another matrix that must be inverted) is numerically singular.
class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

/// A state, tangent or gradient became NaN/Inf.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

void require_dim(Index got, Index want, const char* what);

/// Independent RNG stream derived from (seed, stream). Same inputs give the same stream.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

Mat normal_matrix(Rng& rng, Index rows, Index cols, double sd = 1.0);
Vec normal_vector(Rng& rng, Index n, double sd = 1.0);
Mat uniform_matrix(Rng& rng, Index rows, Index cols, double lo, double hi);

/// Q factor of a Gaussian matrix, sign-corrected so the draw is Haar distributed.
Mat random_orthogonal(Index n, Rng& rng);

bool all_finite(const Mat& m);

}  // namespace dform
