#include "dform/common.hpp"

#include <sstream>

namespace dform {

void require_dim(Index got, Index want, const char* what) {
  if (got != want) {
    std::ostringstream os;
    os << what << ": dimension mismatch (got " << got << ", expected " << want << ")";
    throw DimensionError(os.str());
  }
}

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x44464f52u};
  return Rng(seq);
}

Mat normal_matrix(Rng& rng, Index rows, Index cols, double sd) {
  std::normal_distribution<double> dist(0.0, sd);
  Mat m(rows, cols);
  // Fill row-major so that a square draw reads naturally as "entries in order".
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

Vec normal_vector(Rng& rng, Index n, double sd) {
  std::normal_distribution<double> dist(0.0, sd);
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

Mat uniform_matrix(Rng& rng, Index rows, Index cols, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Mat m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

Mat random_orthogonal(Index n, Rng& rng) {
  Mat a = normal_matrix(rng, n, n, 1.0 / std::sqrt(static_cast<double>(n)));
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ();
  Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace dform
