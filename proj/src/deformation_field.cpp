#include "dform/deformation_field.hpp"

#include <algorithm>
#include <cmath>

#include "dform/io.hpp"

namespace dform {

namespace {

// ELU with alpha = 1 and its first two derivatives, element-wise. One vectorized exp of
// min(a, 0) serves all three: for a <= 0, elu = e - 1 and elu' = elu'' = e.
struct Elu {
  Mat val, d1, d2;
  Elu(const Mat& a, bool need_d1, bool need_d2) {
    const Eigen::ArrayXXd e = a.array().min(0.0).exp();
    const auto pos = a.array() > 0.0;
    val = pos.select(a.array(), e - 1.0).matrix();
    if (need_d1) d1 = pos.select(Eigen::ArrayXXd::Ones(a.rows(), a.cols()), e).matrix();
    if (need_d2) d2 = pos.select(Eigen::ArrayXXd::Zero(a.rows(), a.cols()), e).matrix();
  }
};
Mat elu(const Mat& a) { return Elu(a, false, false).val; }

constexpr double kTinyRadius = 1e-300;

}  // namespace

MlpParams MlpParams::zeros(Index n, Index h) {
  MlpParams p;
  p.W1 = Mat::Zero(h, n);
  p.b1 = Vec::Zero(h);
  p.W2 = Mat::Zero(h, h);
  p.b2 = Vec::Zero(h);
  p.W3 = Mat::Zero(n, h);
  p.b3 = Vec::Zero(n);
  return p;
}

Index MlpParams::count() const {
  return W1.size() + b1.size() + W2.size() + b2.size() + W3.size() + b3.size();
}

void MlpParams::set_zero() {
  W1.setZero();
  b1.setZero();
  W2.setZero();
  b2.setZero();
  W3.setZero();
  b3.setZero();
}

MlpParams& MlpParams::operator+=(const MlpParams& o) {
  W1 += o.W1;
  b1 += o.b1;
  W2 += o.W2;
  b2 += o.b2;
  W3 += o.W3;
  b3 += o.b3;
  return *this;
}

MlpParams& MlpParams::operator*=(double s) {
  W1 *= s;
  b1 *= s;
  W2 *= s;
  b2 *= s;
  W3 *= s;
  b3 *= s;
  return *this;
}

double MlpParams::squared_norm() const {
  return W1.squaredNorm() + b1.squaredNorm() + W2.squaredNorm() + b2.squaredNorm() +
         W3.squaredNorm() + b3.squaredNorm();
}

DeformationField::DeformationField(Index n, Index hidden)
    : n_(n), h_(hidden), p_(MlpParams::zeros(n, hidden)) {
  if (n < 1 || hidden < 1) throw ConfigError("DeformationField: widths must be positive");
}

Index DeformationField::default_hidden(Index n) { return std::max<Index>(2 * n, 20); }

DeformationField DeformationField::identity_init(Index n, Rng& rng, Index hidden) {
  if (hidden < 0) hidden = default_hidden(n);
  DeformationField v(n, hidden);
  const double k1 = 1.0 / std::sqrt(static_cast<double>(n));
  const double k2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  v.p_.W1 = uniform_matrix(rng, hidden, n, -k1, k1);
  v.p_.b1 = uniform_matrix(rng, hidden, 1, -k1, k1);
  v.p_.W2 = uniform_matrix(rng, hidden, hidden, -k2, k2);
  v.p_.b2 = uniform_matrix(rng, hidden, 1, -k2, k2);
  return v;
}

Mat DeformationField::eval(const Mat& Z) const {
  require_dim(Z.rows(), n_, "DeformationField::eval");
  const Mat H1 = elu((p_.W1 * Z).colwise() + p_.b1);
  const Mat H2 = elu((p_.W2 * H1).colwise() + p_.b2);
  Mat V = (p_.W3 * H2).colwise() + p_.b3;
  if (damping_ > 0) {
    for (Index j = 0; j < Z.cols(); ++j) V.col(j) *= std::exp(-Z.col(j).norm() / damping_);
  }
  return V;
}

Vec DeformationField::eval(const Vec& z) const { return eval(Mat(z)).col(0); }

void DeformationField::eval_tangent(const Mat& Z, const Mat& T, Mat& V, Mat& dV) const {
  require_dim(Z.rows(), n_, "DeformationField::eval_tangent");
  require_dim(T.cols(), Z.cols(), "DeformationField::eval_tangent (batch)");
  const Mat A1 = (p_.W1 * Z).colwise() + p_.b1;
  const Elu E1(A1, true, false);
  const Mat A2 = (p_.W2 * E1.val).colwise() + p_.b2;
  const Elu E2(A2, true, false);
  V = (p_.W3 * E2.val).colwise() + p_.b3;

  const Mat dH1 = E1.d1.cwiseProduct(p_.W1 * T);
  const Mat dH2 = E2.d1.cwiseProduct(p_.W2 * dH1);
  dV = p_.W3 * dH2;

  if (damping_ > 0) {
    for (Index j = 0; j < Z.cols(); ++j) {
      const double r = Z.col(j).norm();
      const double s = std::exp(-r / damping_);
      const double q = r > kTinyRadius ? Z.col(j).dot(T.col(j)) / r : 0.0;
      const double ds = -(s / damping_) * q;
      dV.col(j) = s * dV.col(j) + ds * V.col(j);
      V.col(j) *= s;
    }
  }
}

Mat DeformationField::jacobian(const Vec& z) const {
  Mat V, dV;
  eval_tangent(Mat(z).replicate(1, n_), Mat::Identity(n_, n_), V, dV);
  return dV;
}

void DeformationField::backprop(const Mat& Z, const Mat* T, const Mat& Vbar, const Mat* dVbar,
                                MlpParams& grad, Mat& Zbar, Mat* Tbar) const {
  const bool tangent = T != nullptr && dVbar != nullptr;
  const Index B = Z.cols();

  const Mat A1 = (p_.W1 * Z).colwise() + p_.b1;
  const Elu E1(A1, true, tangent);
  const Mat A2 = (p_.W2 * E1.val).colwise() + p_.b2;
  const Elu E2(A2, true, tangent);
  const Mat& H1 = E1.val;
  const Mat& H2 = E2.val;
  const Mat& S1 = E1.d1;
  const Mat& S2 = E2.d1;

  Mat dA1, dH1, dA2, dH2;
  if (tangent) {
    dA1 = p_.W1 * (*T);
    dH1 = S1.cwiseProduct(dA1);
    dA2 = p_.W2 * dH1;
    dH2 = S2.cwiseProduct(dA2);
  }

  // Cotangents of the undamped output M and its tangent dM.
  Mat Mbar = Vbar;
  Mat dMbar;
  if (tangent) dMbar = *dVbar;
  Zbar = Mat::Zero(n_, B);
  if (Tbar) *Tbar = Mat::Zero(n_, B);

  if (damping_ > 0) {
    const Mat M = (p_.W3 * H2).colwise() + p_.b3;
    Mat dM;
    if (tangent) dM = p_.W3 * dH2;
    for (Index j = 0; j < B; ++j) {
      const double r = Z.col(j).norm();
      const double s = std::exp(-r / damping_);
      double sbar = M.col(j).dot(Vbar.col(j));
      Mbar.col(j) = s * Vbar.col(j);
      if (tangent) {
        const double q = r > kTinyRadius ? Z.col(j).dot(T->col(j)) / r : 0.0;
        const double ds = -(s / damping_) * q;
        const double dsbar = M.col(j).dot(dVbar->col(j));
        sbar += dM.col(j).dot(dVbar->col(j));
        Mbar.col(j) += ds * dVbar->col(j);
        dMbar.col(j) = s * dVbar->col(j);
        sbar += dsbar * (-q / damping_);
        const double qbar = dsbar * (-s / damping_);
        if (r > kTinyRadius) {
          Zbar.col(j) += qbar * (T->col(j) / r - (q / (r * r)) * Z.col(j));
          if (Tbar) Tbar->col(j) += (qbar / r) * Z.col(j);
        }
      }
      if (r > kTinyRadius) Zbar.col(j) += (sbar * (-s / damping_) / r) * Z.col(j);
    }
  }

  grad.W3 += Mbar * H2.transpose();
  grad.b3 += Mbar.rowwise().sum();
  Mat H2bar = p_.W3.transpose() * Mbar;
  Mat A2bar = S2.cwiseProduct(H2bar);
  Mat dA2bar;
  if (tangent) {
    grad.W3 += dMbar * dH2.transpose();
    const Mat dH2bar = p_.W3.transpose() * dMbar;
    dA2bar = S2.cwiseProduct(dH2bar);
    A2bar += E2.d2.cwiseProduct(dA2).cwiseProduct(dH2bar);
  }

  grad.b2 += A2bar.rowwise().sum();
  grad.W2 += A2bar * H1.transpose();
  const Mat H1bar = p_.W2.transpose() * A2bar;
  Mat A1bar = S1.cwiseProduct(H1bar);
  Mat dA1bar;
  if (tangent) {
    grad.W2 += dA2bar * dH1.transpose();
    const Mat dH1bar = p_.W2.transpose() * dA2bar;
    dA1bar = S1.cwiseProduct(dH1bar);
    A1bar += E1.d2.cwiseProduct(dA1).cwiseProduct(dH1bar);
  }

  grad.b1 += A1bar.rowwise().sum();
  grad.W1 += A1bar * Z.transpose();
  Zbar += p_.W1.transpose() * A1bar;
  if (tangent) {
    grad.W1 += dA1bar * T->transpose();
    if (Tbar) *Tbar += p_.W1.transpose() * dA1bar;
  }
}

nlohmann::json DeformationField::to_json() const {
  nlohmann::json j;
  j["widths"] = {n_, h_, h_, n_};
  j["activation"] = "elu";
  j["damping"] = damping_;
  j["weights"] = {matrix_to_json(p_.W1), matrix_to_json(p_.W2), matrix_to_json(p_.W3)};
  j["biases"] = {vector_to_json(p_.b1), vector_to_json(p_.b2), vector_to_json(p_.b3)};
  return j;
}

DeformationField DeformationField::from_json(const nlohmann::json& j) {
  const auto widths = j.at("widths").get<std::vector<Index>>();
  if (widths.size() != 4 || widths[0] != widths[3] || widths[1] != widths[2])
    throw ConfigError("deformation field: widths must be [n, h, h, n]");
  if (j.value("activation", std::string("elu")) != "elu")
    throw ConfigError("deformation field: only the elu activation is supported");
  DeformationField v(widths[0], widths[1]);
  v.damping_ = j.value("damping", 0.0);
  const auto& w = j.at("weights");
  const auto& b = j.at("biases");
  if (w.size() != 3 || b.size() != 3) throw ConfigError("deformation field: expected 3 layers");
  v.p_.W1 = matrix_from_json(w[0]);
  v.p_.W2 = matrix_from_json(w[1]);
  v.p_.W3 = matrix_from_json(w[2]);
  v.p_.b1 = vector_from_json(b[0]);
  v.p_.b2 = vector_from_json(b[1]);
  v.p_.b3 = vector_from_json(b[2]);
  require_dim(v.p_.W1.rows(), v.h_, "deformation field W1");
  require_dim(v.p_.W1.cols(), v.n_, "deformation field W1");
  require_dim(v.p_.W2.rows(), v.h_, "deformation field W2");
  require_dim(v.p_.W2.cols(), v.h_, "deformation field W2");
  require_dim(v.p_.W3.rows(), v.n_, "deformation field W3");
  require_dim(v.p_.W3.cols(), v.h_, "deformation field W3");
  require_dim(v.p_.b1.size(), v.h_, "deformation field b1");
  require_dim(v.p_.b2.size(), v.h_, "deformation field b2");
  require_dim(v.p_.b3.size(), v.n_, "deformation field b3");
  return v;
}

}  // namespace dform
