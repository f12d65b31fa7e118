#ifndef ICEPOP_MATH_HPP_
#define ICEPOP_MATH_HPP_

#include <Eigen/Dense>
#include <cmath>

namespace icepop {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

template <typename Derived>
Vector<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& x) {
  return x.array() - log_sum_exp(x);
}

template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

// KL(p || q) for categorical distributions given in log space. Terms with
// p_i = 0 contribute nothing.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar categorical_kl_from_logs(const Eigen::MatrixBase<DerivedP>& log_p,
                                                   const Eigen::MatrixBase<DerivedQ>& log_q) {
  using Scalar = typename DerivedP::Scalar;
  Scalar kl(0);
  for (Eigen::Index i = 0; i < log_p.size(); ++i) {
    const Scalar p = std::exp(log_p[i]);
    if (p > Scalar(0)) kl += p * (log_p[i] - log_q[i]);
  }
  return kl < Scalar(0) ? Scalar(0) : kl;
}

template <typename Derived>
typename Derived::Scalar entropy_from_logs(const Eigen::MatrixBase<Derived>& log_p) {
  using Scalar = typename Derived::Scalar;
  Scalar h(0);
  for (Eigen::Index i = 0; i < log_p.size(); ++i) {
    const Scalar p = std::exp(log_p[i]);
    if (p > Scalar(0)) h -= p * log_p[i];
  }
  return h;
}

// Gradient of KL(softmax(a) || softmax(b)) with respect to the logits a.
template <typename DerivedP, typename DerivedQ>
Vector<typename DerivedP::Scalar> kl_grad_first_logits(const Eigen::MatrixBase<DerivedP>& log_p,
                                                       const Eigen::MatrixBase<DerivedQ>& log_q) {
  using Scalar = typename DerivedP::Scalar;
  const Scalar kl = categorical_kl_from_logs(log_p, log_q);
  Vector<Scalar> p = log_p.array().exp();
  return p.array() * (log_p.array() - log_q.array() - kl);
}

}  // namespace icepop

#endif  // ICEPOP_MATH_HPP_
