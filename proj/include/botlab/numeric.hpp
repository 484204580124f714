#pragma once

// Dense numeric kernels shared by every module. Probability and logit vectors
// are Eigen column vectors; the kernels accept any Eigen expression.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

namespace botlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Index of the largest coefficient; ties go to the lowest index.
template <typename Derived>
Eigen::Index argmax_lowest(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

/// Numerically stable softmax of `logits / temperature`. Entries equal to
/// -inf get probability zero. Requires at least one finite entry.
template <typename Derived>
VectorT<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits,
                                          typename Derived::Scalar temperature) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = logits.maxCoeff();
  VectorT<Scalar> p(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    p(i) = std::isinf(logits(i)) ? Scalar(0) : std::exp((logits(i) - top) / temperature);
  }
  return p / p.sum();
}

/// Total-variation distance between two distributions of equal length.
template <typename A, typename B>
typename A::Scalar total_variation(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& q) {
  return (p - q).cwiseAbs().sum() / 2;
}

/// Shannon entropy in bits; zero-probability entries contribute nothing.
template <typename Derived>
typename Derived::Scalar entropy_bits(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  Scalar h = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0) h -= p(i) * std::log2(p(i));
  }
  return h;
}

struct Interval {
  double low = 0;
  double high = 0;

  bool contains(double x) const { return low <= x && x <= high; }
};

inline constexpr double kZ95 = 1.959963984540054;

/// Wilson score interval for a binomial proportion.
Interval wilson_interval(std::size_t successes, std::size_t trials, double z = kZ95);

/// Integer power with overflow saturation at SIZE_MAX.
std::size_t checked_pow(std::size_t base, std::size_t exp);

/// 64-bit FNV-1a, rendered as 16 hex digits. Used for model fingerprints.
std::string fnv1a_hex(std::string_view bytes);

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw. Keeps
/// sampling bit-identical across standard library implementations.
inline double unit_draw(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

}  // namespace botlab
