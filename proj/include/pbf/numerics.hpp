#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

#include "pbf/errors.hpp"

namespace pbf {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

/// Zeroth-order Bessel function of the first kind.
///
/// Power series below |x| = 12, Hankel asymptotic expansion above. Both
/// branches stay within 1e-12 absolute error on |x| <= 50 in double.
template <std::floating_point T>
T bessel_j0(T x) {
  if (!std::isfinite(x)) throw DomainError("bessel_j0: non-finite argument");
  const T ax = std::abs(x);
  if (ax < T(12)) {
    const T quarter_sq = ax * ax / T(4);
    T term = T(1);
    T sum = T(1);
    for (int k = 1; k < 200; ++k) {
      term *= -quarter_sq / (T(k) * T(k));
      sum += term;
      if (std::abs(term) < T(1e-18)) break;
    }
    return sum;
  }
  // a_k(0) / x^k with a_k(0) = prod_{i<=k} (-(2i-1)^2) / (k! 8^k).
  T p = T(1);
  T q = T(0);
  T term = T(1);
  T last = std::numeric_limits<T>::max();
  for (int k = 1; k < 64; ++k) {
    const T odd = T(2 * k - 1);
    term *= -(odd * odd) / (T(k) * T(8) * ax);
    if (std::abs(term) >= last) break;  // asymptotic series starts diverging
    last = std::abs(term);
    // P collects even k with sign (-1)^(k/2), Q odd k with sign (-1)^((k-1)/2).
    const int half = k / 2;
    const T sign = (half % 2 == 0) ? T(1) : T(-1);
    if (k % 2 == 0) {
      p += sign * term;
    } else {
      q += sign * term;
    }
    if (last < T(1e-18)) break;
  }
  const T chi = ax - std::numbers::pi_v<T> / T(4);
  return std::sqrt(T(2) / (std::numbers::pi_v<T> * ax)) * (p * std::cos(chi) - q * std::sin(chi));
}

/// Seeded random stream. Identical seed and draw sequence give identical
/// outputs. Single owner; do not share one stream across threads.
class RngStream {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64";

  explicit RngStream(std::uint64_t seed = 0);

  /// Child stream keyed by (seed, tags); independent of this stream's state.
  [[nodiscard]] RngStream derive(std::initializer_list<std::uint64_t> tags) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return draws_; }
  std::string_view algorithm() const { return kAlgorithm; }

  double normal();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  std::uint64_t next_u64();
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Row-major complex tensor of arbitrary rank.
struct ComplexTensor {
  std::vector<std::size_t> shape;
  CVector data;

  ComplexTensor() = default;
  explicit ComplexTensor(std::vector<std::size_t> dims);

  std::size_t size() const { return static_cast<std::size_t>(data.size()); }
  std::size_t rank() const { return shape.size(); }
  Complex& operator[](std::size_t i) { return data[static_cast<Eigen::Index>(i)]; }
  const Complex& operator[](std::size_t i) const { return data[static_cast<Eigen::Index>(i)]; }

  /// Rank-2 view as an Eigen matrix (copy).
  CMatrix matrix() const;
  bool all_finite() const { return data.allFinite(); }
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

/// i.i.d. CN(0, variance): real and imaginary parts each N(0, variance/2).
ComplexTensor sample_complex_gaussian(const std::vector<std::size_t>& shape, double variance,
                                      RngStream& rng);
CMatrix sample_complex_gaussian(Eigen::Index rows, Eigen::Index cols, double variance,
                                RngStream& rng);

/// Solves A x = b for Hermitian positive definite A via Cholesky.
/// Throws SingularityError when the factorization fails.
CVector hermitian_solve(const CMatrix& a, const CVector& b);
CMatrix hermitian_solve(const CMatrix& a, const CMatrix& b);

/// Worker count: PBF_THREADS if set, otherwise hardware concurrency.
int worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Work items
/// must write to disjoint outputs; the first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pbf
