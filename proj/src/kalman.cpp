#include "pbf/kalman.hpp"

#include <cmath>

namespace pbf {

KalmanTrack kalman_filter(const EstimatedFrame& estimates, double beta, double sigma_e_sq,
                          const KalmanPrior& prior) {
  if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("kalman_filter: beta must lie in (0, 1]");
  if (!(sigma_e_sq >= 0.0)) throw DomainError("kalman_filter: measurement variance must be >= 0");
  if (estimates.estimates.empty()) throw ShapeError("kalman_filter: no estimates");
  const Eigen::Index rows = estimates.estimates.front().rows();
  const Eigen::Index cols = estimates.estimates.front().cols();
  const double sigma_u_sq = std::max(0.0, 1.0 - beta * beta);

  KalmanTrack track;
  CMatrix mean = CMatrix::Constant(rows, cols, Complex(prior.mean, 0.0));
  double variance = prior.variance;
  for (std::size_t n = 0; n < estimates.estimates.size(); ++n) {
    const CMatrix& y = estimates.estimates[n];
    if (y.rows() != rows || y.cols() != cols) throw ShapeError("kalman_filter: inconsistent slot shapes");
    if (n > 0) {
      mean *= beta;
      variance = beta * beta * variance + sigma_u_sq;
    }
    track.prior_variances.push_back(variance);
    const double gain = sigma_e_sq == 0.0 ? 1.0 : variance / (variance + sigma_e_sq);
    mean += gain * (y - mean);
    variance *= (1.0 - gain);
    track.means.push_back(mean);
    track.variances.push_back(variance);
  }
  track.last.mean = mean;
  track.last.variance = RMatrix::Constant(rows, cols, variance);
  track.last.beta = beta;
  track.last.sigma_u_sq = sigma_u_sq;
  track.last.sigma_e_sq = sigma_e_sq;
  return track;
}

std::vector<CMatrix> kalman_predict(const CMatrix& last_filtered, double beta, int steps) {
  if (steps < 1) throw DomainError("kalman_predict: steps must be >= 1");
  std::vector<CMatrix> out;
  out.reserve(static_cast<std::size_t>(steps));
  CMatrix current = last_filtered;
  for (int m = 0; m < steps; ++m) {
    current *= beta;
    out.push_back(current);
  }
  return out;
}

double kalman_steady_state_variance(double beta, double sigma_e_sq) {
  // With a = beta^2 and s = 1 - beta^2 the fixed point solves
  // a v^2 + (s + s_e (1 - a)) v - s s_e = 0.
  const double a = beta * beta;
  const double s = std::max(0.0, 1.0 - a);
  if (sigma_e_sq == 0.0 || s == 0.0) return 0.0;
  const double b = s + sigma_e_sq * (1.0 - a);
  const double c = -s * sigma_e_sq;
  if (a == 0.0) return -c / b;
  const double disc = std::sqrt(b * b - 4.0 * a * c);
  // Stable root of the quadratic for b > 0.
  return (2.0 * -c) / (b + disc);
}

}  // namespace pbf
