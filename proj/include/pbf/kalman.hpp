#pragma once

#include <vector>

#include "pbf/channel.hpp"
#include "pbf/numerics.hpp"

namespace pbf {

/// Per-entry scalar Kalman state under h(n) = beta h(n-1) + u(n), y(n) = h(n) + e(n).
/// Entries decouple because both noise covariances are scaled identities.
struct KalmanState {
  CMatrix mean;      // K x N_t
  RMatrix variance;  // K x N_t, identical entries under the isotropic model
  double beta = 1.0;
  double sigma_u_sq = 0.0;
  double sigma_e_sq = 0.0;
};

struct KalmanPrior {
  double mean = 0.0;  // applied to every entry
  double variance = 1.0;
};

struct KalmanTrack {
  std::vector<CMatrix> means;         // filtered means for slots 1..N
  std::vector<double> variances;      // posterior variance per slot
  std::vector<double> prior_variances;  // predicted (pre-update) variance per slot
  KalmanState last;
};

/// Filters the N estimates with known beta; sigma_u^2 = 1 - beta^2.
KalmanTrack kalman_filter(const EstimatedFrame& estimates, double beta, double sigma_e_sq,
                          const KalmanPrior& prior = {});

/// Open-loop prediction beta^m * mean for m = 1..steps.
std::vector<CMatrix> kalman_predict(const CMatrix& last_filtered, double beta, int steps);

/// Fixed point of v = ((beta^2 v + s_u) s_e) / (beta^2 v + s_u + s_e).
double kalman_steady_state_variance(double beta, double sigma_e_sq);

}  // namespace pbf
