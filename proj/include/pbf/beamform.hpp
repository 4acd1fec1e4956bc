#pragma once

#include <numbers>
#include <string>
#include <vector>

#include "pbf/numerics.hpp"

namespace pbf {

/// Downlink beams, N_t x K: column k is w_k.
using BeamMatrix = CMatrix;

/// Channel matrices are K x N_t with row k holding h_k^H, so (H W)(k, j) = h_k^H w_j.

/// Uplink powers q and downlink powers p, one entry per user.
struct PowerPair {
  RVector q;
  RVector p;
};

namespace detail {
template <typename DH, typename DW>
void check_beam_shapes(const Eigen::MatrixBase<DH>& h, const Eigen::MatrixBase<DW>& w) {
  if (w.rows() != h.cols() || w.cols() != h.rows()) {
    throw ShapeError("beam matrix must be N_t x K for a K x N_t channel");
  }
}
}  // namespace detail

/// Gamma_k = |h_k^H w_k|^2 / (sum_{j != k} |h_k^H w_j|^2 + sigma^2).
template <typename DH, typename DW>
RVector sinr(const Eigen::MatrixBase<DH>& channels, const Eigen::MatrixBase<DW>& beams,
             double noise_variance) {
  detail::check_beam_shapes(channels, beams);
  if (!(noise_variance > 0.0)) throw DomainError("sinr: noise variance must be positive");
  const RMatrix gains = (channels * beams).cwiseAbs2();
  const Eigen::Index k_users = channels.rows();
  RVector out(k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    double interference = 0.0;
    for (Eigen::Index j = 0; j < k_users; ++j)
      if (j != k) interference += gains(k, j);
    out[k] = gains(k, k) / (interference + noise_variance);
  }
  return out;
}

/// R = sum_k log2(1 + Gamma_k), bit/s/Hz.
template <typename DH, typename DW>
double sum_rate(const Eigen::MatrixBase<DH>& channels, const Eigen::MatrixBase<DW>& beams,
                double noise_variance) {
  return sinr(channels, beams, noise_variance).array().log1p().sum() / std::numbers::ln2;
}

inline double total_power(const BeamMatrix& beams) { return beams.squaredNorm(); }

/// Water-filling over parallel gains: maximizes sum log2(1 + P_k g_k / sigma^2)
/// subject to sum P_k = p_t.
RVector water_fill(const RVector& gains, double p_t, double noise_variance);

/// Zero-forcing directions H^H (H H^H)^{-1} with water-filled powers.
/// Throws UnsupportedError when K > N_t and SingularityError when H is rank deficient.
BeamMatrix zf_beamformer(const CMatrix& channels, double p_t, double noise_variance);

enum class WmmseInit {
  ZeroForcing,    // ZF with water-filling; falls back to matched filter when ZF is infeasible
  MatchedFilter,  // h_k / ||h_k|| with equal power p_t / K
};

struct WmmseOptions {
  int max_iters = 200;
  double tol = 1e-5;  // relative sum-rate change
  WmmseInit init = WmmseInit::ZeroForcing;
};

struct WmmseResult {
  BeamMatrix beams;              // best iterate
  std::vector<double> rates;     // sum rate of the initial point and every iterate
  int iterations = 0;
  bool converged = false;
};

/// Weighted MMSE sum-rate maximization. The sum-rate sequence is
/// non-decreasing, so a ZF start never ends below the ZF rate.
WmmseResult wmmse_solve(const CMatrix& channels, double p_t, double noise_variance,
                        const WmmseOptions& options = {});

/// w_k = sqrt(p_k) A^{-1} h_k / ||A^{-1} h_k||, A = I + sum_j (q_j / sigma^2) h_j h_j^H.
BeamMatrix reconstruct_beamforming(const CMatrix& channels, const PowerPair& powers,
                                   double noise_variance);

/// Uplink SINR of user k with MMSE receiver and uplink powers q:
/// q_k h_k^H (sigma^2 I + sum_{j != k} q_j h_j h_j^H)^{-1} h_k.
RVector uplink_mmse_sinr(const CMatrix& channels, const RVector& q, double noise_variance);

struct LabelOptions {
  int max_iters = 10000;
  double fixed_point_tol = 1e-9;
  double sum_tolerance = 1e-4;  // relative to p_t
};

/// Dual (q, p) pair for WMMSE beams: p_k = ||w_k||^2, q solves the uplink SINR
/// fixed point at the downlink SINRs. Throws LabelExtractionError when the
/// fixed point stalls or sum q drifts from p_t by more than the tolerance.
PowerPair extract_power_labels(const CMatrix& channels, const BeamMatrix& wmmse_beams,
                               double noise_variance, double p_t, const LabelOptions& options = {});

}  // namespace pbf
