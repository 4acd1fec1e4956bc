#include "pbf/beamform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pbf {

RVector water_fill(const RVector& gains, double p_t, double noise_variance) {
  const Eigen::Index n = gains.size();
  RVector powers = RVector::Zero(n);
  if (n == 0 || p_t <= 0.0) return powers;
  // Floor levels sigma^2 / g_k; users with g_k = 0 never receive power.
  std::vector<std::pair<double, Eigen::Index>> floors;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (gains[k] > 0.0) floors.emplace_back(noise_variance / gains[k], k);
  }
  if (floors.empty()) return powers;
  std::sort(floors.begin(), floors.end());

  double level = 0.0;
  double partial = 0.0;
  std::size_t active = 0;
  for (std::size_t m = 1; m <= floors.size(); ++m) {
    partial += floors[m - 1].first;
    const double candidate = (p_t + partial) / static_cast<double>(m);
    if (candidate > floors[m - 1].first) {
      level = candidate;
      active = m;
    } else {
      break;
    }
  }
  for (std::size_t m = 0; m < active; ++m) {
    powers[floors[m].second] = std::max(0.0, level - floors[m].first);
  }
  // Remove rounding drift so the budget is met exactly.
  const double total = powers.sum();
  if (total > 0.0) powers *= p_t / total;
  return powers;
}

BeamMatrix zf_beamformer(const CMatrix& channels, double p_t, double noise_variance) {
  const Eigen::Index k_users = channels.rows();
  const Eigen::Index n_t = channels.cols();
  if (k_users > n_t) throw UnsupportedError("zf_beamformer: more users than antennas");
  const CMatrix gram = channels * channels.adjoint();
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(gram, Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  if (!(lmax > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * lmax) {
    throw SingularityError("zf_beamformer: channel matrix is rank deficient");
  }
  const CMatrix identity = CMatrix::Identity(k_users, k_users);
  const CMatrix gram_inv = hermitian_solve(gram, identity);
  const CMatrix directions = channels.adjoint() * gram_inv;

  RVector gains(k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) gains[k] = 1.0 / gram_inv(k, k).real();
  const RVector powers = water_fill(gains, p_t, noise_variance);

  BeamMatrix beams(n_t, k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    beams.col(k) = std::sqrt(powers[k]) * directions.col(k) / directions.col(k).norm();
  }
  return beams;
}

namespace {

BeamMatrix matched_filter_init(const CMatrix& channels, double p_t) {
  const Eigen::Index k_users = channels.rows();
  BeamMatrix beams = CMatrix::Zero(channels.cols(), k_users);
  const double per_user = std::sqrt(p_t / static_cast<double>(k_users));
  for (Eigen::Index k = 0; k < k_users; ++k) {
    const double norm = channels.row(k).norm();
    if (norm > 0.0) beams.col(k) = per_user * channels.row(k).adjoint() / norm;
  }
  return beams;
}

// Transmit update: W = (M + mu I)^{-1} B with the smallest mu >= 0 meeting the budget.
BeamMatrix wmmse_transmit_update(const CMatrix& m, const CMatrix& b, double p_t) {
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(m);
  const RVector lambda = eig.eigenvalues().cwiseMax(0.0);
  const CMatrix& u = eig.eigenvectors();
  const CMatrix c = u.adjoint() * b;
  const RVector weight = c.rowwise().squaredNorm();
  const double total = weight.sum();
  if (total == 0.0) return CMatrix::Zero(b.rows(), b.cols());

  auto power = [&](double mu) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
      const double d = lambda[i] + mu;
      s += weight[i] / (d * d);
    }
    return s;
  };

  double mu = 0.0;
  const double lmax = lambda.maxCoeff();
  const bool invertible = lambda.minCoeff() > 1e-12 * std::max(lmax, 1e-300);
  if (!(invertible && power(0.0) <= p_t)) {
    double lo = 0.0;
    double hi = std::sqrt(total / p_t);  // power(hi) <= total / hi^2 = p_t
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (power(mid) > p_t) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    mu = hi;
  }
  RVector inv(lambda.size());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) inv[i] = 1.0 / (lambda[i] + mu);
  return u * (inv.asDiagonal() * c);
}

}  // namespace

WmmseResult wmmse_solve(const CMatrix& channels, double p_t, double noise_variance,
                        const WmmseOptions& options) {
  if (!(noise_variance > 0.0)) throw DomainError("wmmse_solve: noise variance must be positive");
  if (!(p_t > 0.0)) throw DomainError("wmmse_solve: power budget must be positive");
  const Eigen::Index k_users = channels.rows();

  WmmseResult result;
  BeamMatrix beams;
  if (options.init == WmmseInit::ZeroForcing && k_users <= channels.cols()) {
    try {
      beams = zf_beamformer(channels, p_t, noise_variance);
    } catch (const SingularityError&) {
      beams = matched_filter_init(channels, p_t);
    }
  } else {
    beams = matched_filter_init(channels, p_t);
  }
  double rate = sum_rate(channels, beams, noise_variance);
  result.rates.push_back(rate);
  result.beams = beams;
  double best = rate;

  for (int it = 0; it < options.max_iters; ++it) {
    const CMatrix g = channels * beams;
    CVector receive(k_users);
    RVector mse_weight(k_users);
    for (Eigen::Index k = 0; k < k_users; ++k) {
      const double total = g.row(k).squaredNorm() + noise_variance;
      receive[k] = g(k, k) / total;
      const double mse = 1.0 - std::norm(g(k, k)) / total;
      mse_weight[k] = 1.0 / std::max(mse, std::numeric_limits<double>::min());
    }
    const RVector coupling = mse_weight.cwiseProduct(receive.cwiseAbs2());
    const CMatrix m = channels.adjoint() * coupling.asDiagonal() * channels;
    const CVector rhs_scale = mse_weight.cast<Complex>().cwiseProduct(receive);
    const CMatrix b = channels.adjoint() * rhs_scale.asDiagonal();
    beams = wmmse_transmit_update(m, b, p_t);

    const double next = sum_rate(channels, beams, noise_variance);
    result.rates.push_back(next);
    result.iterations = it + 1;
    if (next > best) {
      best = next;
      result.beams = beams;
    }
    const bool settled = std::abs(next - rate) <= options.tol * std::max(std::abs(rate), 1e-12);
    rate = next;
    if (settled) {
      result.converged = true;
      break;
    }
  }
  return result;
}

BeamMatrix reconstruct_beamforming(const CMatrix& channels, const PowerPair& powers,
                                   double noise_variance) {
  const Eigen::Index k_users = channels.rows();
  const Eigen::Index n_t = channels.cols();
  if (powers.q.size() != k_users || powers.p.size() != k_users) {
    throw ShapeError("reconstruct_beamforming: power vectors must have K entries");
  }
  if (!(noise_variance > 0.0)) throw DomainError("reconstruct_beamforming: noise variance must be positive");
  for (Eigen::Index k = 0; k < k_users; ++k) {
    if (channels.row(k).squaredNorm() == 0.0) {
      throw DomainError("reconstruct_beamforming: zero channel for user " + std::to_string(k));
    }
  }
  const RVector scaled_q = powers.q / noise_variance;
  const CMatrix a = CMatrix::Identity(n_t, n_t) + channels.adjoint() * scaled_q.asDiagonal() * channels;
  const CMatrix rhs = channels.adjoint();
  const CMatrix v = hermitian_solve(a, rhs);
  BeamMatrix beams(n_t, k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    beams.col(k) = std::sqrt(std::max(powers.p[k], 0.0)) * v.col(k) / v.col(k).norm();
  }
  return beams;
}

namespace {

// h_k^H (sigma^2 I + sum_{j != k} q_j h_j h_j^H)^{-1} h_k for every k.
RVector uplink_gain(const CMatrix& channels, const RVector& q, double noise_variance) {
  const Eigen::Index k_users = channels.rows();
  const Eigen::Index n_t = channels.cols();
  RVector out(k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    CMatrix cov = noise_variance * CMatrix::Identity(n_t, n_t);
    for (Eigen::Index j = 0; j < k_users; ++j) {
      if (j != k) cov.noalias() += q[j] * channels.row(j).adjoint() * channels.row(j);
    }
    const CVector h = channels.row(k).adjoint();
    out[k] = h.dot(hermitian_solve(cov, h)).real();
  }
  return out;
}

}  // namespace

RVector uplink_mmse_sinr(const CMatrix& channels, const RVector& q, double noise_variance) {
  if (q.size() != channels.rows()) throw ShapeError("uplink_mmse_sinr: q must have K entries");
  return q.cwiseProduct(uplink_gain(channels, q, noise_variance));
}

PowerPair extract_power_labels(const CMatrix& channels, const BeamMatrix& wmmse_beams,
                               double noise_variance, double p_t, const LabelOptions& options) {
  const Eigen::Index k_users = channels.rows();
  PowerPair out;
  out.p = wmmse_beams.colwise().squaredNorm().transpose();
  const RVector target = sinr(channels, wmmse_beams, noise_variance);

  RVector q = RVector::Zero(k_users);
  bool settled = false;
  for (int it = 0; it < options.max_iters; ++it) {
    const RVector gain = uplink_gain(channels, q, noise_variance);
    RVector next(k_users);
    for (Eigen::Index k = 0; k < k_users; ++k) next[k] = gain[k] > 0.0 ? target[k] / gain[k] : 0.0;
    const double change = (next - q).cwiseAbs().maxCoeff();
    q = next;
    if (!q.allFinite()) break;
    if (change < options.fixed_point_tol) {
      settled = true;
      break;
    }
  }
  if (!settled) throw LabelExtractionError("extract_power_labels: uplink fixed point did not converge");
  const double sum_q = q.sum();
  if (std::abs(sum_q - p_t) > options.sum_tolerance * p_t) {
    throw LabelExtractionError("extract_power_labels: uplink power sum " + std::to_string(sum_q) +
                               " deviates from budget " + std::to_string(p_t));
  }
  out.q = q * (p_t / sum_q);
  return out;
}

}  // namespace pbf
