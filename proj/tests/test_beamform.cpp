#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pbf/beamform.hpp"

using namespace pbf;

namespace {

// Scalar-loop SINR oracle.
RVector sinr_loops(const CMatrix& h, const BeamMatrix& w, double s2) {
  const Eigen::Index k_users = h.rows();
  RVector out(k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    double interference = s2;
    double signal = 0.0;
    for (Eigen::Index j = 0; j < k_users; ++j) {
      Complex g = 0.0;
      for (Eigen::Index a = 0; a < h.cols(); ++a) g += h(k, a) * w(a, j);
      if (j == k) {
        signal = std::norm(g);
      } else {
        interference += std::norm(g);
      }
    }
    out[k] = signal / interference;
  }
  return out;
}

double parallel_rate(const RVector& powers, const RVector& gains, double s2) {
  return (1.0 + (powers.array() * gains.array()) / s2).log().sum() / std::numbers::ln2;
}

}  // namespace

TEST_CASE("sinr and sum_rate agree with scalar loops") {
  RngStream rng(1);
  for (int t = 0; t < 20; ++t) {
    const CMatrix h = sample_complex_gaussian(3, 4, 1.0, rng);
    const BeamMatrix w = sample_complex_gaussian(4, 3, 2.0, rng);
    const RVector ref = sinr_loops(h, w, 0.7);
    CHECK((sinr(h, w, 0.7) - ref).norm() <= 1e-12 * ref.norm());
    double rate = 0.0;
    for (Eigen::Index k = 0; k < 3; ++k) rate += std::log2(1.0 + ref[k]);
    CHECK(sum_rate(h, w, 0.7) == doctest::Approx(rate).epsilon(1e-12));
  }
  CHECK_THROWS_AS(sinr(CMatrix::Ones(3, 4), CMatrix::Ones(3, 4), 1.0), ShapeError);
  CHECK_THROWS_AS(sinr(CMatrix::Ones(3, 4), CMatrix::Ones(4, 3), 0.0), DomainError);
}

TEST_CASE("water_fill beats every point of a grid search") {
  RngStream rng(2);
  for (int t = 0; t < 20; ++t) {
    RVector g(3);
    for (int i = 0; i < 3; ++i) g[i] = 0.05 + 3.0 * rng.uniform();
    const double p_t = 0.5 + 10.0 * rng.uniform();
    const RVector p = water_fill(g, p_t, 1.0);
    CHECK(p.sum() == doctest::Approx(p_t).epsilon(1e-12));
    CHECK(p.minCoeff() >= 0.0);
    const double best = parallel_rate(p, g, 1.0);
    const int steps = 200;
    for (int a = 0; a <= steps; ++a)
      for (int b = 0; a + b <= steps; ++b) {
        RVector q(3);
        q << p_t * a / steps, p_t * b / steps, p_t * (steps - a - b) / steps;
        CHECK(parallel_rate(q, g, 1.0) <= best + 1e-9);
      }
  }
  // One strong and one useless channel at low power: all power to the strong one.
  RVector g(2);
  g << 10.0, 0.01;
  const RVector p = water_fill(g, 1.0, 1.0);
  CHECK(p[0] == doctest::Approx(1.0));
  CHECK(p[1] == 0.0);
}

TEST_CASE("zero-forcing nulls interference and meets the power budget") {
  RngStream rng(3);
  for (int t = 0; t < 20; ++t) {
    const CMatrix h = sample_complex_gaussian(3, 4, 1.0, rng);
    const BeamMatrix w = zf_beamformer(h, 100.0, 1.0);
    CHECK(total_power(w) == doctest::Approx(100.0).epsilon(1e-10));
    const CMatrix g = h * w;
    for (Eigen::Index k = 0; k < 3; ++k)
      for (Eigen::Index j = 0; j < 3; ++j)
        if (j != k) CHECK(std::abs(g(k, j)) < 1e-9);
  }
  CHECK_THROWS_AS(zf_beamformer(sample_complex_gaussian(5, 4, 1.0, rng), 1.0, 1.0), UnsupportedError);
  CMatrix rank1(2, 4);
  rank1.row(0) = sample_complex_gaussian(1, 4, 1.0, rng);
  rank1.row(1) = rank1.row(0);
  CHECK_THROWS_AS(zf_beamformer(rank1, 1.0, 1.0), SingularityError);
}

TEST_CASE("WMMSE: monotone, at least ZF, within budget") {
  RngStream rng(4);
  for (int t = 0; t < 20; ++t) {
    const CMatrix h = sample_complex_gaussian(3, 4, 1.0, rng);
    const WmmseResult r = wmmse_solve(h, 100.0, 1.0);
    for (std::size_t i = 1; i < r.rates.size(); ++i) CHECK(r.rates[i] >= r.rates[i - 1] - 1e-9);
    CHECK(total_power(r.beams) <= 100.0 * (1.0 + 1e-9));
    CHECK(sum_rate(h, r.beams, 1.0) >= sum_rate(h, zf_beamformer(h, 100.0, 1.0), 1.0) - 1e-9);
  }
}

TEST_CASE("WMMSE single user reaches the matched-filter capacity") {
  RngStream rng(5);
  for (int t = 0; t < 10; ++t) {
    const CMatrix h = sample_complex_gaussian(1, 4, 1.0, rng);
    const WmmseResult r = wmmse_solve(h, 100.0, 1.0);
    CHECK(sum_rate(h, r.beams, 1.0) == doctest::Approx(std::log2(1.0 + 100.0 * h.squaredNorm())).epsilon(1e-6));
  }
}

TEST_CASE("WMMSE handles more users than antennas") {
  RngStream rng(6);
  const CMatrix h = sample_complex_gaussian(5, 2, 1.0, rng);
  const WmmseResult r = wmmse_solve(h, 10.0, 1.0);
  for (std::size_t i = 1; i < r.rates.size(); ++i) CHECK(r.rates[i] >= r.rates[i - 1] - 1e-9);
  CHECK(total_power(r.beams) <= 10.0 * (1.0 + 1e-9));
}

TEST_CASE("reconstruct_beamforming: per-user power and the q = 0 matched filter") {
  RngStream rng(7);
  const CMatrix h = sample_complex_gaussian(3, 4, 1.0, rng);
  PowerPair pp{RVector::Constant(3, 10.0), RVector(3)};
  pp.p << 5.0, 20.0, 75.0;
  const BeamMatrix w = reconstruct_beamforming(h, pp, 1.0);
  for (Eigen::Index k = 0; k < 3; ++k) CHECK(w.col(k).squaredNorm() == doctest::Approx(pp.p[k]).epsilon(1e-12));

  const PowerPair zero_q{RVector::Zero(3), RVector::Constant(3, 1.0)};
  const BeamMatrix mf = reconstruct_beamforming(h, zero_q, 1.0);
  for (Eigen::Index k = 0; k < 3; ++k) {
    const CVector dir = h.row(k).adjoint() / h.row(k).norm();
    CHECK((mf.col(k) - dir).norm() < 1e-12);
  }

  // Large uplink powers approach the zero-forcing directions.
  const PowerPair big_q{RVector::Constant(3, 1e8), RVector::Constant(3, 1.0)};
  const CMatrix g = h * reconstruct_beamforming(h, big_q, 1.0);
  for (Eigen::Index k = 0; k < 3; ++k)
    for (Eigen::Index j = 0; j < 3; ++j)
      if (j != k) CHECK(std::abs(g(k, j)) < 1e-3);
}

TEST_CASE("label extraction: duality holds and reconstruction recovers the WMMSE rate") {
  RngStream rng(8);
  int good = 0;
  for (int t = 0; t < 20; ++t) {
    const CMatrix h = sample_complex_gaussian(3, 4, 1.0, rng);
    const WmmseResult r = wmmse_solve(h, 100.0, 1.0);
    const PowerPair pp = extract_power_labels(h, r.beams, 1.0, 100.0);
    CHECK(std::abs(pp.q.sum() - 100.0) <= 1e-6);
    CHECK(std::abs(pp.p.sum() - 100.0) <= 1e-6);
    for (Eigen::Index k = 0; k < 3; ++k) CHECK(pp.p[k] == doctest::Approx(r.beams.col(k).squaredNorm()).epsilon(1e-6));
    // Uplink SINRs at q equal the downlink SINRs of the WMMSE beams.
    const RVector up = uplink_mmse_sinr(h, pp.q, 1.0);
    const RVector down = sinr(h, r.beams, 1.0);
    CHECK((up - down).cwiseAbs().maxCoeff() <= 1e-4 * down.maxCoeff());
    const double ratio = sum_rate(h, reconstruct_beamforming(h, pp, 1.0), 1.0) / sum_rate(h, r.beams, 1.0);
    if (ratio >= 0.99) ++good;
  }
  CHECK(good >= 19);
}

TEST_CASE("label extraction rejects an infeasible budget") {
  RngStream rng(9);
  const CMatrix h = sample_complex_gaussian(3, 4, 1.0, rng);
  const WmmseResult r = wmmse_solve(h, 100.0, 1.0);
  LabelOptions strict;
  CHECK_THROWS_AS(extract_power_labels(h, r.beams, 1.0, 50.0, strict), LabelExtractionError);
}
