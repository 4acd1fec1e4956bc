#include <doctest.h>

#include <cmath>

#include "pbf/kalman.hpp"

using namespace pbf;

TEST_CASE("noiseless filtering returns the last estimate") {
  ScenarioConfig sc;
  sc.est_noise_variance = 0.0;
  RngStream rng(1);
  const ChannelFrame f = generate_ar_frame(sc, rng);
  const EstimatedFrame e = estimate_channels(f, sc, rng);
  const KalmanTrack t = kalman_filter(e, f.beta, 0.0);
  REQUIRE(t.means.size() == 20);
  CHECK((t.last.mean - f.slots[19]).norm() == 0.0);
  CHECK(t.variances.back() == 0.0);
}

TEST_CASE("open-loop prediction is beta^m times the filtered mean") {
  RngStream rng(2);
  const CMatrix h = sample_complex_gaussian(3, 4, 1.0, rng);
  const auto pred = kalman_predict(h, 0.9, 5);
  REQUIRE(pred.size() == 5);
  for (int m = 0; m < 5; ++m) CHECK((pred[static_cast<std::size_t>(m)] - std::pow(0.9, m + 1) * h).norm() < 1e-12);
  CHECK_THROWS_AS(kalman_predict(h, 0.9, 0), DomainError);
}

TEST_CASE("posterior variance follows the Riccati recursion to its fixed point") {
  const double beta = 0.95;
  const double se = 0.05;
  EstimatedFrame e;
  e.estimates.assign(400, CMatrix::Zero(1, 1));
  const KalmanTrack t = kalman_filter(e, beta, se);

  // Independent iteration of the scalar recursion.
  double v = 1.0;
  for (std::size_t n = 0; n < t.variances.size(); ++n) {
    if (n > 0) v = beta * beta * v + (1.0 - beta * beta);
    CHECK(t.prior_variances[n] == doctest::Approx(v).epsilon(1e-12));
    v = v * se / (v + se);
    CHECK(t.variances[n] == doctest::Approx(v).epsilon(1e-12));
  }
  const double fixed = kalman_steady_state_variance(beta, se);
  CHECK(t.variances.back() == doctest::Approx(fixed).epsilon(1e-10));
  const double prior = beta * beta * fixed + 1.0 - beta * beta;
  CHECK(prior * se / (prior + se) == doctest::Approx(fixed).epsilon(1e-12));
  CHECK(kalman_steady_state_variance(1.0, se) == 0.0);
  CHECK(kalman_steady_state_variance(beta, 0.0) == 0.0);
}

TEST_CASE("posterior variance matches the empirical filtering error") {
  ScenarioConfig sc;
  sc.fd_ts = 0.05;
  sc.est_noise_variance = 0.05;
  RngStream rng(3);
  double err = 0.0;
  double count = 0.0;
  double predicted = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const ChannelFrame f = generate_ar_frame(sc, rng);
    const EstimatedFrame e = estimate_channels(f, sc, rng);
    const KalmanTrack t = kalman_filter(e, f.beta, sc.estimation_noise());
    err += (t.last.mean - f.slots[19]).squaredNorm();
    count += 12.0;
    predicted = t.variances.back();
  }
  CHECK(err / count == doctest::Approx(predicted).epsilon(0.05));
}

TEST_CASE("kalman_filter input checks") {
  EstimatedFrame empty;
  CHECK_THROWS_AS(kalman_filter(empty, 0.9, 0.1), ShapeError);
  EstimatedFrame e;
  e.estimates = {CMatrix::Zero(3, 4), CMatrix::Zero(2, 4)};
  CHECK_THROWS_AS(kalman_filter(e, 0.9, 0.1), ShapeError);
  CHECK_THROWS_AS(kalman_filter(e, 1.5, 0.1), DomainError);
  CHECK_THROWS_AS(kalman_filter(e, 0.9, -0.1), DomainError);
}
