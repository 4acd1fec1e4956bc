#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "pbf/predictor.hpp"

using namespace pbf;

namespace {

ScenarioConfig tiny_scenario() {
  ScenarioConfig sc;
  sc.n_t = 2;
  sc.k_users = 2;
  sc.n_known = 4;
  sc.p_predict = 2;
  sc.fd_ts = 0.05;
  return sc;
}

ModelConfig tiny_model(const ScenarioConfig& sc) {
  ModelConfig mc = ModelConfig::for_scenario(sc);
  mc.hidden = 12;
  mc.attention_size = 4;
  mc.power_width = 16;
  return mc;
}

std::vector<const FrameRecord*> batch_of(const Dataset& d) {
  std::vector<const FrameRecord*> out;
  for (const auto& f : d.frames) out.push_back(&f);
  return out;
}

}  // namespace

TEST_CASE("model config defaults follow the scenario") {
  ScenarioConfig sc;
  const ModelConfig mc = ModelConfig::for_scenario(sc);
  CHECK(mc.slot_size() == 24);
  CHECK(mc.resolved_hidden() == 480);
  CHECK(mc.resolved_attention() == 24);
  CHECK(mc.resolved_power_width() == 360);
  CHECK(mc.p_t == doctest::Approx(100.0));
  ScenarioConfig other = sc;
  other.k_users = 2;
  CHECK_THROWS_AS(mc.check_compatible(other), ConfigError);
}

TEST_CASE("real stacking round trip and layout") {
  RngStream rng(1);
  const CMatrix h = sample_complex_gaussian(3, 4, 1.0, rng);
  const RVector x = stack_channel(h);
  REQUIRE(x.size() == 24);
  CHECK(x(2 * (1 * 4 + 2)) == h(1, 2).real());
  CHECK(x(2 * (1 * 4 + 2) + 1) == h(1, 2).imag());
  CHECK((unstack_channel(x, 3, 4) - h).norm() == 0.0);
}

TEST_CASE("loss formulas") {
  // Single sample, K = 1, P = 1, error of norm sqrt(2): L_H = 1.
  std::vector<std::vector<CMatrix>> truth{{CMatrix::Zero(1, 2)}};
  std::vector<std::vector<CMatrix>> pred{{CMatrix::Zero(1, 2)}};
  pred[0][0](0, 0) = Complex(1.0, 1.0);
  CHECK(loss_channel(truth, pred) == doctest::Approx(1.0));
  CHECK(loss_channel(truth, truth) == 0.0);

  // q error (1, 0, 0), L = 1, K = 3, P = 1: L_P = 1/6.
  PowerPair label{RVector::Constant(3, 1.0), RVector::Constant(3, 1.0)};
  PowerPair guess = label;
  guess.q(0) += 1.0;
  std::vector<std::vector<PowerPair>> labels{{label}};
  std::vector<std::vector<PowerPair>> guesses{{guess}};
  CHECK(loss_power(labels, guesses) == doctest::Approx(1.0 / 6.0));
  CHECK(loss_power(labels, labels) == 0.0);

  CHECK(loss_total(1.0, 2.0, 300.0, 0.0) == 3.0);
  CHECK(loss_total(1.0, 2.0, 300.0, 0.001) == doctest::Approx(2.7));
}

TEST_CASE("losses match scalar-loop oracles") {
  RngStream rng(2);
  const int batch = 3, p = 4, k = 3, n_t = 2;
  std::vector<std::vector<CMatrix>> truth(batch), pred(batch);
  std::vector<std::vector<PowerPair>> labels(batch), guesses(batch);
  for (int l = 0; l < batch; ++l)
    for (int m = 0; m < p; ++m) {
      truth[l].push_back(sample_complex_gaussian(k, n_t, 1.0, rng));
      pred[l].push_back(sample_complex_gaussian(k, n_t, 1.0, rng));
      RVector a(k), b(k), c(k), d(k);
      for (int i = 0; i < k; ++i) {
        a[i] = rng.uniform();
        b[i] = rng.uniform();
        c[i] = rng.uniform();
        d[i] = rng.uniform();
      }
      labels[l].push_back({a, b});
      guesses[l].push_back({c, d});
    }
  double h_sum = 0.0, p_sum = 0.0;
  for (int l = 0; l < batch; ++l)
    for (int m = 0; m < p; ++m)
      for (int kk = 0; kk < k; ++kk) {
        for (int a = 0; a < n_t; ++a) h_sum += std::norm(truth[l][m](kk, a) - pred[l][m](kk, a));
        p_sum += std::pow(labels[l][m].q[kk] - guesses[l][m].q[kk], 2) +
                 std::pow(labels[l][m].p[kk] - guesses[l][m].p[kk], 2);
      }
  CHECK(std::abs(loss_channel(truth, pred) - h_sum / (2.0 * batch * k)) < 1e-12);
  CHECK(std::abs(loss_power(labels, guesses) - p_sum / (2.0 * batch * k)) < 1e-12);
}

TEST_CASE("reconstruction rate gradient: value and finite differences") {
  RngStream rng(3);
  const CMatrix x = sample_complex_gaussian(3, 4, 1.0, rng);
  const CMatrix e = sample_complex_gaussian(3, 4, 1.0, rng);
  PowerPair pw{RVector(3), RVector(3)};
  pw.q << 20.0, 30.0, 50.0;
  pw.p << 40.0, 25.0, 35.0;

  const RateGradient g = reconstruction_rate_gradient(x, pw, e, 1.0);
  CHECK(g.rate == doctest::Approx(sum_rate(e, reconstruct_beamforming(x, pw, 1.0), 1.0)).epsilon(1e-12));
  const RateGradient same = reconstruction_rate_gradient(x, pw, x, 1.0);
  CHECK(same.rate == doctest::Approx(sum_rate(x, reconstruct_beamforming(x, pw, 1.0), 1.0)).epsilon(1e-12));

  auto rate = [&](const CMatrix& xx, const PowerPair& pp, const CMatrix& ee) {
    return sum_rate(ee, reconstruct_beamforming(xx, pp, 1.0), 1.0);
  };
  const double eps = 1e-6;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    for (int part = 0; part < 2; ++part) {
      const Complex step = part == 0 ? Complex(eps, 0.0) : Complex(0.0, eps);
      CMatrix xp = x, xm = x, ep = e, em = e;
      xp(i) += step;
      xm(i) -= step;
      ep(i) += step;
      em(i) -= step;
      const double fd_x = (rate(xp, pw, e) - rate(xm, pw, e)) / (2.0 * eps);
      const double fd_e = (rate(x, pw, ep) - rate(x, pw, em)) / (2.0 * eps);
      const double an_x = part == 0 ? g.d_channels(i).real() : g.d_channels(i).imag();
      const double an_e = part == 0 ? g.d_eval_channels(i).real() : g.d_eval_channels(i).imag();
      CHECK(an_x == doctest::Approx(fd_x).epsilon(1e-5));
      CHECK(an_e == doctest::Approx(fd_e).epsilon(1e-5));
    }
  }
  for (Eigen::Index k = 0; k < 3; ++k) {
    PowerPair qp = pw, qm = pw, pp = pw, pm = pw;
    qp.q(k) += 1e-5;
    qm.q(k) -= 1e-5;
    pp.p(k) += 1e-5;
    pm.p(k) -= 1e-5;
    CHECK(g.d_q(k) == doctest::Approx((rate(x, qp, e) - rate(x, qm, e)) / 2e-5).epsilon(1e-5));
    CHECK(g.d_p(k) == doctest::Approx((rate(x, pp, e) - rate(x, pm, e)) / 2e-5).epsilon(1e-5));
  }
}

TEST_CASE("joint model outputs satisfy the power constraint") {
  const ScenarioConfig sc = tiny_scenario();
  const Dataset d = generate_dataset(sc, 4, {}, RngStream(4));
  RngStream rng(5);
  const JointModel model(tiny_model(sc), rng);
  for (const auto& f : d.frames) {
    const auto h = model.predict_channels(f.estimated);
    REQUIRE(h.size() == 2);
    const auto powers = model.predict_powers(h);
    for (const auto& pw : powers) {
      CHECK(pw.q.sum() == doctest::Approx(sc.p_t()).epsilon(1e-12));
      CHECK(pw.p.sum() == doctest::Approx(sc.p_t()).epsilon(1e-12));
      CHECK(pw.q.minCoeff() >= 0.0);
    }
    const auto beams = model.infer_beamforming(f.estimated);
    for (std::size_t m = 0; m < beams.size(); ++m) {
      CHECK(total_power(beams[m]) == doctest::Approx(sc.p_t()).epsilon(1e-10));
      for (Eigen::Index k = 0; k < 2; ++k)
        CHECK(beams[m].col(k).squaredNorm() == doctest::Approx(powers[m].p[k]).epsilon(1e-10));
    }
    const RVector c = model.attention_weights(f.estimated);
    CHECK(c.size() == 4);
    CHECK(c.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Batched and single-frame predictions agree.
  const auto batch = batch_of(d);
  const auto all = model.predict_channels(batch);
  for (std::size_t i = 0; i < d.frames.size(); ++i) {
    const auto one = model.predict_channels(d.frames[i].estimated);
    for (std::size_t m = 0; m < one.size(); ++m) CHECK((one[m] - all[i][m]).norm() < 1e-12);
  }
}

TEST_CASE("loss breakdown agrees with the free loss functions") {
  const ScenarioConfig sc = tiny_scenario();
  const Dataset d = generate_dataset(sc, 5, {}, RngStream(6));
  RngStream rng(7);
  JointModel model(tiny_model(sc), rng);
  const auto batch = batch_of(d);
  std::vector<std::vector<CMatrix>> truth, pred;
  std::vector<std::vector<PowerPair>> labels, powers;
  for (const auto& f : d.frames) {
    truth.emplace_back(f.truth.slots.begin() + 4, f.truth.slots.end());
    pred.push_back(model.predict_channels(f.estimated));
    labels.push_back(f.labels);
    powers.push_back(model.predict_powers(pred.back()));
  }
  const LossBreakdown l = model.loss(batch, {}, false);
  CHECK(l.channel == doctest::Approx(loss_channel(truth, pred)).epsilon(1e-12));
  CHECK(l.power == doctest::Approx(loss_power(labels, powers)).epsilon(1e-12));
  CHECK(l.total == doctest::Approx(loss_total(l.channel, l.power, l.rate, 0.001)).epsilon(1e-12));
}

TEST_CASE("checkpoints round trip and reject mismatches") {
  const ScenarioConfig sc = tiny_scenario();
  RngStream rng(8);
  JointModel model(tiny_model(sc), rng);
  const auto bytes = model.serialize();
  JointModel back = JointModel::deserialize(bytes);
  CHECK(back.config() == model.config());
  CHECK(back.serialize() == bytes);

  ModelConfig bigger = tiny_model(sc);
  bigger.hidden = 13;
  RngStream rng2(8);
  JointModel other(bigger, rng2);
  CHECK(JointModel::deserialize(other.serialize()).config().hidden == 13);
  CHECK_THROWS_AS(JointModel::deserialize({bytes.begin(), bytes.end() - 1}), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(JointModel::deserialize(trailing), FormatError);
  auto tampered = bytes;
  tampered[0] = 'Q';
  CHECK_THROWS_AS(JointModel::deserialize(tampered), FormatError);

  const auto path = std::filesystem::temp_directory_path() / "pbf_test_checkpoint.pbfm";
  model.save(path);
  CHECK(JointModel::load(path).serialize() == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("training overfits ten frames") {
  const ScenarioConfig sc = tiny_scenario();
  const Dataset d = generate_dataset(sc, 10, {}, RngStream(9));
  TrainConfig tc;
  tc.epochs = 500;
  tc.learning_rate = 3e-3;
  tc.seed = 3;
  TrainResult result;
  ModelConfig mc = tiny_model(sc);
  mc.power_width = 32;
  train_joint(d, mc, tc, &result);
  REQUIRE(result.trace.size() == 500);
  for (const auto& s : result.trace) CHECK(std::isfinite(s.loss.total));
  const auto& first = result.trace.front().loss;
  const auto& last = result.trace.back().loss;
  CHECK(last.channel < 0.1 * first.channel);
  CHECK(last.power < 0.1 * first.power);
}

TEST_CASE("training is deterministic under the seed") {
  const ScenarioConfig sc = tiny_scenario();
  const Dataset d = generate_dataset(sc, 20, {}, RngStream(10));
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 8;
  JointModel a = train_joint(d, tiny_model(sc), tc);
  JointModel b = train_joint(d, tiny_model(sc), tc);
  CHECK(a.serialize() == b.serialize());
  tc.seed = 2;
  JointModel c = train_joint(d, tiny_model(sc), tc);
  CHECK(a.serialize() != c.serialize());
}

TEST_CASE("separate mode freezes the channel network in its power phase") {
  const ScenarioConfig sc = tiny_scenario();
  const Dataset d = generate_dataset(sc, 16, {}, RngStream(11));
  TrainConfig tc;
  tc.mode = TrainMode::Separate;
  tc.epochs = 2;
  tc.power_epochs = 0;
  tc.batch_size = 8;
  JointModel after_channel = train_joint(d, tiny_model(sc), tc);
  tc.power_epochs = 3;
  TrainResult r;
  JointModel after_power = train_joint(d, tiny_model(sc), tc, &r);
  REQUIRE(r.trace.size() == 5);
  CHECK(r.trace[0].phase == "channel");
  CHECK(r.trace[4].phase == "power");
  CHECK(r.trace[0].loss.power == 0.0);
  // The frozen channel network reports the same L_H through the power phase.
  CHECK(r.trace[4].loss.channel == doctest::Approx(r.trace[2].loss.channel).epsilon(1e-12));
  const auto a = after_channel.channel_params();
  const auto b = after_power.channel_params();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
  const auto pa = after_channel.power_params();
  const auto pb = after_power.power_params();
  CHECK(pa[0]->value != pb[0]->value);
}

TEST_CASE("warm-up epochs train the channel network only") {
  const ScenarioConfig sc = tiny_scenario();
  const Dataset d = generate_dataset(sc, 16, {}, RngStream(12));
  TrainConfig tc;
  tc.epochs = 1;
  tc.warmup_epochs = 2;
  tc.batch_size = 8;
  TrainResult r;
  train_joint(d, tiny_model(sc), tc, &r);
  REQUIRE(r.trace.size() == 3);
  CHECK(r.trace[0].phase == "warmup");
  CHECK(r.trace[2].phase == "joint");
}

TEST_CASE("training reports divergence with the batch index") {
  const ScenarioConfig sc = tiny_scenario();
  Dataset d = generate_dataset(sc, 8, {}, RngStream(13));
  d.frames[0].labels[0].q(0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 100;
  try {
    train_joint(d, tiny_model(sc), tc);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
  }
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.lr_decay = 1.5;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.checkpoint_every = 2;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.power_weight = -1.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);

  const ScenarioConfig sc = tiny_scenario();
  const Dataset unlabeled = generate_dataset(sc, 2, {}, RngStream(1), Split::Test, false);
  CHECK_THROWS_AS(train_joint(unlabeled, tiny_model(sc), TrainConfig{}), ConfigError);
}
