#include "pbf/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

namespace pbf {

namespace {

constexpr std::string_view kModelMagic = "PBFMODL1";
constexpr std::uint32_t kModelVersion = 1;

}  // namespace

// ---------------------------------------------------------------- config

ModelConfig ModelConfig::for_scenario(const ScenarioConfig& scenario) {
  ModelConfig c;
  c.n_t = scenario.n_t;
  c.k_users = scenario.k_users;
  c.n_known = scenario.n_known;
  c.p_predict = scenario.p_predict;
  c.p_t = scenario.p_t();
  c.noise_variance = scenario.noise_variance;
  return c;
}

void ModelConfig::validate() const {
  if (n_t < 1 || k_users < 1 || n_known < 1 || p_predict < 1) {
    throw ConfigError("model: n_t, k_users, n_known and p_predict must be >= 1");
  }
  if (hidden < 0 || attention_size < 0 || power_width < 0 || power_layers < 0) {
    throw ConfigError("model: layer sizes must be >= 0");
  }
  if (!(p_t > 0.0) || !std::isfinite(p_t)) throw ConfigError("model: p_t must be positive");
  if (!(noise_variance > 0.0) || !std::isfinite(noise_variance)) {
    throw ConfigError("model: noise_variance must be positive");
  }
}

void ModelConfig::check_compatible(const ScenarioConfig& scenario) const {
  if (scenario.n_t != n_t || scenario.k_users != k_users || scenario.n_known != n_known ||
      scenario.p_predict != p_predict) {
    throw ConfigError("model and dataset disagree on (n_t, k_users, n_known, p_predict)");
  }
  if (std::abs(scenario.p_t() - p_t) > 1e-9 * p_t ||
      std::abs(scenario.noise_variance - noise_variance) > 1e-12) {
    throw ConfigError("model and dataset disagree on transmit power or noise variance");
  }
}

// ---------------------------------------------------------------- stacking

RVector stack_channel(const CMatrix& h) {
  RVector x(2 * h.size());
  for (Eigen::Index k = 0; k < h.rows(); ++k)
    for (Eigen::Index a = 0; a < h.cols(); ++a) {
      const Eigen::Index i = 2 * (k * h.cols() + a);
      x[i] = h(k, a).real();
      x[i + 1] = h(k, a).imag();
    }
  return x;
}

CMatrix unstack_channel(const Eigen::Ref<const RVector>& x, int k_users, int n_t) {
  if (x.size() != 2 * k_users * n_t) throw ShapeError("unstack_channel: length must be 2 K N_t");
  CMatrix h(k_users, n_t);
  for (int k = 0; k < k_users; ++k)
    for (int a = 0; a < n_t; ++a) {
      const Eigen::Index i = 2 * (k * n_t + a);
      h(k, a) = Complex(x[i], x[i + 1]);
    }
  return h;
}

// ---------------------------------------------------------------- losses

double loss_channel(std::span<const std::vector<CMatrix>> truth, std::span<const std::vector<CMatrix>> pred) {
  if (truth.size() != pred.size() || truth.empty()) throw ShapeError("loss_channel: batch size mismatch");
  double sum = 0.0;
  Eigen::Index k_users = 0;
  for (std::size_t l = 0; l < truth.size(); ++l) {
    if (truth[l].size() != pred[l].size()) throw ShapeError("loss_channel: slot count mismatch");
    for (std::size_t m = 0; m < truth[l].size(); ++m) {
      if (truth[l][m].rows() != pred[l][m].rows() || truth[l][m].cols() != pred[l][m].cols()) {
        throw ShapeError("loss_channel: matrix shape mismatch");
      }
      k_users = truth[l][m].rows();
      sum += (truth[l][m] - pred[l][m]).squaredNorm();
    }
  }
  if (k_users == 0) return 0.0;
  return sum / (2.0 * static_cast<double>(truth.size()) * static_cast<double>(k_users));
}

double loss_power(std::span<const std::vector<PowerPair>> labels, std::span<const std::vector<PowerPair>> pred) {
  if (labels.size() != pred.size() || labels.empty()) throw ShapeError("loss_power: batch size mismatch");
  double sum = 0.0;
  Eigen::Index k_users = 0;
  for (std::size_t l = 0; l < labels.size(); ++l) {
    if (labels[l].size() != pred[l].size()) throw ShapeError("loss_power: slot count mismatch");
    for (std::size_t m = 0; m < labels[l].size(); ++m) {
      const auto& a = labels[l][m];
      const auto& b = pred[l][m];
      if (a.q.size() != b.q.size() || a.p.size() != b.p.size() || a.q.size() != a.p.size()) {
        throw ShapeError("loss_power: power vector length mismatch");
      }
      k_users = a.q.size();
      sum += (a.q - b.q).squaredNorm() + (a.p - b.p).squaredNorm();
    }
  }
  if (k_users == 0) return 0.0;
  return sum / (2.0 * static_cast<double>(labels.size()) * static_cast<double>(k_users));
}

double loss_total(double loss_h, double loss_p, double rate, double rate_weight) {
  return loss_h + loss_p - rate_weight * rate;
}

// ---------------------------------------------------------------- rate gradient

RateGradient reconstruction_rate_gradient(const CMatrix& channels, const PowerPair& powers,
                                          const CMatrix& eval_channels, double noise_variance) {
  const Eigen::Index k_users = channels.rows();
  const Eigen::Index n_t = channels.cols();
  if (powers.q.size() != k_users || powers.p.size() != k_users) {
    throw ShapeError("reconstruction_rate_gradient: power vectors must have K entries");
  }
  if (eval_channels.rows() != k_users || eval_channels.cols() != n_t) {
    throw ShapeError("reconstruction_rate_gradient: evaluation channel shape mismatch");
  }
  if (!(noise_variance > 0.0)) throw DomainError("reconstruction_rate_gradient: noise variance must be positive");

  // Forward: A = I + X^H D X, V = A^{-1} X^H, W = V diag(sqrt(p) / ||V_k||).
  const RVector d = powers.q / noise_variance;
  const CMatrix y = d.asDiagonal() * channels;
  const CMatrix a = CMatrix::Identity(n_t, n_t) + channels.adjoint() * y;
  const Eigen::LLT<CMatrix> llt(a);
  if (llt.info() != Eigen::Success) throw SingularityError("reconstruction_rate_gradient: A is not positive definite");
  const CMatrix v = llt.solve(channels.adjoint());
  RVector norms(k_users);
  RVector scale(k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    norms[k] = v.col(k).norm();
    if (!(norms[k] > 0.0)) throw DomainError("reconstruction_rate_gradient: zero user channel");
    scale[k] = std::sqrt(std::max(0.0, powers.p[k])) / norms[k];
  }
  const CMatrix w = v * scale.asDiagonal();
  const CMatrix g = eval_channels * w;
  const RMatrix g2 = g.cwiseAbs2();
  const RVector total = g2.rowwise().sum().array() + noise_variance;
  const RVector interference = total - g2.diagonal();

  RateGradient out;
  out.rate = (total.array() / interference.array()).log().sum() / std::numbers::ln2;

  // Reverse.
  CMatrix g_bar(k_users, k_users);
  for (Eigen::Index k = 0; k < k_users; ++k)
    for (Eigen::Index j = 0; j < k_users; ++j) {
      double coef = 1.0 / total[k];
      if (j != k) coef -= 1.0 / interference[k];
      g_bar(k, j) = 2.0 * coef / std::numbers::ln2 * g(k, j);
    }
  const CMatrix w_bar = eval_channels.adjoint() * g_bar;
  out.d_eval_channels = g_bar * w.adjoint();

  CMatrix v_bar = w_bar * scale.asDiagonal();
  out.d_p = RVector::Zero(k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    const double s_bar = w_bar.col(k).dot(v.col(k)).real();
    const double root_p = std::sqrt(std::max(0.0, powers.p[k]));
    const double n_bar = -s_bar * root_p / (norms[k] * norms[k]);
    v_bar.col(k) += (n_bar / norms[k]) * v.col(k);
    if (root_p > 0.0) out.d_p[k] = s_bar / (2.0 * root_p * norms[k]);
  }
  const CMatrix b_bar = llt.solve(v_bar);
  const CMatrix a_bar = -b_bar * v.adjoint();
  out.d_channels = b_bar.adjoint();
  out.d_channels += y * a_bar.adjoint();
  const CMatrix y_bar = channels * a_bar;
  out.d_channels += d.asDiagonal() * y_bar;
  out.d_q = (y_bar.conjugate().cwiseProduct(channels)).rowwise().sum().real() / noise_variance;
  return out;
}

// ---------------------------------------------------------------- model

JointModel::JointModel(const ModelConfig& config, RngStream& rng) : config_(config) {
  config_.validate();
  const int slot = config_.slot_size();
  const int hidden = config_.resolved_hidden();
  lstm_ = nn::Lstm("channel.lstm", slot, hidden, rng);
  if (config_.attention) attention_ = nn::Attention("channel.attention", hidden, config_.resolved_attention(), rng);
  head_ = nn::Dense("channel.head", hidden, slot * config_.p_predict, nn::Activation::Identity, rng);
  int width_in = slot * config_.p_predict;
  const int width = config_.resolved_power_width();
  for (int i = 0; i < config_.power_layers; ++i) {
    power_layers_.emplace_back("power.dense" + std::to_string(i), width_in, width, nn::Activation::Relu, rng);
    width_in = width;
  }
  power_layers_.emplace_back("power.out", width_in, 2 * config_.k_users * config_.p_predict,
                             nn::Activation::Identity, rng);
}

std::vector<nn::Param*> JointModel::channel_params() {
  std::vector<nn::Param*> out = lstm_.params();
  if (config_.attention) {
    for (auto* p : attention_.params()) out.push_back(p);
  }
  for (auto* p : head_.params()) out.push_back(p);
  return out;
}

std::vector<nn::Param*> JointModel::power_params() {
  std::vector<nn::Param*> out;
  for (auto& layer : power_layers_)
    for (auto* p : layer.params()) out.push_back(p);
  return out;
}

std::vector<nn::Param*> JointModel::params() {
  auto out = channel_params();
  for (auto* p : power_params()) out.push_back(p);
  return out;
}

RMatrix JointModel::channel_inputs(std::span<const FrameRecord* const> frames, std::vector<RMatrix>& seq) const {
  const auto batch = static_cast<Eigen::Index>(frames.size());
  const int slot = config_.slot_size();
  seq.assign(static_cast<std::size_t>(config_.n_known), RMatrix(slot, batch));
  RMatrix targets(slot * config_.p_predict, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const FrameRecord& f = *frames[static_cast<std::size_t>(b)];
    if (static_cast<int>(f.estimated.estimates.size()) != config_.n_known) {
      throw ConfigError("frame has " + std::to_string(f.estimated.estimates.size()) +
                        " estimates, model expects " + std::to_string(config_.n_known));
    }
    for (int t = 0; t < config_.n_known; ++t) {
      const CMatrix& e = f.estimated.estimates[static_cast<std::size_t>(t)];
      if (e.rows() != config_.k_users || e.cols() != config_.n_t) throw ConfigError("estimate shape mismatch");
      seq[static_cast<std::size_t>(t)].col(b) = stack_channel(e);
    }
    if (static_cast<int>(f.truth.slots.size()) == config_.n_known + config_.p_predict) {
      for (int m = 0; m < config_.p_predict; ++m) {
        targets.col(b).segment(static_cast<Eigen::Index>(m) * slot, slot) =
            stack_channel(f.truth.slots[static_cast<std::size_t>(config_.n_known + m)]);
      }
    } else {
      targets.col(b).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return targets;
}

RMatrix JointModel::channel_forward(const std::vector<RMatrix>& seq, nn::LstmCache* lstm_cache,
                                    nn::AttentionCache* attn_cache, nn::DenseCache* head_cache) const {
  const auto hidden = lstm_.forward(seq, lstm_cache);
  const RMatrix context = config_.attention ? attention_.forward(hidden, attn_cache) : hidden.back();
  return head_.forward(context, head_cache);
}

RMatrix JointModel::power_forward(const RMatrix& stacked, std::vector<nn::DenseCache>* caches) const {
  if (caches) caches->assign(power_layers_.size(), {});
  RMatrix x = stacked;
  for (std::size_t i = 0; i < power_layers_.size(); ++i) {
    x = power_layers_[i].forward(x, caches ? &(*caches)[i] : nullptr);
  }
  return x;
}

void JointModel::unpack_powers(const RMatrix& logits, Eigen::Index col, std::vector<PowerPair>& out) const {
  const int k = config_.k_users;
  out.resize(static_cast<std::size_t>(config_.p_predict));
  for (int m = 0; m < config_.p_predict; ++m) {
    const RMatrix q = nn::softmax_columns(logits.col(col).segment(2 * k * m, k));
    const RMatrix p = nn::softmax_columns(logits.col(col).segment(2 * k * m + k, k));
    out[static_cast<std::size_t>(m)].q = config_.p_t * q.col(0);
    out[static_cast<std::size_t>(m)].p = config_.p_t * p.col(0);
  }
}

std::vector<std::vector<CMatrix>> JointModel::predict_channels(std::span<const FrameRecord* const> frames) const {
  std::vector<RMatrix> seq;
  channel_inputs(frames, seq);
  const RMatrix y = channel_forward(seq, nullptr, nullptr, nullptr);
  const int slot = config_.slot_size();
  std::vector<std::vector<CMatrix>> out(frames.size());
  for (std::size_t b = 0; b < frames.size(); ++b) {
    for (int m = 0; m < config_.p_predict; ++m) {
      out[b].push_back(unstack_channel(y.col(static_cast<Eigen::Index>(b)).segment(static_cast<Eigen::Index>(m) * slot, slot),
                                       config_.k_users, config_.n_t));
    }
  }
  return out;
}

std::vector<CMatrix> JointModel::predict_channels(const EstimatedFrame& estimates) const {
  FrameRecord record;
  record.estimated = estimates;
  const FrameRecord* ptr = &record;
  return predict_channels(std::span<const FrameRecord* const>(&ptr, 1)).front();
}

std::vector<PowerPair> JointModel::predict_powers(const std::vector<CMatrix>& predicted) const {
  if (static_cast<int>(predicted.size()) != config_.p_predict) throw ConfigError("predict_powers: expected P slots");
  const int slot = config_.slot_size();
  RMatrix stacked(slot * config_.p_predict, 1);
  for (int m = 0; m < config_.p_predict; ++m) {
    stacked.col(0).segment(static_cast<Eigen::Index>(m) * slot, slot) = stack_channel(predicted[static_cast<std::size_t>(m)]);
  }
  std::vector<PowerPair> out;
  unpack_powers(power_forward(stacked, nullptr), 0, out);
  return out;
}

std::vector<BeamMatrix> JointModel::infer_beamforming(const EstimatedFrame& estimates) const {
  const auto predicted = predict_channels(estimates);
  const auto powers = predict_powers(predicted);
  std::vector<BeamMatrix> beams;
  beams.reserve(predicted.size());
  for (std::size_t m = 0; m < predicted.size(); ++m) {
    beams.push_back(reconstruct_beamforming(predicted[m], powers[m], config_.noise_variance));
  }
  return beams;
}

RVector JointModel::attention_weights(const EstimatedFrame& estimates) const {
  if (!config_.attention) return {};
  FrameRecord record;
  record.estimated = estimates;
  const FrameRecord* ptr = &record;
  std::vector<RMatrix> seq;
  channel_inputs(std::span<const FrameRecord* const>(&ptr, 1), seq);
  RMatrix weights;
  attention_.forward(lstm_.forward(seq), nullptr, &weights);
  return weights.col(0);
}

LossBreakdown JointModel::loss(std::span<const FrameRecord* const> batch, const LossOptions& options,
                               bool with_gradients) {
  if (batch.empty()) throw ShapeError("loss: empty batch");
  const auto batch_size = static_cast<Eigen::Index>(batch.size());
  const double n_batch = static_cast<double>(batch_size);
  const double n_users = static_cast<double>(config_.k_users);
  const int slot = config_.slot_size();
  const int k = config_.k_users;
  const bool use_power = options.power_weight != 0.0 || options.rate_weight != 0.0;
  if (options.power_weight != 0.0) {
    for (const auto* f : batch)
      if (f->labels.size() != static_cast<std::size_t>(config_.p_predict)) {
        throw ConfigError("loss: power loss requires labeled frames");
      }
  }

  if (with_gradients)
    for (auto* p : params()) p->zero_grad();

  std::vector<RMatrix> seq;
  const RMatrix targets = channel_inputs(batch, seq);
  if (!targets.allFinite()) throw ConfigError("loss: frames lack true predicted-slot channels");
  nn::LstmCache lstm_cache;
  nn::AttentionCache attn_cache;
  nn::DenseCache head_cache;
  const bool channel_grad = with_gradients && options.train_channel;
  const RMatrix y = channel_forward(seq, channel_grad ? &lstm_cache : nullptr,
                                    channel_grad ? &attn_cache : nullptr, channel_grad ? &head_cache : nullptr);

  LossBreakdown out;
  const RMatrix diff = y - targets;
  out.channel = diff.squaredNorm() / (2.0 * n_batch * n_users);
  RMatrix d_y = (options.channel_weight / (n_batch * n_users)) * diff;

  if (use_power) {
    std::vector<nn::DenseCache> power_caches;
    const bool power_path_grad = with_gradients && (options.train_power || options.train_channel);
    const RMatrix logits = power_forward(y, power_path_grad ? &power_caches : nullptr);
    RMatrix d_logits = RMatrix::Zero(logits.rows(), logits.cols());
    double power_sum = 0.0;
    double rate_sum = 0.0;
    std::vector<PowerPair> powers;
    for (Eigen::Index b = 0; b < batch_size; ++b) {
      const FrameRecord& f = *batch[static_cast<std::size_t>(b)];
      unpack_powers(logits, b, powers);
      for (int m = 0; m < config_.p_predict; ++m) {
        const auto ms = static_cast<std::size_t>(m);
        const PowerPair& pw = powers[ms];
        RVector d_q = RVector::Zero(k);
        RVector d_p = RVector::Zero(k);
        if (options.power_weight != 0.0) {
          const RVector eq = pw.q - f.labels[ms].q;
          const RVector ep = pw.p - f.labels[ms].p;
          power_sum += eq.squaredNorm() + ep.squaredNorm();
          d_q += (options.power_weight / (n_batch * n_users)) * eq;
          d_p += (options.power_weight / (n_batch * n_users)) * ep;
        }
        const Eigen::Index row = static_cast<Eigen::Index>(m) * slot;
        const CMatrix x = unstack_channel(y.col(b).segment(row, slot), k, config_.n_t);
        const CMatrix& e = options.rate_on_truth ? f.truth.slots[static_cast<std::size_t>(config_.n_known + m)] : x;
        const RateGradient rg = reconstruction_rate_gradient(x, pw, e, config_.noise_variance);
        rate_sum += rg.rate;
        if (with_gradients && options.rate_weight != 0.0) {
          const double c = -options.rate_weight / n_batch;
          d_q += c * rg.d_q;
          d_p += c * rg.d_p;
          if (options.train_channel) {
            CMatrix d_x = rg.d_channels;
            if (!options.rate_on_truth) d_x += rg.d_eval_channels;
            d_y.col(b).segment(row, slot) += c * stack_channel(d_x);
          }
        }
        if (with_gradients) {
          // Softmax head: d logit = s * (d s - <s, d s>) with s = q / P_T.
          const Eigen::Index qrow = 2 * k * m;
          d_logits.col(b).segment(qrow, k) = (pw.q.array() * (d_q.array() - pw.q.dot(d_q) / config_.p_t)).matrix();
          d_logits.col(b).segment(qrow + k, k) = (pw.p.array() * (d_p.array() - pw.p.dot(d_p) / config_.p_t)).matrix();
        }
      }
    }
    out.power = power_sum / (2.0 * n_batch * n_users);
    out.rate = rate_sum / n_batch;
    if (power_path_grad) {
      RMatrix d = d_logits;
      for (std::size_t i = power_layers_.size(); i-- > 0;) d = power_layers_[i].backward(power_caches[i], d);
      if (options.train_channel) d_y += d;
    }
    if (with_gradients && !options.train_power)
      for (auto* p : power_params()) p->zero_grad();
  }
  out.total = options.channel_weight * out.channel + options.power_weight * out.power -
              options.rate_weight * out.rate;

  if (channel_grad) {
    const RMatrix d_context = head_.backward(head_cache, d_y);
    std::vector<RMatrix> d_hidden;
    if (config_.attention) {
      d_hidden = attention_.backward(attn_cache, d_context);
    } else {
      d_hidden.assign(static_cast<std::size_t>(config_.n_known), RMatrix::Zero(d_context.rows(), d_context.cols()));
      d_hidden.back() = d_context;
    }
    lstm_.backward(lstm_cache, d_hidden);
  }
  return out;
}

// ---------------------------------------------------------------- persistence

std::vector<std::uint8_t> JointModel::serialize(bool optimizer_state) {
  io::ByteWriter w;
  w.bytes(kModelMagic);
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(config_.n_t));
  w.u32(static_cast<std::uint32_t>(config_.k_users));
  w.u32(static_cast<std::uint32_t>(config_.n_known));
  w.u32(static_cast<std::uint32_t>(config_.p_predict));
  w.u32(static_cast<std::uint32_t>(config_.hidden));
  w.u32(static_cast<std::uint32_t>(config_.attention_size));
  w.u32(static_cast<std::uint32_t>(config_.power_width));
  w.u32(static_cast<std::uint32_t>(config_.power_layers));
  w.u8(config_.attention ? 1 : 0);
  w.f64(config_.p_t);
  w.f64(config_.noise_variance);
  const auto ps = params();
  nn::write_params(w, ps, optimizer_state);
  return w.buffer();
}

void JointModel::save(const std::filesystem::path& path, bool optimizer_state) {
  io::write_bytes(path, serialize(optimizer_state));
}

JointModel JointModel::deserialize(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  if (r.bytes(kModelMagic.size()) != kModelMagic) throw FormatError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kModelVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  ModelConfig c;
  c.n_t = static_cast<int>(r.u32());
  c.k_users = static_cast<int>(r.u32());
  c.n_known = static_cast<int>(r.u32());
  c.p_predict = static_cast<int>(r.u32());
  c.hidden = static_cast<int>(r.u32());
  c.attention_size = static_cast<int>(r.u32());
  c.power_width = static_cast<int>(r.u32());
  c.power_layers = static_cast<int>(r.u32());
  c.attention = r.u8() != 0;
  c.p_t = r.f64();
  c.noise_variance = r.f64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  RngStream rng(0);
  JointModel model(c, rng);
  const auto ps = model.params();
  nn::read_params(r, ps);
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes");
  return model;
}

JointModel JointModel::load(const std::filesystem::path& path) { return deserialize(io::read_bytes(path)); }

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train: lr_decay must lie in (0, 1]");
  if (!(rate_weight >= 0.0)) throw ConfigError("train: rate_weight must be >= 0");
  if (!(channel_weight >= 0.0) || (power_weight && !(*power_weight >= 0.0))) throw ConfigError("train: loss weights must be >= 0");
  if (warmup_epochs < 0) throw ConfigError("train: warmup_epochs must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
  if (checkpoint_every > 0 && checkpoint_dir.empty()) throw ConfigError("train: checkpoint_dir required");
}

namespace {

struct Phase {
  std::string name;
  int epochs;
  LossOptions options;
};

}  // namespace

TrainResult train_model(JointModel& model, const Dataset& train, const TrainConfig& config) {
  config.validate();
  model.config().check_compatible(train.scenario);
  if (train.frames.empty()) throw ConfigError("train: empty dataset");
  if (!train.labeled()) throw ConfigError("train: dataset has no power labels");

  std::vector<Phase> phases;
  LossOptions channel;
  channel.power_weight = 0.0;
  channel.rate_weight = 0.0;
  channel.train_power = false;
  if (config.mode == TrainMode::Joint) {
    if (config.warmup_epochs > 0) phases.push_back({"warmup", config.warmup_epochs, channel});
    LossOptions o;
    o.channel_weight = config.channel_weight;
    const double p_t = model.config().p_t;
    o.power_weight = config.power_weight.value_or(1.0 / (p_t * p_t));
    o.rate_weight = config.rate_weight;
    o.rate_on_truth = config.rate_on_truth;
    phases.push_back({"joint", config.epochs, o});
  } else {
    LossOptions power;
    power.channel_weight = 0.0;
    power.rate_weight = 0.0;
    power.train_channel = false;
    phases.push_back({"channel", config.epochs, channel});
    phases.push_back({"power", config.power_epochs < 0 ? config.epochs : config.power_epochs, power});
  }

  RngStream shuffle = RngStream(config.seed).derive({1});
  std::vector<const FrameRecord*> order;
  order.reserve(train.frames.size());
  for (const auto& f : train.frames) order.push_back(&f);

  TrainResult result;
  int epoch_counter = 0;
  for (const Phase& phase : phases) {
    std::vector<nn::Param*> trained;
    if (phase.options.train_channel)
      for (auto* p : model.channel_params()) trained.push_back(p);
    if (phase.options.train_power)
      for (auto* p : model.power_params()) trained.push_back(p);
    nn::AdamConfig adam;
    adam.lr = config.learning_rate;
    for (int e = 0; e < phase.epochs; ++e) {
      ++epoch_counter;
      std::shuffle(order.begin(), order.end(), shuffle.engine());
      LossBreakdown sum;
      std::size_t batch_index = 0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), order.size() - start);
        const std::span<const FrameRecord* const> batch(order.data() + start, len);
        const std::string where = phase.name + " epoch " + std::to_string(epoch_counter) + " at batch " +
                                  std::to_string(batch_index);
        LossBreakdown l;
        try {
          l = model.loss(batch, phase.options, true);
        } catch (const DomainError& e) {
          throw DivergenceError("numerical breakdown in " + where + ": " + e.what());
        } catch (const SingularityError& e) {
          throw DivergenceError("numerical breakdown in " + where + ": " + e.what());
        }
        if (!std::isfinite(l.total)) throw DivergenceError("non-finite loss in " + where);
        for (auto* p : trained) nn::adam_step(*p, adam);
        const double w = static_cast<double>(len);
        sum.channel += w * l.channel;
        sum.power += w * l.power;
        sum.rate += w * l.rate;
        sum.total += w * l.total;
        ++batch_index;
      }
      const double n = static_cast<double>(order.size());
      EpochStats stats{epoch_counter, phase.name, {sum.channel / n, sum.power / n, sum.rate / n, sum.total / n}};
      result.trace.push_back(stats);
      if (config.on_epoch) config.on_epoch(stats);
      if (config.checkpoint_every > 0 && epoch_counter % config.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint_epoch_%04d.pbfm", epoch_counter);
        std::filesystem::create_directories(config.checkpoint_dir);
        model.save(config.checkpoint_dir / name);
      }
      adam.lr *= config.lr_decay;
    }
  }
  return result;
}

JointModel train_joint(const Dataset& train, const ModelConfig& model_config, const TrainConfig& config,
                       TrainResult* result) {
  RngStream init = RngStream(config.seed).derive({0});
  JointModel model(model_config, init);
  TrainResult r = train_model(model, train, config);
  if (result) *result = std::move(r);
  return model;
}

void write_loss_trace(const std::filesystem::path& path, const std::vector<EpochStats>& trace) {
  std::ostringstream out;
  out << "epoch,phase,loss_channel,loss_power,rate,loss_total\n";
  char buf[256];
  for (const auto& s : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.17g,%.17g,%.17g,%.17g\n", s.epoch, s.phase.c_str(), s.loss.channel,
                  s.loss.power, s.loss.rate, s.loss.total);
    out << buf;
  }
  io::write_text(path, out.str());
}

}  // namespace pbf
