#include "pbf/neuralnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace pbf::nn {

Param::Param(std::string param_name, Eigen::Index rows, Eigen::Index cols)
    : name(std::move(param_name)),
      value(RMatrix::Zero(rows, cols)),
      grad(RMatrix::Zero(rows, cols)),
      m(RMatrix::Zero(rows, cols)),
      v(RMatrix::Zero(rows, cols)) {}

void init_uniform(Param& param, double bound, RngStream& rng) {
  // Row-major draw order keeps the initialization independent of storage order.
  for (Eigen::Index r = 0; r < param.value.rows(); ++r)
    for (Eigen::Index c = 0; c < param.value.cols(); ++c) param.value(r, c) = rng.uniform(-bound, bound);
}

void adam_step(Param& param, const AdamConfig& config) {
  param.step += 1;
  param.m = config.beta1 * param.m + (1.0 - config.beta1) * param.grad;
  param.v = config.beta2 * param.v + (1.0 - config.beta2) * param.grad.cwiseAbs2();
  const double m_correction = 1.0 - std::pow(config.beta1, static_cast<double>(param.step));
  const double v_correction = 1.0 - std::pow(config.beta2, static_cast<double>(param.step));
  param.value.array() -= config.lr * (param.m.array() / m_correction) /
                         ((param.v.array() / v_correction).sqrt() + config.eps);
}

namespace {

RMatrix sigmoid(const RMatrix& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

void check_rows(const RMatrix& x, Eigen::Index expected, const char* what) {
  if (x.rows() != expected) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(expected) + " input rows, got " +
                     std::to_string(x.rows()));
  }
}

}  // namespace

// ---------------------------------------------------------------- Dense

Dense::Dense(const std::string& name, int in, int out, Activation act, RngStream& rng)
    : weight_(name + ".weight", out, in), bias_(name + ".bias", out, 1), act_(act) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  init_uniform(weight_, bound, rng);
  init_uniform(bias_, bound, rng);
}

RMatrix Dense::forward(const RMatrix& x, DenseCache* cache) const {
  check_rows(x, weight_.value.cols(), "Dense::forward");
  RMatrix y = weight_.value * x;
  y.colwise() += bias_.value.col(0);
  if (act_ == Activation::Relu) y = y.cwiseMax(0.0);
  if (cache) {
    cache->input = x;
    cache->output = y;
  }
  return y;
}

RMatrix Dense::backward(const DenseCache& cache, const RMatrix& dy) {
  if (dy.rows() != cache.output.rows() || dy.cols() != cache.output.cols()) {
    throw ShapeError("Dense::backward: gradient shape mismatch");
  }
  RMatrix dz = dy;
  if (act_ == Activation::Relu) dz = (cache.output.array() > 0.0).select(dy, 0.0);
  weight_.grad.noalias() += dz * cache.input.transpose();
  bias_.grad.col(0) += dz.rowwise().sum();
  return weight_.value.transpose() * dz;
}

// ---------------------------------------------------------------- Lstm

Lstm::Lstm(const std::string& name, int input_size, int hidden_size, RngStream& rng)
    : w_input_(name + ".w_input", 4 * hidden_size, input_size),
      w_recurrent_(name + ".w_recurrent", 4 * hidden_size, hidden_size),
      bias_(name + ".bias", 4 * hidden_size, 1) {
  if (input_size < 1 || hidden_size < 1) throw ShapeError("Lstm: sizes must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(input_size + hidden_size));
  init_uniform(w_input_, bound, rng);
  init_uniform(w_recurrent_, bound, rng);
  init_uniform(bias_, bound, rng);
}

std::vector<RMatrix> Lstm::forward(const std::vector<RMatrix>& sequence, LstmCache* cache) const {
  if (sequence.empty()) throw ShapeError("Lstm::forward: empty sequence");
  const Eigen::Index steps = static_cast<Eigen::Index>(sequence.size());
  const Eigen::Index batch = sequence.front().cols();
  const Eigen::Index hs = hidden_size();
  RMatrix inputs(input_size(), steps * batch);
  for (Eigen::Index t = 0; t < steps; ++t) {
    const RMatrix& x = sequence[static_cast<std::size_t>(t)];
    check_rows(x, input_size(), "Lstm::forward");
    if (x.cols() != batch) throw ShapeError("Lstm::forward: batch width changes across steps");
    inputs.middleCols(t * batch, batch) = x;
  }
  RMatrix pre = w_input_.value * inputs;
  pre.colwise() += bias_.value.col(0);

  RMatrix gates(4 * hs, steps * batch);
  RMatrix cells(hs, steps * batch);
  RMatrix tanh_cells(hs, steps * batch);
  RMatrix hidden(hs, steps * batch);
  RMatrix h = RMatrix::Zero(hs, batch);
  RMatrix c = RMatrix::Zero(hs, batch);
  std::vector<RMatrix> out;
  out.reserve(sequence.size());
  for (Eigen::Index t = 0; t < steps; ++t) {
    RMatrix z = pre.middleCols(t * batch, batch);
    z.noalias() += w_recurrent_.value * h;
    const RMatrix i = sigmoid(z.topRows(hs));
    const RMatrix f = sigmoid(z.middleRows(hs, hs));
    const RMatrix g = z.middleRows(2 * hs, hs).array().tanh().matrix();
    const RMatrix o = sigmoid(z.bottomRows(hs));
    c = f.cwiseProduct(c) + i.cwiseProduct(g);
    const RMatrix tc = c.array().tanh().matrix();
    h = o.cwiseProduct(tc);
    if (cache) {
      auto block = gates.middleCols(t * batch, batch);
      block.topRows(hs) = i;
      block.middleRows(hs, hs) = f;
      block.middleRows(2 * hs, hs) = g;
      block.bottomRows(hs) = o;
      cells.middleCols(t * batch, batch) = c;
      tanh_cells.middleCols(t * batch, batch) = tc;
      hidden.middleCols(t * batch, batch) = h;
    }
    out.push_back(h);
  }
  if (cache) {
    cache->inputs = std::move(inputs);
    cache->gates = std::move(gates);
    cache->cells = std::move(cells);
    cache->tanh_cells = std::move(tanh_cells);
    cache->hidden = std::move(hidden);
    cache->steps = steps;
    cache->batch = batch;
  }
  return out;
}

std::vector<RMatrix> Lstm::backward(const LstmCache& cache, const std::vector<RMatrix>& d_hidden) {
  const Eigen::Index steps = cache.steps;
  const Eigen::Index batch = cache.batch;
  const Eigen::Index hs = hidden_size();
  if (static_cast<Eigen::Index>(d_hidden.size()) != steps) {
    throw ShapeError("Lstm::backward: need one hidden-state gradient per step");
  }
  RMatrix dz_all(4 * hs, steps * batch);
  RMatrix dh_next = RMatrix::Zero(hs, batch);
  RMatrix dc_next = RMatrix::Zero(hs, batch);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const auto gates = cache.gates.middleCols(t * batch, batch);
    const auto i = gates.topRows(hs).array();
    const auto f = gates.middleRows(hs, hs).array();
    const auto g = gates.middleRows(2 * hs, hs).array();
    const auto o = gates.bottomRows(hs).array();
    const auto tc = cache.tanh_cells.middleCols(t * batch, batch).array();
    const RMatrix dh = d_hidden[static_cast<std::size_t>(t)] + dh_next;
    const RMatrix dc = (dh.array() * o * (1.0 - tc.square())).matrix() + dc_next;

    auto dz = dz_all.middleCols(t * batch, batch);
    dz.topRows(hs) = (dc.array() * g * i * (1.0 - i)).matrix();
    if (t > 0) {
      const auto c_prev = cache.cells.middleCols((t - 1) * batch, batch).array();
      dz.middleRows(hs, hs) = (dc.array() * c_prev * f * (1.0 - f)).matrix();
    } else {
      dz.middleRows(hs, hs).setZero();
    }
    dz.middleRows(2 * hs, hs) = (dc.array() * i * (1.0 - g.square())).matrix();
    dz.bottomRows(hs) = (dh.array() * tc * o * (1.0 - o)).matrix();

    dc_next = (dc.array() * f).matrix();
    dh_next.noalias() = w_recurrent_.value.transpose() * dz;
  }
  if (steps > 1) {
    const Eigen::Index tail = (steps - 1) * batch;
    w_recurrent_.grad.noalias() += dz_all.rightCols(tail) * cache.hidden.leftCols(tail).transpose();
  }
  w_input_.grad.noalias() += dz_all * cache.inputs.transpose();
  bias_.grad.col(0) += dz_all.rowwise().sum();
  const RMatrix dx_all = w_input_.value.transpose() * dz_all;
  std::vector<RMatrix> dx;
  dx.reserve(static_cast<std::size_t>(steps));
  for (Eigen::Index t = 0; t < steps; ++t) dx.push_back(dx_all.middleCols(t * batch, batch));
  return dx;
}

// ---------------------------------------------------------------- Attention

RMatrix softmax_columns(const RMatrix& scores) {
  RMatrix out = scores;
  for (Eigen::Index b = 0; b < out.cols(); ++b) {
    const double top = out.col(b).maxCoeff();
    out.col(b) = (out.col(b).array() - top).exp().matrix();
    out.col(b) /= out.col(b).sum();
  }
  return out;
}

Attention::Attention(const std::string& name, int hidden_size, int attention_size, RngStream& rng)
    : score_matrix_(name + ".score_matrix", attention_size, hidden_size),
      score_vector_(name + ".score_vector", attention_size, 1) {
  if (hidden_size < 1 || attention_size < 1) throw ShapeError("Attention: sizes must be >= 1");
  init_uniform(score_matrix_, 1.0 / std::sqrt(static_cast<double>(hidden_size)), rng);
  init_uniform(score_vector_, 1.0 / std::sqrt(static_cast<double>(attention_size)), rng);
}

RMatrix Attention::forward(const std::vector<RMatrix>& hidden, AttentionCache* cache, RMatrix* weights) const {
  if (hidden.empty()) throw ShapeError("Attention::forward: empty sequence");
  const Eigen::Index steps = static_cast<Eigen::Index>(hidden.size());
  const Eigen::Index batch = hidden.front().cols();
  const Eigen::Index hs = score_matrix_.value.cols();
  RMatrix stacked(hs, steps * batch);
  for (Eigen::Index t = 0; t < steps; ++t) {
    const RMatrix& h = hidden[static_cast<std::size_t>(t)];
    check_rows(h, hs, "Attention::forward");
    if (h.cols() != batch) throw ShapeError("Attention::forward: batch width changes across steps");
    stacked.middleCols(t * batch, batch) = h;
  }
  RMatrix projected = (score_matrix_.value * stacked).array().tanh().matrix();
  const RMatrix flat_scores = score_vector_.value.transpose() * projected;  // 1 x TB
  RMatrix scores(steps, batch);
  for (Eigen::Index t = 0; t < steps; ++t) scores.row(t) = flat_scores.middleCols(t * batch, batch);
  RMatrix c = softmax_columns(scores);

  RMatrix context = RMatrix::Zero(hs, batch);
  for (Eigen::Index t = 0; t < steps; ++t) {
    context.noalias() += stacked.middleCols(t * batch, batch) * c.row(t).asDiagonal();
  }
  if (weights) *weights = c;
  if (cache) {
    cache->hidden = std::move(stacked);
    cache->projected = std::move(projected);
    cache->weights = std::move(c);
    cache->steps = steps;
    cache->batch = batch;
  }
  return context;
}

std::vector<RMatrix> Attention::backward(const AttentionCache& cache, const RMatrix& d_context) {
  const Eigen::Index steps = cache.steps;
  const Eigen::Index batch = cache.batch;
  const RMatrix& c = cache.weights;
  RMatrix d_stacked(cache.hidden.rows(), steps * batch);
  RMatrix dc(steps, batch);
  for (Eigen::Index t = 0; t < steps; ++t) {
    const auto h = cache.hidden.middleCols(t * batch, batch);
    d_stacked.middleCols(t * batch, batch) = d_context * c.row(t).asDiagonal();
    dc.row(t) = h.cwiseProduct(d_context).colwise().sum();
  }
  // Softmax Jacobian per column: ds = c * (dc - <c, dc>).
  const Eigen::RowVectorXd inner = c.cwiseProduct(dc).colwise().sum();
  const RMatrix ds = c.cwiseProduct(dc - RMatrix::Ones(steps, 1) * inner);
  Eigen::RowVectorXd ds_flat(steps * batch);
  for (Eigen::Index t = 0; t < steps; ++t) ds_flat.segment(t * batch, batch) = ds.row(t);

  const RMatrix dz = ((score_vector_.value * ds_flat).array() * (1.0 - cache.projected.array().square())).matrix();
  score_matrix_.grad.noalias() += dz * cache.hidden.transpose();
  score_vector_.grad.noalias() += cache.projected * ds_flat.transpose();
  d_stacked.noalias() += score_matrix_.value.transpose() * dz;

  std::vector<RMatrix> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (Eigen::Index t = 0; t < steps; ++t) out.push_back(d_stacked.middleCols(t * batch, batch));
  return out;
}

// ---------------------------------------------------------------- checking

GradCheckResult gradient_check(const LossClosure& loss, std::span<Param* const> params, RngStream& rng,
                               const GradCheckOptions& options) {
  for (auto* p : params) p->zero_grad();
  const double base = loss(true);
  std::vector<RMatrix> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t pi = 0; pi < params.size(); ++pi)
    for (Eigen::Index i = 0; i < params[pi]->size(); ++i) coords.emplace_back(pi, i);
  if (coords.size() > options.samples) {
    std::vector<std::pair<std::size_t, Eigen::Index>> picked;
    std::sample(coords.begin(), coords.end(), std::back_inserter(picked), options.samples, rng.engine());
    coords = std::move(picked);
  }

  GradCheckResult result;
  result.coordinates = coords.size();
  result.loss_value = base;
  for (const auto& [pi, idx] : coords) {
    double& x = params[pi]->value.data()[idx];
    const double original = x;
    x = original + options.eps;
    const double up = loss(false);
    x = original - options.eps;
    const double down = loss(false);
    x = original;
    const double numeric = (up - down) / (2.0 * options.eps);
    const double exact = analytic[pi].data()[idx];
    const double noise = std::numeric_limits<double>::epsilon() * std::max(std::abs(up), std::abs(down)) / options.eps;
    const double scale = std::max({std::abs(exact), std::abs(numeric), options.floor, options.noise_factor * noise});
    const double rel = std::abs(exact - numeric) / scale;
    if (!(rel <= result.max_rel_error)) {
      result.max_rel_error = rel;
      result.worst_param = params[pi]->name;
      result.worst_index = idx;
      result.worst_analytic = exact;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

// ---------------------------------------------------------------- persistence

namespace {

void write_matrix(io::ByteWriter& out, const RMatrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.f64(m(r, c));
}

RMatrix read_matrix(io::ByteReader& in, Eigen::Index rows, Eigen::Index cols) {
  RMatrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = in.f64();
  return m;
}

struct StoredParam {
  RMatrix value;
  bool has_state = false;
  RMatrix m;
  RMatrix v;
  long step = 0;
};

}  // namespace

void write_params(io::ByteWriter& out, std::span<Param* const> params, bool optimizer_state) {
  out.u64(params.size());
  out.u8(optimizer_state ? 1 : 0);
  for (const auto* p : params) {
    out.str(p->name);
    out.u32(static_cast<std::uint32_t>(p->value.rows()));
    out.u32(static_cast<std::uint32_t>(p->value.cols()));
    write_matrix(out, p->value);
    if (optimizer_state) {
      write_matrix(out, p->m);
      write_matrix(out, p->v);
      out.u64(static_cast<std::uint64_t>(p->step));
    }
  }
}

void read_params(io::ByteReader& in, std::span<Param* const> params) {
  std::map<std::string, StoredParam> stored;
  const auto count = in.u64();
  const bool has_state = in.u8() != 0;
  for (std::uint64_t n = 0; n < count; ++n) {
    std::string name = in.str();
    const Eigen::Index rows = in.u32();
    const Eigen::Index cols = in.u32();
    StoredParam entry;
    entry.value = read_matrix(in, rows, cols);
    if (has_state) {
      entry.has_state = true;
      entry.m = read_matrix(in, rows, cols);
      entry.v = read_matrix(in, rows, cols);
      entry.step = static_cast<long>(in.u64());
    }
    if (!stored.emplace(std::move(name), std::move(entry)).second) {
      throw FormatError("checkpoint: duplicate parameter name");
    }
  }
  if (stored.size() != params.size()) throw FormatError("checkpoint: parameter count mismatch");
  for (auto* p : params) {
    const auto it = stored.find(p->name);
    if (it == stored.end()) throw FormatError("checkpoint: missing parameter " + p->name);
    if (it->second.value.rows() != p->value.rows() || it->second.value.cols() != p->value.cols()) {
      throw FormatError("checkpoint: shape mismatch for " + p->name);
    }
  }
  for (auto* p : params) {
    auto& entry = stored.at(p->name);
    p->value = std::move(entry.value);
    p->grad.setZero();
    if (entry.has_state) {
      p->m = std::move(entry.m);
      p->v = std::move(entry.v);
      p->step = entry.step;
    } else {
      p->m.setZero();
      p->v.setZero();
      p->step = 0;
    }
  }
}

}  // namespace pbf::nn
