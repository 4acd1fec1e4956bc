#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pbf/binary_io.hpp"
#include "pbf/numerics.hpp"

/// Minimal reverse-mode network toolkit. Activations are column-batched:
/// an input of width B is a (features x B) matrix.
namespace pbf::nn {

/// Trainable tensor with its gradient and Adam moments.
struct Param {
  std::string name;
  RMatrix value;
  RMatrix grad;
  RMatrix m;
  RMatrix v;
  long step = 0;

  Param() = default;
  Param(std::string param_name, Eigen::Index rows, Eigen::Index cols);

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

/// Fills value with U(-bound, bound).
void init_uniform(Param& param, double bound, RngStream& rng);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update; increments the step count.
void adam_step(Param& param, const AdamConfig& config);

enum class Activation { Identity, Relu };

struct DenseCache {
  RMatrix input;
  RMatrix output;
};

/// y = act(W x + b).
class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, int in, int out, Activation act, RngStream& rng);

  RMatrix forward(const RMatrix& x, DenseCache* cache = nullptr) const;
  /// Accumulates parameter gradients; returns dL/dx.
  RMatrix backward(const DenseCache& cache, const RMatrix& dy);

  int in_size() const { return static_cast<int>(weight_.value.cols()); }
  int out_size() const { return static_cast<int>(weight_.value.rows()); }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  std::vector<Param*> params() { return {&weight_, &bias_}; }

 private:
  Param weight_;
  Param bias_;
  Activation act_ = Activation::Identity;
};

struct LstmCache {
  RMatrix inputs;     // I x (T B), step t in columns [tB, (t+1)B)
  RMatrix gates;      // 4H x (T B): activated i, f, g, o
  RMatrix cells;      // H x (T B)
  RMatrix tanh_cells; // H x (T B)
  RMatrix hidden;     // H x (T B)
  Eigen::Index steps = 0;
  Eigen::Index batch = 0;
};

/// Standard LSTM: sigmoid gates i, f, o and tanh candidate; h_0 = c_0 = 0.
/// Gate rows are laid out [i; f; g; o].
class Lstm {
 public:
  Lstm() = default;
  Lstm(const std::string& name, int input_size, int hidden_size, RngStream& rng);

  /// Returns h_1..h_T, each H x B.
  std::vector<RMatrix> forward(const std::vector<RMatrix>& sequence, LstmCache* cache = nullptr) const;
  /// Backprop through time given dL/dh_t for every step; returns dL/dx_t.
  std::vector<RMatrix> backward(const LstmCache& cache, const std::vector<RMatrix>& d_hidden);

  int input_size() const { return static_cast<int>(w_input_.value.cols()); }
  int hidden_size() const { return static_cast<int>(w_recurrent_.value.cols()); }
  std::vector<Param*> params() { return {&w_input_, &w_recurrent_, &bias_}; }
  Param& w_input() { return w_input_; }
  Param& w_recurrent() { return w_recurrent_; }
  Param& bias() { return bias_; }

 private:
  Param w_input_;
  Param w_recurrent_;
  Param bias_;
};

struct AttentionCache {
  RMatrix hidden;     // H x (T B)
  RMatrix projected;  // A x (T B), tanh(W h)
  RMatrix weights;    // T x B
  Eigen::Index steps = 0;
  Eigen::Index batch = 0;
};

/// Additive attention: s_n = v^T tanh(W h_n), c = softmax_n(s), context = sum_n c_n h_n.
class Attention {
 public:
  Attention() = default;
  Attention(const std::string& name, int hidden_size, int attention_size, RngStream& rng);

  /// Context (H x B). Weights (T x B) are written to `weights` when given.
  RMatrix forward(const std::vector<RMatrix>& hidden, AttentionCache* cache = nullptr,
                  RMatrix* weights = nullptr) const;
  std::vector<RMatrix> backward(const AttentionCache& cache, const RMatrix& d_context);

  std::vector<Param*> params() { return {&score_matrix_, &score_vector_}; }
  Param& score_matrix() { return score_matrix_; }
  Param& score_vector() { return score_vector_; }

 private:
  Param score_matrix_;  // A x H
  Param score_vector_;  // A x 1
};

/// Column-wise softmax.
RMatrix softmax_columns(const RMatrix& scores);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double loss_value = 0.0;
};

/// Evaluates the scalar loss; when the flag is set it must also overwrite
/// every parameter's grad with dL/dparam.
using LossClosure = std::function<double(bool with_gradients)>;

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t samples = 200;  // coordinates; all of them when fewer exist
  /// Gradients below this magnitude are compared in absolute terms.
  double floor = 1e-6;
  /// Central differences carry roundoff near u |L| / eps (u = machine epsilon).
  /// Gradients below noise_factor times that level are also compared in
  /// absolute terms, since no step resolves them to the relative tolerance.
  double noise_factor = 1e5;
};

/// Max over sampled coordinates of |g - g_fd| / max(|g|, |g_fd|, floor'),
/// with g_fd = (L(theta + eps) - L(theta - eps)) / (2 eps) and
/// floor' = max(floor, noise_factor u max|L| / eps).
GradCheckResult gradient_check(const LossClosure& loss, std::span<Param* const> params, RngStream& rng,
                               const GradCheckOptions& options = {});

/// Named parameter list: count, then (name, rows, cols, f64 payload) per entry.
/// With optimizer state, each entry also carries its Adam moments and step.
void write_params(io::ByteWriter& out, std::span<Param* const> params, bool optimizer_state = false);
/// Loads into existing parameters; rejects missing names and shape mismatches.
void read_params(io::ByteReader& in, std::span<Param* const> params);

}  // namespace pbf::nn
