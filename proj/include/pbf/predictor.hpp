#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbf/beamform.hpp"
#include "pbf/channel.hpp"
#include "pbf/neuralnet.hpp"

namespace pbf {

/// Network dimensions. Zero sizes resolve to the defaults noted per field.
struct ModelConfig {
  int n_t = 4;
  int k_users = 3;
  int n_known = 20;
  int p_predict = 20;
  int hidden = 0;          // 2 N_t K N
  int attention_size = 0;  // 2 N_t K
  int power_width = 0;     // 30 N_t K
  int power_layers = 3;
  bool attention = true;   // false reads out the last hidden state
  double p_t = 100.0;
  double noise_variance = 1.0;

  static ModelConfig for_scenario(const ScenarioConfig& scenario);

  int slot_size() const { return 2 * n_t * k_users; }  // real-stacked K x N_t matrix
  int resolved_hidden() const { return hidden > 0 ? hidden : 2 * n_t * k_users * n_known; }
  int resolved_attention() const { return attention_size > 0 ? attention_size : 2 * n_t * k_users; }
  int resolved_power_width() const { return power_width > 0 ? power_width : 30 * n_t * k_users; }
  void validate() const;
  /// Throws ConfigError unless the scenario has the same shape and power budget.
  void check_compatible(const ScenarioConfig& scenario) const;

  bool operator==(const ModelConfig&) const = default;
};

/// Real stacking of a K x N_t matrix: entry (k, a) maps to rows
/// 2 (k N_t + a) (real part) and 2 (k N_t + a) + 1 (imaginary part).
RVector stack_channel(const CMatrix& h);
CMatrix unstack_channel(const Eigen::Ref<const RVector>& x, int k_users, int n_t);

/// L_H = 1/(2 L K) sum_l sum_m ||H - H~||_F^2 over a batch of L samples.
double loss_channel(std::span<const std::vector<CMatrix>> truth, std::span<const std::vector<CMatrix>> pred);
/// L_P = 1/(2 L K) sum_l sum_m (||q - q~||^2 + ||p - p~||^2).
double loss_power(std::span<const std::vector<PowerPair>> labels, std::span<const std::vector<PowerPair>> pred);
/// L = L_H + L_P - b R.
double loss_total(double loss_h, double loss_p, double rate, double rate_weight);

/// Sum rate of the beams reconstructed from (channels, powers), evaluated on
/// eval_channels, with its gradient w.r.t. the channels, q, and p.
/// Complex gradients use the convention dR/dRe + i dR/dIm.
struct RateGradient {
  double rate = 0.0;
  CMatrix d_channels;       // through the reconstruction only
  CMatrix d_eval_channels;  // through the SINR evaluation only
  RVector d_q;
  RVector d_p;
};
RateGradient reconstruction_rate_gradient(const CMatrix& channels, const PowerPair& powers,
                                          const CMatrix& eval_channels, double noise_variance);

/// Which losses contribute and which sub-networks receive gradients.
struct LossOptions {
  double channel_weight = 1.0;
  double power_weight = 1.0;
  double rate_weight = 0.001;  // b
  bool rate_on_truth = false;  // evaluate R on true instead of predicted channels
  bool train_channel = true;
  bool train_power = true;
};

struct LossBreakdown {
  double channel = 0.0;  // L_H
  double power = 0.0;    // L_P
  double rate = 0.0;     // R: batch mean of the rate summed over predicted slots
  double total = 0.0;
};

/// LSTM (+ attention) channel predictor feeding a softmax-headed power network.
class JointModel {
 public:
  JointModel(const ModelConfig& config, RngStream& rng);

  const ModelConfig& config() const { return config_; }

  std::vector<CMatrix> predict_channels(const EstimatedFrame& estimates) const;
  /// Power pairs for each predicted slot; each vector sums to P_T.
  std::vector<PowerPair> predict_powers(const std::vector<CMatrix>& predicted) const;
  std::vector<BeamMatrix> infer_beamforming(const EstimatedFrame& estimates) const;
  /// Attention weights (N x 1); empty without attention.
  RVector attention_weights(const EstimatedFrame& estimates) const;

  /// Batched predictions, one entry per frame.
  std::vector<std::vector<CMatrix>> predict_channels(std::span<const FrameRecord* const> frames) const;

  /// Loss over a labeled mini-batch. With gradients, every parameter's grad
  /// is overwritten (zero for sub-networks excluded by the options).
  LossBreakdown loss(std::span<const FrameRecord* const> batch, const LossOptions& options, bool with_gradients);

  std::vector<nn::Param*> params();
  std::vector<nn::Param*> channel_params();
  std::vector<nn::Param*> power_params();

  void save(const std::filesystem::path& path, bool optimizer_state = true);
  std::vector<std::uint8_t> serialize(bool optimizer_state = true);
  static JointModel load(const std::filesystem::path& path);
  static JointModel deserialize(std::vector<std::uint8_t> bytes);

 private:
  RMatrix channel_inputs(std::span<const FrameRecord* const> frames, std::vector<RMatrix>& seq) const;
  RMatrix channel_forward(const std::vector<RMatrix>& seq, nn::LstmCache* lstm_cache,
                          nn::AttentionCache* attn_cache, nn::DenseCache* head_cache) const;
  RMatrix power_forward(const RMatrix& stacked, std::vector<nn::DenseCache>* caches) const;
  void unpack_powers(const RMatrix& logits, Eigen::Index col, std::vector<PowerPair>& out) const;

  ModelConfig config_;
  nn::Lstm lstm_;
  nn::Attention attention_;
  nn::Dense head_;
  std::vector<nn::Dense> power_layers_;
};

enum class TrainMode { Joint, Separate };

struct EpochStats {
  int epoch = 0;  // 1-based; separate mode counts through both phases
  std::string phase;  // "warmup", "joint", "channel", or "power"
  LossBreakdown loss;  // sample-weighted mean over the epoch
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double lr_decay = 1.0;  // multiplies the rate after each epoch
  double rate_weight = 0.001;
  double channel_weight = 1.0;  // weight on L_H in joint mode
  std::optional<double> power_weight;  // weight on L_P in joint mode; unset: 1 / P_T^2
  int warmup_epochs = 0;  // joint mode: L_H-only epochs before the joint phase
  bool rate_on_truth = false;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::Joint;
  int power_epochs = -1;  // separate mode second phase; negative means `epochs`
  int checkpoint_every = 0;  // epochs between checkpoints; 0 disables
  std::filesystem::path checkpoint_dir;
  std::function<void(const EpochStats&)> on_epoch;

  void validate() const;
};

struct TrainResult {
  std::vector<EpochStats> trace;
};

/// Mini-batch Adam. Joint mode minimizes L over all parameters, optionally
/// after warm-up epochs that fit the channel network on L_H alone. Separate mode
/// first fits the channel network on L_H alone, then the power network on L_P
/// with the channel network frozen. Throws DivergenceError on a non-finite loss.
TrainResult train_model(JointModel& model, const Dataset& train, const TrainConfig& config);

/// Fresh model initialized from derive(seed) and trained.
JointModel train_joint(const Dataset& train, const ModelConfig& model_config, const TrainConfig& config,
                       TrainResult* result = nullptr);

/// CSV with header epoch,phase,loss_channel,loss_power,rate,loss_total.
void write_loss_trace(const std::filesystem::path& path, const std::vector<EpochStats>& trace);

}  // namespace pbf
