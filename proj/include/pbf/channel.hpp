#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pbf/beamform.hpp"
#include "pbf/numerics.hpp"

namespace pbf {

/// Link and frame parameters shared by every frame of a dataset.
struct ScenarioConfig {
  int n_t = 4;
  int k_users = 3;
  int n_known = 20;    // N: estimated intervals per frame
  int p_predict = 20;  // P: predicted intervals per frame
  double fd_ts = 0.005;
  double p_t_db = 20.0;
  std::optional<double> est_noise_variance;  // defaults to 1 / P_T (linear)
  double noise_variance = 1.0;

  double p_t() const;
  double estimation_noise() const;
  int frame_length() const { return n_known + p_predict; }
  void validate() const;

  bool operator==(const ScenarioConfig&) const = default;
};

/// True channels for N + P intervals. Each slot is K x N_t with row k = h_k^H.
struct ChannelFrame {
  std::vector<CMatrix> slots;
  double beta = 1.0;
};

/// Noisy estimates of the first N slots.
struct EstimatedFrame {
  std::vector<CMatrix> estimates;
  double est_noise_variance = 0.0;
};

enum class ChannelModel : std::uint32_t { Ar = 0, Sos = 1 };
enum class Split : std::uint8_t { Train = 0, Test = 1 };

struct GeneratorSpec {
  ChannelModel model = ChannelModel::Ar;
  int n_paths = 8;  // sum-of-sinusoids only
};

/// beta = J0(2 pi f_D T_s).
double jakes_beta(double fd_ts);

/// Normalized Doppler f_D T_s for a user moving at velocity_kmh.
double velocity_to_fd_ts(double velocity_kmh, double carrier_hz = 2e9, double sample_s = 1e-3);

/// First-order AR (Jakes) trajectory started from its stationary law CN(0, 1).
ChannelFrame generate_ar_frame(const ScenarioConfig& config, RngStream& rng);

/// Sum of n_paths unit phasors per entry with Doppler shifts f_D cos(theta_i).
ChannelFrame generate_sos_frame(const ScenarioConfig& config, int n_paths, RngStream& rng);

ChannelFrame generate_frame(const ScenarioConfig& config, const GeneratorSpec& generator, RngStream& rng);

/// Adds CN(0, sigma_e^2) to each of the first N slots only.
EstimatedFrame estimate_channels(const ChannelFrame& frame, const ScenarioConfig& config, RngStream& rng);

struct FrameRecord {
  ChannelFrame truth;
  EstimatedFrame estimated;
  std::vector<PowerPair> labels;  // one per predicted slot; empty when unlabeled
};

struct Dataset {
  ScenarioConfig scenario;
  GeneratorSpec generator;
  Split split = Split::Train;
  std::uint64_t seed = 0;
  std::uint64_t regenerated = 0;  // frames redrawn after label-extraction failure
  std::vector<FrameRecord> frames;

  bool labeled() const;
};

struct LabelingOptions {
  WmmseOptions wmmse;
  LabelOptions extraction;
};

/// (q, p) labels for every predicted slot of one frame. Throws LabelExtractionError.
std::vector<PowerPair> label_frame(const ChannelFrame& truth, const ScenarioConfig& config,
                                   const LabelingOptions& options = {});

/// frame_count independent frames; frame i draws from rng.derive({i, attempt}).
/// Frames whose labels fail are redrawn with the next attempt index.
Dataset generate_dataset(const ScenarioConfig& config, std::size_t frame_count,
                         const GeneratorSpec& generator, const RngStream& rng, Split split = Split::Train,
                         bool with_labels = true, const LabelingOptions& options = {});

/// Recomputes labels in place. Frames that fail are dropped; returns the drop count.
std::size_t relabel_dataset(Dataset& dataset, const LabelingOptions& options = {});

/// "PBFDATA1" container, little-endian.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_dataset(const Dataset& dataset);
Dataset deserialize_dataset(std::vector<std::uint8_t> bytes);

/// One row per (frame, slot, user, antenna) with true and estimated entries.
void export_dataset_csv(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace pbf
