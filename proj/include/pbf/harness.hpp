#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pbf/channel.hpp"
#include "pbf/keyvalue.hpp"
#include "pbf/metrics.hpp"
#include "pbf/predictor.hpp"

namespace pbf {

enum class Method { Proposed, NoAttention, SeparateZf, EstimationZf, KalmanZf, WmmseOracle };

std::string_view method_name(Method method);
Method parse_method(std::string_view name);
const std::vector<Method>& all_methods();

/// Learned methods need a checkpoint: Proposed and NoAttention a joint model,
/// SeparateZf a channel network trained in separate mode.
bool method_is_learned(Method method);

/// Per-frame quantities shared by every method on one test set.
struct EvaluationContext {
  std::vector<double> rate_e;       // mean over known slots: WMMSE on estimates, rated on truth
  std::vector<double> oracle_p;     // mean over predicted slots: WMMSE on truth
  std::vector<double> oracle_all;   // mean over all slots: WMMSE on truth
};

EvaluationContext prepare_evaluation(const Dataset& test);

/// Per-frame results of one method.
struct MethodEvaluation {
  Method method = Method::WmmseOracle;
  std::vector<double> nmse;  // predicted-slot block per frame
  RMatrix nmse_steps;        // frames x P: per-slot ratio
  std::vector<double> rate_p;  // mean true-channel sum rate over predicted slots
};

/// eval_seed keys the fresh pilot estimates drawn for EstimationZf.
MethodEvaluation evaluate_method(Method method, const Dataset& test, const JointModel* model,
                                 std::uint64_t eval_seed = 0);

struct ResultRow {
  std::string method;
  std::string variable;
  double value = 0.0;
  std::uint64_t seed = 0;
  int n = 0;
  int p = 0;
  double alpha = 0.0;
  std::size_t frames = 0;
  double nmse = 0.0;
  double rate_p = 0.0;
  double rate_e = 0.0;
  double rate_effective = 0.0;
  double rate_oracle = 0.0;
  double normalized_rate = 0.0;       // rate_p / oracle over predicted slots
  double normalized_effective = 0.0;  // rate_effective / oracle over all slots
  double wall_time_s = 0.0;           // kept out of the CSV so reruns are byte-identical
  std::string error;
};

ResultRow summarize(const MethodEvaluation& eval, const EvaluationContext& ctx, const ScenarioConfig& scenario,
                    double alpha);

enum class SweepVariable { PPredict, SnrDb, FdTs, VelocityKmh, Split };
std::string_view sweep_variable_name(SweepVariable v);
SweepVariable parse_sweep_variable(std::string_view name);

struct ModelOverrides {
  int hidden = 0;
  int attention_size = 0;
  int power_width = 0;
  int power_layers = 3;
};

struct ExperimentSpec {
  ScenarioConfig scenario;
  GeneratorSpec generator;
  SweepVariable variable = SweepVariable::PPredict;
  std::vector<double> values;
  std::vector<Method> methods;
  double alpha = 0.1;
  std::vector<std::uint64_t> seeds{1};
  std::size_t train_frames = 3000;
  std::size_t test_frames = 300;
  int frame_length = 40;  // N + P for the split sweep
  TrainConfig train;
  ModelOverrides model;
  std::filesystem::path output;     // CSV path
  std::filesystem::path model_dir;  // checkpoints are written here when set

  void validate() const;
  /// Scenario for one sweep value.
  ScenarioConfig scenario_for(double value) const;
  /// Canonical text used for the manifest hash.
  std::string canonical() const;
};

/// Reads an experiment spec file (schema pbf-experiment/1).
ExperimentSpec load_experiment_spec(const KeyValueFile& kv);

struct SweepResult {
  std::vector<ResultRow> rows;
  std::string config_hash;
};

/// Runs every (value, seed, method) cell; failures become rows with an error tag.
SweepResult run_sweep(const ExperimentSpec& spec);

std::string result_csv(const std::vector<ResultRow>& rows);
void write_result_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);
/// JSON manifest: config hash, code version, row count, wall times.
void write_manifest(const std::filesystem::path& path, const ExperimentSpec& spec, const SweepResult& result);

/// Row with the largest effective rate for the method, if any succeeded.
std::optional<ResultRow> best_row(const std::vector<ResultRow>& rows, std::string_view method);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view text);

struct GradCheckCase {
  std::string name;
  nn::GradCheckResult result;
};

/// Dense, LSTM, attention, the full joint objective and the rate term alone,
/// on tiny sizes (N_t = 2, K = 2, N = 4, P = 2, hidden 8).
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, const nn::GradCheckOptions& options = {});

/// Named scenario presets: ar-desk, sos-desk, ar-paper.
struct Preset {
  ScenarioConfig scenario;
  GeneratorSpec generator;
  std::size_t train_frames = 3000;
  std::size_t test_frames = 300;
};
Preset find_preset(std::string_view name);

/// Preset named by `preset` (default ar-desk) with scenario keys applied:
/// n_t, k_users, n_known, p_predict, fd_ts | velocity_kmh, snr_db,
/// est_noise_variance, noise_variance, generator, n_paths, train_frames, test_frames.
Preset scenario_from_keys(const KeyValueFile& kv);

}  // namespace pbf
