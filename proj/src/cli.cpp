#include "pbf/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>

#include "pbf/harness.hpp"

namespace pbf {

namespace {

struct ScenarioFlags {
  std::string preset = "ar-desk";
  std::string config;
  std::optional<int> n_t, k_users, n_known, p_predict, n_paths;
  std::optional<double> fd_ts, velocity_kmh, snr_db, est_noise_variance;
  std::optional<std::string> generator;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "Scenario preset: ar-desk, sos-desk, ar-paper")->capture_default_str();
    app->add_option("--config", config, "Scenario key-value file (schema pbf-scenario/1)");
    app->add_option("--n-t", n_t, "Transmit antennas N_t");
    app->add_option("--k-users", k_users, "Users K");
    app->add_option("--n-known", n_known, "Estimated intervals per frame N");
    app->add_option("--p-predict", p_predict, "Predicted intervals per frame P");
    app->add_option("--fd-ts", fd_ts, "Normalized Doppler f_D T_s");
    app->add_option("--velocity-kmh", velocity_kmh, "User velocity (2 GHz carrier, 1 ms slots)");
    app->add_option("--snr-db", snr_db, "Transmit SNR P_T in dB");
    app->add_option("--est-noise-variance", est_noise_variance, "Estimation noise variance (default 1/P_T)");
    app->add_option("--generator", generator, "Channel generator: ar or sos");
    app->add_option("--n-paths", n_paths, "Sum-of-sinusoids path count");
  }

  Preset resolve() const {
    const std::string source = config.empty() ? "<flags>" : config;
    std::map<std::string, std::string> entries;
    if (!config.empty()) entries = KeyValueFile::load(config).entries();
    if (const auto it = entries.find("schema"); it != entries.end()) {
      if (it->second != "pbf-scenario/1") throw ConfigError("scenario: unsupported schema '" + it->second + "'");
      entries.erase(it);
    }
    if (!entries.count("preset")) entries["preset"] = preset;
    // Flags replace file entries with the same key.
    auto put = [&entries](const char* key, const auto& v) {
      if (v) entries[key] = to_text(*v);
    };
    put("n_t", n_t);
    put("k_users", k_users);
    put("n_known", n_known);
    put("p_predict", p_predict);
    put("n_paths", n_paths);
    put("fd_ts", fd_ts);
    put("velocity_kmh", velocity_kmh);
    put("snr_db", snr_db);
    put("est_noise_variance", est_noise_variance);
    put("generator", generator);
    if (velocity_kmh && !fd_ts) entries.erase("fd_ts");
    if (fd_ts && !velocity_kmh) entries.erase("velocity_kmh");
    std::string text;
    for (const auto& [key, value] : entries) text += key + " = " + value + "\n";
    const KeyValueFile kv = KeyValueFile::parse(text, source);
    Preset p = scenario_from_keys(kv);
    kv.require_all_used();
    p.scenario.validate();
    return p;
  }

  static std::string to_text(int v) { return std::to_string(v); }
  static std::string to_text(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  }
  static std::string to_text(const std::string& v) { return v; }
};

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw ConfigError("split must be train or test");
}

TrainMode parse_mode(const std::string& s) {
  if (s == "joint") return TrainMode::Joint;
  if (s == "separate") return TrainMode::Separate;
  throw ConfigError("mode must be joint or separate");
}

// ---------------------------------------------------------------- generate-data

struct GenerateArgs {
  ScenarioFlags scenario;
  std::uint64_t seed = 1;
  std::optional<std::size_t> count;
  std::string split = "train";
  bool no_labels = false;
  std::string out;
  std::string csv;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const Preset preset = a.scenario.resolve();
  const Split split = parse_split(a.split);
  const std::size_t count = a.count.value_or(split == Split::Train ? preset.train_frames : preset.test_frames);
  if (count < 1) throw ConfigError("count must be >= 1");
  const Dataset ds = generate_dataset(preset.scenario, count, preset.generator, RngStream(a.seed), split, !a.no_labels);
  save_dataset(ds, a.out);
  if (!a.csv.empty()) export_dataset_csv(ds, a.csv);
  out << "frames=" << ds.frames.size() << " regenerated=" << ds.regenerated << " labeled=" << ds.labeled()
      << " out=" << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- labels

struct LabelsArgs {
  std::string in;
  std::string out;
  int max_iters = 200;
  double tol = 1e-5;
};

int cmd_labels(const LabelsArgs& a, std::ostream& out) {
  Dataset ds = load_dataset(a.in);
  LabelingOptions opts;
  opts.wmmse.max_iters = a.max_iters;
  opts.wmmse.tol = a.tol;
  const std::size_t dropped = relabel_dataset(ds, opts);
  save_dataset(ds, a.out);
  out << "frames=" << ds.frames.size() << " dropped=" << dropped << " out=" << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::optional<std::string> data, out, loss_csv, mode, checkpoint_dir;
  std::optional<int> epochs, batch_size, power_epochs, warmup_epochs, hidden, checkpoint_every;
  std::optional<double> lr, lr_decay, rate_weight, channel_weight, power_weight;
  std::optional<std::uint64_t> seed;
  bool no_attention = false;
  bool rate_on_truth = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  KeyValueFile kv = a.config.empty() ? KeyValueFile::parse("", "<flags>") : KeyValueFile::load(a.config);
  const std::string schema = kv.get_string("schema", "pbf-train/1");
  if (schema != "pbf-train/1") throw ConfigError("train: unsupported schema '" + schema + "'");
  TrainConfig tc;
  tc.epochs = a.epochs.value_or(kv.get_int("epochs", tc.epochs));
  tc.batch_size = a.batch_size.value_or(kv.get_int("batch_size", tc.batch_size));
  tc.learning_rate = a.lr.value_or(kv.get_double("learning_rate", tc.learning_rate));
  tc.lr_decay = a.lr_decay.value_or(kv.get_double("lr_decay", tc.lr_decay));
  tc.rate_weight = a.rate_weight.value_or(kv.get_double("rate_weight", tc.rate_weight));
  tc.rate_on_truth = a.rate_on_truth || kv.get_bool("rate_on_truth", false);
  tc.seed = a.seed.value_or(kv.get_u64("seed", tc.seed));
  tc.mode = parse_mode(a.mode.value_or(kv.get_string("mode", "joint")));
  tc.power_epochs = a.power_epochs.value_or(kv.get_int("power_epochs", tc.power_epochs));
  tc.warmup_epochs = a.warmup_epochs.value_or(kv.get_int("warmup_epochs", tc.warmup_epochs));
  tc.channel_weight = a.channel_weight.value_or(kv.get_double("channel_weight", tc.channel_weight));
  if (a.power_weight) {
    tc.power_weight = *a.power_weight;
  } else if (kv.has("power_weight")) {
    tc.power_weight = kv.get_double("power_weight", 0.0);
  }
  tc.checkpoint_every = a.checkpoint_every.value_or(kv.get_int("checkpoint_every", 0));
  tc.checkpoint_dir = a.checkpoint_dir.value_or(kv.get_string("checkpoint_dir", ""));
  const std::string data = a.data.value_or(kv.get_string("data", ""));
  const std::string model_out = a.out.value_or(kv.get_string("out", ""));
  const std::string loss_csv = a.loss_csv.value_or(kv.get_string("loss_csv", ""));
  const bool attention = !a.no_attention && kv.get_bool("attention", true);
  const int hidden = a.hidden.value_or(kv.get_int("hidden", 0));
  const int attention_size = kv.get_int("attention_size", 0);
  const int power_width = kv.get_int("power_width", 0);
  const int power_layers = kv.get_int("power_layers", 3);
  kv.require_all_used();
  if (data.empty()) throw ConfigError("train: no dataset given (--data or key data)");
  if (model_out.empty()) throw ConfigError("train: no output checkpoint given (--out or key out)");

  const Dataset ds = load_dataset(data);
  ModelConfig mc = ModelConfig::for_scenario(ds.scenario);
  mc.attention = attention;
  mc.hidden = hidden;
  mc.attention_size = attention_size;
  mc.power_width = power_width;
  mc.power_layers = power_layers;
  if (!a.quiet) {
    tc.on_epoch = [&out](const EpochStats& s) {
      char buf[200];
      std::snprintf(buf, sizeof(buf), "epoch=%d phase=%s loss_channel=%.6g loss_power=%.6g rate=%.6g total=%.6g\n",
                    s.epoch, s.phase.c_str(), s.loss.channel, s.loss.power, s.loss.rate, s.loss.total);
      out << buf << std::flush;
    };
  }
  TrainResult result;
  JointModel model = train_joint(ds, mc, tc, &result);
  model.save(model_out);
  if (!loss_csv.empty()) write_loss_trace(loss_csv, result.trace);
  out << "checkpoint=" << model_out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string data;
  std::string checkpoint;
  std::string checkpoint_no_attention;
  std::string checkpoint_separate;
  std::vector<std::string> methods;
  double alpha = 0.1;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const Dataset test = load_dataset(a.data);
  std::vector<Method> methods;
  if (a.methods.empty()) {
    for (Method m : all_methods()) {
      const bool available = (m == Method::Proposed && !a.checkpoint.empty()) ||
                             (m == Method::NoAttention && !a.checkpoint_no_attention.empty()) ||
                             (m == Method::SeparateZf && !a.checkpoint_separate.empty()) || !method_is_learned(m);
      if (available) methods.push_back(m);
    }
  } else {
    for (const auto& name : a.methods) methods.push_back(parse_method(name));
  }
  auto load_for = [&](Method m) -> std::optional<JointModel> {
    const std::string& path = m == Method::Proposed      ? a.checkpoint
                              : m == Method::NoAttention ? a.checkpoint_no_attention
                                                         : a.checkpoint_separate;
    if (path.empty()) throw ConfigError("method " + std::string(method_name(m)) + " requires a checkpoint");
    return JointModel::load(path);
  };
  if (!(a.alpha >= 0.0 && a.alpha < 1.0)) throw ConfigError("alpha must lie in [0, 1)");
  const EvaluationContext ctx = prepare_evaluation(test);
  std::vector<ResultRow> rows;
  for (Method m : methods) {
    std::optional<JointModel> model;
    if (method_is_learned(m)) model = load_for(m);
    const auto eval = evaluate_method(m, test, model ? &*model : nullptr, RngStream(a.seed).derive({2}).seed());
    ResultRow row = summarize(eval, ctx, test.scenario, a.alpha);
    row.variable = "none";
    row.seed = a.seed;
    rows.push_back(std::move(row));
  }
  if (a.out.empty()) {
    out << result_csv(rows);
  } else {
    write_result_csv(a.out, rows);
    out << "rows=" << rows.size() << " out=" << a.out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  std::string spec;
  std::string out;
  std::string manifest;
  std::string model_dir;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  ExperimentSpec spec = load_experiment_spec(KeyValueFile::load(a.spec));
  if (!a.out.empty()) spec.output = a.out;
  if (!a.model_dir.empty()) spec.model_dir = a.model_dir;
  if (spec.output.empty()) throw ConfigError("sweep: no output path (--out or key output)");
  const SweepResult result = run_sweep(spec);
  write_result_csv(spec.output, result.rows);
  const std::filesystem::path manifest =
      a.manifest.empty() ? std::filesystem::path(spec.output.string() + ".manifest.json") : std::filesystem::path(a.manifest);
  write_manifest(manifest, spec, result);
  std::size_t failed = 0;
  for (const auto& r : result.rows) failed += r.error.empty() ? 0 : 1;
  out << "rows=" << result.rows.size() << " failed=" << failed << " config_hash=" << result.config_hash
      << " out=" << spec.output.string() << "\n";
  if (spec.variable == SweepVariable::Split) {
    for (Method m : spec.methods) {
      if (const auto best = best_row(result.rows, method_name(m))) {
        out << "best_split method=" << best->method << " p=" << best->p << " n=" << best->n
            << " rate_effective=" << best->rate_effective << "\n";
      }
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::size_t samples = 200;
  double eps = 1e-5;
  double threshold = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  if (!(a.eps > 0.0)) throw ConfigError("eps must be positive");
  nn::GradCheckOptions opts;
  opts.eps = a.eps;
  opts.samples = a.samples;
  double worst = 0.0;
  for (const auto& c : run_gradcheck_suite(a.seed, opts)) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "case=%s max_rel_error=%.3e coordinates=%zu worst=%s[%ld] analytic=%.6e numeric=%.6e loss=%.6e\n",
                  c.name.c_str(), c.result.max_rel_error, c.result.coordinates, c.result.worst_param.c_str(),
                  static_cast<long>(c.result.worst_index), c.result.worst_analytic, c.result.worst_numeric,
                  c.result.loss_value);
    out << buf;
    worst = std::max(worst, c.result.max_rel_error);
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max_rel_error=%.3e threshold=%.1e\n", worst, a.threshold);
  out << buf;
  return worst <= a.threshold ? kExitOk : kExitGradcheck;
}

int report(std::ostream& err, const char* category, const char* what, int code) {
  err << "pbf: error[" << category << "]: " << what << "\n";
  return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Predictive beamforming simulator for the multiuser MISO downlink", "pbf"};
  app.set_version_flag("--version", std::string(PBF_VERSION));
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-data", "Generate a dataset of channel frames with power labels");
  gen.scenario.add(g);
  g->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
  g->add_option("--count", gen.count, "Frame count (default: preset size for the split)");
  g->add_option("--split", gen.split, "train or test")->capture_default_str();
  g->add_flag("--no-labels", gen.no_labels, "Skip WMMSE label extraction");
  g->add_option("--out", gen.out, "Output dataset file")->required();
  g->add_option("--csv", gen.csv, "Also export per-entry CSV");

  LabelsArgs lab;
  auto* l = app.add_subcommand("labels", "Recompute (q, p) labels via WMMSE and uplink-downlink duality");
  l->add_option("--in", lab.in, "Input dataset")->required();
  l->add_option("--out", lab.out, "Output dataset")->required();
  l->add_option("--max-iters", lab.max_iters, "WMMSE iteration cap")->capture_default_str();
  l->add_option("--tol", lab.tol, "WMMSE relative rate tolerance")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a joint model and write a checkpoint");
  t->add_option("--config", tr.config, "Training key-value file (schema pbf-train/1)");
  t->add_option("--data", tr.data, "Labeled training dataset");
  t->add_option("--out", tr.out, "Output checkpoint");
  t->add_option("--loss-csv", tr.loss_csv, "Per-epoch loss trace CSV");
  t->add_option("--mode", tr.mode, "joint or separate");
  t->add_option("--epochs", tr.epochs, "Epochs (per phase in separate mode)");
  t->add_option("--power-epochs", tr.power_epochs, "Separate mode power-network epochs");
  t->add_option("--warmup-epochs", tr.warmup_epochs, "Joint mode L_H-only epochs before the joint phase");
  t->add_option("--channel-weight", tr.channel_weight, "Weight on L_H in joint mode");
  t->add_option("--power-weight", tr.power_weight, "Weight on L_P in joint mode (default 1 / P_T^2)");
  t->add_option("--batch-size", tr.batch_size, "Mini-batch size");
  t->add_option("--lr", tr.lr, "Adam learning rate");
  t->add_option("--lr-decay", tr.lr_decay, "Learning-rate factor applied after each epoch");
  t->add_option("--rate-weight", tr.rate_weight, "Sum-rate weight b");
  t->add_option("--seed", tr.seed, "Initialization and shuffling seed");
  t->add_option("--hidden", tr.hidden, "LSTM units (default 2 N_t K N)");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Epochs between periodic checkpoints");
  t->add_option("--checkpoint-dir", tr.checkpoint_dir, "Directory for periodic checkpoints");
  t->add_flag("--no-attention", tr.no_attention, "Read out the last LSTM state instead of attention");
  t->add_flag("--rate-on-truth", tr.rate_on_truth, "Evaluate the rate term on true channels");
  t->add_flag("--quiet", tr.quiet, "Suppress per-epoch output");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Evaluate methods on a test dataset");
  e->add_option("--data", ev.data, "Test dataset")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Joint model with attention (proposed)");
  e->add_option("--checkpoint-no-attention", ev.checkpoint_no_attention, "Joint model without attention");
  e->add_option("--checkpoint-separate", ev.checkpoint_separate, "Separately trained model (separate_zf)");
  e->add_option("--methods", ev.methods, "Methods to run (default: all with inputs available)")->delimiter(',');
  e->add_option("--alpha", ev.alpha, "Pilot overhead fraction")->capture_default_str();
  e->add_option("--seed", ev.seed, "Seed for fresh pilot estimates")->capture_default_str();
  e->add_option("--out", ev.out, "Output CSV (default stdout)");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "Run an experiment spec and write a result CSV");
  s->add_option("--spec", sw.spec, "Experiment key-value file (schema pbf-experiment/1)")->required();
  s->add_option("--out", sw.out, "Output CSV (overrides the spec)");
  s->add_option("--manifest", sw.manifest, "Manifest path (default <out>.manifest.json)");
  s->add_option("--model-dir", sw.model_dir, "Write trained checkpoints here");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check of every layer and the full objective");
  c->add_option("--seed", gc.seed, "Seed")->capture_default_str();
  c->add_option("--samples", gc.samples, "Coordinates per case")->capture_default_str();
  c->add_option("--eps", gc.eps, "Central-difference step")->capture_default_str();
  c->add_option("--threshold", gc.threshold, "Failure threshold on relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    return report(err, "usage", ex.what(), kExitUsage);
  }

  try {
    if (g->parsed()) return cmd_generate(gen, out);
    if (l->parsed()) return cmd_labels(lab, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (e->parsed()) return cmd_evaluate(ev, out);
    if (s->parsed()) return cmd_sweep(sw, out);
    if (c->parsed()) return cmd_gradcheck(gc, out);
    return report(err, "usage", "no subcommand", kExitUsage);
  } catch (const ConfigError& ex) {
    return report(err, "config", ex.what(), kExitConfig);
  } catch (const ShapeError& ex) {
    return report(err, "config", ex.what(), kExitConfig);
  } catch (const UnsupportedError& ex) {
    return report(err, "config", ex.what(), kExitConfig);
  } catch (const IoError& ex) {
    return report(err, "io", ex.what(), kExitIo);
  } catch (const FormatError& ex) {
    return report(err, "format", ex.what(), kExitIo);
  } catch (const DomainError& ex) {
    return report(err, "numeric", ex.what(), kExitNumeric);
  } catch (const SingularityError& ex) {
    return report(err, "numeric", ex.what(), kExitNumeric);
  } catch (const LabelExtractionError& ex) {
    return report(err, "numeric", ex.what(), kExitNumeric);
  } catch (const DivergenceError& ex) {
    return report(err, "numeric", ex.what(), kExitNumeric);
  } catch (const std::exception& ex) {
    return report(err, "internal", ex.what(), kExitInternal);
  }
}

}  // namespace pbf
