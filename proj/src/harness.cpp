#include "pbf/harness.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "pbf/kalman.hpp"

namespace pbf {

// ---------------------------------------------------------------- names

namespace {

struct MethodEntry {
  Method method;
  std::string_view name;
};

constexpr MethodEntry kMethods[] = {
    {Method::Proposed, "proposed"},         {Method::NoAttention, "no_attention"},
    {Method::SeparateZf, "separate_zf"},    {Method::EstimationZf, "estimation_zf"},
    {Method::KalmanZf, "kalman_zf"},        {Method::WmmseOracle, "wmmse_oracle"},
};

struct VariableEntry {
  SweepVariable variable;
  std::string_view name;
};

constexpr VariableEntry kVariables[] = {
    {SweepVariable::PPredict, "p_predict"}, {SweepVariable::SnrDb, "snr_db"},
    {SweepVariable::FdTs, "fd_ts"},         {SweepVariable::VelocityKmh, "velocity_kmh"},
    {SweepVariable::Split, "split"},
};

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string_view method_name(Method method) {
  for (const auto& e : kMethods)
    if (e.method == method) return e.name;
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (const auto& e : kMethods)
    if (e.name == name) return e.method;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = [] {
    std::vector<Method> out;
    for (const auto& e : kMethods) out.push_back(e.method);
    return out;
  }();
  return methods;
}

bool method_is_learned(Method method) {
  return method == Method::Proposed || method == Method::NoAttention || method == Method::SeparateZf;
}

std::string_view sweep_variable_name(SweepVariable v) {
  for (const auto& e : kVariables)
    if (e.variable == v) return e.name;
  return "unknown";
}

SweepVariable parse_sweep_variable(std::string_view name) {
  for (const auto& e : kVariables)
    if (e.name == name) return e.variable;
  throw ConfigError("unknown sweep variable '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- evaluation

EvaluationContext prepare_evaluation(const Dataset& test) {
  const auto& sc = test.scenario;
  const std::size_t frames = test.frames.size();
  EvaluationContext ctx;
  ctx.rate_e.assign(frames, 0.0);
  ctx.oracle_p.assign(frames, 0.0);
  ctx.oracle_all.assign(frames, 0.0);
  const double p_t = sc.p_t();
  parallel_for(frames, [&](std::size_t f) {
    const auto& rec = test.frames[f];
    double est = 0.0;
    for (int n = 0; n < sc.n_known; ++n) {
      const auto& truth = rec.truth.slots[static_cast<std::size_t>(n)];
      const auto beams = wmmse_solve(rec.estimated.estimates[static_cast<std::size_t>(n)], p_t, sc.noise_variance).beams;
      est += sum_rate(truth, beams, sc.noise_variance);
    }
    double known = 0.0;
    double predicted = 0.0;
    for (int n = 0; n < sc.frame_length(); ++n) {
      const auto& truth = rec.truth.slots[static_cast<std::size_t>(n)];
      const double r = sum_rate(truth, wmmse_solve(truth, p_t, sc.noise_variance).beams, sc.noise_variance);
      (n < sc.n_known ? known : predicted) += r;
    }
    ctx.rate_e[f] = est / sc.n_known;
    ctx.oracle_p[f] = predicted / sc.p_predict;
    ctx.oracle_all[f] = (known + predicted) / sc.frame_length();
  });
  return ctx;
}

MethodEvaluation evaluate_method(Method method, const Dataset& test, const JointModel* model,
                                 std::uint64_t eval_seed) {
  const auto& sc = test.scenario;
  if (test.frames.empty()) throw ConfigError("evaluate: empty test set");
  if (method_is_learned(method)) {
    if (!model) throw ConfigError("method " + std::string(method_name(method)) + " requires a checkpoint");
    model->config().check_compatible(sc);
    if (method == Method::Proposed && !model->config().attention) {
      throw ConfigError("method proposed requires a model with attention");
    }
    if (method == Method::NoAttention && model->config().attention) {
      throw ConfigError("method no_attention requires a model without attention");
    }
  }
  const std::size_t frames = test.frames.size();
  const int p_slots = sc.p_predict;
  const double p_t = sc.p_t();
  const double s2 = sc.noise_variance;
  const double s_e = sc.estimation_noise();
  const double beta = jakes_beta(sc.fd_ts);

  MethodEvaluation out;
  out.method = method;
  out.nmse.assign(frames, 0.0);
  out.rate_p.assign(frames, 0.0);
  out.nmse_steps = RMatrix::Zero(static_cast<Eigen::Index>(frames), p_slots);

  // Learned channel predictions are computed in batches up front.
  std::vector<std::vector<CMatrix>> learned;
  if (method_is_learned(method)) {
    constexpr std::size_t kChunk = 64;
    learned.resize(frames);
    for (std::size_t start = 0; start < frames; start += kChunk) {
      const std::size_t len = std::min(kChunk, frames - start);
      std::vector<const FrameRecord*> ptrs;
      for (std::size_t i = 0; i < len; ++i) ptrs.push_back(&test.frames[start + i]);
      auto pred = model->predict_channels(std::span<const FrameRecord* const>(ptrs));
      for (std::size_t i = 0; i < len; ++i) learned[start + i] = std::move(pred[i]);
    }
  }

  const RngStream pilots(eval_seed);
  parallel_for(frames, [&](std::size_t f) {
    const auto& rec = test.frames[f];
    const auto truth_begin = rec.truth.slots.begin() + sc.n_known;
    const std::vector<CMatrix> truth(truth_begin, rec.truth.slots.end());
    std::vector<CMatrix> pred;
    std::vector<BeamMatrix> beams;
    switch (method) {
      case Method::Proposed:
      case Method::NoAttention: {
        pred = learned[f];
        const auto powers = model->predict_powers(pred);
        for (int m = 0; m < p_slots; ++m) {
          beams.push_back(reconstruct_beamforming(pred[static_cast<std::size_t>(m)],
                                                  powers[static_cast<std::size_t>(m)], s2));
        }
        break;
      }
      case Method::SeparateZf:
        pred = learned[f];
        for (const auto& h : pred) beams.push_back(zf_beamformer(h, p_t, s2));
        break;
      case Method::EstimationZf: {
        RngStream rng = pilots.derive({f});
        for (const auto& h : truth) {
          pred.push_back(h + sample_complex_gaussian(h.rows(), h.cols(), s_e, rng));
          beams.push_back(zf_beamformer(pred.back(), p_t, s2));
        }
        break;
      }
      case Method::KalmanZf: {
        const auto track = kalman_filter(rec.estimated, beta, s_e);
        pred = kalman_predict(track.last.mean, beta, p_slots);
        for (const auto& h : pred) beams.push_back(zf_beamformer(h, p_t, s2));
        break;
      }
      case Method::WmmseOracle:
        pred = truth;
        for (const auto& h : truth) beams.push_back(wmmse_solve(h, p_t, s2).beams);
        break;
    }
    double rate = 0.0;
    for (int m = 0; m < p_slots; ++m) {
      const auto ms = static_cast<std::size_t>(m);
      rate += sum_rate(truth[ms], beams[ms], s2);
      out.nmse_steps(static_cast<Eigen::Index>(f), m) =
          nmse(std::span<const CMatrix>(&truth[ms], 1), std::span<const CMatrix>(&pred[ms], 1));
    }
    out.rate_p[f] = rate / p_slots;
    out.nmse[f] = nmse(std::span<const CMatrix>(truth), std::span<const CMatrix>(pred));
  });
  return out;
}

ResultRow summarize(const MethodEvaluation& eval, const EvaluationContext& ctx, const ScenarioConfig& scenario,
                    double alpha) {
  ResultRow row;
  row.method = std::string(method_name(eval.method));
  row.n = scenario.n_known;
  row.p = scenario.p_predict;
  row.alpha = alpha;
  row.frames = eval.rate_p.size();
  row.nmse = mean_stat(eval.nmse).mean;
  row.rate_p = mean_stat(eval.rate_p).mean;
  row.rate_e = mean_stat(ctx.rate_e).mean;
  row.rate_effective = effective_sum_rate(row.rate_e, row.rate_p, row.n, row.p, alpha);
  row.rate_oracle = mean_stat(ctx.oracle_p).mean;
  row.normalized_rate = row.rate_p / row.rate_oracle;
  row.normalized_effective = row.rate_effective / mean_stat(ctx.oracle_all).mean;
  return row;
}

// ---------------------------------------------------------------- spec

void ExperimentSpec::validate() const {
  scenario.validate();
  if (values.empty()) throw ConfigError("experiment: sweep values must be nonempty");
  if (methods.empty()) throw ConfigError("experiment: methods must be nonempty");
  if (seeds.empty()) throw ConfigError("experiment: seeds must be nonempty");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("experiment: alpha must lie in [0, 1)");
  if (train_frames < 1 || test_frames < 1) throw ConfigError("experiment: frame counts must be >= 1");
  train.validate();
  for (double v : values) scenario_for(v).validate();
}

ScenarioConfig ExperimentSpec::scenario_for(double value) const {
  ScenarioConfig s = scenario;
  auto as_count = [&](double v) {
    if (v != std::floor(v) || v < 0 || v > 1e6) throw ConfigError("experiment: sweep value must be an integer");
    return static_cast<int>(v);
  };
  switch (variable) {
    case SweepVariable::PPredict:
      s.p_predict = as_count(value);
      break;
    case SweepVariable::SnrDb:
      s.p_t_db = value;
      break;
    case SweepVariable::FdTs:
      s.fd_ts = value;
      break;
    case SweepVariable::VelocityKmh:
      s.fd_ts = velocity_to_fd_ts(value);
      break;
    case SweepVariable::Split:
      s.p_predict = as_count(value);
      s.n_known = frame_length - s.p_predict;
      break;
  }
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("experiment: sweep value " + format_double(value) + ": " + e.what());
  }
  return s;
}

std::string ExperimentSpec::canonical() const {
  std::ostringstream o;
  o << "schema=pbf-experiment/1\n";
  o << "n_t=" << scenario.n_t << "\nk_users=" << scenario.k_users << "\nn_known=" << scenario.n_known
    << "\np_predict=" << scenario.p_predict << "\nfd_ts=" << format_double(scenario.fd_ts)
    << "\nsnr_db=" << format_double(scenario.p_t_db) << "\nest_noise_variance="
    << (scenario.est_noise_variance ? format_double(*scenario.est_noise_variance) : "default")
    << "\nnoise_variance=" << format_double(scenario.noise_variance);
  o << "\ngenerator=" << (generator.model == ChannelModel::Ar ? "ar" : "sos") << "\nn_paths=" << generator.n_paths;
  o << "\nvariable=" << sweep_variable_name(variable) << "\nvalues=";
  for (std::size_t i = 0; i < values.size(); ++i) o << (i ? "," : "") << format_double(values[i]);
  o << "\nmethods=";
  for (std::size_t i = 0; i < methods.size(); ++i) o << (i ? "," : "") << method_name(methods[i]);
  o << "\nalpha=" << format_double(alpha) << "\nseeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) o << (i ? "," : "") << seeds[i];
  o << "\ntrain_frames=" << train_frames << "\ntest_frames=" << test_frames << "\nframe_length=" << frame_length;
  o << "\nepochs=" << train.epochs << "\nbatch_size=" << train.batch_size
    << "\nlearning_rate=" << format_double(train.learning_rate) << "\nlr_decay=" << format_double(train.lr_decay)
    << "\nrate_weight=" << format_double(train.rate_weight) << "\nrate_on_truth=" << train.rate_on_truth
    << "\npower_epochs=" << train.power_epochs << "\nwarmup_epochs=" << train.warmup_epochs
    << "\nchannel_weight=" << format_double(train.channel_weight)
    << "\npower_weight=" << (train.power_weight ? format_double(*train.power_weight) : "auto");
  o << "\nhidden=" << model.hidden << "\nattention_size=" << model.attention_size
    << "\npower_width=" << model.power_width << "\npower_layers=" << model.power_layers << "\n";
  return o.str();
}

ExperimentSpec load_experiment_spec(const KeyValueFile& kv) {
  const std::string schema = kv.get_string("schema", "pbf-experiment/1");
  if (schema != "pbf-experiment/1") throw ConfigError("experiment: unsupported schema '" + schema + "'");
  ExperimentSpec spec;
  const Preset preset = scenario_from_keys(kv);
  spec.scenario = preset.scenario;
  spec.generator = preset.generator;
  spec.train_frames = preset.train_frames;
  spec.test_frames = preset.test_frames;

  spec.variable = parse_sweep_variable(kv.get_string("variable", "p_predict"));
  spec.values = kv.get_doubles("values");
  for (const auto& m : kv.get_list("methods")) spec.methods.push_back(parse_method(m));
  spec.alpha = kv.get_double("alpha", spec.alpha);
  if (kv.has("seeds")) {
    spec.seeds.clear();
    for (double s : kv.get_doubles("seeds")) {
      if (s < 0 || s != std::floor(s)) throw ConfigError("experiment: seeds must be nonnegative integers");
      spec.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  spec.frame_length = kv.get_int("frame_length", spec.frame_length);

  auto& tr = spec.train;
  tr.epochs = kv.get_int("epochs", tr.epochs);
  tr.batch_size = kv.get_int("batch_size", tr.batch_size);
  tr.learning_rate = kv.get_double("learning_rate", tr.learning_rate);
  tr.lr_decay = kv.get_double("lr_decay", tr.lr_decay);
  tr.rate_weight = kv.get_double("rate_weight", tr.rate_weight);
  tr.rate_on_truth = kv.get_bool("rate_on_truth", tr.rate_on_truth);
  tr.power_epochs = kv.get_int("power_epochs", tr.power_epochs);
  tr.warmup_epochs = kv.get_int("warmup_epochs", tr.warmup_epochs);
  tr.channel_weight = kv.get_double("channel_weight", tr.channel_weight);
  if (kv.has("power_weight")) tr.power_weight = kv.get_double("power_weight", 0.0);

  spec.model.hidden = kv.get_int("hidden", spec.model.hidden);
  spec.model.attention_size = kv.get_int("attention_size", spec.model.attention_size);
  spec.model.power_width = kv.get_int("power_width", spec.model.power_width);
  spec.model.power_layers = kv.get_int("power_layers", spec.model.power_layers);

  spec.output = kv.get_string("output", "");
  spec.model_dir = kv.get_string("model_dir", "");
  kv.require_all_used();
  spec.validate();
  return spec;
}

Preset scenario_from_keys(const KeyValueFile& kv) {
  Preset preset = find_preset(kv.get_string("preset", "ar-desk"));
  auto& sc = preset.scenario;
  sc.n_t = kv.get_int("n_t", sc.n_t);
  sc.k_users = kv.get_int("k_users", sc.k_users);
  sc.n_known = kv.get_int("n_known", sc.n_known);
  sc.p_predict = kv.get_int("p_predict", sc.p_predict);
  sc.fd_ts = kv.get_double("fd_ts", sc.fd_ts);
  if (kv.has("velocity_kmh")) {
    if (kv.has("fd_ts")) throw ConfigError("set either fd_ts or velocity_kmh, not both");
    sc.fd_ts = velocity_to_fd_ts(kv.get_double("velocity_kmh", 0.0));
  }
  sc.p_t_db = kv.get_double("snr_db", sc.p_t_db);
  if (kv.has("est_noise_variance")) sc.est_noise_variance = kv.get_double("est_noise_variance", 0.0);
  sc.noise_variance = kv.get_double("noise_variance", sc.noise_variance);
  const std::string gen = kv.get_string("generator", preset.generator.model == ChannelModel::Ar ? "ar" : "sos");
  if (gen == "ar") {
    preset.generator.model = ChannelModel::Ar;
  } else if (gen == "sos") {
    preset.generator.model = ChannelModel::Sos;
  } else {
    throw ConfigError("generator must be ar or sos");
  }
  preset.generator.n_paths = kv.get_int("n_paths", preset.generator.n_paths);
  if (preset.generator.n_paths < 1) throw ConfigError("n_paths must be >= 1");
  preset.train_frames = static_cast<std::size_t>(kv.get_u64("train_frames", preset.train_frames));
  preset.test_frames = static_cast<std::size_t>(kv.get_u64("test_frames", preset.test_frames));
  return preset;
}

// ---------------------------------------------------------------- sweep

namespace {

std::uint64_t method_tag(Method m) { return 100 + static_cast<std::uint64_t>(m); }

ModelConfig model_config_for(const ExperimentSpec& spec, const ScenarioConfig& sc, bool attention) {
  ModelConfig mc = ModelConfig::for_scenario(sc);
  mc.hidden = spec.model.hidden;
  mc.attention_size = spec.model.attention_size;
  mc.power_width = spec.model.power_width;
  mc.power_layers = spec.model.power_layers;
  mc.attention = attention;
  return mc;
}

}  // namespace

SweepResult run_sweep(const ExperimentSpec& spec) {
  spec.validate();
  SweepResult result;
  result.config_hash = fnv1a_hex(spec.canonical());
  const bool need_training = std::any_of(spec.methods.begin(), spec.methods.end(), method_is_learned);

  for (std::size_t vi = 0; vi < spec.values.size(); ++vi) {
    const double value = spec.values[vi];
    const ScenarioConfig sc = spec.scenario_for(value);
    for (const std::uint64_t seed : spec.seeds) {
      const RngStream cell(RngStream(seed).derive({vi, std::bit_cast<std::uint64_t>(value)}));
      auto error_row = [&](Method m, const std::string& what) {
        ResultRow row;
        row.method = std::string(method_name(m));
        row.variable = std::string(sweep_variable_name(spec.variable));
        row.value = value;
        row.seed = seed;
        row.n = sc.n_known;
        row.p = sc.p_predict;
        row.alpha = spec.alpha;
        row.error = what;
        return row;
      };

      Dataset test;
      Dataset train;
      try {
        test = generate_dataset(sc, spec.test_frames, spec.generator, cell.derive({1}), Split::Test, false);
        if (need_training) train = generate_dataset(sc, spec.train_frames, spec.generator, cell.derive({0}));
      } catch (const std::exception& e) {
        for (Method m : spec.methods) result.rows.push_back(error_row(m, std::string("data: ") + e.what()));
        continue;
      }
      const EvaluationContext ctx = prepare_evaluation(test);

      for (Method m : spec.methods) {
        const auto start = std::chrono::steady_clock::now();
        try {
          std::optional<JointModel> model;
          if (method_is_learned(m)) {
            TrainConfig tc = spec.train;
            tc.seed = cell.derive({method_tag(m)}).seed();
            tc.mode = m == Method::SeparateZf ? TrainMode::Separate : TrainMode::Joint;
            tc.on_epoch = nullptr;
            tc.checkpoint_every = 0;
            model.emplace(train_joint(train, model_config_for(spec, sc, m != Method::NoAttention), tc));
            if (!spec.model_dir.empty()) {
              std::filesystem::create_directories(spec.model_dir);
              char name[128];
              std::snprintf(name, sizeof(name), "%s_v%zu_s%llu.pbfm", std::string(method_name(m)).c_str(), vi,
                            static_cast<unsigned long long>(seed));
              model->save(spec.model_dir / name);
            }
          }
          const auto eval = evaluate_method(m, test, model ? &*model : nullptr, cell.derive({2}).seed());
          ResultRow row = summarize(eval, ctx, sc, spec.alpha);
          row.variable = std::string(sweep_variable_name(spec.variable));
          row.value = value;
          row.seed = seed;
          row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
          result.rows.push_back(std::move(row));
        } catch (const std::exception& e) {
          ResultRow row = error_row(m, e.what());
          row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
          result.rows.push_back(std::move(row));
        }
      }
    }
  }
  return result;
}

std::string result_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream o;
  o << "method,variable,value,seed,n,p,alpha,frames,nmse,rate_p,rate_e,rate_effective,rate_oracle,"
       "normalized_rate,normalized_effective,error\n";
  for (const auto& r : rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    o << r.method << ',' << r.variable << ',' << format_double(r.value) << ',' << r.seed << ',' << r.n << ','
      << r.p << ',' << format_double(r.alpha) << ',' << r.frames << ',' << format_double(r.nmse) << ','
      << format_double(r.rate_p) << ',' << format_double(r.rate_e) << ',' << format_double(r.rate_effective)
      << ',' << format_double(r.rate_oracle) << ',' << format_double(r.normalized_rate) << ','
      << format_double(r.normalized_effective) << ',' << err << '\n';
  }
  return o.str();
}

void write_result_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  io::write_text(path, result_csv(rows));
}

void write_manifest(const std::filesystem::path& path, const ExperimentSpec& spec, const SweepResult& result) {
  nlohmann::ordered_json j;
  j["schema"] = "pbf-manifest/1";
  j["code_version"] = PBF_VERSION;
  j["config_hash"] = result.config_hash;
  j["rng_algorithm"] = std::string(RngStream::kAlgorithm);
  j["config"] = spec.canonical();
  j["rows"] = result.rows.size();
  auto& timing = j["wall_time_s"];
  timing = nlohmann::ordered_json::array();
  for (const auto& r : result.rows) {
    timing.push_back({{"method", r.method}, {"value", r.value}, {"seed", r.seed}, {"seconds", r.wall_time_s}});
  }
  io::write_text(path, j.dump(2) + "\n");
}

std::optional<ResultRow> best_row(const std::vector<ResultRow>& rows, std::string_view method) {
  std::optional<ResultRow> best;
  for (const auto& r : rows) {
    if (r.method != method || !r.error.empty()) continue;
    if (!best || r.rate_effective > best->rate_effective) best = r;
  }
  return best;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------- gradcheck

namespace {

/// Wraps a fixed input tensor so its gradient is checked alongside the weights.
nn::Param input_param(const std::string& name, Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
  nn::Param p(name, rows, cols);
  nn::init_uniform(p, 1.0, rng);
  return p;
}

nn::GradCheckResult check_dense(RngStream& rng, nn::Activation act, const nn::GradCheckOptions& opts) {
  nn::Dense layer("dense", 5, 4, act, rng);
  nn::Param x = input_param("x", 5, 3, rng);
  RMatrix r = RMatrix::Random(4, 3);
  auto loss = [&](bool grad) {
    nn::DenseCache cache;
    const RMatrix y = layer.forward(x.value, &cache);
    const double value = (r.cwiseProduct(y)).sum() + 0.5 * y.squaredNorm();
    if (grad) {
      layer.weight().zero_grad();
      layer.bias().zero_grad();
      x.grad = layer.backward(cache, r + y);
    }
    return value;
  };
  std::vector<nn::Param*> ps = layer.params();
  ps.push_back(&x);
  return nn::gradient_check(loss, ps, rng, opts);
}

nn::GradCheckResult check_lstm(RngStream& rng, const nn::GradCheckOptions& opts) {
  constexpr int kSteps = 5;
  nn::Lstm lstm("lstm", 3, 4, rng);
  std::vector<nn::Param> xs;
  for (int t = 0; t < kSteps; ++t) xs.push_back(input_param("x" + std::to_string(t), 3, 2, rng));
  std::vector<RMatrix> r;
  for (int t = 0; t < kSteps; ++t) r.push_back(RMatrix::Random(4, 2));
  auto loss = [&](bool grad) {
    std::vector<RMatrix> seq;
    for (const auto& x : xs) seq.push_back(x.value);
    nn::LstmCache cache;
    const auto h = lstm.forward(seq, &cache);
    double value = 0.0;
    std::vector<RMatrix> dh;
    for (int t = 0; t < kSteps; ++t) {
      value += r[t].cwiseProduct(h[t]).sum() + 0.5 * h[t].squaredNorm();
      dh.push_back(r[t] + h[t]);
    }
    if (grad) {
      for (auto* p : lstm.params()) p->zero_grad();
      const auto dx = lstm.backward(cache, dh);
      for (int t = 0; t < kSteps; ++t) xs[t].grad = dx[t];
    }
    return value;
  };
  std::vector<nn::Param*> ps = lstm.params();
  for (auto& x : xs) ps.push_back(&x);
  return nn::gradient_check(loss, ps, rng, opts);
}

nn::GradCheckResult check_attention(RngStream& rng, const nn::GradCheckOptions& opts) {
  constexpr int kSteps = 5;
  nn::Attention attention("attention", 4, 3, rng);
  std::vector<nn::Param> hs;
  for (int t = 0; t < kSteps; ++t) hs.push_back(input_param("h" + std::to_string(t), 4, 2, rng));
  const RMatrix r = RMatrix::Random(4, 2);
  auto loss = [&](bool grad) {
    std::vector<RMatrix> seq;
    for (const auto& h : hs) seq.push_back(h.value);
    nn::AttentionCache cache;
    const RMatrix c = attention.forward(seq, &cache);
    const double value = r.cwiseProduct(c).sum() + 0.5 * c.squaredNorm();
    if (grad) {
      for (auto* p : attention.params()) p->zero_grad();
      const auto dh = attention.backward(cache, r + c);
      for (int t = 0; t < kSteps; ++t) hs[t].grad = dh[t];
    }
    return value;
  };
  std::vector<nn::Param*> ps = attention.params();
  for (auto& h : hs) ps.push_back(&h);
  return nn::gradient_check(loss, ps, rng, opts);
}

nn::GradCheckResult check_model(RngStream& rng, const LossOptions& options, bool attention,
                                const nn::GradCheckOptions& opts) {
  ScenarioConfig sc;
  sc.n_t = 2;
  sc.k_users = 2;
  sc.n_known = 4;
  sc.p_predict = 2;
  sc.fd_ts = 0.05;
  const Dataset data = generate_dataset(sc, 3, {}, rng.derive({7}));
  ModelConfig mc = ModelConfig::for_scenario(sc);
  mc.hidden = 8;
  mc.attention_size = 4;
  mc.power_width = 8;
  mc.attention = attention;
  JointModel model(mc, rng);
  std::vector<const FrameRecord*> batch;
  for (const auto& f : data.frames) batch.push_back(&f);
  auto loss = [&](bool grad) { return model.loss(batch, options, grad).total; };
  const auto ps = model.params();
  return nn::gradient_check(loss, ps, rng, opts);
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, const nn::GradCheckOptions& options) {
  RngStream rng(seed);
  std::vector<GradCheckCase> out;
  out.push_back({"dense_identity", check_dense(rng, nn::Activation::Identity, options)});
  out.push_back({"dense_relu", check_dense(rng, nn::Activation::Relu, options)});
  out.push_back({"lstm_bptt", check_lstm(rng, options)});
  out.push_back({"attention", check_attention(rng, options)});
  LossOptions full;
  out.push_back({"joint_objective", check_model(rng, full, true, options)});
  LossOptions no_attention = full;
  out.push_back({"joint_objective_no_attention", check_model(rng, no_attention, false, options)});
  LossOptions rate_only;
  rate_only.channel_weight = 0.0;
  rate_only.power_weight = 0.0;
  rate_only.rate_weight = 1.0;
  out.push_back({"rate_term", check_model(rng, rate_only, true, options)});
  LossOptions rate_truth = rate_only;
  rate_truth.rate_on_truth = true;
  out.push_back({"rate_term_on_truth", check_model(rng, rate_truth, true, options)});
  return out;
}

// ---------------------------------------------------------------- presets

Preset find_preset(std::string_view name) {
  Preset p;
  if (name == "ar-desk") return p;
  if (name == "sos-desk") {
    p.generator.model = ChannelModel::Sos;
    p.generator.n_paths = 8;
    return p;
  }
  if (name == "ar-paper") {
    p.train_frames = 30000;
    p.test_frames = 1000;
    return p;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected ar-desk, sos-desk or ar-paper)");
}

}  // namespace pbf
