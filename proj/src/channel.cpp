#include "pbf/channel.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "pbf/binary_io.hpp"

namespace pbf {

double ScenarioConfig::p_t() const { return std::pow(10.0, p_t_db / 10.0); }

double ScenarioConfig::estimation_noise() const {
  return est_noise_variance.value_or(1.0 / p_t());
}

void ScenarioConfig::validate() const {
  if (n_t < 1 || k_users < 1) throw ConfigError("scenario: n_t and k_users must be >= 1");
  if (n_known < 1 || p_predict < 1) throw ConfigError("scenario: n_known and p_predict must be >= 1");
  if (!(fd_ts >= 0.0 && fd_ts < 0.5)) throw ConfigError("scenario: fd_ts must lie in [0, 0.5)");
  if (!std::isfinite(p_t_db)) throw ConfigError("scenario: p_t_db must be finite");
  if (!(estimation_noise() >= 0.0)) throw ConfigError("scenario: estimation noise variance must be >= 0");
  if (!(noise_variance > 0.0)) throw ConfigError("scenario: noise variance must be > 0");
}

double jakes_beta(double fd_ts) {
  if (!(fd_ts >= 0.0 && fd_ts < 0.5)) throw DomainError("jakes_beta: fd_ts must lie in [0, 0.5)");
  return bessel_j0(2.0 * std::numbers::pi * fd_ts);
}

double velocity_to_fd_ts(double velocity_kmh, double carrier_hz, double sample_s) {
  constexpr double kSpeedOfLight = 299792458.0;
  const double doppler_hz = velocity_kmh / 3.6 * carrier_hz / kSpeedOfLight;
  return doppler_hz * sample_s;
}

ChannelFrame generate_ar_frame(const ScenarioConfig& config, RngStream& rng) {
  config.validate();
  ChannelFrame frame;
  frame.beta = jakes_beta(config.fd_ts);
  const double innovation = std::max(0.0, 1.0 - frame.beta * frame.beta);
  frame.slots.reserve(static_cast<std::size_t>(config.frame_length()));
  frame.slots.push_back(sample_complex_gaussian(config.k_users, config.n_t, 1.0, rng));
  for (int n = 1; n < config.frame_length(); ++n) {
    CMatrix next = frame.beta * frame.slots.back();
    if (innovation > 0.0) next += sample_complex_gaussian(config.k_users, config.n_t, innovation, rng);
    frame.slots.push_back(std::move(next));
  }
  return frame;
}

ChannelFrame generate_sos_frame(const ScenarioConfig& config, int n_paths, RngStream& rng) {
  config.validate();
  if (n_paths < 1) throw ConfigError("generate_sos_frame: n_paths must be >= 1");
  ChannelFrame frame;
  frame.beta = jakes_beta(config.fd_ts);
  const int length = config.frame_length();
  frame.slots.assign(static_cast<std::size_t>(length), CMatrix::Zero(config.k_users, config.n_t));
  const double scale = 1.0 / std::sqrt(static_cast<double>(n_paths));
  const double two_pi = 2.0 * std::numbers::pi;
  for (int k = 0; k < config.k_users; ++k) {
    for (int a = 0; a < config.n_t; ++a) {
      for (int i = 0; i < n_paths; ++i) {
        const double angle = rng.uniform(0.0, two_pi);
        const double phase = rng.uniform(0.0, two_pi);
        const double step = two_pi * config.fd_ts * std::cos(angle);
        for (int n = 0; n < length; ++n) {
          frame.slots[static_cast<std::size_t>(n)](k, a) += scale * std::polar(1.0, step * n + phase);
        }
      }
    }
  }
  return frame;
}

ChannelFrame generate_frame(const ScenarioConfig& config, const GeneratorSpec& generator, RngStream& rng) {
  return generator.model == ChannelModel::Ar ? generate_ar_frame(config, rng)
                                             : generate_sos_frame(config, generator.n_paths, rng);
}

EstimatedFrame estimate_channels(const ChannelFrame& frame, const ScenarioConfig& config, RngStream& rng) {
  if (frame.slots.size() < static_cast<std::size_t>(config.n_known)) {
    throw ShapeError("estimate_channels: frame shorter than N");
  }
  EstimatedFrame out;
  out.est_noise_variance = config.estimation_noise();
  out.estimates.reserve(static_cast<std::size_t>(config.n_known));
  for (int n = 0; n < config.n_known; ++n) {
    const CMatrix& truth = frame.slots[static_cast<std::size_t>(n)];
    if (truth.rows() != config.k_users || truth.cols() != config.n_t) {
      throw ShapeError("estimate_channels: slot dimensions disagree with scenario");
    }
    if (out.est_noise_variance > 0.0) {
      out.estimates.push_back(truth + sample_complex_gaussian(truth.rows(), truth.cols(),
                                                              out.est_noise_variance, rng));
    } else {
      out.estimates.push_back(truth);
    }
  }
  return out;
}

bool Dataset::labeled() const {
  return !frames.empty() && !frames.front().labels.empty();
}

std::vector<PowerPair> label_frame(const ChannelFrame& truth, const ScenarioConfig& config,
                                   const LabelingOptions& options) {
  std::vector<PowerPair> labels;
  labels.reserve(static_cast<std::size_t>(config.p_predict));
  for (int m = 0; m < config.p_predict; ++m) {
    const CMatrix& h = truth.slots[static_cast<std::size_t>(config.n_known + m)];
    const auto solved = wmmse_solve(h, config.p_t(), config.noise_variance, options.wmmse);
    labels.push_back(extract_power_labels(h, solved.beams, config.noise_variance, config.p_t(),
                                          options.extraction));
  }
  return labels;
}

Dataset generate_dataset(const ScenarioConfig& config, std::size_t frame_count,
                         const GeneratorSpec& generator, const RngStream& rng, Split split,
                         bool with_labels, const LabelingOptions& options) {
  config.validate();
  if (frame_count < 1) throw ConfigError("generate_dataset: frame_count must be >= 1");
  constexpr std::uint64_t kMaxAttempts = 1000;

  Dataset ds;
  ds.scenario = config;
  ds.generator = generator;
  ds.split = split;
  ds.seed = rng.seed();
  ds.frames.resize(frame_count);
  std::vector<std::uint64_t> attempts(frame_count, 0);

  parallel_for(frame_count, [&](std::size_t i) {
    for (std::uint64_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
      RngStream frame_rng = rng.derive({static_cast<std::uint64_t>(split), i, attempt});
      FrameRecord record;
      record.truth = generate_frame(config, generator, frame_rng);
      record.estimated = estimate_channels(record.truth, config, frame_rng);
      if (with_labels) {
        try {
          record.labels = label_frame(record.truth, config, options);
        } catch (const LabelExtractionError&) {
          attempts[i] = attempt + 1;
          continue;
        }
      }
      ds.frames[i] = std::move(record);
      return;
    }
    throw LabelExtractionError("generate_dataset: frame " + std::to_string(i) +
                               " failed label extraction on every attempt");
  });
  for (auto a : attempts) ds.regenerated += a;
  return ds;
}

std::size_t relabel_dataset(Dataset& dataset, const LabelingOptions& options) {
  std::vector<char> failed(dataset.frames.size(), 0);
  parallel_for(dataset.frames.size(), [&](std::size_t i) {
    try {
      dataset.frames[i].labels = label_frame(dataset.frames[i].truth, dataset.scenario, options);
    } catch (const LabelExtractionError&) {
      failed[i] = 1;
    }
  });
  std::vector<FrameRecord> kept;
  kept.reserve(dataset.frames.size());
  for (std::size_t i = 0; i < dataset.frames.size(); ++i) {
    if (!failed[i]) kept.push_back(std::move(dataset.frames[i]));
  }
  const std::size_t dropped = dataset.frames.size() - kept.size();
  dataset.frames = std::move(kept);
  return dropped;
}

namespace {

constexpr std::string_view kDatasetMagic = "PBFDATA1";
constexpr std::uint32_t kDatasetVersion = 1;

void write_matrix(io::ByteWriter& w, const CMatrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.c128(m(r, c));
}

CMatrix read_matrix(io::ByteReader& r, int rows, int cols) {
  CMatrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = r.c128();
  return m;
}

}  // namespace

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  const auto& sc = ds.scenario;
  io::ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(sc.n_t));
  w.u32(static_cast<std::uint32_t>(sc.k_users));
  w.u32(static_cast<std::uint32_t>(sc.n_known));
  w.u32(static_cast<std::uint32_t>(sc.p_predict));
  w.f64(sc.fd_ts);
  w.f64(sc.p_t_db);
  w.u8(sc.est_noise_variance.has_value() ? 1 : 0);
  w.f64(sc.estimation_noise());
  w.f64(sc.noise_variance);
  w.u32(static_cast<std::uint32_t>(ds.generator.model));
  w.u32(static_cast<std::uint32_t>(ds.generator.n_paths));
  w.u8(static_cast<std::uint8_t>(ds.split));
  w.u64(ds.seed);
  w.u64(ds.regenerated);
  w.u64(ds.frames.size());
  const bool labeled = ds.labeled();
  w.u8(labeled ? 1 : 0);
  for (const auto& fr : ds.frames) {
    if (fr.truth.slots.size() != static_cast<std::size_t>(sc.frame_length()) ||
        fr.estimated.estimates.size() != static_cast<std::size_t>(sc.n_known)) {
      throw ShapeError("serialize_dataset: frame length disagrees with scenario");
    }
    w.f64(fr.truth.beta);
    for (const auto& s : fr.truth.slots) write_matrix(w, s);
    w.f64(fr.estimated.est_noise_variance);
    for (const auto& s : fr.estimated.estimates) write_matrix(w, s);
    if (labeled) {
      if (fr.labels.size() != static_cast<std::size_t>(sc.p_predict)) {
        throw ShapeError("serialize_dataset: label block length disagrees with P");
      }
      for (const auto& pp : fr.labels) {
        for (Eigen::Index k = 0; k < pp.q.size(); ++k) w.f64(pp.q[k]);
        for (Eigen::Index k = 0; k < pp.p.size(); ++k) w.f64(pp.p[k]);
      }
    }
  }
  return w.buffer();
}

Dataset deserialize_dataset(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  if (r.bytes(kDatasetMagic.size()) != kDatasetMagic) throw FormatError("dataset: bad magic");
  if (r.u32() != kDatasetVersion) throw FormatError("dataset: unsupported version");
  Dataset ds;
  auto& sc = ds.scenario;
  sc.n_t = static_cast<int>(r.u32());
  sc.k_users = static_cast<int>(r.u32());
  sc.n_known = static_cast<int>(r.u32());
  sc.p_predict = static_cast<int>(r.u32());
  sc.fd_ts = r.f64();
  sc.p_t_db = r.f64();
  const bool explicit_noise = r.u8() != 0;
  const double est_noise = r.f64();
  if (explicit_noise) sc.est_noise_variance = est_noise;
  sc.noise_variance = r.f64();
  const auto model = r.u32();
  if (model > 1) throw FormatError("dataset: unknown channel model");
  ds.generator.model = static_cast<ChannelModel>(model);
  ds.generator.n_paths = static_cast<int>(r.u32());
  const auto split = r.u8();
  if (split > 1) throw FormatError("dataset: unknown split");
  ds.split = static_cast<Split>(split);
  ds.seed = r.u64();
  ds.regenerated = r.u64();
  try {
    sc.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("dataset: invalid scenario block: ") + e.what());
  }
  const auto count = r.u64();
  const bool labeled = r.u8() != 0;
  ds.frames.resize(count);
  for (auto& fr : ds.frames) {
    fr.truth.beta = r.f64();
    for (int n = 0; n < sc.frame_length(); ++n) fr.truth.slots.push_back(read_matrix(r, sc.k_users, sc.n_t));
    fr.estimated.est_noise_variance = r.f64();
    for (int n = 0; n < sc.n_known; ++n) fr.estimated.estimates.push_back(read_matrix(r, sc.k_users, sc.n_t));
    if (labeled) {
      for (int m = 0; m < sc.p_predict; ++m) {
        PowerPair pp{RVector(sc.k_users), RVector(sc.k_users)};
        for (int k = 0; k < sc.k_users; ++k) pp.q[k] = r.f64();
        for (int k = 0; k < sc.k_users; ++k) pp.p[k] = r.f64();
        fr.labels.push_back(std::move(pp));
      }
    }
  }
  if (!r.at_end()) throw FormatError("dataset: trailing bytes");
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  io::write_bytes(path, serialize_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return deserialize_dataset(io::read_bytes(path)); }

void export_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "frame,slot,user,antenna,true_re,true_im,est_re,est_im\n";
  for (std::size_t f = 0; f < ds.frames.size(); ++f) {
    const auto& fr = ds.frames[f];
    for (std::size_t n = 0; n < fr.truth.slots.size(); ++n) {
      const CMatrix& h = fr.truth.slots[n];
      const bool known = n < fr.estimated.estimates.size();
      for (Eigen::Index k = 0; k < h.rows(); ++k) {
        for (Eigen::Index a = 0; a < h.cols(); ++a) {
          out << f << ',' << n << ',' << k << ',' << a << ',' << h(k, a).real() << ',' << h(k, a).imag()
              << ',';
          if (known) {
            const Complex e = fr.estimated.estimates[n](k, a);
            out << e.real() << ',' << e.imag();
          } else {
            out << ',';
          }
          out << '\n';
        }
      }
    }
  }
  io::write_text(path, out.str());
}

}  // namespace pbf
