#include "pbf/metrics.hpp"

#include <cmath>

namespace pbf {

double nmse(std::span<const CMatrix> truth, std::span<const CMatrix> pred) {
  if (truth.size() != pred.size()) throw ShapeError("nmse: block length mismatch");
  double err = 0.0;
  double ref = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].rows() != pred[i].rows() || truth[i].cols() != pred[i].cols()) {
      throw ShapeError("nmse: matrix shape mismatch");
    }
    err += (truth[i] - pred[i]).squaredNorm();
    ref += truth[i].squaredNorm();
  }
  if (!(ref > 0.0)) throw DomainError("nmse: truth block is all zero");
  return err / ref;
}

double nmse(std::span<const std::vector<CMatrix>> truth, std::span<const std::vector<CMatrix>> pred) {
  if (truth.size() != pred.size() || truth.empty()) throw ShapeError("nmse: frame count mismatch");
  double sum = 0.0;
  for (std::size_t f = 0; f < truth.size(); ++f) sum += nmse(std::span(truth[f]), std::span(pred[f]));
  return sum / static_cast<double>(truth.size());
}

double effective_sum_rate(double r_e, double r_p, int n, int p, double alpha) {
  if (n < 0 || p < 0 || n + p == 0) throw DomainError("effective_sum_rate: need n, p >= 0 and n + p > 0");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw DomainError("effective_sum_rate: alpha must lie in [0, 1)");
  return ((1.0 - alpha) * n * r_e + p * r_p) / static_cast<double>(n + p);
}

MeanStat mean_stat(std::span<const double> values) {
  MeanStat s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stderr_mean = std::sqrt(ss / static_cast<double>(values.size() - 1) / static_cast<double>(values.size()));
  }
  return s;
}

}  // namespace pbf
