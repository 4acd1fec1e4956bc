#pragma once

#include <span>
#include <vector>

#include "pbf/numerics.hpp"

namespace pbf {

/// ||H - H~||_F^2 / ||H||_F^2 over a block of matrices. Throws DomainError for all-zero truth.
double nmse(std::span<const CMatrix> truth, std::span<const CMatrix> pred);

/// Mean of the per-frame ratios, one block per frame.
double nmse(std::span<const std::vector<CMatrix>> truth, std::span<const std::vector<CMatrix>> pred);

/// R_E = ((1 - alpha) N R_e + P R_p) / (N + P).
double effective_sum_rate(double r_e, double r_p, int n, int p, double alpha);

/// Sample mean and standard error of the mean.
struct MeanStat {
  double mean = 0.0;
  double stderr_mean = 0.0;
  std::size_t count = 0;
};
MeanStat mean_stat(std::span<const double> values);

}  // namespace pbf
