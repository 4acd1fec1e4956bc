#include "pbf/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

namespace pbf {

RngStream::RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

RngStream RngStream::derive(std::initializer_list<std::uint64_t> tags) const {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * tags.size());
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed_);
  for (auto t : tags) push(t);
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return RngStream((static_cast<std::uint64_t>(out[1]) << 32) | out[0]);
}

double RngStream::normal() {
  ++draws_;
  return normal_(engine_);
}

double RngStream::uniform() {
  ++draws_;
  return uniform_(engine_);
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t RngStream::next_u64() {
  ++draws_;
  return engine_();
}

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

ComplexTensor::ComplexTensor(std::vector<std::size_t> dims)
    : shape(std::move(dims)), data(CVector::Zero(static_cast<Eigen::Index>(shape_product(shape)))) {}

CMatrix ComplexTensor::matrix() const {
  if (shape.size() != 2) throw ShapeError("ComplexTensor::matrix: tensor is not rank 2");
  const auto rows = static_cast<Eigen::Index>(shape[0]);
  const auto cols = static_cast<Eigen::Index>(shape[1]);
  CMatrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[r * cols + c];
  return m;
}

ComplexTensor sample_complex_gaussian(const std::vector<std::size_t>& shape, double variance,
                                      RngStream& rng) {
  if (!(variance >= 0.0)) throw DomainError("sample_complex_gaussian: negative variance");
  ComplexTensor t(shape);
  const double s = std::sqrt(variance / 2.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double re = rng.normal();
    const double im = rng.normal();
    t[i] = Complex(s * re, s * im);
  }
  return t;
}

CMatrix sample_complex_gaussian(Eigen::Index rows, Eigen::Index cols, double variance,
                                RngStream& rng) {
  if (!(variance >= 0.0)) throw DomainError("sample_complex_gaussian: negative variance");
  CMatrix m(rows, cols);
  const double s = std::sqrt(variance / 2.0);
  // Row-major fill so the draw order matches the tensor overload.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double re = rng.normal();
      const double im = rng.normal();
      m(r, c) = Complex(s * re, s * im);
    }
  return m;
}

namespace {

Eigen::LLT<CMatrix> factor(const CMatrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("hermitian_solve: matrix is not square");
  Eigen::LLT<CMatrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw SingularityError("hermitian_solve: matrix is not positive definite");
  }
  // LLT only reports failure on non-positive pivots; tiny ones still mean singular.
  const auto diag = llt.matrixLLT().diagonal().real();
  if (diag.minCoeff() <= 1e-150 || !diag.allFinite()) {
    throw SingularityError("hermitian_solve: matrix is numerically singular");
  }
  return llt;
}

}  // namespace

CVector hermitian_solve(const CMatrix& a, const CVector& b) {
  if (b.size() != a.rows()) throw ShapeError("hermitian_solve: right-hand side size mismatch");
  return factor(a).solve(b);
}

CMatrix hermitian_solve(const CMatrix& a, const CMatrix& b) {
  if (b.rows() != a.rows()) throw ShapeError("hermitian_solve: right-hand side size mismatch");
  return factor(a).solve(b);
}

int worker_count() {
  if (const char* env = std::getenv("PBF_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace pbf
