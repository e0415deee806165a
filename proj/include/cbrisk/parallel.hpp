#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cbrisk::par {

// Exceptions may not escape an OpenMP region; the first one thrown by any
// task is captured and rethrown after the loop.
class ExceptionCollector {
 public:
  template <class F>
  void run(F&& f) noexcept {
    try {
      f();
    } catch (...) {
      std::lock_guard<std::mutex> lock(mutex_);
      if (!captured_) captured_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (captured_) std::rethrow_exception(captured_);
  }

 private:
  std::mutex mutex_;
  std::exception_ptr captured_;
};

// Global toggle for the serial reference path. The OpenMP kernels and the
// serial path must produce bit-identical results; tests compare the two.
inline bool& serial_flag() {
  static bool flag = false;
  return flag;
}
inline void set_serial(bool s) { serial_flag() = s; }
inline bool serial() { return serial_flag(); }

inline void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

/// Deterministic sum of v[0..n): fixed pairwise tree, independent of thread
/// count and chunking upstream.
inline double pairwise_sum(const double* v, std::int64_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  std::int64_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

inline double pairwise_sum(const std::vector<double>& v) {
  return pairwise_sum(v.data(), static_cast<std::int64_t>(v.size()));
}

/// out[i] = f(i) for i in [0, n), computed in parallel. f must be a pure
/// function of its index (each task derives its own RNG substream).
template <class F>
void fill_indexed(std::int64_t n, double* out, F&& f) {
#ifdef _OPENMP
  if (!serial()) {
    ExceptionCollector errors;
#pragma omp parallel for schedule(dynamic, 64)
    for (std::int64_t i = 0; i < n; ++i)
      errors.run([&] { out[i] = f(i); });
    errors.rethrow();
    return;
  }
#endif
  for (std::int64_t i = 0; i < n; ++i) out[i] = f(i);
}

/// Sum of f(i) over [0, n) without materializing all n values: fixed-size
/// chunks are summed serially in index order, chunk partials reduced by the
/// pairwise tree. Result is identical for any thread count.
template <class F>
double sum_indexed(std::int64_t n, F&& f, std::int64_t chunk = 4096) {
  if (n <= 0) return 0.0;
  std::int64_t nchunks = (n + chunk - 1) / chunk;
  std::vector<double> partial(static_cast<std::size_t>(nchunks));
  auto chunk_sum = [&](std::int64_t c) {
    std::int64_t lo = c * chunk;
    std::int64_t hi = lo + chunk < n ? lo + chunk : n;
    double s = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) s += f(i);
    return s;
  };
#ifdef _OPENMP
  if (!serial()) {
    ExceptionCollector errors;
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t c = 0; c < nchunks; ++c)
      errors.run([&] { partial[c] = chunk_sum(c); });
    errors.rethrow();
    return pairwise_sum(partial);
  }
#endif
  for (std::int64_t c = 0; c < nchunks; ++c) partial[c] = chunk_sum(c);
  return pairwise_sum(partial);
}

struct MeanVar {
  double mean = 0.0;
  double var = 0.0;  // sample variance, 1/(n-1)
  double se = 0.0;   // standard error of the mean
  std::int64_t n = 0;
};

/// Mean/variance of f(i) over [0, n) via chunked (sum, sumsq) accumulation.
template <class F>
MeanVar mean_var_indexed(std::int64_t n, F&& f, std::int64_t chunk = 4096) {
  std::int64_t nchunks = (n + chunk - 1) / chunk;
  std::vector<double> psum(static_cast<std::size_t>(nchunks));
  std::vector<double> psq(static_cast<std::size_t>(nchunks));
  auto chunk_acc = [&](std::int64_t c) {
    std::int64_t lo = c * chunk;
    std::int64_t hi = lo + chunk < n ? lo + chunk : n;
    double s = 0.0, q = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) {
      double v = f(i);
      s += v;
      q += v * v;
    }
    psum[c] = s;
    psq[c] = q;
  };
#ifdef _OPENMP
  if (!serial()) {
    ExceptionCollector errors;
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t c = 0; c < nchunks; ++c)
      errors.run([&] { chunk_acc(c); });
    errors.rethrow();
  } else
#endif
  {
    for (std::int64_t c = 0; c < nchunks; ++c) chunk_acc(c);
  }
  MeanVar mv;
  mv.n = n;
  double sum = pairwise_sum(psum);
  double sq = pairwise_sum(psq);
  mv.mean = sum / static_cast<double>(n);
  if (n > 1) {
    double ss = sq - static_cast<double>(n) * mv.mean * mv.mean;
    if (ss < 0.0) ss = 0.0;
    mv.var = ss / static_cast<double>(n - 1);
    mv.se = std::sqrt(mv.var / static_cast<double>(n));
  }
  return mv;
}

/// Mean/variance/SE of a stored sample.
inline MeanVar summarize(const std::vector<double>& v) {
  MeanVar mv;
  mv.n = static_cast<std::int64_t>(v.size());
  if (mv.n == 0) return mv;
  mv.mean = pairwise_sum(v) / static_cast<double>(mv.n);
  if (mv.n > 1) {
    std::vector<double> dev2(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double d = v[i] - mv.mean;
      dev2[i] = d * d;
    }
    mv.var = pairwise_sum(dev2) / static_cast<double>(mv.n - 1);
    mv.se = std::sqrt(mv.var / static_cast<double>(mv.n));
  }
  return mv;
}

}  // namespace cbrisk::par
