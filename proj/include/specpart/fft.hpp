#pragma once

// Batched 3-D complex FFTs on [i1][i2][i3][batch] arrays via FFTW.
// Plans are created with FFTW_ESTIMATE so the chosen algorithm, and hence the
// rounding, does not depend on timing.

#include "specpart/core.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

namespace specpart {

namespace detail {

struct FftPlanCache {
  std::mutex mu;
  std::map<std::tuple<int, int, int, int, int>, fftw_plan> plans;
  ~FftPlanCache() {
    for (auto& [k, p] : plans) fftw_destroy_plan(p);
  }
};

inline FftPlanCache& fft_plan_cache() {
  static FftPlanCache cache;
  return cache;
}

inline fftw_plan fft_plan(int n1, int n2, int n3, int batch, int sign) {
  auto& cache = fft_plan_cache();
  std::lock_guard lock(cache.mu);
  auto key = std::make_tuple(n1, n2, n3, batch, sign);
  if (auto it = cache.plans.find(key); it != cache.plans.end()) return it->second;
  const std::size_t total = static_cast<std::size_t>(n1) * n2 * n3 * batch;
  auto* buf = fftw_alloc_complex(total);
  int dims[3] = {n1, n2, n3};
  fftw_plan p = fftw_plan_many_dft(3, dims, batch, buf, nullptr, batch, 1, buf, nullptr, batch, 1, sign,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
  fftw_free(buf);
  require(p != nullptr, ErrorKind::Precondition, "FFTW plan creation failed");
  cache.plans.emplace(key, p);
  return p;
}

}  // namespace detail

// In-place transform, unnormalized. sign = +1 computes sum c e^{+i k x}
// (synthesis), sign = -1 the analysis direction.
inline void fft3(std::vector<Complex>& data, int n1, int n2, int n3, int batch, int sign) {
  require(data.size() == static_cast<std::size_t>(n1) * n2 * n3 * batch, ErrorKind::DimensionMismatch,
          "fft3 buffer size");
  fftw_plan p = detail::fft_plan(n1, n2, n3, batch, sign > 0 ? FFTW_BACKWARD : FFTW_FORWARD);
  auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(p, ptr, ptr);
}

}  // namespace specpart
