#ifndef SPEECHENC_CORE_HPP
#define SPEECHENC_CORE_HPP

// Shared types and small utilities used by every speechenc module.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace speechenc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& what) { throw Error(what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(what);
}

// Worker count used by the parallel helpers. Results never depend on it:
// every parallel loop writes disjoint outputs and reductions run in index order.
inline std::atomic<int>& worker_count() {
  static std::atomic<int> n{1};
  return n;
}

inline void set_threads(int n) { worker_count().store(std::max(1, n)); }
inline int threads() { return worker_count().load(); }

inline bool& inside_parallel_region() {
  thread_local bool inside = false;
  return inside;
}

// Runs fn(i) for i in [0, n). The first exception thrown by any worker is rethrown.
// Nested calls run serially on the calling worker.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::min<std::size_t>(threads(), n));
  if (workers <= 1 || inside_parallel_region()) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    const bool was_inside = inside_parallel_region();
    inside_parallel_region() = true;
    struct Restore {
      bool v;
      ~Restore() { inside_parallel_region() = v; }
    } restore{was_inside};
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Deterministic generator for a (seed, stream) pair; streams keep independent
// consumers (CV iterations, stories, probe seeds) from sharing draws.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// Uniform integer in [0, n) from raw engine output; portable across standard libraries.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

template <class T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Box-Muller on uniform01 so draws do not depend on the standard library.
inline double normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline Matrix normal_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Pearson correlation of two equally long sequences; NaN when either is constant.
template <class A, class B>
double pearson(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const Index n = a.size();
  require(n == b.size(), "pearson: length mismatch");
  const double ma = a.mean();
  const double mb = b.mean();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double da = a(i) - ma;
    const double db = b(i) - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// Column-wise Pearson correlation between two matrices of equal shape.
inline Vector column_correlations(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "column_correlations: shape mismatch");
  Vector r(a.cols());
  for (Index j = 0; j < a.cols(); ++j) r(j) = pearson(a.col(j), b.col(j));
  return r;
}

// n log-spaced values from lo to hi inclusive.
inline std::vector<double> logspace(double lo, double hi, int n) {
  require(lo > 0.0 && hi >= lo && n >= 1, "logspace: invalid range");
  std::vector<double> out(static_cast<std::size_t>(n));
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = std::pow(10.0, a + (b - a) * i / (n - 1));
  return out;
}

inline Matrix select_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

inline Matrix vstack(const std::vector<Matrix>& parts) {
  require(!parts.empty(), "vstack: no parts");
  Index rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == parts.front().cols(), "vstack: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, parts.front().cols());
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

inline Matrix hstack(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "hstack: row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

}  // namespace speechenc

#endif  // SPEECHENC_CORE_HPP
