#ifndef SPEECHENC_TIMESERIES_HPP
#define SPEECHENC_TIMESERIES_HPP

// Temporal preparation shared by features and responses.

#include "speechenc/core.hpp"
#include "speechenc/io.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace speechenc {

struct LanczosConfig {
  double target_rate_hz = 0.5;
  int lobes = 3;
  double cutoff_hz = 0.0;  // <= 0 means target Nyquist

  double effective_cutoff() const { return cutoff_hz > 0.0 ? cutoff_hz : target_rate_hz / 2.0; }
};

struct DelayConfig {
  std::vector<int> delays_tr{1, 2, 3, 4};
};

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

// Lanczos kernel with zero crossings at multiples of 1/(2 cutoff): a windowed
// sinc truncated after `lobes` lobes.
inline double lanczos_kernel(double dt, double cutoff_hz, int lobes) {
  const double u = 2.0 * cutoff_hz * dt;
  if (std::abs(u) >= lobes) return 0.0;
  return sinc(u) * sinc(u / lobes);
}

// Evaluates the Lanczos interpolant of `x` (sampled at `rate_hz`, first sample at
// t = 0) at arbitrary times. Weights are renormalized to sum 1 per output sample.
inline Matrix lanczos_interpolate(const Matrix& x, double rate_hz, const std::vector<double>& times,
                                  double cutoff_hz, int lobes) {
  require(rate_hz > 0.0, "lanczos: source rate must be positive");
  require(cutoff_hz > 0.0, "lanczos: cutoff must be positive");
  require(lobes >= 1, "lanczos: lobe count must be >= 1");
  const Index n_in = x.rows();
  const double half_width = lobes / (2.0 * cutoff_hz);
  Matrix out(static_cast<Index>(times.size()), x.cols());
  parallel_for(times.size(), [&](std::size_t j) {
    const double t = times[j];
    const auto lo = static_cast<Index>(std::max(0.0, std::ceil((t - half_width) * rate_hz)));
    const auto hi = static_cast<Index>(std::min<double>(static_cast<double>(n_in - 1),
                                                        std::floor((t + half_width) * rate_hz)));
    if (hi < lo) fail("lanczos: empty window at t=" + std::to_string(t));
    Vector w(hi - lo + 1);
    for (Index i = lo; i <= hi; ++i) w(i - lo) = lanczos_kernel(t - static_cast<double>(i) / rate_hz, cutoff_hz, lobes);
    const double total = w.sum();
    if (!(std::abs(total) > 1e-12)) fail("lanczos: empty window at t=" + std::to_string(t));
    w /= total;
    out.row(static_cast<Index>(j)).noalias() = w.transpose() * x.middleRows(lo, hi - lo + 1);
  });
  return out;
}

inline FeatureMatrix lanczos_resample(const FeatureMatrix& x, const LanczosConfig& cfg = {}) {
  require(cfg.target_rate_hz > 0.0, "lanczos: target rate must be positive");
  if (!(x.rate_hz > cfg.target_rate_hz))
    fail("lanczos: upsampling requested (" + std::to_string(x.rate_hz) + " Hz -> " +
         std::to_string(cfg.target_rate_hz) + " Hz)");
  const double cutoff = cfg.effective_cutoff();
  if (cutoff > x.rate_hz / 2.0) fail("lanczos: cutoff exceeds source Nyquist");
  const double duration = static_cast<double>(x.data.rows()) / x.rate_hz;
  // Small guard so an exact duration like 60 s at 0.5 Hz yields 30, not 29.
  const auto n_out = static_cast<Index>(std::floor(duration * cfg.target_rate_hz + 1e-9));
  if (n_out < 1) fail("lanczos: input shorter than one output sample");
  std::vector<double> times(static_cast<std::size_t>(n_out));
  for (Index j = 0; j < n_out; ++j) times[static_cast<std::size_t>(j)] = static_cast<double>(j) / cfg.target_rate_hz;
  FeatureMatrix out;
  out.data = lanczos_interpolate(x.data, x.rate_hz, times, cutoff, cfg.lobes);
  out.rate_hz = cfg.target_rate_hz;
  out.label = x.label;
  out.causal = x.causal;
  return out;
}

inline void validate_delays(const DelayConfig& cfg) {
  require(!cfg.delays_tr.empty(), "delays: empty delay list");
  for (std::size_t i = 0; i < cfg.delays_tr.size(); ++i) {
    require(cfg.delays_tr[i] >= 1, "delays: delays must be >= 1");
    if (i > 0) require(cfg.delays_tr[i] > cfg.delays_tr[i - 1], "delays: delays must be strictly increasing");
  }
}

// FIR expansion: block k holds the input shifted down by delays_tr[k] rows,
// zero-filled at the start.
inline Matrix fir_delays(const Matrix& x, const DelayConfig& cfg = {}) {
  validate_delays(cfg);
  const Index t = x.rows();
  const Index p = x.cols();
  const int max_delay = cfg.delays_tr.back();
  if (t <= max_delay)
    fail("fir_delays: need more than " + std::to_string(max_delay) + " rows, got " + std::to_string(t));
  Matrix out = Matrix::Zero(t, p * static_cast<Index>(cfg.delays_tr.size()));
  for (std::size_t k = 0; k < cfg.delays_tr.size(); ++k) {
    const Index d = cfg.delays_tr[k];
    out.block(d, static_cast<Index>(k) * p, t - d, p) = x.topRows(t - d);
  }
  return out;
}

// Window length in samples: nearest odd count to window_s / tr_s, ties upward.
inline Index savgol_window_length(double window_s, double tr_s) {
  require(window_s > 0.0 && tr_s > 0.0, "savgol: window and TR must be positive");
  auto n = static_cast<Index>(std::llround(window_s / tr_s));
  if (n % 2 == 0) ++n;
  return n;
}

// Subtracts a local least-squares polynomial fit (Savitzky-Golay smoother)
// from every column. Windows are truncated at the edges.
inline Matrix savgol_detrend(const Matrix& x, Index window, int order = 2) {
  require(order >= 0, "savgol: order must be >= 0");
  require(window % 2 == 1, "savgol: window must be odd");
  const Index t_len = x.rows();
  if (t_len < window)
    fail("savgol: series of " + std::to_string(t_len) + " samples shorter than window " + std::to_string(window));
  require(window > order, "savgol: window must exceed polynomial order");
  const Index half = window / 2;
  Matrix trend(t_len, x.cols());
  parallel_for(static_cast<std::size_t>(t_len), [&](std::size_t ts) {
    const auto t = static_cast<Index>(ts);
    const Index lo = std::max<Index>(0, t - half);
    const Index hi = std::min<Index>(t_len - 1, t + half);
    const Index n = hi - lo + 1;
    Matrix design(n, order + 1);
    for (Index i = 0; i < n; ++i) {
      const double u = static_cast<double>(lo + i - t) / static_cast<double>(std::max<Index>(half, 1));
      double pw = 1.0;
      for (int k = 0; k <= order; ++k) {
        design(i, k) = pw;
        pw *= u;
      }
    }
    // Weights that evaluate the fitted polynomial at offset 0.
    const Matrix gram = design.transpose() * design;
    Vector e0 = Vector::Zero(order + 1);
    e0(0) = 1.0;
    const Vector c = gram.ldlt().solve(e0);
    const Vector w = design * c;
    trend.row(t).noalias() = w.transpose() * x.middleRows(lo, n);
  });
  return x - trend;
}

inline ResponseMatrix savgol_detrend(const ResponseMatrix& r, double window_s = 120.0, int order = 2) {
  ResponseMatrix out = r;
  out.data = savgol_detrend(r.data, savgol_window_length(window_s, r.tr_seconds), order);
  return out;
}

inline Matrix trim_edges(const Matrix& x, Index n_tr = 10) {
  require(n_tr >= 0, "trim: negative trim length");
  if (x.rows() <= 2 * n_tr)
    fail("trim: " + std::to_string(x.rows()) + " rows too short to trim " + std::to_string(n_tr) + " from each end");
  return x.middleRows(n_tr, x.rows() - 2 * n_tr);
}

inline ResponseMatrix trim_edges(const ResponseMatrix& r, Index n_tr = 10) {
  ResponseMatrix out = r;
  out.data = trim_edges(r.data, n_tr);
  return out;
}

inline FeatureMatrix trim_edges(const FeatureMatrix& f, Index n_tr = 10) {
  FeatureMatrix out = f;
  out.data = trim_edges(f.data, n_tr);
  return out;
}

// Population (1/N) z-scoring per column.
inline Matrix zscore_columns(const Matrix& x) {
  require(x.rows() >= 2, "zscore: need at least 2 rows");
  Matrix out(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const Vector centered = x.col(j).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(x.rows());
    if (!(var > 1e-24 * std::max(1.0, mean * mean))) fail("zscore: column " + std::to_string(j) + " is constant");
    out.col(j) = centered / std::sqrt(var);
  }
  return out;
}

inline ResponseMatrix zscore_columns(const ResponseMatrix& r) {
  ResponseMatrix out = r;
  out.data = zscore_columns(r.data);
  return out;
}

inline FeatureMatrix zscore_columns(const FeatureMatrix& f) {
  FeatureMatrix out = f;
  out.data = zscore_columns(f.data);
  return out;
}

struct PreprocessConfig {
  double window_s = 120.0;
  int order = 2;
  Index trim_tr = 10;
};

// Detrend, trim both ends, then z-score: the full per-story response preparation.
inline ResponseMatrix preprocess_responses(const ResponseMatrix& r, const PreprocessConfig& cfg = {}) {
  ResponseMatrix out = zscore_columns(trim_edges(savgol_detrend(r, cfg.window_s, cfg.order), cfg.trim_tr));
  out.preprocessed = true;
  return out;
}

}  // namespace speechenc

#endif  // SPEECHENC_TIMESERIES_HPP
