#ifndef SPEECHENC_RIDGE_HPP
#define SPEECHENC_RIDGE_HPP

// Ridge and banded ridge regression with per-voxel regularization chosen by
// chunked cross-validation.

#include "speechenc/core.hpp"
#include "speechenc/io.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace speechenc {

struct CvPlan {
  int n_iterations = 50;
  int n_chunks = 40;
  int chunk_len_tr = 10;
  std::uint64_t seed = 0;
};

struct ChunkRange {
  Index start = 0;
  Index length = 0;
};

inline std::vector<double> default_lambda_grid() { return logspace(1e-2, 1e5, 15); }

inline void validate_plan(Index t_train, const CvPlan& plan) {
  require(plan.n_iterations >= 1, "cv plan: n_iterations must be >= 1");
  require(plan.n_chunks >= 1 && plan.chunk_len_tr >= 1, "cv plan: chunks must be non-empty");
  const double held = static_cast<double>(plan.n_chunks) * plan.chunk_len_tr;
  if (!(held < 0.5 * static_cast<double>(t_train)))
    fail("cv plan: holding out " + std::to_string(static_cast<long long>(held)) + " of " +
         std::to_string(t_train) + " rows would exceed 50% of the training data");
}

// Held-out chunks for one CV iteration. Chunks sit on a grid of chunk_len_tr
// blocks with a random phase, so they never overlap; the draw depends only on
// (seed, iteration).
inline std::vector<ChunkRange> sample_chunks(Index t_train, const CvPlan& plan, int iteration) {
  validate_plan(t_train, plan);
  auto rng = make_rng(plan.seed, 0x43565f4954ULL + static_cast<std::uint64_t>(iteration));
  const Index len = plan.chunk_len_tr;
  const auto offset = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(len)));
  const Index n_blocks = (t_train - offset) / len;
  if (n_blocks < plan.n_chunks) fail("cv plan: cannot place chunks disjointly");
  std::vector<Index> blocks(static_cast<std::size_t>(n_blocks));
  std::iota(blocks.begin(), blocks.end(), Index{0});
  shuffle(blocks, rng);
  blocks.resize(static_cast<std::size_t>(plan.n_chunks));
  std::sort(blocks.begin(), blocks.end());
  std::vector<ChunkRange> out;
  out.reserve(blocks.size());
  for (Index b : blocks) out.push_back({offset + b * len, len});
  return out;
}

// Splits [0, t) into rows inside the chunks and rows outside.
inline std::pair<std::vector<Index>, std::vector<Index>> split_rows(Index t, const std::vector<ChunkRange>& chunks) {
  std::vector<char> held(static_cast<std::size_t>(t), 0);
  for (const auto& c : chunks)
    for (Index i = c.start; i < c.start + c.length; ++i) held[static_cast<std::size_t>(i)] = 1;
  std::vector<Index> train, test;
  for (Index i = 0; i < t; ++i) (held[static_cast<std::size_t>(i)] ? test : train).push_back(i);
  return {std::move(train), std::move(test)};
}

// One SVD of the design, reused for every regularization value:
// weights(lambda) = V diag(s / (s^2 + lambda)) U^T Y.
class RidgePath {
 public:
  RidgePath(const Matrix& x, const Matrix& y) {
    require(x.rows() == y.rows(), "ridge: X and Y row counts differ");
    require(x.rows() >= 2, "ridge: need at least 2 rows");
    require(all_finite(x) && all_finite(y), "ridge: non-finite input");
    Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) fail("ridge: SVD failed");
    s_ = svd.singularValues();
    v_ = svd.matrixV();
    uty_.noalias() = svd.matrixU().transpose() * y;
    const double smax = s_.size() > 0 ? s_(0) : 0.0;
    tol_ = smax * static_cast<double>(std::max(x.rows(), x.cols())) * std::numeric_limits<double>::epsilon();
  }

  Vector shrinkage(double lambda) const {
    if (lambda < 0.0) fail("ridge: negative lambda");
    Vector d(s_.size());
    for (Index i = 0; i < s_.size(); ++i) {
      const double s = s_(i);
      d(i) = (lambda == 0.0 && s <= tol_) ? 0.0 : s / (s * s + lambda);
    }
    return d;
  }

  Matrix weights(double lambda) const { return v_ * (shrinkage(lambda).asDiagonal() * uty_); }

  Vector weights(double lambda, Index target) const { return v_ * (shrinkage(lambda).asDiagonal() * uty_.col(target)); }

  const Vector& singular_values() const { return s_; }
  const Matrix& right_vectors() const { return v_; }
  const Matrix& projected_targets() const { return uty_; }

 private:
  Vector s_;
  Matrix v_;
  Matrix uty_;
  double tol_ = 0.0;
};

inline std::vector<Matrix> svd_ridge_path(const Matrix& x, const Matrix& y, const std::vector<double>& grid) {
  for (double l : grid)
    if (l < 0.0) fail("ridge: negative lambda");
  const RidgePath path(x, y);
  std::vector<Matrix> out;
  out.reserve(grid.size());
  for (double l : grid) out.push_back(path.weights(l));
  return out;
}

struct RidgeFit {
  Matrix weights;                  // P x V, original feature units
  std::vector<double> grid;        // lambda per candidate (band 1 for banded fits)
  std::vector<double> grid2;       // band-2 lambda per candidate; empty for plain ridge
  std::vector<int> lambda_index;   // chosen candidate per voxel
  Vector lambda_per_voxel;
  Vector lambda2_per_voxel;        // banded fits only
  Matrix cv_curve;                 // candidates x V mean held-out correlation
  std::vector<char> degenerate;    // zero-variance voxel in some held-out fold
  std::vector<char> no_signal;     // best CV correlation below 2/sqrt(held-out rows)
  std::vector<std::pair<Index, Index>> bands;  // (first column, column count); banded fits only
  std::uint64_t seed = 0;

  bool banded() const { return !grid2.empty(); }
  Index n_voxels() const { return weights.cols(); }
};

namespace detail {

inline void validate_grid(const std::vector<double>& grid) {
  if (grid.empty()) fail("ridge: lambda grid is empty");
  for (double l : grid)
    if (!(l >= 0.0) || !std::isfinite(l)) fail("ridge: lambda values must be finite and >= 0");
}

// Scores every candidate on the held-out rows of one iteration.
// `scale` multiplies each design column before the SVD; candidates[c] is the
// ridge penalty applied to the scaled design.
struct CandidateGroup {
  Vector column_scale;
  std::vector<std::pair<int, double>> candidates;  // (candidate index, lambda on scaled design)
};

inline Matrix score_iteration(const Matrix& x, const Matrix& y, const std::vector<CandidateGroup>& groups,
                              std::size_t n_candidates, const CvPlan& plan, int iteration) {
  const auto chunks = sample_chunks(x.rows(), plan, iteration);
  const auto [train_rows, test_rows] = split_rows(x.rows(), chunks);
  const Matrix y_tr = select_rows(y, train_rows);
  const Matrix y_te = select_rows(y, test_rows);
  const Matrix x_tr_raw = select_rows(x, train_rows);
  const Matrix x_te_raw = select_rows(x, test_rows);
  Matrix curve = Matrix::Constant(static_cast<Index>(n_candidates), y.cols(), std::numeric_limits<double>::quiet_NaN());
  for (const auto& g : groups) {
    const Matrix x_tr = x_tr_raw * g.column_scale.asDiagonal();
    const Matrix x_te = x_te_raw * g.column_scale.asDiagonal();
    const RidgePath path(x_tr, y_tr);
    const Matrix xv = x_te * path.right_vectors();
    for (const auto& [c, lambda] : g.candidates) {
      const Matrix pred = xv * (path.shrinkage(lambda).asDiagonal() * path.projected_targets());
      curve.row(c) = column_correlations(y_te, pred).transpose();
    }
  }
  return curve;
}

// Averages fold curves in iteration order and picks the best candidate per voxel.
inline void select_candidates(RidgeFit& fit, const std::vector<Matrix>& curves, Index n_heldout) {
  const Index n_cand = curves.front().rows();
  const Index n_vox = curves.front().cols();
  fit.cv_curve = Matrix::Zero(n_cand, n_vox);
  fit.degenerate.assign(static_cast<std::size_t>(n_vox), 0);
  fit.no_signal.assign(static_cast<std::size_t>(n_vox), 0);
  for (const auto& c : curves) fit.cv_curve += c;
  fit.cv_curve /= static_cast<double>(curves.size());
  fit.lambda_index.assign(static_cast<std::size_t>(n_vox), static_cast<int>(n_cand - 1));
  const double null_bound = 2.0 / std::sqrt(static_cast<double>(n_heldout));
  for (Index v = 0; v < n_vox; ++v) {
    if (!fit.cv_curve.col(v).allFinite()) {
      fit.degenerate[static_cast<std::size_t>(v)] = 1;
      fit.no_signal[static_cast<std::size_t>(v)] = 1;
      continue;  // falls back to the largest penalty
    }
    int best = 0;
    double best_r = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < n_cand; ++c) {
      if (fit.cv_curve(c, v) >= best_r) {  // ties go to the later (larger) penalty
        best_r = fit.cv_curve(c, v);
        best = static_cast<int>(c);
      }
    }
    fit.lambda_index[static_cast<std::size_t>(v)] = best;
    fit.no_signal[static_cast<std::size_t>(v)] = best_r < null_bound ? 1 : 0;
  }
}

inline std::vector<Matrix> run_cv(const Matrix& x, const Matrix& y, const std::vector<CandidateGroup>& groups,
                                  std::size_t n_candidates, const CvPlan& plan) {
  std::vector<Matrix> curves(static_cast<std::size_t>(plan.n_iterations));
  parallel_for(curves.size(), [&](std::size_t it) {
    curves[it] = score_iteration(x, y, groups, n_candidates, plan, static_cast<int>(it));
  });
  return curves;
}

}  // namespace detail

// Per-voxel ridge with the penalty chosen by chunked CV (mean held-out Pearson r
// over iterations), then refit on all rows at each voxel's chosen penalty.
// The grid is sorted ascending; ties resolve to the larger penalty.
inline RidgeFit fit_ridge_cv(const Matrix& x, const Matrix& y, std::vector<double> grid, const CvPlan& plan = {}) {
  require(x.rows() == y.rows(), "fit_ridge_cv: X and Y row counts differ");
  detail::validate_grid(grid);
  std::sort(grid.begin(), grid.end());
  validate_plan(x.rows(), plan);

  detail::CandidateGroup group{Vector::Ones(x.cols()), {}};
  for (std::size_t c = 0; c < grid.size(); ++c) group.candidates.emplace_back(static_cast<int>(c), grid[c]);
  const std::vector<detail::CandidateGroup> groups{group};
  const auto curves = detail::run_cv(x, y, groups, grid.size(), plan);

  RidgeFit fit;
  fit.grid = grid;
  fit.seed = plan.seed;
  detail::select_candidates(fit, curves, static_cast<Index>(plan.n_chunks) * plan.chunk_len_tr);

  const RidgePath full(x, y);
  fit.weights.resize(x.cols(), y.cols());
  fit.lambda_per_voxel.resize(y.cols());
  std::vector<Vector> shrink(grid.size());
  for (std::size_t c = 0; c < grid.size(); ++c) shrink[c] = full.shrinkage(grid[c]);
  parallel_for(static_cast<std::size_t>(y.cols()), [&](std::size_t vs) {
    const auto v = static_cast<Index>(vs);
    const auto c = static_cast<std::size_t>(fit.lambda_index[vs]);
    fit.weights.col(v) = full.right_vectors() * shrink[c].cwiseProduct(full.projected_targets().col(v));
    fit.lambda_per_voxel(v) = grid[c];
  });
  return fit;
}

inline Matrix predict(const RidgeFit& fit, const Matrix& x) {
  if (x.cols() != fit.weights.rows())
    fail("predict: feature count " + std::to_string(x.cols()) + " does not match weights " +
         std::to_string(fit.weights.rows()));
  return x * fit.weights;
}

// ---------------------------------------------------------------------------
// Banded ridge

struct BandedConfig {
  std::vector<std::pair<Index, Index>> band_slices;  // (first column, column count)
  std::vector<double> grid1 = logspace(1e-2, 1e5, 10);
  std::vector<double> grid2 = logspace(1e-2, 1e5, 10);
};

inline void validate_bands(const std::vector<std::pair<Index, Index>>& bands, Index n_cols) {
  if (bands.size() != 2) fail("banded ridge: exactly 2 bands are supported");
  auto sorted = bands;
  std::sort(sorted.begin(), sorted.end());
  Index at = 0;
  for (const auto& [start, len] : sorted) {
    if (len <= 0) fail("banded ridge: empty band");
    if (start < at) fail("banded ridge: band overlap");
    if (start > at) fail("banded ridge: bands leave columns uncovered");
    at = start + len;
  }
  if (at != n_cols) fail("banded ridge: bands do not cover all columns");
}

// Direct solve of min ||Y - X b||^2 + sum_i lambda_i ||b_band_i||^2 via the
// reparameterization X_i -> X_i / sqrt(lambda_i) with unit penalty.
inline Matrix banded_ridge_solve(const Matrix& x, const Matrix& y, const std::vector<std::pair<Index, Index>>& bands,
                                 const std::vector<double>& lambdas) {
  validate_bands(bands, x.cols());
  require(lambdas.size() == bands.size(), "banded ridge: one lambda per band required");
  Vector scale(x.cols());
  for (std::size_t b = 0; b < bands.size(); ++b) {
    require(lambdas[b] > 0.0, "banded ridge: lambdas must be positive");
    scale.segment(bands[b].first, bands[b].second).setConstant(1.0 / std::sqrt(lambdas[b]));
  }
  const RidgePath path(x * scale.asDiagonal(), y);
  return scale.asDiagonal() * path.weights(1.0);
}

// Banded ridge over two column bands with per-voxel (lambda1, lambda2) chosen on
// the grid1 x grid2 product by the same chunk plan as fit_ridge_cv. Candidates
// sharing a lambda2/lambda1 ratio share one SVD per fold: band 2 is scaled by
// sqrt(lambda1/lambda2) and the scaled problem is solved at penalty lambda1.
inline RidgeFit banded_ridge_fit(const Matrix& x, const Matrix& y, BandedConfig cfg, const CvPlan& plan = {}) {
  require(x.rows() == y.rows(), "banded ridge: X and Y row counts differ");
  if (cfg.grid1.empty() || cfg.grid2.empty()) fail("banded ridge: grid empty");
  detail::validate_grid(cfg.grid1);
  detail::validate_grid(cfg.grid2);
  for (double l : cfg.grid1) require(l > 0.0, "banded ridge: lambdas must be positive");
  for (double l : cfg.grid2) require(l > 0.0, "banded ridge: lambdas must be positive");
  validate_bands(cfg.band_slices, x.cols());
  validate_plan(x.rows(), plan);
  std::sort(cfg.grid1.begin(), cfg.grid1.end());
  std::sort(cfg.grid2.begin(), cfg.grid2.end());

  const auto& band2 = cfg.band_slices[1];
  RidgeFit fit;
  fit.bands = cfg.band_slices;
  fit.seed = plan.seed;

  // Candidate order: grid1-major, grid2-minor.
  std::vector<detail::CandidateGroup> groups;
  std::vector<double> group_ratio;
  std::vector<std::size_t> candidate_group;
  for (double l1 : cfg.grid1) {
    for (double l2 : cfg.grid2) {
      const int c = static_cast<int>(fit.grid.size());
      fit.grid.push_back(l1);
      fit.grid2.push_back(l2);
      const double ratio = l2 / l1;
      std::size_t g = 0;
      while (g < groups.size() && std::abs(group_ratio[g] - ratio) > 1e-12 * std::max(ratio, group_ratio[g])) ++g;
      if (g == groups.size()) {
        Vector scale = Vector::Ones(x.cols());
        scale.segment(band2.first, band2.second).setConstant(std::sqrt(1.0 / ratio));
        groups.push_back({scale, {}});
        group_ratio.push_back(ratio);
      }
      groups[g].candidates.emplace_back(c, l1);
      candidate_group.push_back(g);
    }
  }

  const auto curves = detail::run_cv(x, y, groups, fit.grid.size(), plan);
  detail::select_candidates(fit, curves, static_cast<Index>(plan.n_chunks) * plan.chunk_len_tr);

  fit.weights.resize(x.cols(), y.cols());
  fit.lambda_per_voxel.resize(y.cols());
  fit.lambda2_per_voxel.resize(y.cols());
  std::map<std::size_t, std::vector<Index>> voxels_by_group;
  for (Index v = 0; v < y.cols(); ++v)
    voxels_by_group[candidate_group[static_cast<std::size_t>(fit.lambda_index[static_cast<std::size_t>(v)])]].push_back(v);
  std::vector<std::pair<std::size_t, std::vector<Index>>> work(voxels_by_group.begin(), voxels_by_group.end());
  parallel_for(work.size(), [&](std::size_t w) {
    const auto& [g, voxels] = work[w];
    const Vector& scale = groups[g].column_scale;
    const RidgePath path(x * scale.asDiagonal(), y);
    for (Index v : voxels) {
      const auto c = static_cast<std::size_t>(fit.lambda_index[static_cast<std::size_t>(v)]);
      fit.weights.col(v) = scale.asDiagonal() * path.weights(fit.grid[c], v);
      fit.lambda_per_voxel(v) = fit.grid[c];
      fit.lambda2_per_voxel(v) = fit.grid2[c];
    }
  });
  return fit;
}

// ---------------------------------------------------------------------------
// Serialization: "<prefix>.weights.mtx" plus "<prefix>.json".

inline json ridge_fit_json(const RidgeFit& fit) {
  json j{{"grid", fit.grid},
         {"lambda_index", fit.lambda_index},
         {"seed", fit.seed},
         {"n_features", fit.weights.rows()},
         {"n_voxels", fit.weights.cols()}};
  std::vector<int> degenerate(fit.degenerate.begin(), fit.degenerate.end());
  std::vector<int> no_signal(fit.no_signal.begin(), fit.no_signal.end());
  j["degenerate"] = degenerate;
  j["no_signal"] = no_signal;
  if (fit.banded()) {
    j["grid2"] = fit.grid2;
    j["bands"] = fit.bands;
  }
  return j;
}

inline void save_ridge_fit(const RidgeFit& fit, const std::string& prefix) {
  write_mtx(fit.weights, prefix + ".weights.mtx", Dtype::f64, json{{"kind", "ridge_weights"}});
  Matrix curve = fit.cv_curve;
  write_mtx(curve, prefix + ".cv_curve.mtx", Dtype::f64, json{{"kind", "cv_curve"}, {"mask", true}});
  write_json(prefix + ".json", ridge_fit_json(fit));
}

inline RidgeFit load_ridge_fit(const std::string& prefix) {
  RidgeFit fit;
  fit.weights = read_mtx(prefix + ".weights.mtx").data;
  if (fs::exists(prefix + ".cv_curve.mtx")) fit.cv_curve = read_mtx(prefix + ".cv_curve.mtx").data;
  const json j = read_json(prefix + ".json");
  fit.grid = j.at("grid").get<std::vector<double>>();
  fit.lambda_index = j.at("lambda_index").get<std::vector<int>>();
  fit.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("grid2")) {
    fit.grid2 = j.at("grid2").get<std::vector<double>>();
    fit.bands = j.at("bands").get<std::vector<std::pair<Index, Index>>>();
  }
  if (static_cast<Index>(fit.lambda_index.size()) != fit.weights.cols()) fail("ridge fit: voxel count mismatch");
  fit.lambda_per_voxel.resize(fit.weights.cols());
  if (fit.banded()) fit.lambda2_per_voxel.resize(fit.weights.cols());
  for (Index v = 0; v < fit.weights.cols(); ++v) {
    const auto c = static_cast<std::size_t>(fit.lambda_index[static_cast<std::size_t>(v)]);
    if (c >= fit.grid.size()) fail("ridge fit: lambda index out of range");
    fit.lambda_per_voxel(v) = fit.grid[c];
    if (fit.banded()) fit.lambda2_per_voxel(v) = fit.grid2[c];
  }
  for (int d : j.value("degenerate", std::vector<int>{})) fit.degenerate.push_back(static_cast<char>(d));
  for (int d : j.value("no_signal", std::vector<int>{})) fit.no_signal.push_back(static_cast<char>(d));
  return fit;
}

}  // namespace speechenc

#endif  // SPEECHENC_RIDGE_HPP
