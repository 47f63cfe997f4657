#ifndef SPEECHENC_VARPART_HPP
#define SPEECHENC_VARPART_HPP

// Encoding evaluation and two-way variance partitioning on signed squared
// correlations.

#include "speechenc/core.hpp"
#include "speechenc/io.hpp"
#include "speechenc/ridge.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace speechenc {

struct VoxelScores {
  Vector rho;
  std::vector<char> flagged;  // zero-variance voxel; rho is NaN there
  std::string label;
  Index n_test_tr = 0;
};

inline VoxelScores evaluate(const Matrix& y_test, const Matrix& y_hat, std::string label = {}) {
  if (y_test.rows() != y_hat.rows() || y_test.cols() != y_hat.cols()) fail("evaluate: shape mismatch");
  if (y_test.rows() < 3) fail("evaluate: need at least 3 time points");
  VoxelScores s;
  s.rho = column_correlations(y_test, y_hat);
  s.flagged.resize(static_cast<std::size_t>(s.rho.size()));
  for (Index v = 0; v < s.rho.size(); ++v) s.flagged[static_cast<std::size_t>(v)] = std::isnan(s.rho(v)) ? 1 : 0;
  s.label = std::move(label);
  s.n_test_tr = y_test.rows();
  return s;
}

inline double signed_square(double r) { return r < 0.0 ? -(r * r) : r * r; }

inline double signed_sqrt(double x) { return x < 0.0 ? -std::sqrt(-x) : std::sqrt(x); }

inline Vector signed_square(const Vector& r) { return r.unaryExpr([](double v) { return signed_square(v); }); }

inline Vector signed_sqrt(const Vector& x) { return x.unaryExpr([](double v) { return signed_sqrt(v); }); }

namespace detail {

inline std::pair<double, double> two_sum(double a, double b) {
  const double s = a + b;
  const double bb = s - a;
  const double err = (a - (s - bb)) + (b - bb);
  return {s, err};
}

// a + b - c with compensation; symmetric in a and b bit for bit.
inline double accurate_sum3(double a, double b, double c) {
  const auto [s1, e1] = two_sum(a, b);
  const auto [s2, e2] = two_sum(s1, -c);
  return s2 + (e1 + e2);
}

}  // namespace detail

enum class Partition : int { intersection = 0, unique1 = 1, unique2 = 2 };

inline const char* partition_name(Partition p) {
  switch (p) {
    case Partition::intersection: return "1&2";
    case Partition::unique1: return "1\\2";
    case Partition::unique2: return "2\\1";
  }
  return "?";
}

struct PartitionResult {
  Vector rho1, rho2, rho_joint;
  // Correlation units (signed square roots) and the signed squares they came from.
  Vector inter, unique1, unique2;
  Vector inter_sq, unique1_sq, unique2_sq;
  std::vector<Partition> dominant;
  std::vector<char> mask;  // rho_joint > threshold
  double threshold = 0.15;
};

inline std::vector<char> joint_mask(const Vector& rho_joint, double threshold) {
  std::vector<char> mask(static_cast<std::size_t>(rho_joint.size()));
  for (Index v = 0; v < rho_joint.size(); ++v) mask[static_cast<std::size_t>(v)] = rho_joint(v) > threshold ? 1 : 0;
  return mask;
}

// Set arithmetic on signed squared correlations:
//   (r^2)_{1&2} = (r^2)_1 + (r^2)_2 - (r^2)_{1|2},  (r^2)_{1\2} = (r^2)_1 - (r^2)_{1&2}
// Negative intersections keep their sign through signed_sqrt.
inline PartitionResult partition_two(const Vector& rho1, const Vector& rho2, const Vector& rho_joint,
                                     double threshold = 0.15) {
  const Index n = rho1.size();
  if (rho2.size() != n || rho_joint.size() != n) fail("partition_two: vectors must be aligned");
  PartitionResult p;
  p.rho1 = rho1;
  p.rho2 = rho2;
  p.rho_joint = rho_joint;
  p.threshold = threshold;
  p.inter_sq.resize(n);
  p.unique1_sq.resize(n);
  p.unique2_sq.resize(n);
  p.dominant.resize(static_cast<std::size_t>(n));
  for (Index v = 0; v < n; ++v) {
    const double s1 = signed_square(rho1(v));
    const double s2 = signed_square(rho2(v));
    const double su = signed_square(rho_joint(v));
    p.inter_sq(v) = detail::accurate_sum3(s1, s2, su);
    p.unique1_sq(v) = s1 - p.inter_sq(v);
    p.unique2_sq(v) = s2 - p.inter_sq(v);
  }
  p.inter = signed_sqrt(p.inter_sq);
  p.unique1 = signed_sqrt(p.unique1_sq);
  p.unique2 = signed_sqrt(p.unique2_sq);
  for (Index v = 0; v < n; ++v) {
    Partition best = Partition::intersection;
    double best_val = p.inter(v);
    if (p.unique1(v) > best_val) {
      best = Partition::unique1;
      best_val = p.unique1(v);
    }
    if (p.unique2(v) > best_val) best = Partition::unique2;
    p.dominant[static_cast<std::size_t>(v)] = best;
  }
  p.mask = joint_mask(rho_joint, threshold);
  return p;
}

// Drops negative signed squares to zero before the square root; an optional
// reporting view, not used by partition_two itself.
inline Vector clipped(const Vector& signed_sq) { return signed_sq.cwiseMax(0.0).cwiseSqrt(); }

inline double nan_mean(const Vector& v, const std::vector<char>* mask = nullptr) {
  double sum = 0.0;
  Index n = 0;
  for (Index i = 0; i < v.size(); ++i) {
    if (std::isnan(v(i))) continue;
    if (mask && !(*mask)[static_cast<std::size_t>(i)]) continue;
    sum += v(i);
    ++n;
  }
  return n > 0 ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

// Cortex means of each partition (the quantities behind per-pair bar plots).
inline json partition_summary(const PartitionResult& p, const std::string& label1, const std::string& label2) {
  std::size_t counts[3] = {0, 0, 0};
  std::size_t in_mask = 0;
  for (std::size_t v = 0; v < p.dominant.size(); ++v) {
    if (!p.mask[v]) continue;
    ++in_mask;
    ++counts[static_cast<int>(p.dominant[v])];
  }
  auto finite_or_null = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  return json{{"space1", label1},
              {"space2", label2},
              {"threshold", p.threshold},
              {"mean_rho1", finite_or_null(nan_mean(p.rho1))},
              {"mean_rho2", finite_or_null(nan_mean(p.rho2))},
              {"mean_rho_joint", finite_or_null(nan_mean(p.rho_joint))},
              {"mean_inter", finite_or_null(nan_mean(p.inter))},
              {"mean_unique1", finite_or_null(nan_mean(p.unique1))},
              {"mean_unique2", finite_or_null(nan_mean(p.unique2))},
              {"voxels_in_mask", in_mask},
              {"dominant_counts", {{"1&2", counts[0]}, {"1\\2", counts[1]}, {"2\\1", counts[2]}}}};
}

inline void save_partition(const PartitionResult& p, const std::string& prefix, const std::string& label1,
                           const std::string& label2) {
  const Index n = p.rho1.size();
  Matrix cols(n, 8);
  for (Index v = 0; v < n; ++v) {
    cols(v, 0) = p.rho1(v);
    cols(v, 1) = p.rho2(v);
    cols(v, 2) = p.rho_joint(v);
    cols(v, 3) = p.inter(v);
    cols(v, 4) = p.unique1(v);
    cols(v, 5) = p.unique2(v);
    cols(v, 6) = static_cast<double>(static_cast<int>(p.dominant[static_cast<std::size_t>(v)]));
    cols(v, 7) = p.mask[static_cast<std::size_t>(v)];
  }
  write_mtx(cols, prefix + ".mtx", Dtype::f64,
            json{{"kind", "partition"},
                 {"mask", true},
                 {"columns", {"rho1", "rho2", "rho_joint", "inter", "unique1", "unique2", "dominant", "in_mask"}},
                 {"dominant_codes", {{"0", "1&2"}, {"1", "1\\2"}, {"2", "2\\1"}}}});
  write_json(prefix + ".json", partition_summary(p, label1, label2));
}

struct EncodingSplit {
  Matrix x_train, x_test;  // delayed features
  Matrix y_train, y_test;
};

struct VarpartRun {
  RidgeFit fit1, fit2, fit_joint;
  VoxelScores scores1, scores2, scores_joint;
  PartitionResult partition;
};

struct VarpartOptions {
  std::vector<double> grid = default_lambda_grid();
  BandedConfig banded;  // band slices are filled in from the two spaces
  double threshold = 0.15;
};

// Separate models for each space plus a banded joint model, all scored on the
// test rows and partitioned. The three fits share the chunk plan (same seeds).
inline VarpartRun run_varpart(const EncodingSplit& space1, const EncodingSplit& space2, const CvPlan& plan,
                              VarpartOptions opts = {}) {
  if (space1.y_train.rows() != space2.y_train.rows() || space1.y_test.rows() != space2.y_test.rows())
    fail("varpart: feature spaces are not aligned");
  VarpartRun run;
  run.fit1 = fit_ridge_cv(space1.x_train, space1.y_train, opts.grid, plan);
  run.fit2 = fit_ridge_cv(space2.x_train, space2.y_train, opts.grid, plan);
  opts.banded.band_slices = {{0, space1.x_train.cols()}, {space1.x_train.cols(), space2.x_train.cols()}};
  const Matrix joint_train = hstack(space1.x_train, space2.x_train);
  const Matrix joint_test = hstack(space1.x_test, space2.x_test);
  run.fit_joint = banded_ridge_fit(joint_train, space1.y_train, opts.banded, plan);
  run.scores1 = evaluate(space1.y_test, predict(run.fit1, space1.x_test));
  run.scores2 = evaluate(space2.y_test, predict(run.fit2, space2.x_test));
  run.scores_joint = evaluate(space1.y_test, predict(run.fit_joint, joint_test));
  run.partition = partition_two(run.scores1.rho, run.scores2.rho, run.scores_joint.rho, opts.threshold);
  return run;
}

}  // namespace speechenc

#endif  // SPEECHENC_VARPART_HPP
