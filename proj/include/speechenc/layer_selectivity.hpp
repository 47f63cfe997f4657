#ifndef SPEECHENC_LAYER_SELECTIVITY_HPP
#define SPEECHENC_LAYER_SELECTIVITY_HPP

// Voxels x layers performance matrix, two-way centering, and PCA of the result.

#include "speechenc/core.hpp"
#include "speechenc/io.hpp"
#include "speechenc/varpart.hpp"

#include <Eigen/SVD>

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace speechenc {

struct PerfMatrix {
  Matrix c;                       // retained voxels x layers
  std::vector<Index> voxel_index; // row -> original voxel id
  std::vector<std::string> layer_labels;
  double threshold = 0.15;
};

struct PcaResult {
  Matrix scores;    // voxels x K
  Matrix loadings;  // layers x K, orthonormal columns
  Vector varexp;    // K
  Vector singular_values;  // all of them, for the full scree
};

// Keeps voxels whose mean correlation across layers exceeds the threshold.
inline PerfMatrix build_perf_matrix(const std::vector<VoxelScores>& layers, double threshold = 0.15) {
  require(!layers.empty(), "perf matrix: no layers");
  const Index n_vox = layers.front().rho.size();
  for (const auto& l : layers)
    if (l.rho.size() != n_vox) fail("perf matrix: layers disagree on voxel count");
  PerfMatrix pm;
  pm.threshold = threshold;
  for (const auto& l : layers) pm.layer_labels.push_back(l.label);
  const auto n_layers = static_cast<Index>(layers.size());
  for (Index v = 0; v < n_vox; ++v) {
    double sum = 0.0;
    bool ok = true;
    for (const auto& l : layers) {
      if (std::isnan(l.rho(v))) ok = false;
      sum += l.rho(v);
    }
    if (ok && sum / static_cast<double>(n_layers) > threshold) pm.voxel_index.push_back(v);
  }
  if (pm.voxel_index.empty()) fail("perf matrix: no voxel exceeds mean correlation threshold " + std::to_string(threshold));
  pm.c.resize(static_cast<Index>(pm.voxel_index.size()), n_layers);
  for (std::size_t i = 0; i < pm.voxel_index.size(); ++i)
    for (Index l = 0; l < n_layers; ++l)
      pm.c(static_cast<Index>(i), l) = layers[static_cast<std::size_t>(l)].rho(pm.voxel_index[i]);
  return pm;
}

// Removes grand, row and column means (two-way ANOVA residual).
inline Matrix double_center(const Matrix& c) {
  require(c.rows() >= 2 && c.cols() >= 2, "double_center: need at least 2 rows and 2 columns");
  const Vector row_mean = c.rowwise().mean();
  const Eigen::RowVectorXd col_mean = c.colwise().mean();
  const double grand = c.mean();
  Matrix out = c;
  out.colwise() -= row_mean;
  out.rowwise() -= col_mean;
  out.array() += grand;
  return out;
}

inline PcaResult pca_svd(const Matrix& centered, Index k) {
  const Index max_k = std::min(centered.rows(), centered.cols());
  if (k < 1 || k > max_k) fail("pca: K=" + std::to_string(k) + " outside [1, " + std::to_string(max_k) + "]");
  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) fail("pca: SVD failed");
  PcaResult r;
  r.singular_values = svd.singularValues();
  const double total = r.singular_values.squaredNorm();
  r.loadings = svd.matrixV().leftCols(k);
  r.scores = svd.matrixU().leftCols(k) * r.singular_values.head(k).asDiagonal();
  r.varexp = total > 0.0 ? Vector(r.singular_values.head(k).array().square() / total) : Vector(Vector::Zero(k));
  // Sign: the largest-magnitude loading of each component is positive.
  for (Index j = 0; j < k; ++j) {
    Index arg = 0;
    r.loadings.col(j).cwiseAbs().maxCoeff(&arg);
    if (r.loadings(arg, j) < 0.0) {
      r.loadings.col(j) *= -1.0;
      r.scores.col(j) *= -1.0;
    }
  }
  return r;
}

inline Index default_pca_components(Index n_layers) { return std::min<Index>(n_layers, 10); }

// Pearson r between PC scores of retained voxels and another voxel map, over
// retained voxels that are also in `restrict_to` (when given) and not NaN.
inline double correlate_maps(const Vector& pc_scores, const std::vector<Index>& voxel_index, const VoxelScores& other,
                             const std::optional<std::vector<Index>>& restrict_to = std::nullopt) {
  require(pc_scores.size() == static_cast<Index>(voxel_index.size()), "correlate_maps: index map size mismatch");
  std::set<Index> allowed;
  if (restrict_to) allowed.insert(restrict_to->begin(), restrict_to->end());
  std::vector<double> a, b;
  for (std::size_t i = 0; i < voxel_index.size(); ++i) {
    const Index v = voxel_index[i];
    if (v >= other.rho.size()) fail("correlate_maps: voxel id out of range");
    if (restrict_to && !allowed.count(v)) continue;
    if (std::isnan(other.rho(v))) continue;
    a.push_back(pc_scores(static_cast<Index>(i)));
    b.push_back(other.rho(v));
  }
  if (a.size() < 3) fail("correlate_maps: fewer than 3 overlapping voxels");
  const Eigen::Map<const Vector> va(a.data(), static_cast<Index>(a.size()));
  const Eigen::Map<const Vector> vb(b.data(), static_cast<Index>(b.size()));
  return pearson(va, vb);
}

inline void save_pca(const PcaResult& r, const PerfMatrix& pm, const std::string& prefix) {
  write_mtx(r.scores, prefix + ".scores.mtx", Dtype::f64, json{{"kind", "pc_scores"}});
  write_mtx(r.loadings, prefix + ".loadings.mtx", Dtype::f64, json{{"kind", "pc_loadings"}, {"layers", pm.layer_labels}});
  const double total = r.singular_values.squaredNorm();
  json scree = json::array();
  for (Index i = 0; i < r.singular_values.size(); ++i) {
    const double ve = total > 0.0 ? r.singular_values(i) * r.singular_values(i) / total : 0.0;
    scree.push_back({{"pc", i + 1}, {"varexp", ve}});
  }
  json loadings = json::array();
  for (Index l = 0; l < r.loadings.rows(); ++l) {
    json jr = json::array();
    for (Index k = 0; k < r.loadings.cols(); ++k) jr.push_back(r.loadings(l, k));
    loadings.push_back({{"layer", pm.layer_labels[static_cast<std::size_t>(l)]}, {"loadings", jr}});
  }
  write_json(prefix + ".json", json{{"threshold", pm.threshold},
                                    {"n_voxels_retained", pm.voxel_index.size()},
                                    {"voxel_index", pm.voxel_index},
                                    {"scree", scree},
                                    {"loadings", loadings}});
}

}  // namespace speechenc

#endif  // SPEECHENC_LAYER_SELECTIVITY_HPP
