#include "speechenc/layer_selectivity.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "speechenc/simulate.hpp"
#include "test_util.hpp"

using namespace speechenc;

namespace {

VoxelScores scores(const Vector& rho, const std::string& label) {
  VoxelScores s;
  s.rho = rho;
  s.flagged.assign(static_cast<std::size_t>(rho.size()), 0);
  s.label = label;
  return s;
}

// Mann-Whitney AUC of `pos` scores above `neg` scores.
double auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / static_cast<double>(pos.size() * neg.size());
}

// Per-layer scores from the analytic label ceilings plus sampling jitter.
std::vector<VoxelScores> hierarchy_scores(const SimDataset& ds, double jitter, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::vector<VoxelScores> out;
  for (Index l = 0; l < ds.spec.n_layers; ++l) {
    Vector rho = ds.truth.label_ceiling.at(layer_label(l));
    for (Index v = 0; v < rho.size(); ++v) rho(v) += jitter * normal(rng);
    out.push_back(scores(rho, layer_label(l)));
  }
  return out;
}

SimSpec hierarchy_spec(HierarchyProfile profile, Index voxels) {
  SimSpec s;
  s.n_stories = 2;
  s.story_len_tr = 40;
  s.n_voxels = voxels;
  s.profile = profile;
  s.snr = 4.0;
  s.seed = 9;
  return s;
}

}  // namespace

TEST(PerfMatrix, ThirteenLayersAndRetention) {
  auto rng = make_rng(1);
  std::vector<VoxelScores> layers;
  for (int l = 0; l < 13; ++l) {
    Vector rho(6);
    rho << 0.5, 0.1, 0.3, -0.2, 0.16, 0.9;
    rho += 0.001 * normal_matrix(6, 1, rng).col(0);
    layers.push_back(scores(rho, "layer" + std::to_string(l)));
  }
  const PerfMatrix pm = build_perf_matrix(layers);
  EXPECT_EQ(pm.c.cols(), 13);
  EXPECT_EQ(pm.voxel_index, (std::vector<Index>{0, 2, 4, 5}));
  for (Index i = 0; i < pm.c.rows(); ++i) EXPECT_GT(pm.c.row(i).mean(), 0.15);
  EXPECT_EQ(pm.c(1, 3), layers[3].rho(2));
  EXPECT_EQ(build_perf_matrix(layers, -1.0).voxel_index.size(), 6u);
  EXPECT_THROW(build_perf_matrix(layers, 0.95), Error);
}

TEST(PerfMatrix, NanVoxelsDroppedAndShapesChecked) {
  Vector a(3), b(3);
  a << 0.5, std::numeric_limits<double>::quiet_NaN(), 0.4;
  b << 0.5, 0.5, 0.4;
  EXPECT_EQ(build_perf_matrix({scores(a, "a"), scores(b, "b")}).voxel_index, (std::vector<Index>{0, 2}));
  EXPECT_THROW(build_perf_matrix({scores(a, "a"), scores(b.head(2), "b")}), Error);
  EXPECT_THROW(build_perf_matrix({}), Error);
}

TEST(DoubleCenter, RemovesAdditiveStructure) {
  EXPECT_TRUE(double_center(Matrix::Constant(5, 4, 3.0)).isZero(1e-14));
  auto rng = make_rng(2);
  const Vector a = normal_matrix(7, 1, rng).col(0), b = normal_matrix(5, 1, rng).col(0);
  const Matrix additive = a * Eigen::RowVectorXd::Ones(5) + Vector::Ones(7) * b.transpose();
  EXPECT_LT(double_center(additive).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_THROW(double_center(Matrix::Ones(1, 4)), Error);
}

TEST(DoubleCenter, ZeroMarginsAndIdempotent) {
  auto rng = make_rng(3);
  const Matrix c = normal_matrix(50, 13, rng);
  const Matrix d = double_center(c);
  EXPECT_LT(d.rowwise().mean().cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(d.colwise().mean().cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((double_center(d) - d).cwiseAbs().maxCoeff(), 1e-12);
  // order-independent oracle: rows first, then columns
  Matrix alt = c;
  alt.colwise() -= Vector(c.rowwise().mean());
  alt.rowwise() -= Eigen::RowVectorXd(alt.colwise().mean());
  EXPECT_LT((alt - d).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Pca, RankOneHasAllVarianceInFirstComponent) {
  auto rng = make_rng(4);
  const Matrix c = double_center(normal_matrix(30, 1, rng) * normal_matrix(1, 8, rng));
  const PcaResult r = pca_svd(c, 3);
  EXPECT_NEAR(r.varexp(0), 1.0, 1e-12);
  EXPECT_NEAR(r.varexp(1), 0.0, 1e-12);
}

TEST(Pca, RecoversOrthogonalPatterns) {
  auto rng = make_rng(5);
  const Index v = 300, l = 13;
  Vector p1(l), p2(l);
  for (Index i = 0; i < l; ++i) {
    p1(i) = std::cos(M_PI * static_cast<double>(i) / (l - 1));
    p2(i) = std::cos(2 * M_PI * static_cast<double>(i) / (l - 1));
  }
  const Vector s1 = 3.0 * normal_matrix(v, 1, rng).col(0), s2 = normal_matrix(v, 1, rng).col(0);
  const Matrix c = double_center(s1 * p1.transpose() + s2 * p2.transpose());
  const PcaResult r = pca_svd(c, 2);
  EXPECT_GT(std::abs(pearson(r.loadings.col(0), p1)), 0.999);
  EXPECT_GT(std::abs(pearson(r.loadings.col(1), p2)), 0.999);
  EXPECT_GT(std::abs(pearson(r.scores.col(0), s1)), 0.999);
}

TEST(Pca, VarexpMatchesEigenOracle) {
  auto rng = make_rng(6);
  const Matrix c = double_center(normal_matrix(200, 13, rng));
  const PcaResult r = pca_svd(c, 13);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(c.transpose() * c);
  Vector ev = eig.eigenvalues().reverse().cwiseMax(0.0);
  ev /= ev.sum();
  for (Index k = 0; k < 13; ++k) EXPECT_NEAR(r.varexp(k), ev(k), 1e-8);
  EXPECT_NEAR(r.varexp.sum(), 1.0, 1e-10);
  for (Index k = 1; k < 13; ++k) EXPECT_LE(r.varexp(k), r.varexp(k - 1));
  EXPECT_LT((r.loadings.transpose() * r.loadings - Matrix::Identity(13, 13)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((r.scores * r.loadings.transpose() - c).cwiseAbs().maxCoeff(), 1e-8);
  for (Index k = 0; k < 13; ++k) {
    Index arg = 0;
    r.loadings.col(k).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(r.loadings(arg, k), 0.0);
  }
  EXPECT_THROW(pca_svd(c, 14), Error);
  EXPECT_THROW(pca_svd(c, 0), Error);
}

TEST(Pca, SignConventionIsDeterministic) {
  auto rng = make_rng(7);
  const Matrix c = double_center(normal_matrix(40, 6, rng));
  const PcaResult a = pca_svd(c, 4), b = pca_svd(-c, 4);
  // negating the data flips scores but the loadings are pinned by convention
  EXPECT_LT((a.loadings - b.loadings).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((a.scores + b.scores).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(CorrelateMaps, SelfAndNegatedAndRestriction) {
  auto rng = make_rng(8);
  const Vector s = normal_matrix(20, 1, rng).col(0);
  std::vector<Index> idx(20);
  for (Index i = 0; i < 20; ++i) idx[static_cast<std::size_t>(i)] = 2 * i;
  Vector full = Vector::Zero(40);
  for (Index i = 0; i < 20; ++i) full(2 * i) = s(i);
  EXPECT_NEAR(correlate_maps(s, idx, scores(full, "x")), 1.0, 1e-14);
  EXPECT_NEAR(correlate_maps(s, idx, scores(-full, "x")), -1.0, 1e-14);
  EXPECT_NEAR(correlate_maps(s, idx, scores(full, "x"), std::vector<Index>{0, 2, 4, 6}), 1.0, 1e-14);
  EXPECT_THROW(correlate_maps(s, idx, scores(full, "x"), std::vector<Index>{0, 2}), Error);
  EXPECT_THROW(correlate_maps(s, idx, scores(full.head(10), "x")), Error);
}

TEST(Hierarchy, FirstComponentSeparatesDesignedGroups) {
  const SimDataset ds = gen_dataset(hierarchy_spec(HierarchyProfile::two_groups, 400));
  const PerfMatrix pm = build_perf_matrix(hierarchy_scores(ds, 0.03, 1), -1.0);
  const PcaResult r = pca_svd(double_center(pm.c), default_pca_components(13));
  std::vector<double> low, high;
  for (std::size_t i = 0; i < pm.voxel_index.size(); ++i)
    (ds.truth.level(pm.voxel_index[i]) < 0.5 ? low : high).push_back(r.scores(static_cast<Index>(i), 0));
  const double a = auc(high, low);
  EXPECT_GT(std::max(a, 1.0 - a), 0.95);
  EXPECT_GT(r.varexp(0), 2.0 * r.varexp(1));
}

TEST(Hierarchy, FirstComponentTracksGradedLevel) {
  const SimDataset ds = gen_dataset(hierarchy_spec(HierarchyProfile::gradient, 400));
  const PerfMatrix pm = build_perf_matrix(hierarchy_scores(ds, 0.01, 2), -1.0);
  const PcaResult r = pca_svd(double_center(pm.c), 3);
  Vector level(static_cast<Index>(pm.voxel_index.size()));
  for (std::size_t i = 0; i < pm.voxel_index.size(); ++i) level(static_cast<Index>(i)) = ds.truth.level(pm.voxel_index[i]);
  EXPECT_GT(std::abs(pearson(r.scores.col(0), level)), 0.9);
}

TEST(Hierarchy, IdenticalVoxelsLeaveNothingToExplain) {
  SimSpec spec = hierarchy_spec(HierarchyProfile::identical, 50);
  const SimDataset ds = gen_dataset(spec);
  // every voxel has the same level, so layer profiles differ only by a voxel scale
  std::vector<VoxelScores> layers;
  for (Index l = 0; l < 13; ++l) {
    const auto [a, b] = std::pair<double, double>{(13.0 - l) / 13.0, l / 13.0};
    layers.push_back(scores(Vector::Constant(50, 0.4 * (a + b) / std::sqrt(a * a + b * b)), layer_label(l)));
  }
  const PerfMatrix pm = build_perf_matrix(layers, -1.0);
  const PcaResult r = pca_svd(double_center(pm.c), 2);
  EXPECT_LT(r.singular_values(0), 1e-10);
  EXPECT_EQ(ds.truth.level.minCoeff(), ds.truth.level.maxCoeff());
}

TEST(Hierarchy, MapCorrelationSignsFollowConstruction) {
  const SimDataset ds = gen_dataset(hierarchy_spec(HierarchyProfile::gradient, 400));
  const PerfMatrix pm = build_perf_matrix(hierarchy_scores(ds, 0.01, 3), 0.0);
  const PcaResult r = pca_svd(double_center(pm.c), 2);
  const Vector pc1 = r.scores.col(0);
  const double with_low = correlate_maps(pc1, pm.voxel_index, scores(ds.truth.label_ceiling.at("sim/acoustic"), "a"));
  const double with_high = correlate_maps(pc1, pm.voxel_index, scores(ds.truth.label_ceiling.at("sim/semantic"), "s"));
  // orientation: positive when later layers load higher on PC1
  const double slope = r.loadings(12, 0) - r.loadings(0, 0);
  EXPECT_LT(with_low * slope, 0.0);
  EXPECT_GT(with_high * slope, 0.0);
}

TEST(Export, WritesScoresLoadingsAndScree) {
  testutil::TempDir dir;
  auto rng = make_rng(10);
  std::vector<VoxelScores> layers;
  for (int l = 0; l < 4; ++l) layers.push_back(scores(Vector(0.5 + 0.1 * normal_matrix(10, 1, rng).col(0).array()), "l" + std::to_string(l)));
  const PerfMatrix pm = build_perf_matrix(layers);
  const PcaResult r = pca_svd(double_center(pm.c), 2);
  save_pca(r, pm, (dir / "pca").string());
  EXPECT_EQ(read_mtx(dir / "pca.scores.mtx").data, r.scores);
  const json j = read_json(dir / "pca.json");
  EXPECT_EQ(j["scree"].size(), 4u);
  EXPECT_EQ(j["loadings"][0]["layer"], "l0");
}
