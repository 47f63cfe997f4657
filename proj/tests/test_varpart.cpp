#include "speechenc/varpart.hpp"

#include <gtest/gtest.h>

#include "speechenc/simulate.hpp"
#include "speechenc/timeseries.hpp"
#include "test_util.hpp"

using namespace speechenc;

namespace {

constexpr Index kTrain = 1000;
constexpr Index kTest = 400;

EncodingSplit split_space(const Matrix& x, const Matrix& y) {
  const Matrix d = fir_delays(x);
  return {d.topRows(kTrain), d.bottomRows(kTest), y.topRows(kTrain), y.bottomRows(kTest)};
}

CvPlan plan() {
  CvPlan p;
  p.n_iterations = 10;
  p.n_chunks = 20;
  p.chunk_len_tr = 10;
  p.seed = 1;
  return p;
}

VarpartOptions coarse() {
  VarpartOptions o;
  o.grid = logspace(1e-2, 1e5, 8);
  o.banded.grid1 = logspace(1e-2, 1e5, 6);
  o.banded.grid2 = o.banded.grid1;
  return o;
}

const std::vector<double> kKernel{0.2, 0.4, 0.3, 0.1};

Vector random_rhos(Index n, std::mt19937_64& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = 2.0 * uniform01(rng) - 1.0;
  return v;
}

}  // namespace

TEST(Evaluate, PerVoxelCorrelationAndFlags) {
  auto rng = make_rng(1);
  Matrix y = normal_matrix(50, 3, rng);
  Matrix yhat = y;
  yhat.col(1) = -y.col(1);
  y.col(2).setConstant(1.0);
  const VoxelScores s = evaluate(y, yhat, "x");
  EXPECT_NEAR(s.rho(0), 1.0, 1e-14);
  EXPECT_NEAR(s.rho(1), -1.0, 1e-14);
  EXPECT_TRUE(std::isnan(s.rho(2)));
  EXPECT_EQ(s.flagged, (std::vector<char>{0, 0, 1}));
  EXPECT_EQ(s.n_test_tr, 50);
  EXPECT_THROW(evaluate(y, yhat.leftCols(2)), Error);
  EXPECT_THROW(evaluate(y.topRows(2), yhat.topRows(2)), Error);
}

TEST(SignedSquare, InverseAndSign) {
  for (double r : {-0.7, -0.01, 0.0, 0.3, 0.99}) {
    EXPECT_NEAR(signed_sqrt(signed_square(r)), r, 1e-15);
    EXPECT_EQ(std::signbit(signed_square(r)), std::signbit(r) && r != 0.0);
  }
}

TEST(Partition, HandArithmetic) {
  Vector r1(1), r2(1), rj(1);
  r1 << 0.5;
  r2 << 0.3;
  rj << 0.5;
  const auto p = partition_two(r1, r2, rj);
  EXPECT_EQ(p.inter(0), 0.3);
  EXPECT_EQ(p.unique1(0), 0.4);
  EXPECT_EQ(p.unique2(0), 0.0);
  EXPECT_EQ(p.dominant[0], Partition::unique1);
  EXPECT_EQ(p.mask[0], 1);
}

TEST(Partition, IdenticalSpacesAreAllShared) {
  for (double r : {0.05, 0.2, 0.6}) {
    Vector v = Vector::Constant(1, r);
    const auto p = partition_two(v, v, v);
    EXPECT_NEAR(p.inter(0), r, 1e-15);
    EXPECT_EQ(p.unique1(0), 0.0);
    EXPECT_EQ(p.unique2(0), 0.0);
    EXPECT_EQ(p.dominant[0], Partition::intersection);
  }
}

TEST(Partition, ReconstructionIdentities) {
  auto rng = make_rng(2);
  const Index n = 5000;
  const Vector r1 = random_rhos(n, rng), r2 = random_rhos(n, rng), rj = random_rhos(n, rng);
  const auto p = partition_two(r1, r2, rj);
  for (Index v = 0; v < n; ++v) {
    EXPECT_NEAR(signed_square(p.unique1(v)) + signed_square(p.inter(v)), signed_square(r1(v)), 1e-12);
    EXPECT_NEAR(signed_square(p.unique2(v)) + signed_square(p.inter(v)), signed_square(r2(v)), 1e-12);
    // independent oracle for the intersection in extended precision
    const long double inter = static_cast<long double>(signed_square(r1(v))) + signed_square(r2(v)) -
                              static_cast<long double>(signed_square(rj(v)));
    EXPECT_NEAR(p.inter_sq(v), static_cast<double>(inter), 1e-15);
  }
}

TEST(Partition, SwapIsSymmetricBitwise) {
  auto rng = make_rng(3);
  const Vector r1 = random_rhos(2000, rng), r2 = random_rhos(2000, rng), rj = random_rhos(2000, rng);
  const auto a = partition_two(r1, r2, rj), b = partition_two(r2, r1, rj);
  for (Index v = 0; v < 2000; ++v) {
    EXPECT_EQ(a.inter(v), b.inter(v));
    EXPECT_EQ(a.unique1(v), b.unique2(v));
    EXPECT_EQ(a.unique2(v), b.unique1(v));
  }
}

TEST(Partition, TiesGoToIntersection) {
  const Vector z = Vector::Zero(1);
  EXPECT_EQ(partition_two(z, z, z).dominant[0], Partition::intersection);
  // inter^2 = unique1^2 = 0.09, unique2 = 0
  Vector r1(1), r2(1), rj(1);
  r1 << std::sqrt(0.18);
  r2 << 0.3;
  rj << std::sqrt(0.18);
  EXPECT_EQ(partition_two(r1, r2, rj).dominant[0], Partition::intersection);
}

TEST(Partition, NegativeIntersectionKeepsSign) {
  Vector r1(1), r2(1), rj(1);
  r1 << 0.3;
  r2 << 0.3;
  rj << 0.6;
  const auto p = partition_two(r1, r2, rj);
  EXPECT_NEAR(p.inter(0), -std::sqrt(0.18), 1e-15);
  EXPECT_NEAR(p.unique1(0), std::sqrt(0.27), 1e-15);
  EXPECT_EQ(clipped(p.inter_sq)(0), 0.0);
}

TEST(Partition, MaskAndSummary) {
  Vector r1(3), r2(3), rj(3);
  r1 << 0.5, 0.1, std::numeric_limits<double>::quiet_NaN();
  r2 << 0.3, 0.1, 0.2;
  rj << 0.5, 0.1, 0.4;
  const auto p = partition_two(r1, r2, rj);
  EXPECT_EQ(p.mask, (std::vector<char>{1, 0, 1}));
  const json s = partition_summary(p, "a", "b");
  EXPECT_EQ(s["voxels_in_mask"], 2);
  EXPECT_NEAR(s["mean_rho1"].get<double>(), 0.3, 1e-15);
  EXPECT_THROW(partition_two(r1, r2.head(2), rj), Error);
}

TEST(Partition, SaveWritesMatrixAndSummary) {
  testutil::TempDir dir;
  Vector r = Vector::Constant(4, 0.4);
  save_partition(partition_two(r, r, r), (dir / "p").string(), "a", "b");
  const auto m = read_mtx(dir / "p.mtx");
  EXPECT_EQ(m.data.rows(), 4);
  EXPECT_EQ(m.data.cols(), 8);
  EXPECT_EQ(read_json(dir / "p.json")["space1"], "a");
}

TEST(RunVarpart, IdenticalSpacesHaveNoUniqueVariance) {
  auto rng = make_rng(4);
  const Matrix x = ar1_features(kTrain + kTest, 5, 0.9, rng);
  const Matrix y = simulate_responses(x, normal_matrix(5, 40, rng), kKernel, Vector::Constant(40, 1.0), rng);
  const auto s = split_space(x, y);
  const auto run = run_varpart(s, s, plan(), coarse());
  EXPECT_LT(std::abs(nan_mean(run.partition.unique1)), 0.05);
  EXPECT_LT(std::abs(nan_mean(run.partition.unique2)), 0.05);
  EXPECT_GT(nan_mean(run.partition.inter), 0.5);
}

TEST(RunVarpart, NestedSubsetExplainsNoUniqueVariance) {
  const Index v_half = 20;
  const NestedSpaces n = gen_nested_features(kTrain + kTest, 8, 4, 0, 0.9, 5);
  auto rng = make_rng(5);
  Matrix beta = Matrix::Zero(8, 2 * v_half);
  beta.topLeftCorner(4, v_half) = normal_matrix(4, v_half, rng);      // only subset columns
  beta.bottomRightCorner(4, v_half) = normal_matrix(4, v_half, rng);  // only columns outside the subset
  const Matrix y = simulate_responses(n.space1, beta, kKernel, Vector::Zero(2 * v_half), rng);
  const auto run = run_varpart(split_space(n.space1, y), split_space(n.space2, y), plan(), coarse());
  const auto& p = run.partition;
  EXPECT_LT(nan_mean(p.unique2), 0.05);
  int agree = 0;
  for (Index v = 0; v < 2 * v_half; ++v)
    agree += p.dominant[static_cast<std::size_t>(v)] == (v < v_half ? Partition::intersection : Partition::unique1);
  EXPECT_GE(agree, static_cast<int>(0.95 * 2 * v_half));
}

TEST(RunVarpart, OrthogonalSpacesSplitDominance) {
  const Index v_half = 20;
  auto rng = make_rng(6);
  const Matrix x1 = ar1_features(kTrain + kTest, 4, 0.9, rng), x2 = ar1_features(kTrain + kTest, 4, 0.9, rng);
  Matrix y(kTrain + kTest, 2 * v_half);
  y.leftCols(v_half) = fir_filter(x1, kKernel) * normal_matrix(4, v_half, rng);
  y.rightCols(v_half) = fir_filter(x2, kKernel) * normal_matrix(4, v_half, rng);
  const auto run = run_varpart(split_space(x1, y), split_space(x2, y), plan(), coarse());
  int agree = 0;
  for (Index v = 0; v < 2 * v_half; ++v)
    agree += run.partition.dominant[static_cast<std::size_t>(v)] == (v < v_half ? Partition::unique1 : Partition::unique2);
  EXPECT_GE(agree, static_cast<int>(0.95 * 2 * v_half));
}

TEST(RunVarpart, InformativeSupersetHasUniqueVariance) {
  const NestedSpaces n = gen_nested_features(kTrain + kTest, 4, 4, 4, 0.9, 7);
  auto rng = make_rng(7);
  const Matrix beta = normal_matrix(8, 30, rng);
  const Matrix y = simulate_responses(n.space3, beta, kKernel, Vector::Constant(30, 0.5), rng);
  const auto run = run_varpart(split_space(n.space1, y), split_space(n.space3, y), plan(), coarse());
  EXPECT_GT(nan_mean(run.partition.unique2), 0.1);
  EXPECT_LT(std::abs(nan_mean(run.partition.unique1)), 0.05);
}

TEST(RunVarpart, MisalignedSpacesRejected) {
  EncodingSplit a{Matrix::Zero(10, 2), Matrix::Zero(5, 2), Matrix::Zero(10, 1), Matrix::Zero(5, 1)};
  EncodingSplit b{Matrix::Zero(9, 2), Matrix::Zero(5, 2), Matrix::Zero(9, 1), Matrix::Zero(5, 1)};
  EXPECT_THROW(run_varpart(a, b, plan()), Error);
}
