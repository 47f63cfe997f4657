#ifndef SPEECHENC_PROBING_HPP
#define SPEECHENC_PROBING_HPP

// Probes of frozen feature spaces: span pooling, ridge regression probes,
// multinomial logistic classifiers (accuracy / perplexity), a linear
// bottleneck MLP for embedding targets, and the matching baselines.

#include "speechenc/acoustic.hpp"
#include "speechenc/core.hpp"
#include "speechenc/io.hpp"
#include "speechenc/ridge.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace speechenc {

// ---------------------------------------------------------------------------
// Pooling and splits

struct PooledSpans {
  Matrix rows;                     // n_spans x P
  std::vector<char> nearest_frame; // span contained no frame center
};

// Row i is the mean of frames whose centers (k + 0.5) / rate fall in span i.
inline PooledSpans pool_spans(const FeatureMatrix& features, const AlignmentTable& spans) {
  require(features.rate_hz > 0.0, "pool_spans: feature rate must be positive");
  const Index n_frames = features.data.rows();
  const double duration = static_cast<double>(n_frames) / features.rate_hz;
  PooledSpans out;
  out.rows.resize(static_cast<Index>(spans.rows.size()), features.data.cols());
  out.nearest_frame.assign(spans.rows.size(), 0);
  for (std::size_t i = 0; i < spans.rows.size(); ++i) {
    const auto& s = spans.rows[i];
    if (s.end_s > duration + 1e-9)
      fail("pool_spans: span '" + s.label + "' ends at " + std::to_string(s.end_s) + " s beyond feature duration " +
           std::to_string(duration) + " s");
    const auto first = static_cast<Index>(std::max(0.0, std::ceil(s.start_s * features.rate_hz - 0.5)));
    Index last = first;
    while (last < n_frames && (static_cast<double>(last) + 0.5) / features.rate_hz < s.end_s) ++last;
    if (last > first) {
      out.rows.row(static_cast<Index>(i)) = features.data.middleRows(first, last - first).colwise().mean();
    } else {
      const double mid = 0.5 * (s.start_s + s.end_s);
      const auto k = std::clamp<Index>(static_cast<Index>(std::floor(mid * features.rate_hz)), 0, n_frames - 1);
      out.rows.row(static_cast<Index>(i)) = features.data.row(k);
      out.nearest_frame[i] = 1;
    }
  }
  return out;
}

struct StorySplit {
  std::vector<std::string> train, val, test;
};

struct SplitSizes {
  // Zero means: val = ceil(0.1 n), test = n - ceil(0.8 n) - val (at least 1), rest train.
  std::size_t val = 0;
  std::size_t test = 0;
};

inline StorySplit split_stories(std::vector<std::string> story_ids, std::uint64_t seed, SplitSizes sizes = {}) {
  const std::size_t n = story_ids.size();
  if (n < 5) fail("split_stories: need at least 5 stories, got " + std::to_string(n));
  std::size_t n_val = sizes.val, n_test = sizes.test;
  if (n_val == 0 && n_test == 0) {
    const auto ceil_frac = [n](double f) {
      return static_cast<std::size_t>(std::ceil(f * static_cast<double>(n) - 1e-9));
    };
    n_val = ceil_frac(0.1);
    const std::size_t n_train = ceil_frac(0.8);
    n_test = n > n_train + n_val ? n - n_train - n_val : 1;
  }
  if (n_val < 1 || n_test < 1 || n_val + n_test >= n) fail("split_stories: invalid split sizes");
  std::sort(story_ids.begin(), story_ids.end());
  auto rng = make_rng(seed, 0x53504c4954ULL);
  shuffle(story_ids, rng);
  StorySplit s;
  s.val.assign(story_ids.begin(), story_ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.test.assign(story_ids.begin() + static_cast<std::ptrdiff_t>(n_val),
                story_ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  s.train.assign(story_ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), story_ids.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

// Row indices of a pooled dataset assigned to each part.
struct RowSplit {
  std::vector<Index> train, val, test;
};

// ---------------------------------------------------------------------------
// Shared helpers

namespace detail {

struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    s.mean = x.colwise().mean();
    s.scale.resize(x.cols());
    for (Index j = 0; j < x.cols(); ++j) {
      const double var = (x.col(j).array() - s.mean(j)).square().mean();
      s.scale(j) = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
    }
    return s;
  }

  Matrix apply(const Matrix& x) const { return ((x.rowwise() - mean).array().rowwise() * scale.array()).matrix(); }
};

inline Matrix with_bias(const Matrix& x) {
  Matrix out(x.rows(), x.cols() + 1);
  out << x, Vector::Ones(x.rows());
  return out;
}

inline void require_split(const RowSplit& split, Index n_rows) {
  if (split.train.empty() || split.val.empty() || split.test.empty()) fail("probe: every split part needs rows");
  for (const auto* part : {&split.train, &split.val, &split.test})
    for (Index i : *part)
      if (i < 0 || i >= n_rows) fail("probe: split row out of range");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Regression probe

struct RegressionProbeResult {
  double metric = 0.0;             // mean test Pearson r over usable target dims
  Vector per_dim;                  // NaN for excluded dims
  std::vector<char> excluded;      // degenerate target dims
  double lambda = 0.0;
};

// Ridge from (centered) features to each target dim; one lambda for all dims,
// picked by mean validation correlation (ties go to the larger lambda).
inline RegressionProbeResult regression_probe(const Matrix& x, const Matrix& y, const RowSplit& split,
                                              std::vector<double> grid = default_lambda_grid()) {
  require(x.rows() == y.rows(), "regression probe: rows not aligned");
  detail::require_split(split, x.rows());
  if (grid.empty()) fail("regression probe: empty lambda grid");
  std::sort(grid.begin(), grid.end());
  const Matrix x_tr = select_rows(x, split.train), y_tr = select_rows(y, split.train);
  const Eigen::RowVectorXd xm = x_tr.colwise().mean(), ym = y_tr.colwise().mean();
  auto cx = [&](const std::vector<Index>& rows) { return Matrix(select_rows(x, rows).rowwise() - xm); };
  auto cy = [&](const std::vector<Index>& rows) { return Matrix(select_rows(y, rows).rowwise() - ym); };
  const Matrix xtr = cx(split.train), ytr = cy(split.train);
  const Matrix xva = cx(split.val), yva = cy(split.val);
  const Matrix xte = cx(split.test), yte = cy(split.test);

  RegressionProbeResult res;
  res.excluded.assign(static_cast<std::size_t>(y.cols()), 0);
  for (Index d = 0; d < y.cols(); ++d) {
    const auto var = [&](const Matrix& m) { return (m.col(d).array() - m.col(d).mean()).square().sum(); };
    if (!(var(ytr) > 0.0) || !(var(yva) > 0.0) || !(var(yte) > 0.0)) res.excluded[static_cast<std::size_t>(d)] = 1;
  }
  auto usable_mean = [&](const Vector& r) {
    double s = 0.0;
    Index n = 0;
    for (Index d = 0; d < r.size(); ++d) {
      if (res.excluded[static_cast<std::size_t>(d)] || std::isnan(r(d))) continue;
      s += r(d);
      ++n;
    }
    return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  };
  bool any_usable = false;
  for (char e : res.excluded) any_usable |= !e;
  if (!any_usable) fail("regression probe: every target dimension is degenerate");

  const RidgePath path(xtr, ytr);
  double best = -std::numeric_limits<double>::infinity();
  for (double l : grid) {
    const double score = usable_mean(column_correlations(yva, xva * path.weights(l)));
    if (score >= best) {
      best = score;
      res.lambda = l;
    }
  }
  res.per_dim = column_correlations(yte, xte * path.weights(res.lambda));
  for (Index d = 0; d < y.cols(); ++d)
    if (res.excluded[static_cast<std::size_t>(d)]) res.per_dim(d) = std::numeric_limits<double>::quiet_NaN();
  res.metric = usable_mean(res.per_dim);
  return res;
}

// ---------------------------------------------------------------------------
// Classification metrics

inline constexpr double kLabelSmoothing = 1e-6;

// Row-wise log-softmax in extended precision.
inline std::vector<std::vector<long double>> log_softmax(const Matrix& logits) {
  std::vector<std::vector<long double>> out(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) {
    const long double mx = logits.row(i).maxCoeff();
    long double z = 0.0L;
    for (Index k = 0; k < logits.cols(); ++k) z += std::exp(static_cast<long double>(logits(i, k)) - mx);
    const long double lse = mx + std::log(z);
    auto& row = out[static_cast<std::size_t>(i)];
    row.resize(static_cast<std::size_t>(logits.cols()));
    for (Index k = 0; k < logits.cols(); ++k) row[static_cast<std::size_t>(k)] = logits(i, k) - lse;
  }
  return out;
}

// exp(mean NLL) in nats of the smoothed distribution (1 - eps) p + eps / K.
inline double perplexity(const std::vector<std::vector<long double>>& log_probs, const std::vector<int>& labels) {
  require(log_probs.size() == labels.size() && !labels.empty(), "perplexity: labels and predictions differ in length");
  const auto k = static_cast<long double>(log_probs.front().size());
  const long double log_keep = std::log1p(-static_cast<long double>(kLabelSmoothing));
  const long double log_floor = std::log(static_cast<long double>(kLabelSmoothing)) - std::log(k);
  long double nll = 0.0L;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const long double lp = log_probs[i].at(static_cast<std::size_t>(labels[i]));
    const long double a = log_keep + lp;
    const long double hi = std::max(a, log_floor);
    const long double lo = std::min(a, log_floor);
    nll -= hi + std::log1p(std::exp(lo - hi));
  }
  return static_cast<double>(std::exp(nll / static_cast<long double>(labels.size())));
}

inline double accuracy(const Matrix& scores, const std::vector<int>& labels) {
  require(scores.rows() == static_cast<Index>(labels.size()) && !labels.empty(), "accuracy: length mismatch");
  std::size_t hit = 0;
  for (Index i = 0; i < scores.rows(); ++i) {
    Index arg = 0;
    scores.row(i).maxCoeff(&arg);
    hit += arg == labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

struct ClassifierResult {
  double accuracy = 0.0;
  double perplexity = 0.0;
  double l2 = 0.0;
  int epochs = 0;
};

// Uniform predictor: every class equally likely.
inline ClassifierResult uniform_predictor(const std::vector<int>& test_labels, int n_classes) {
  const Matrix logits = Matrix::Zero(static_cast<Index>(test_labels.size()), n_classes);
  return {accuracy(logits, test_labels), perplexity(log_softmax(logits), test_labels), 0.0, 0};
}

// Predicts the most frequent training class everywhere; perplexity uses the
// training class frequencies as the predictive distribution.
inline ClassifierResult most_frequent_baseline(const std::vector<int>& train_labels, const std::vector<int>& test_labels,
                                               int n_classes) {
  require(!train_labels.empty() && !test_labels.empty(), "baseline: empty labels");
  std::vector<double> counts(static_cast<std::size_t>(n_classes), 0.0);
  for (int l : train_labels) counts.at(static_cast<std::size_t>(l)) += 1.0;
  const auto top = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  std::size_t hits = 0;
  for (int l : test_labels) hits += l == top;
  Matrix logits(static_cast<Index>(test_labels.size()), n_classes);
  for (int k = 0; k < n_classes; ++k) {
    const double p = counts[static_cast<std::size_t>(k)] / static_cast<double>(train_labels.size());
    logits.col(k).setConstant(p > 0.0 ? std::log(p) : -1e300);
  }
  ClassifierResult r;
  r.accuracy = static_cast<double>(hits) / static_cast<double>(test_labels.size());
  r.perplexity = perplexity(log_softmax(logits), test_labels);
  return r;
}

struct ClassifierConfig {
  std::vector<double> l2_grid{1e-4, 1e-3, 1e-2, 1e-1};
  int max_epochs = 500;
  int eval_every = 5;
  int patience = 10;  // evaluations without validation improvement
  double momentum = 0.9;
};

namespace detail {

struct SoftmaxModel {
  Matrix w;  // (P + 1) x K, last row is the bias
  int epochs = 0;
};

inline double mean_nll(const Matrix& logits, const std::vector<int>& labels) {
  const auto lp = log_softmax(logits);
  long double s = 0.0L;
  for (std::size_t i = 0; i < labels.size(); ++i) s -= lp[i][static_cast<std::size_t>(labels[i])];
  return static_cast<double>(s / static_cast<long double>(labels.size()));
}

// Full-batch Nesterov gradient descent on L2-penalized cross entropy with early
// stopping on validation loss. Step size is 1 / Lipschitz bound of the gradient.
inline SoftmaxModel train_softmax(const Matrix& xb_tr, const std::vector<int>& y_tr, const Matrix& xb_va,
                                  const std::vector<int>& y_va, int n_classes, double l2, const ClassifierConfig& cfg) {
  const Index n = xb_tr.rows();
  Matrix onehot = Matrix::Zero(n, n_classes);
  for (Index i = 0; i < n; ++i) onehot(i, y_tr[static_cast<std::size_t>(i)]) = 1.0;
  Eigen::BDCSVD<Matrix> svd(xb_tr);
  const double smax = svd.singularValues()(0);
  const double step = 1.0 / (0.5 * smax * smax / static_cast<double>(n) + l2);
  Matrix w = Matrix::Zero(xb_tr.cols(), n_classes);
  Matrix velocity = Matrix::Zero(xb_tr.cols(), n_classes);
  SoftmaxModel best{w, 0};
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const Matrix look = w + cfg.momentum * velocity;
    Matrix logits = xb_tr * look;
    for (Index i = 0; i < n; ++i) {
      const double mx = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - mx).exp();
      logits.row(i) /= logits.row(i).sum();
    }
    Matrix grad = xb_tr.transpose() * (logits - onehot) / static_cast<double>(n);
    grad.topRows(grad.rows() - 1) += l2 * look.topRows(look.rows() - 1);
    velocity = cfg.momentum * velocity - step * grad;
    w += velocity;
    if (!w.allFinite()) fail("classifier probe: optimization diverged");
    if (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs) {
      const double val = mean_nll(xb_va * w, y_va);
      if (val < best_val) {
        best_val = val;
        best = {w, epoch};
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  return best;
}

}  // namespace detail

// Multinomial logistic regression on standardized features. The L2 penalty is
// chosen by validation accuracy (ties: lower validation loss).
inline ClassifierResult classifier_probe(const Matrix& x, const std::vector<int>& labels, int n_classes,
                                         const RowSplit& split, const ClassifierConfig& cfg = {}) {
  require(x.rows() == static_cast<Index>(labels.size()), "classifier probe: rows not aligned");
  require(n_classes >= 2, "classifier probe: need at least 2 classes");
  detail::require_split(split, x.rows());
  for (int l : labels)
    if (l < 0 || l >= n_classes) fail("classifier probe: label out of range");
  auto pick = [&](const std::vector<Index>& rows) {
    std::vector<int> out;
    for (Index i : rows) out.push_back(labels[static_cast<std::size_t>(i)]);
    return out;
  };
  const auto y_tr = pick(split.train), y_va = pick(split.val), y_te = pick(split.test);
  if (std::all_of(y_tr.begin(), y_tr.end(), [&](int l) { return l == y_tr.front(); }))
    fail("classifier probe: training set contains a single class");
  const Matrix x_tr = select_rows(x, split.train);
  const auto scaler = detail::Standardizer::fit(x_tr);
  const Matrix xb_tr = detail::with_bias(scaler.apply(x_tr));
  const Matrix xb_va = detail::with_bias(scaler.apply(select_rows(x, split.val)));
  const Matrix xb_te = detail::with_bias(scaler.apply(select_rows(x, split.test)));

  detail::SoftmaxModel best;
  double best_acc = -1.0, best_nll = std::numeric_limits<double>::infinity(), best_l2 = 0.0;
  for (double l2 : cfg.l2_grid) {
    auto model = detail::train_softmax(xb_tr, y_tr, xb_va, y_va, n_classes, l2, cfg);
    const Matrix val_logits = xb_va * model.w;
    const double acc = accuracy(val_logits, y_va);
    const double nll = detail::mean_nll(val_logits, y_va);
    if (acc > best_acc || (acc == best_acc && nll < best_nll)) {
      best_acc = acc;
      best_nll = nll;
      best_l2 = l2;
      best = std::move(model);
    }
  }
  const Matrix test_logits = xb_te * best.w;
  return {accuracy(test_logits, y_te), perplexity(log_softmax(test_logits), y_te), best_l2, best.epochs};
}

// ---------------------------------------------------------------------------
// Bottleneck MLP probe

struct BottleneckConfig {
  int hidden = 50;
  double l2_output = 1e-4;
  double learning_rate = 1e-2;
  int max_epochs = 3000;
  int eval_every = 10;
  int patience = 10;
  std::uint64_t seed = 0;
};

struct BottleneckResult {
  double metric = 0.0;  // mean over test rows of corr(predicted, true)
  double val_mse = 0.0;
  int epochs = 0;
};

inline double mean_row_correlation(const Matrix& pred, const Matrix& truth) {
  require(pred.rows() == truth.rows() && pred.cols() == truth.cols(), "row correlation: shape mismatch");
  double s = 0.0;
  Index n = 0;
  for (Index i = 0; i < pred.rows(); ++i) {
    const double r = pearson(pred.row(i).transpose(), truth.row(i).transpose());
    if (std::isnan(r)) continue;
    s += r;
    ++n;
  }
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

// Linear map features -> hidden -> targets, no nonlinearity. Full-batch Adam on
// MSE plus an L2 penalty on the output layer weights; the weights with the best
// validation MSE (checked every eval_every epochs) are kept.
inline BottleneckResult bottleneck_probe(const Matrix& x, const Matrix& y, const RowSplit& split,
                                         const BottleneckConfig& cfg = {}) {
  require(x.rows() == y.rows(), "bottleneck probe: rows not aligned");
  detail::require_split(split, x.rows());
  require(cfg.hidden >= 1, "bottleneck probe: hidden size must be positive");
  const Matrix x_tr_raw = select_rows(x, split.train);
  const auto scaler = detail::Standardizer::fit(x_tr_raw);
  const Matrix xb_tr = detail::with_bias(scaler.apply(x_tr_raw));
  const Matrix xb_va = detail::with_bias(scaler.apply(select_rows(x, split.val)));
  const Matrix xb_te = detail::with_bias(scaler.apply(select_rows(x, split.test)));
  const Matrix y_tr = select_rows(y, split.train), y_va = select_rows(y, split.val), y_te = select_rows(y, split.test);
  const Index n = xb_tr.rows(), d = y.cols();

  auto rng = make_rng(cfg.seed, 0x424f54544cULL);
  Matrix a = normal_matrix(xb_tr.cols(), cfg.hidden, rng) / std::sqrt(static_cast<double>(xb_tr.cols()));
  Matrix b = normal_matrix(cfg.hidden + 1, d, rng) / std::sqrt(static_cast<double>(cfg.hidden));
  auto forward = [&](const Matrix& xb, const Matrix& wa, const Matrix& wb) {
    return Matrix(detail::with_bias(xb * wa) * wb);
  };
  auto mse = [](const Matrix& p, const Matrix& t) { return (p - t).squaredNorm() / static_cast<double>(p.size()); };

  Matrix ma = Matrix::Zero(a.rows(), a.cols()), va = ma;
  Matrix mb = Matrix::Zero(b.rows(), b.cols()), vb = mb;
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  BottleneckResult res;
  Matrix best_a = a, best_b = b;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  double loss = 0.0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const Matrix h = detail::with_bias(xb_tr * a);
    const Matrix err = h * b - y_tr;
    loss = err.squaredNorm() / static_cast<double>(err.size());
    if (!std::isfinite(loss)) fail("bottleneck probe: diverged (final loss " + std::to_string(loss) + ")");
    const double scale = 2.0 / static_cast<double>(n * d);
    Matrix gb = scale * h.transpose() * err;
    gb.topRows(cfg.hidden) += 2.0 * cfg.l2_output * b.topRows(cfg.hidden);
    const Matrix gh = scale * err * b.topRows(cfg.hidden).transpose();
    const Matrix ga = xb_tr.transpose() * gh;
    const double c1 = 1.0 - std::pow(beta1, epoch), c2 = 1.0 - std::pow(beta2, epoch);
    ma = beta1 * ma + (1 - beta1) * ga;
    va = beta2 * va + (1 - beta2) * ga.cwiseProduct(ga);
    mb = beta1 * mb + (1 - beta1) * gb;
    vb = beta2 * vb + (1 - beta2) * gb.cwiseProduct(gb);
    a -= (cfg.learning_rate * (ma / c1).array() / ((va / c2).array().sqrt() + eps)).matrix();
    b -= (cfg.learning_rate * (mb / c1).array() / ((vb / c2).array().sqrt() + eps)).matrix();
    if (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs) {
      const double val = mse(forward(xb_va, a, b), y_va);
      if (!std::isfinite(val)) fail("bottleneck probe: diverged (final loss " + std::to_string(loss) + ")");
      if (val < best_val) {
        best_val = val;
        best_a = a;
        best_b = b;
        res.epochs = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  res.val_mse = best_val;
  res.metric = mean_row_correlation(forward(xb_te, best_a, best_b), y_te);
  return res;
}

// Embedding baselines. Random: every target row drawn independently from
// N(0, 1), so no word identity survives. Shuffled: the real vectors permuted
// among vocabulary entries.
inline Matrix random_targets(Index rows, Index dims, std::uint64_t seed) {
  auto rng = make_rng(seed, 0x52414e44ULL);
  return normal_matrix(rows, dims, rng);
}

inline EmbeddingTable shuffled_embeddings(const EmbeddingTable& emb, std::uint64_t seed) {
  auto rng = make_rng(seed, 0x53485546ULL);
  std::vector<Index> perm(static_cast<std::size_t>(emb.vectors.rows()));
  std::iota(perm.begin(), perm.end(), Index{0});
  shuffle(perm, rng);
  return EmbeddingTable::build(emb.vocabulary, select_rows(emb.vectors, perm));
}

// ---------------------------------------------------------------------------
// Results

enum class MetricKind { mean_corr, accuracy, perplexity };

inline const char* metric_name(MetricKind k) {
  switch (k) {
    case MetricKind::mean_corr: return "mean_corr";
    case MetricKind::accuracy: return "accuracy";
    case MetricKind::perplexity: return "perplexity";
  }
  return "?";
}

struct NormalizedCurve {
  std::vector<double> values;
  bool constant = false;
};

// Min-max across layers so the best layer maps to 1 and the worst to 0.
// Perplexity is negated first (lower is better).
inline NormalizedCurve normalize_curve(const std::vector<double>& metrics, MetricKind kind) {
  if (metrics.size() < 2) fail("normalize: need at least 2 layers");
  std::vector<double> v = metrics;
  if (kind == MetricKind::perplexity)
    for (auto& x : v) x = -x;
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, hi = *hi_it;
  NormalizedCurve c;
  if (!(hi > lo)) {
    c.values.assign(v.size(), 1.0);
    c.constant = true;
    return c;
  }
  for (double x : v) c.values.push_back((x - lo) / (hi - lo));
  return c;
}

struct ProbeRecord {
  std::string layer;
  std::string task;
  std::uint64_t seed = 0;
  MetricKind kind = MetricKind::mean_corr;
  double value = 0.0;
  double baseline = std::numeric_limits<double>::quiet_NaN();
};

struct ProbeResult {
  std::vector<ProbeRecord> records;

  void write_csv(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    out.precision(17);
    out << "layer,task,seed,metric,value,baseline\n";
    for (const auto& r : records) {
      out << r.layer << ',' << r.task << ',' << r.seed << ',' << metric_name(r.kind) << ',' << r.value << ',';
      if (!std::isnan(r.baseline)) out << r.baseline;
      out << '\n';
    }
  }

  // Per task: layers in first-seen order, seed-averaged raw metric, min-max curve.
  json normalized_curves() const {
    std::vector<std::string> tasks;
    for (const auto& r : records)
      if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
    json out = json::object();
    for (const auto& task : tasks) {
      std::vector<std::string> layers;
      std::map<std::string, std::pair<double, int>> acc;
      MetricKind kind = MetricKind::mean_corr;
      for (const auto& r : records) {
        if (r.task != task) continue;
        kind = r.kind;
        if (!acc.count(r.layer)) layers.push_back(r.layer);
        acc[r.layer].first += r.value;
        acc[r.layer].second += 1;
      }
      std::vector<double> raw;
      for (const auto& l : layers) raw.push_back(acc[l].first / acc[l].second);
      json entry{{"metric", metric_name(kind)}, {"layers", layers}, {"raw", raw}, {"normalization", "min-max"}};
      if (raw.size() >= 2) {
        const auto c = normalize_curve(raw, kind);
        entry["normalized"] = c.values;
        entry["constant"] = c.constant;
      }
      out[task] = entry;
    }
    return out;
  }
};

}  // namespace speechenc

#endif  // SPEECHENC_PROBING_HPP
