#ifndef SPEECHENC_SIMULATE_HPP
#define SPEECHENC_SIMULATE_HPP

// Synthetic datasets with known ground truth.
//
// Two independent latent spaces ("acoustic" A and "semantic" S, p columns each)
// are AR(1) processes, z-scored per story. Layer l of an L-layer hierarchy is
//   X_l = ((L - l) / L) A + (l / L) S.
// Voxel v has a level c_v in [0, 1] and responds to
//   s_v(t) = sum_d k_d [ (1 - c_v) A(t - d) bA_v + c_v S(t - d) bS_v ]
// over delays d = 1..4 with kernel k, plus Gaussian noise scaled to a target SNR.
// Responses are z-scored per story (written as preprocessed).

#include "speechenc/core.hpp"
#include "speechenc/io.hpp"
#include "speechenc/timeseries.hpp"

#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace speechenc {

enum class HierarchyProfile { two_groups, gradient, acoustic, semantic, identical };

inline HierarchyProfile parse_profile(const std::string& s) {
  if (s == "two_groups") return HierarchyProfile::two_groups;
  if (s == "gradient") return HierarchyProfile::gradient;
  if (s == "acoustic") return HierarchyProfile::acoustic;
  if (s == "semantic") return HierarchyProfile::semantic;
  if (s == "identical") return HierarchyProfile::identical;
  fail("unknown hierarchy profile '" + s + "'");
}

struct SimSpec {
  Index n_stories = 10;
  Index n_test_stories = 1;
  Index story_len_tr = 300;
  Index n_voxels = 100;
  Index latent_dims = 8;   // columns per latent space
  Index n_layers = 13;     // 0 disables layer features
  double snr = 1.0;        // signal variance / noise variance; infinity for noiseless
  std::vector<double> snr_per_voxel;  // overrides snr when non-empty
  HierarchyProfile profile = HierarchyProfile::two_groups;
  double phi = 0.9;
  std::vector<double> kernel{0.2, 0.4, 0.3, 0.1};  // response weight at delays 1..4 TR
  double tr_s = 2.0;
  int word_classes = 8;
  int phoneme_classes = 6;
  Index embedding_dims = 20;
  std::uint64_t seed = 0;
};

inline void validate(const SimSpec& s) {
  require(s.n_stories >= 2 && s.n_test_stories >= 1 && s.n_test_stories < s.n_stories, "sim: need train and test stories");
  require(s.story_len_tr > 20 && s.n_voxels >= 1 && s.latent_dims >= 1, "sim: dimensions must be positive");
  require(s.n_layers == 0 || s.n_layers >= 3, "sim: layer hierarchy needs L >= 3");
  require(s.snr > 0.0, "sim: snr must be positive");
  require(s.snr_per_voxel.empty() || static_cast<Index>(s.snr_per_voxel.size()) == s.n_voxels,
          "sim: snr_per_voxel must have one entry per voxel");
  for (double v : s.snr_per_voxel) require(v > 0.0, "sim: snr must be positive");
  require(std::abs(s.phi) < 1.0, "sim: |phi| must be < 1");
  require(!s.kernel.empty(), "sim: empty response kernel");
  require(s.word_classes >= 2 && s.phoneme_classes >= 2, "sim: need at least 2 classes");
}

inline std::string layer_label(Index l) { return "sim/layer" + std::to_string(l); }

// Unit-variance AR(1) columns, z-scored so every story has exactly unit variance.
inline Matrix ar1_features(Index t_len, Index dims, double phi, std::mt19937_64& rng) {
  Matrix x(t_len, dims);
  const double innov = std::sqrt(1.0 - phi * phi);
  for (Index j = 0; j < dims; ++j) {
    double v = normal(rng);
    for (Index b = 0; b < 50; ++b) v = phi * v + innov * normal(rng);
    for (Index t = 0; t < t_len; ++t) {
      v = phi * v + innov * normal(rng);
      x(t, j) = v;
    }
  }
  return zscore_columns(x);
}

// sum_d kernel[d-1] * x(t - d), zero before the start.
inline Matrix fir_filter(const Matrix& x, const std::vector<double>& kernel) {
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (std::size_t k = 0; k < kernel.size(); ++k) {
    const auto d = static_cast<Index>(k + 1);
    if (d >= x.rows()) break;
    out.bottomRows(x.rows() - d) += kernel[k] * x.topRows(x.rows() - d);
  }
  return out;
}

// sum_{d,d'} k_d k_d' phi^|d-d'|: variance of the FIR-filtered unit AR(1) process.
inline double fir_ar1_gain(const std::vector<double>& kernel, double phi) {
  double q = 0.0;
  for (std::size_t a = 0; a < kernel.size(); ++a)
    for (std::size_t b = 0; b < kernel.size(); ++b)
      q += kernel[a] * kernel[b] * std::pow(phi, std::abs(static_cast<double>(a) - static_cast<double>(b)));
  return q;
}

// Analytic correlation ceiling for signal variance s and noise variance n.
inline double ceiling_correlation(double signal_var, double noise_var) {
  if (signal_var <= 0.0) return 0.0;
  return 1.0 / std::sqrt(1.0 + noise_var / signal_var);
}

struct SimTruth {
  Vector level;          // c_v
  Matrix beta_acoustic;  // p x V
  Matrix beta_semantic;  // p x V
  Vector signal_var;     // analytic
  Vector noise_sd;
  Vector ceiling;        // analytic r* per voxel
  // Per feature label: analytic best-achievable r per voxel, and the
  // correlation of that optimal predictor with the observed test responses.
  std::map<std::string, Vector> label_ceiling;
  std::map<std::string, Vector> label_oracle_test;
  Matrix word_prototypes;     // classes x p over S
  Matrix phoneme_prototypes;  // classes x p over A
  Matrix word_embeddings;     // classes x embedding_dims
};

struct SimStory {
  std::string id;
  StoryRole role = StoryRole::train;
  Matrix acoustic, semantic;  // T x p latents
  std::map<std::string, FeatureMatrix> features;
  ResponseMatrix responses;
  Matrix signal;  // noise-free T x V
  AlignmentTable words, phonemes;
};

struct SimDataset {
  SimSpec spec;
  std::vector<SimStory> stories;
  SimTruth truth;
  std::vector<std::string> labels;  // feature labels in export order
};

namespace detail {

inline Vector voxel_levels(const SimSpec& s, std::mt19937_64& rng) {
  Vector c(s.n_voxels);
  for (Index v = 0; v < s.n_voxels; ++v) {
    switch (s.profile) {
      case HierarchyProfile::two_groups: c(v) = v < s.n_voxels / 2 ? 0.0 : 1.0; break;
      case HierarchyProfile::gradient: c(v) = uniform01(rng); break;
      case HierarchyProfile::acoustic: c(v) = 0.0; break;
      case HierarchyProfile::semantic: c(v) = 1.0; break;
      case HierarchyProfile::identical: c(v) = 0.5; break;
    }
  }
  return c;
}

// Mixing weights (acoustic, semantic) defining a feature label.
inline std::pair<double, double> label_mix(const std::string& label, Index n_layers) {
  if (label == "sim/acoustic") return {1.0, 0.0};
  if (label == "sim/semantic") return {0.0, 1.0};
  for (Index l = 0; l < n_layers; ++l)
    if (label == layer_label(l))
      return {static_cast<double>(n_layers - l) / static_cast<double>(n_layers), static_cast<double>(l) / static_cast<double>(n_layers)};
  fail("unknown simulated label " + label);
}

// Segments of 2-4 TRs covering the story, labeled by the nearest prototype to the
// segment mean of `latent`.
inline AlignmentTable label_segments(const Matrix& latent, const Matrix& prototypes, const std::string& prefix,
                                     AlignmentKind kind, double tr_s, std::mt19937_64& rng) {
  AlignmentTable table;
  table.kind = kind;
  Index t = 0;
  while (t < latent.rows()) {
    const Index len = std::min<Index>(2 + static_cast<Index>(uniform_index(rng, 3)), latent.rows() - t);
    const Vector mean = latent.middleRows(t, len).colwise().mean().transpose();
    Index best = 0;
    (prototypes * mean).maxCoeff(&best);
    table.rows.push_back({static_cast<double>(t) * tr_s, static_cast<double>(t + len) * tr_s, prefix + std::to_string(best)});
    t += len;
  }
  return table;
}

}  // namespace detail

inline std::vector<std::string> simulated_labels(Index n_layers) {
  std::vector<std::string> labels{"sim/acoustic", "sim/semantic"};
  for (Index l = 0; l < n_layers; ++l) labels.push_back(layer_label(l));
  return labels;
}

// Layer l mixes the latents as ((L-l)/L) A + (l/L) S.
inline std::vector<FeatureMatrix> gen_layer_hierarchy(const Matrix& acoustic, const Matrix& semantic, Index n_layers,
                                                      double rate_hz) {
  require(n_layers >= 3, "sim: layer hierarchy needs L >= 3");
  require(acoustic.rows() == semantic.rows() && acoustic.cols() == semantic.cols(), "sim: latent shapes differ");
  std::vector<FeatureMatrix> layers;
  for (Index l = 0; l < n_layers; ++l) {
    const auto [a, b] = detail::label_mix(layer_label(l), n_layers);
    layers.push_back(FeatureMatrix{a * acoustic + b * semantic, rate_hz, layer_label(l), true});
  }
  return layers;
}

inline SimDataset gen_dataset(const SimSpec& spec) {
  validate(spec);
  SimDataset ds;
  ds.spec = spec;
  ds.labels = simulated_labels(spec.n_layers);
  const Index p = spec.latent_dims, v_count = spec.n_voxels;
  auto rng = make_rng(spec.seed, 0);

  SimTruth& truth = ds.truth;
  truth.level = detail::voxel_levels(spec, rng);
  truth.beta_acoustic = normal_matrix(p, v_count, rng) / std::sqrt(static_cast<double>(p));
  truth.beta_semantic = normal_matrix(p, v_count, rng) / std::sqrt(static_cast<double>(p));
  truth.word_prototypes = normal_matrix(spec.word_classes, p, rng);
  truth.phoneme_prototypes = normal_matrix(spec.phoneme_classes, p, rng);
  truth.word_embeddings = normal_matrix(spec.word_classes, spec.embedding_dims, rng);

  const double gain = fir_ar1_gain(spec.kernel, spec.phi);
  truth.signal_var.resize(v_count);
  truth.noise_sd.resize(v_count);
  truth.ceiling.resize(v_count);
  // Effective per-voxel weights on A and S.
  Matrix w_a(p, v_count), w_s(p, v_count);
  for (Index v = 0; v < v_count; ++v) {
    const double c = truth.level(v);
    w_a.col(v) = (1.0 - c) * truth.beta_acoustic.col(v);
    w_s.col(v) = c * truth.beta_semantic.col(v);
    truth.signal_var(v) = gain * (w_a.col(v).squaredNorm() + w_s.col(v).squaredNorm());
    const double snr = spec.snr_per_voxel.empty() ? spec.snr : spec.snr_per_voxel[static_cast<std::size_t>(v)];
    const double noise_var = std::isinf(snr) ? 0.0 : truth.signal_var(v) / snr;
    truth.noise_sd(v) = std::sqrt(noise_var);
    truth.ceiling(v) = ceiling_correlation(truth.signal_var(v), noise_var);
  }
  // Best linear predictor of the signal from a*A + b*S: per column j the target
  // mixes A_j and S_j, and the orthogonal combination is independent of the
  // regressor, so explained variance is gain * sum_j (a wA_j + b wS_j)^2 / (a^2 + b^2).
  for (const auto& label : ds.labels) {
    const auto [a, b] = detail::label_mix(label, spec.n_layers);
    Vector ceil(v_count);
    for (Index v = 0; v < v_count; ++v) {
      const double explained = gain * (a * w_a.col(v) + b * w_s.col(v)).squaredNorm() / (a * a + b * b);
      ceil(v) = std::sqrt(explained / (truth.signal_var(v) + truth.noise_sd(v) * truth.noise_sd(v)));
    }
    truth.label_ceiling[label] = ceil;
  }

  const Index n_train = spec.n_stories - spec.n_test_stories;
  for (Index si = 0; si < spec.n_stories; ++si) {
    auto srng = make_rng(spec.seed, static_cast<std::uint64_t>(si) + 1);
    SimStory st;
    char id[32];
    std::snprintf(id, sizeof id, "story%02lld", static_cast<long long>(si));
    st.id = id;
    st.role = si < n_train ? StoryRole::train : StoryRole::test;
    st.acoustic = ar1_features(spec.story_len_tr, p, spec.phi, srng);
    st.semantic = ar1_features(spec.story_len_tr, p, spec.phi, srng);
    st.signal = fir_filter(st.acoustic, spec.kernel) * w_a + fir_filter(st.semantic, spec.kernel) * w_s;
    Matrix y = st.signal;
    for (Index v = 0; v < v_count; ++v)
      for (Index t = 0; t < y.rows(); ++t) y(t, v) += truth.noise_sd(v) * normal(srng);
    st.responses.data = y;
    st.responses.tr_seconds = spec.tr_s;
    st.responses.preprocessed = true;
    for (Index v = 0; v < v_count; ++v) {
      const double mean = y.col(v).mean();
      const double var = (y.col(v).array() - mean).square().mean();
      if (var > 0.0) st.responses.data.col(v) = (y.col(v).array() - mean) / std::sqrt(var);
    }
    for (const auto& label : ds.labels) {
      const auto [a, b] = detail::label_mix(label, spec.n_layers);
      st.features[label] = FeatureMatrix{a * st.acoustic + b * st.semantic, 1.0 / spec.tr_s, label, true};
    }
    st.words = detail::label_segments(st.semantic, truth.word_prototypes, "w", AlignmentKind::word, spec.tr_s, srng);
    st.phonemes = detail::label_segments(st.acoustic, truth.phoneme_prototypes, "p", AlignmentKind::phoneme, spec.tr_s, srng);
    ds.stories.push_back(std::move(st));
  }

  // Empirical oracle on the concatenated test stories.
  std::vector<Matrix> test_y, test_a, test_s;
  for (const auto& st : ds.stories) {
    if (st.role != StoryRole::test) continue;
    test_y.push_back(st.responses.data);
    test_a.push_back(fir_filter(st.acoustic, spec.kernel));
    test_s.push_back(fir_filter(st.semantic, spec.kernel));
  }
  const Matrix ty = vstack(test_y), ta = vstack(test_a), ts = vstack(test_s);
  for (const auto& label : ds.labels) {
    const auto [a, b] = detail::label_mix(label, spec.n_layers);
    const Matrix x = a * ta + b * ts;
    Vector r(v_count);
    for (Index v = 0; v < v_count; ++v) {
      const Vector coef = (a * w_a.col(v) + b * w_s.col(v)) / (a * a + b * b);
      // a label carrying none of the voxel's latent predicts nothing
      r(v) = coef.isZero(0.0) ? 0.0 : pearson(ty.col(v), x * coef);
    }
    truth.label_oracle_test[label] = r;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Nested feature spaces

struct NestedSpaces {
  Matrix space1;                 // T x P1
  Matrix space2;                 // column subset of space1
  Matrix space3;                 // space1 followed by extra columns
  std::vector<Index> subset_columns;
  std::vector<Index> superset_extra_columns;  // indices within space3
};

// Builds the three spaces over one AR(1) draw. `subset_cols` <= P1 columns of
// space1 form space2; `extra_cols` new independent columns extend space3.
inline NestedSpaces gen_nested_features(Index t_len, Index p1, Index subset_cols, Index extra_cols, double phi,
                                        std::uint64_t seed) {
  require(subset_cols >= 1 && subset_cols <= p1, "nested: subset size must be in [1, P1]");
  require(extra_cols >= 0, "nested: negative extra column count");
  auto rng = make_rng(seed, 0x4e455354ULL);
  NestedSpaces n;
  n.space1 = ar1_features(t_len, p1, phi, rng);
  for (Index j = 0; j < subset_cols; ++j) n.subset_columns.push_back(j);
  n.space2 = n.space1.leftCols(subset_cols);
  if (extra_cols > 0) {
    n.space3 = hstack(n.space1, ar1_features(t_len, extra_cols, phi, rng));
  } else {
    n.space3 = n.space1;
  }
  for (Index j = 0; j < extra_cols; ++j) n.superset_extra_columns.push_back(p1 + j);
  return n;
}

// Responses y = fir_filter(x, kernel) * beta + noise with per-voxel noise sd.
inline Matrix simulate_responses(const Matrix& x, const Matrix& beta, const std::vector<double>& kernel,
                                 const Vector& noise_sd, std::mt19937_64& rng) {
  require(x.cols() == beta.rows() && noise_sd.size() == beta.cols(), "simulate_responses: shape mismatch");
  Matrix y = fir_filter(x, kernel) * beta;
  for (Index v = 0; v < y.cols(); ++v)
    for (Index t = 0; t < y.rows(); ++t) y(t, v) += noise_sd(v) * normal(rng);
  return y;
}

// ---------------------------------------------------------------------------
// Export

inline json truth_summary(const SimDataset& ds) {
  json labels = json::object();
  for (const auto& label : ds.labels) {
    labels[label] = {{"mean_ceiling", ds.truth.label_ceiling.at(label).mean()},
                     {"mean_oracle_test", ds.truth.label_oracle_test.at(label).mean()}};
  }
  const auto& s = ds.spec;
  return json{{"seed", s.seed},
              {"n_stories", s.n_stories},
              {"story_len_tr", s.story_len_tr},
              {"n_voxels", s.n_voxels},
              {"latent_dims", s.latent_dims},
              {"n_layers", s.n_layers},
              {"snr", std::isinf(s.snr) ? json("inf") : json(s.snr)},
              {"phi", s.phi},
              {"kernel", s.kernel},
              {"tr_s", s.tr_s},
              {"mean_ceiling", ds.truth.ceiling.mean()},
              {"labels", labels}};
}

// Writes MTX1 features/responses, alignments, embeddings, ground truth and a
// manifest. Returns the paths written, relative to `dir`.
inline std::vector<std::string> write_dataset(const SimDataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "responses");
  fs::create_directories(dir / "alignments");
  fs::create_directories(dir / "truth");
  std::vector<std::string> written;
  DatasetManifest m;
  m.seed = ds.spec.seed;
  for (const auto& st : ds.stories) {
    StoryEntry e;
    e.story_id = st.id;
    e.role = st.role;
    e.duration_s = static_cast<double>(st.responses.data.rows()) * ds.spec.tr_s;
    for (const auto& label : ds.labels) {
      std::string fname = label;
      std::replace(fname.begin(), fname.end(), '/', '_');
      const std::string rel = "features/" + st.id + "." + fname + ".mtx";
      write_matrix(st.features.at(label), dir / rel);
      e.feature_paths[label] = rel;
      written.push_back(rel);
    }
    e.response_path = "responses/" + st.id + ".mtx";
    write_matrix(st.responses, dir / e.response_path);
    written.push_back(e.response_path);
    e.words_path = "alignments/" + st.id + ".words.csv";
    e.phonemes_path = "alignments/" + st.id + ".phonemes.csv";
    write_alignment(st.words, dir / e.words_path);
    write_alignment(st.phonemes, dir / e.phonemes_path);
    written.push_back(e.words_path);
    written.push_back(e.phonemes_path);
    m.stories.push_back(std::move(e));
  }
  // ROI masks: the two halves of the voxel range.
  std::vector<Index> first, second;
  for (Index v = 0; v < ds.spec.n_voxels; ++v) (v < ds.spec.n_voxels / 2 ? first : second).push_back(v);
  m.roi_masks["lower_half"] = first;
  m.roi_masks["upper_half"] = second;

  {
    std::ofstream out(dir / "truth" / "word_embeddings.tsv");
    out.precision(17);
    for (Index k = 0; k < ds.truth.word_embeddings.rows(); ++k) {
      out << 'w' << k;
      for (Index j = 0; j < ds.truth.word_embeddings.cols(); ++j) out << '\t' << ds.truth.word_embeddings(k, j);
      out << '\n';
    }
    written.push_back("truth/word_embeddings.tsv");
  }
  Matrix per_voxel(ds.spec.n_voxels, 4);
  per_voxel.col(0) = ds.truth.level;
  per_voxel.col(1) = ds.truth.signal_var;
  per_voxel.col(2) = ds.truth.noise_sd;
  per_voxel.col(3) = ds.truth.ceiling;
  write_mtx(per_voxel, dir / "truth" / "voxels.mtx", Dtype::f64,
            json{{"kind", "truth"}, {"columns", {"level", "signal_var", "noise_sd", "ceiling"}}});
  written.push_back("truth/voxels.mtx");
  write_mtx(ds.truth.beta_acoustic, dir / "truth" / "beta_acoustic.mtx", Dtype::f64, json{{"kind", "truth"}});
  write_mtx(ds.truth.beta_semantic, dir / "truth" / "beta_semantic.mtx", Dtype::f64, json{{"kind", "truth"}});
  written.push_back("truth/beta_acoustic.mtx");
  written.push_back("truth/beta_semantic.mtx");
  Matrix oracle(ds.spec.n_voxels, static_cast<Index>(ds.labels.size()));
  Matrix ceil(ds.spec.n_voxels, static_cast<Index>(ds.labels.size()));
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    oracle.col(static_cast<Index>(i)) = ds.truth.label_oracle_test.at(ds.labels[i]);
    ceil.col(static_cast<Index>(i)) = ds.truth.label_ceiling.at(ds.labels[i]);
  }
  write_mtx(oracle, dir / "truth" / "label_oracle_test.mtx", Dtype::f64, json{{"kind", "truth"}, {"mask", true}, {"columns", ds.labels}});
  write_mtx(ceil, dir / "truth" / "label_ceiling.mtx", Dtype::f64, json{{"kind", "truth"}, {"columns", ds.labels}});
  written.push_back("truth/label_oracle_test.mtx");
  written.push_back("truth/label_ceiling.mtx");
  write_json(dir / "truth" / "summary.json", truth_summary(ds));
  written.push_back("truth/summary.json");
  write_json(dir / "manifest.json", manifest_to_json(m));
  written.push_back("manifest.json");
  return written;
}

}  // namespace speechenc

#endif  // SPEECHENC_SIMULATE_HPP
