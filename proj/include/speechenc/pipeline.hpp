#ifndef SPEECHENC_PIPELINE_HPP
#define SPEECHENC_PIPELINE_HPP

// Command implementations behind the speechenc tool. Every command writes into
// <out>/<command>/ and finishes with a run.json listing the files it wrote.

#include "speechenc/acoustic.hpp"
#include "speechenc/core.hpp"
#include "speechenc/io.hpp"
#include "speechenc/layer_selectivity.hpp"
#include "speechenc/probing.hpp"
#include "speechenc/ridge.hpp"
#include "speechenc/simulate.hpp"
#include "speechenc/timeseries.hpp"
#include "speechenc/varpart.hpp"

#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace speechenc::pipeline {

inline constexpr const char* kVersion = "0.1.0";

// Missing inputs (config, manifest): exit code 2 rather than 1.
class NotFound : public Error {
 public:
  using Error::Error;
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct RunContext {
  json config = json::object();  // effective config, overrides applied
  fs::path out = "out";
  std::uint64_t seed = 0;
  int threads = 1;
};

template <class T>
T value_or(const json& j, const std::string& key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail("config: bad value for '" + key + "': " + e.what());
  }
}

inline const json& section(const RunContext& ctx, const std::string& name) {
  static const json empty = json::object();
  if (ctx.config.contains(name)) {
    if (!ctx.config.at(name).is_object()) fail("config: section '" + name + "' must be an object");
    return ctx.config.at(name);
  }
  return empty;
}

// Collects output paths (relative to the command directory) for run.json.
class Recorder {
 public:
  Recorder(const RunContext& ctx, std::string command) : ctx_(ctx), command_(std::move(command)) {
    dir_ = ctx.out / command_;
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }

  fs::path file(const std::string& rel) {
    const fs::path p = dir_ / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    files_.push_back(rel);
    return p;
  }

  // For writers that add a sidecar next to the main file.
  fs::path mtx(const std::string& rel, bool sidecar = true) {
    const fs::path p = file(rel);
    if (sidecar) files_.push_back(rel + ".meta.json");
    return p;
  }

  void note(const std::string& key, json value) { extra_[key] = std::move(value); }

  json finish() {
    std::sort(files_.begin(), files_.end());
    json run{{"command", command_},
             {"version", kVersion},
             {"config_hash", hex64(fnv1a(ctx_.config.dump()))},
             {"config", ctx_.config},
             {"seed", ctx_.seed},
             {"outputs", files_}};
    for (auto& [k, v] : extra_.items()) run[k] = v;
    write_json(dir_ / "run.json", run);
    return run;
  }

 private:
  const RunContext& ctx_;
  std::string command_;
  fs::path dir_;
  std::vector<std::string> files_;
  json extra_ = json::object();
};

inline std::string file_safe(std::string label) {
  for (auto& c : label)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return label;
}

// ---------------------------------------------------------------------------
// Config pieces

inline fs::path manifest_path(const RunContext& ctx) {
  const auto p = value_or<std::string>(ctx.config, "manifest", "");
  if (p.empty()) throw NotFound("manifest not found: no 'manifest' entry in config");
  return p;
}

inline DatasetManifest open_manifest(const RunContext& ctx) {
  const fs::path p = manifest_path(ctx);
  if (!fs::exists(p)) throw NotFound("manifest not found: " + p.string());
  return load_manifest(p);
}

inline CvPlan cv_plan(const RunContext& ctx) {
  const json& c = section(ctx, "cv");
  CvPlan plan;
  plan.n_iterations = value_or(c, "n_iterations", plan.n_iterations);
  plan.n_chunks = value_or(c, "n_chunks", plan.n_chunks);
  plan.chunk_len_tr = value_or(c, "chunk_len_tr", plan.chunk_len_tr);
  plan.seed = ctx.seed;
  return plan;
}

inline std::vector<double> lambda_grid(const RunContext& ctx) {
  return value_or(ctx.config, "grid", default_lambda_grid());
}

struct DesignOptions {
  DelayConfig delays;
  PreprocessConfig preprocess;
  LanczosConfig lanczos;
};

inline DesignOptions design_options(const RunContext& ctx) {
  DesignOptions o;
  o.delays.delays_tr = value_or(ctx.config, "delays", o.delays.delays_tr);
  validate_delays(o.delays);
  const json& p = section(ctx, "preprocess");
  o.preprocess.window_s = value_or(p, "window_s", o.preprocess.window_s);
  o.preprocess.order = value_or(p, "order", o.preprocess.order);
  o.preprocess.trim_tr = value_or(p, "trim_tr", o.preprocess.trim_tr);
  const json& l = section(ctx, "lanczos");
  o.lanczos.lobes = value_or(l, "lobes", o.lanczos.lobes);
  o.lanczos.cutoff_hz = value_or(l, "cutoff_hz", o.lanczos.cutoff_hz);
  return o;
}

inline double threshold(const RunContext& ctx) { return value_or(ctx.config, "threshold", 0.15); }

// Labels named in `key` of `sec` (or the top-level "labels"), else every label of
// the first story. All must exist for every story.
inline std::vector<std::string> labels_for(const RunContext& ctx, const DatasetManifest& m, const json& sec,
                                           const std::string& key = "labels") {
  std::vector<std::string> labels = value_or(sec, key, value_or(ctx.config, "labels", std::vector<std::string>{}));
  if (labels.empty()) {
    if (m.stories.empty()) fail("manifest has no stories");
    for (const auto& [label, path] : m.stories.front().feature_paths) labels.push_back(label);
  }
  for (const auto& s : m.stories)
    for (const auto& l : labels)
      if (!s.feature_paths.count(l)) fail("story '" + s.story_id + "': no feature '" + l + "'");
  return labels;
}

// ---------------------------------------------------------------------------
// Design matrices

struct LoadedResponses {
  Matrix data;
  double tr_s = 2.0;
  Index trim = 0;    // rows removed from each end relative to the raw series
  Index raw_rows = 0;
};

inline LoadedResponses load_responses(const DatasetManifest& m, const StoryEntry& s, const PreprocessConfig& pre) {
  if (s.response_path.empty()) fail("story '" + s.story_id + "': no response file");
  MtxFile f = read_mtx(m.resolve(s.response_path));
  LoadedResponses r;
  r.tr_s = f.meta.value("tr_seconds", 2.0);
  if (f.meta.value("preprocessed", false)) {
    r.trim = f.meta.value("trim_tr", Index{0});
    r.data = std::move(f.data);
    r.raw_rows = r.data.rows() + 2 * r.trim;
  } else {
    r.raw_rows = f.data.rows();
    try {
      r.data = preprocess_responses(ResponseMatrix{std::move(f.data), r.tr_s, false}, pre).data;
    } catch (const Error& e) {
      fail("story '" + s.story_id + "': " + e.what());
    }
    r.trim = pre.trim_tr;
  }
  return r;
}

// Per-column z-score; constant columns become zero.
inline Matrix standardize_features(const Matrix& x) {
  Matrix out = x;
  for (Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double var = (x.col(j).array() - mean).square().mean();
    if (var > 0.0)
      out.col(j) = (x.col(j).array() - mean) / std::sqrt(var);
    else
      out.col(j).setZero();
  }
  return out;
}

inline FeatureMatrix load_feature_at_rate(const DatasetManifest& m, const StoryEntry& s, const std::string& label,
                                          double rate_hz, LanczosConfig lanczos) {
  FeatureMatrix f = read_feature(m.resolve(s.feature_paths.at(label)));
  if (std::abs(f.rate_hz - rate_hz) <= 1e-9 * rate_hz) return f;
  lanczos.target_rate_hz = rate_hz;
  try {
    return lanczos_resample(f, lanczos);
  } catch (const Error& e) {
    fail("story '" + s.story_id + "', feature '" + label + "': " + e.what());
  }
}

// Delayed, standardized, trimmed design rows aligned with the story's responses.
inline Matrix story_design(const DatasetManifest& m, const StoryEntry& s, const std::string& label,
                           const LoadedResponses& r, const DesignOptions& o) {
  const FeatureMatrix f = load_feature_at_rate(m, s, label, 1.0 / r.tr_s, o.lanczos);
  if (f.data.rows() < r.raw_rows)
    fail("story '" + s.story_id + "': feature '" + label + "' has " + std::to_string(f.data.rows()) +
         " rows at the TR rate, responses need " + std::to_string(r.raw_rows));
  const Matrix x = fir_delays(standardize_features(f.data.topRows(r.raw_rows)), o.delays);
  return x.middleRows(r.trim, r.raw_rows - 2 * r.trim);
}

struct StoryCache {
  std::map<std::string, LoadedResponses> responses;

  const LoadedResponses& get(const DatasetManifest& m, const StoryEntry& s, const PreprocessConfig& pre) {
    auto it = responses.find(s.story_id);
    if (it == responses.end()) it = responses.emplace(s.story_id, load_responses(m, s, pre)).first;
    return it->second;
  }
};

// Train stories stacked for fitting and test stories stacked for scoring, in
// manifest order.
inline EncodingSplit encoding_split(const DatasetManifest& m, const std::vector<std::string>& labels,
                                    const DesignOptions& o, StoryCache& cache) {
  m.require_encoding_split();
  std::vector<Matrix> xtr, xte, ytr, yte;
  for (const auto& s : m.stories) {
    if (s.role == StoryRole::val) continue;
    const auto& r = cache.get(m, s, o.preprocess);
    Matrix x = story_design(m, s, labels.front(), r, o);
    for (std::size_t i = 1; i < labels.size(); ++i) x = hstack(x, story_design(m, s, labels[i], r, o));
    (s.role == StoryRole::train ? xtr : xte).push_back(std::move(x));
    (s.role == StoryRole::train ? ytr : yte).push_back(r.data);
  }
  return EncodingSplit{vstack(xtr), vstack(xte), vstack(ytr), vstack(yte)};
}

// ---------------------------------------------------------------------------
// simulate

inline SimSpec sim_spec(const RunContext& ctx) {
  const json& j = section(ctx, "simulate");
  SimSpec s;
  s.n_stories = value_or(j, "n_stories", s.n_stories);
  s.n_test_stories = value_or(j, "n_test_stories", s.n_test_stories);
  s.story_len_tr = value_or(j, "story_len_tr", s.story_len_tr);
  s.n_voxels = value_or(j, "n_voxels", s.n_voxels);
  s.latent_dims = value_or(j, "latent_dims", s.latent_dims);
  s.n_layers = value_or(j, "n_layers", s.n_layers);
  if (j.contains("snr")) {
    const auto& v = j.at("snr");
    if (v.is_string() && v.get<std::string>() == "inf")
      s.snr = std::numeric_limits<double>::infinity();
    else
      s.snr = value_or(j, "snr", s.snr);
  }
  s.snr_per_voxel = value_or(j, "snr_per_voxel", s.snr_per_voxel);
  s.profile = parse_profile(value_or<std::string>(j, "profile", "two_groups"));
  s.phi = value_or(j, "phi", s.phi);
  s.kernel = value_or(j, "kernel", s.kernel);
  s.tr_s = value_or(j, "tr_s", s.tr_s);
  s.word_classes = value_or(j, "word_classes", s.word_classes);
  s.phoneme_classes = value_or(j, "phoneme_classes", s.phoneme_classes);
  s.embedding_dims = value_or(j, "embedding_dims", s.embedding_dims);
  s.seed = ctx.seed;
  return s;
}

inline json cmd_simulate(const RunContext& ctx) {
  Recorder rec(ctx, "simulate");
  const SimDataset ds = gen_dataset(sim_spec(ctx));
  for (const auto& rel : write_dataset(ds, rec.dir())) {
    rec.file(rel);
    if (rel.size() > 4 && rel.substr(rel.size() - 4) == ".mtx") rec.file(rel + ".meta.json");
  }
  rec.note("truth", truth_summary(ds));
  return rec.finish();
}

// ---------------------------------------------------------------------------
// Manifest rewriting for commands that add or replace files

inline DatasetManifest absolutized(const DatasetManifest& m) {
  DatasetManifest out = m;
  auto abs = [&](std::string& p) {
    if (!p.empty()) p = fs::absolute(m.resolve(p)).lexically_normal().string();
  };
  for (auto& s : out.stories) {
    for (auto& [label, p] : s.feature_paths) abs(p);
    abs(s.response_path);
    abs(s.phonemes_path);
    abs(s.words_path);
  }
  return out;
}

// ---------------------------------------------------------------------------
// features: hand-engineered baselines from audio and alignments

inline json cmd_features(const RunContext& ctx) {
  const DatasetManifest m = open_manifest(ctx);
  const json& j = section(ctx, "features");
  Recorder rec(ctx, "features");
  const auto kinds = value_or(j, "kinds", std::vector<std::string>{"fbank", "spectrotemporal", "articulation"});
  const auto audio_dir = value_or<std::string>(j, "audio_dir", "");
  const auto audio_map = value_or(j, "audio", std::map<std::string, std::string>{});
  const double rate = value_or(j, "rate_hz", 100.0);
  MelConfig mel;
  mel.n_mels = value_or(j, "n_mels", mel.n_mels);
  mel.frame_hop_s = 1.0 / rate;

  const auto table_path = value_or<std::string>(j, "articulation_table", "");
  const ArticulationTable table = table_path.empty() ? default_articulation_table() : load_articulation_table(table_path);
  std::optional<EmbeddingTable> emb;
  const auto emb_path = value_or<std::string>(j, "embeddings", "");
  for (const auto& k : kinds) {
    if (k == "word_embedding" && emb_path.empty()) fail("features: word_embedding needs 'embeddings'");
    if (k != "fbank" && k != "spectrotemporal" && k != "articulation" && k != "word_embedding")
      fail("features: unknown kind '" + k + "'");
  }
  if (!emb_path.empty()) emb = load_embedding_table(emb_path);

  DatasetManifest out = absolutized(m);
  json oov = json::object();
  for (auto& s : out.stories) {
    const std::string ctxs = "story '" + s.story_id + "': ";
    auto audio_for = [&]() -> fs::path {
      if (audio_map.count(s.story_id)) return audio_map.at(s.story_id);
      if (!audio_dir.empty()) return fs::path(audio_dir) / (s.story_id + ".wav");
      fail(ctxs + "no audio configured");
    };
    std::optional<Audio> audio;
    std::optional<MelSpec> spec;
    auto need_audio = [&]() -> const MelSpec& {
      if (!spec) {
        const fs::path p = audio_for();
        if (!fs::exists(p)) fail(ctxs + "missing audio file " + p.string());
        audio = read_wav(p);
        spec = mel_spectrogram(*audio, mel);
      }
      return *spec;
    };
    double duration = s.duration_s;
    auto frames = [&]() {
      if (audio) duration = audio->duration_s();
      if (!(duration > 0.0)) duration = need_audio().frames.rows() / rate;
      return frames_for_duration(duration, rate);
    };
    for (const auto& k : kinds) {
      FeatureMatrix f;
      if (k == "fbank") {
        const MelSpec& ms = need_audio();
        f = FeatureMatrix{ms.frames, ms.frame_rate(), "baseline/fbank", true};
      } else if (k == "spectrotemporal") {
        f = spectrotemporal(need_audio());
        f.label = "baseline/spectrotemporal";
      } else if (k == "articulation") {
        if (s.phonemes_path.empty()) fail(ctxs + "articulation needs a phoneme alignment");
        const auto a = read_alignment(s.phonemes_path, AlignmentKind::phoneme);
        try {
          f = articulation_stream(a.table, table, frames(), rate);
        } catch (const Error& e) {
          fail(ctxs + e.what());
        }
        f.label = "baseline/articulation";
      } else {
        if (s.words_path.empty()) fail(ctxs + "word_embedding needs a word alignment");
        const auto a = read_alignment(s.words_path, AlignmentKind::word);
        WordStream ws = word_stream(a.table, *emb, frames(), rate);
        oov[s.story_id] = ws.oov_rate();
        f = std::move(ws.features);
        f.label = "baseline/word_embedding";
      }
      const std::string rel = "features/" + s.story_id + "." + k + ".mtx";
      write_matrix(f, rec.mtx(rel));
      s.feature_paths[f.label] = fs::absolute(rec.dir() / rel).lexically_normal().string();
    }
  }
  write_json(rec.file("manifest.json"), manifest_to_json(out));
  if (!oov.empty()) rec.note("oov_rate", oov);
  return rec.finish();
}

// ---------------------------------------------------------------------------
// resample: every selected feature to the response TR rate

inline json cmd_resample(const RunContext& ctx) {
  const DatasetManifest m = open_manifest(ctx);
  const json& j = section(ctx, "resample");
  const auto labels = labels_for(ctx, m, j);
  const DesignOptions o = design_options(ctx);
  Recorder rec(ctx, "resample");
  DatasetManifest out = absolutized(m);
  for (auto& s : out.stories) {
    const double tr = s.response_path.empty() ? value_or(j, "tr_s", 2.0)
                                              : read_mtx(s.response_path).meta.value("tr_seconds", 2.0);
    for (const auto& label : labels) {
      const FeatureMatrix f = load_feature_at_rate(out, s, label, 1.0 / tr, o.lanczos);
      const std::string rel = "features/" + s.story_id + "." + file_safe(label) + ".mtx";
      write_matrix(f, rec.mtx(rel));
      s.feature_paths[label] = fs::absolute(rec.dir() / rel).lexically_normal().string();
    }
  }
  write_json(rec.file("manifest.json"), manifest_to_json(out));
  return rec.finish();
}

// ---------------------------------------------------------------------------
// preprocess: detrend, trim and z-score raw responses

inline json cmd_preprocess(const RunContext& ctx) {
  const DatasetManifest m = open_manifest(ctx);
  const DesignOptions o = design_options(ctx);
  Recorder rec(ctx, "preprocess");
  DatasetManifest out = absolutized(m);
  for (auto& s : out.stories) {
    if (s.response_path.empty()) continue;
    MtxFile f = read_mtx(s.response_path);
    if (f.meta.value("preprocessed", false)) continue;
    const double tr = f.meta.value("tr_seconds", 2.0);
    ResponseMatrix r;
    try {
      r = preprocess_responses(ResponseMatrix{std::move(f.data), tr, false}, o.preprocess);
    } catch (const Error& e) {
      fail("story '" + s.story_id + "': " + e.what());
    }
    const std::string rel = "responses/" + s.story_id + ".mtx";
    write_mtx(r.data, rec.mtx(rel), Dtype::f64,
              json{{"kind", "response"},
                   {"tr_seconds", tr},
                   {"preprocessed", true},
                   {"trim_tr", o.preprocess.trim_tr},
                   {"savgol_window_s", o.preprocess.window_s},
                   {"savgol_order", o.preprocess.order}});
    s.response_path = fs::absolute(rec.dir() / rel).lexically_normal().string();
  }
  write_json(rec.file("manifest.json"), manifest_to_json(out));
  return rec.finish();
}

// ---------------------------------------------------------------------------
// fit / eval

inline json cmd_fit(const RunContext& ctx) {
  const DatasetManifest m = open_manifest(ctx);
  const auto labels = labels_for(ctx, m, section(ctx, "fit"));
  const DesignOptions o = design_options(ctx);
  const CvPlan plan = cv_plan(ctx);
  const auto grid = lambda_grid(ctx);
  Recorder rec(ctx, "fit");
  StoryCache cache;
  json summary = json::object();
  for (const auto& label : labels) {
    const EncodingSplit sp = encoding_split(m, {label}, o, cache);
    const RidgeFit fit = fit_ridge_cv(sp.x_train, sp.y_train, grid, plan);
    const std::string prefix = file_safe(label);
    rec.mtx(prefix + ".weights.mtx");
    rec.mtx(prefix + ".cv_curve.mtx");
    rec.file(prefix + ".json");
    save_ridge_fit(fit, (rec.dir() / prefix).string());
    std::size_t no_signal = 0;
    for (char c : fit.no_signal) no_signal += c != 0;
    summary[label] = {{"prefix", prefix}, {"n_train_tr", sp.x_train.rows()}, {"no_signal_voxels", no_signal}};
  }
  write_json(rec.file("fits.json"), summary);
  return rec.finish();
}

inline fs::path stage_dir(const RunContext& ctx, const std::string& key, const std::string& command) {
  const auto p = value_or<std::string>(ctx.config, key, "");
  return p.empty() ? ctx.out / command : fs::path(p);
}

inline json cmd_eval(const RunContext& ctx) {
  const DatasetManifest m = open_manifest(ctx);
  const auto labels = labels_for(ctx, m, section(ctx, "eval"));
  const DesignOptions o = design_options(ctx);
  const fs::path fit_dir = stage_dir(ctx, "fit_dir", "fit");
  Recorder rec(ctx, "eval");
  StoryCache cache;
  json summary = json::object();
  for (const auto& label : labels) {
    const std::string prefix = file_safe(label);
    if (!fs::exists(fit_dir / (prefix + ".json"))) throw NotFound("fit not found for '" + label + "' in " + fit_dir.string());
    const RidgeFit fit = load_ridge_fit((fit_dir / prefix).string());
    const EncodingSplit sp = encoding_split(m, {label}, o, cache);
    const VoxelScores sc = evaluate(sp.y_test, predict(fit, sp.x_test), label);
    write_mtx(sc.rho, rec.mtx(prefix + ".rho.mtx"), Dtype::f64, json{{"kind", "voxel_rho"}, {"label", label}, {"mask", true}});
    std::size_t flagged = 0;
    for (char c : sc.flagged) flagged += c != 0;
    summary[label] = {{"file", prefix + ".rho.mtx"}, {"mean_rho", nan_mean(sc.rho)}, {"n_test_tr", sc.n_test_tr},
                      {"flagged_voxels", flagged}};
  }
  write_json(rec.file("scores.json"), summary);
  return rec.finish();
}

inline VoxelScores load_scores(const fs::path& eval_dir, const std::string& label) {
  const fs::path p = eval_dir / (file_safe(label) + ".rho.mtx");
  if (!fs::exists(p)) throw NotFound("scores not found for '" + label + "' in " + eval_dir.string());
  VoxelScores s;
  const Matrix m = read_mtx(p).data;
  if (m.cols() != 1) fail("scores for '" + label + "' must be a single column");
  s.rho = m.col(0);
  s.label = label;
  for (Index v = 0; v < s.rho.size(); ++v) s.flagged.push_back(std::isnan(s.rho(v)) ? 1 : 0);
  return s;
}

// ---------------------------------------------------------------------------
// varpart

inline json cmd_varpart(const RunContext& ctx) {
  const DatasetManifest m = open_manifest(ctx);
  const json& j = section(ctx, "varpart");
  const auto l1 = value_or<std::string>(j, "space1", "");
  const auto l2 = value_or<std::string>(j, "space2", "");
  if (l1.empty() || l2.empty()) fail("varpart: config needs varpart.space1 and varpart.space2");
  labels_for(ctx, m, json{{"labels", {l1, l2}}});
  const DesignOptions o = design_options(ctx);
  VarpartOptions vo;
  vo.grid = lambda_grid(ctx);
  vo.threshold = threshold(ctx);
  vo.banded.grid1 = value_or(j, "grid1", vo.banded.grid1);
  vo.banded.grid2 = value_or(j, "grid2", vo.banded.grid2);
  StoryCache cache;
  const EncodingSplit s1 = encoding_split(m, {l1}, o, cache);
  const EncodingSplit s2 = encoding_split(m, {l2}, o, cache);
  const VarpartRun run = run_varpart(s1, s2, cv_plan(ctx), vo);
  Recorder rec(ctx, "varpart");
  const std::string prefix = file_safe(l1) + "__" + file_safe(l2);
  rec.mtx(prefix + ".mtx");
  rec.file(prefix + ".json");
  save_partition(run.partition, (rec.dir() / prefix).string(), l1, l2);
  rec.note("summary", partition_summary(run.partition, l1, l2));
  return rec.finish();
}

// ---------------------------------------------------------------------------
// layerpca

inline json cmd_layerpca(const RunContext& ctx) {
  const DatasetManifest m = open_manifest(ctx);
  const json& j = section(ctx, "layerpca");
  const auto labels = labels_for(ctx, m, j);
  if (labels.size() < 2) fail("layerpca: need at least 2 layers");
  const fs::path eval_dir = stage_dir(ctx, "eval_dir", "eval");
  std::vector<VoxelScores> layers;
  for (const auto& l : labels) layers.push_back(load_scores(eval_dir, l));
  const PerfMatrix pm = build_perf_matrix(layers, value_or(j, "threshold", threshold(ctx)));
  const Matrix centered = double_center(pm.c);
  const auto k = value_or<Index>(j, "components",
                                 std::min(default_pca_components(static_cast<Index>(labels.size())),
                                          std::min(centered.rows(), centered.cols())));
  const PcaResult pca = pca_svd(centered, k);
  Recorder rec(ctx, "layerpca");
  rec.mtx("pca.scores.mtx");
  rec.mtx("pca.loadings.mtx");
  rec.file("pca.json");
  save_pca(pca, pm, (rec.dir() / "pca").string());
  json maps = json::object();
  for (const auto& other : value_or(j, "compare", std::vector<std::string>{})) {
    const VoxelScores os = load_scores(eval_dir, other);
    json entry = json::object();
    for (Index c = 0; c < std::min<Index>(k, 2); ++c)
      entry["pc" + std::to_string(c + 1)] = correlate_maps(pca.scores.col(c), pm.voxel_index, os);
    maps[other] = entry;
  }
  std::vector<double> varexp(pca.varexp.data(), pca.varexp.data() + pca.varexp.size());
  rec.note("varexp", varexp);
  rec.note("n_voxels_retained", pm.voxel_index.size());
  if (!maps.empty()) {
    write_json(rec.file("map_correlations.json"), maps);
    rec.note("map_correlations", maps);
  }
  return rec.finish();
}

// ---------------------------------------------------------------------------
// probe

struct PooledTask {
  Matrix x;
  std::vector<int> labels;   // classification targets
  Matrix y;                  // continuous targets
  std::vector<std::string> story_of_row;
  std::vector<std::string> word_of_row;  // embedding task only
};

inline std::vector<int> encode_labels(const std::vector<std::string>& raw, std::vector<std::string>& classes) {
  std::set<std::string> uniq(raw.begin(), raw.end());
  classes.assign(uniq.begin(), uniq.end());
  std::map<std::string, int> id;
  for (std::size_t i = 0; i < classes.size(); ++i) id[classes[i]] = static_cast<int>(i);
  std::vector<int> out;
  for (const auto& r : raw) out.push_back(id.at(r));
  return out;
}

inline RowSplit rows_for(const std::vector<std::string>& story_of_row, const StorySplit& split) {
  const std::set<std::string> tr(split.train.begin(), split.train.end()), va(split.val.begin(), split.val.end());
  RowSplit rs;
  for (std::size_t i = 0; i < story_of_row.size(); ++i) {
    const auto& s = story_of_row[i];
    (tr.count(s) ? rs.train : va.count(s) ? rs.val : rs.test).push_back(static_cast<Index>(i));
  }
  return rs;
}

inline json cmd_probe(const RunContext& ctx) {
  const DatasetManifest m = open_manifest(ctx);
  const json& j = section(ctx, "probe");
  const auto layers = labels_for(ctx, m, j);
  const auto tasks = value_or(j, "tasks", std::vector<std::string>{"phoneme", "word"});
  auto seeds = value_or(j, "seeds", std::vector<std::uint64_t>{});
  if (seeds.empty()) seeds = {ctx.seed, ctx.seed + 1, ctx.seed + 2};
  SplitSizes sizes;
  sizes.val = value_or<std::size_t>(j, "n_val", 0);
  sizes.test = value_or<std::size_t>(j, "n_test", 0);
  const auto grid = lambda_grid(ctx);
  ClassifierConfig ccfg;
  ccfg.l2_grid = value_or(j, "l2_grid", ccfg.l2_grid);
  ccfg.max_epochs = value_or(j, "max_epochs", ccfg.max_epochs);
  BottleneckConfig bcfg;
  bcfg.hidden = value_or(j, "hidden", bcfg.hidden);
  bcfg.max_epochs = value_or(j, "bottleneck_epochs", bcfg.max_epochs);
  const bool shuffle_baseline = value_or(j, "shuffle_baseline", false);
  std::optional<EmbeddingTable> emb;
  const auto emb_path = value_or<std::string>(j, "embeddings", "");
  if (!emb_path.empty()) emb = load_embedding_table(emb_path);

  std::vector<std::string> ids;
  for (const auto& s : m.stories) ids.push_back(s.story_id);

  // Alignments are read once; features per layer.
  std::map<std::string, AlignmentTable> words, phones;
  for (const auto& s : m.stories) {
    if (!s.words_path.empty()) words[s.story_id] = read_alignment(m.resolve(s.words_path), AlignmentKind::word).table;
    if (!s.phonemes_path.empty())
      phones[s.story_id] = read_alignment(m.resolve(s.phonemes_path), AlignmentKind::phoneme).table;
  }
  auto spans_for = [&](const std::string& task, const StoryEntry& s) -> const AlignmentTable& {
    auto& src = task == "phoneme" ? phones : words;
    if (!src.count(s.story_id)) fail("probe: story '" + s.story_id + "' lacks the alignment needed for '" + task + "'");
    return src.at(s.story_id);
  };
  auto pooled = [&](const std::string& label, const std::string& task) {
    PooledTask pt;
    std::vector<Matrix> xs, ys;
    std::vector<std::string> raw;
    const bool regression = task.rfind("regression:", 0) == 0;
    const std::string span_task = regression ? "word" : task == "embedding" ? "word" : task;
    for (const auto& s : m.stories) {
      const auto& spans = spans_for(span_task, s);
      const FeatureMatrix f = read_feature(m.resolve(s.feature_paths.at(label)));
      Matrix x = pool_spans(f, spans).rows;
      if (regression) {
        const std::string target = task.substr(11);
        if (!s.feature_paths.count(target)) fail("probe: story '" + s.story_id + "' has no feature '" + target + "'");
        ys.push_back(pool_spans(read_feature(m.resolve(s.feature_paths.at(target))), spans).rows);
      } else if (task == "embedding") {
        if (!emb) fail("probe: embedding task needs probe.embeddings");
        std::vector<Index> keep;
        Matrix y(static_cast<Index>(spans.rows.size()), emb->dim());
        for (std::size_t i = 0; i < spans.rows.size(); ++i) {
          if (const Index* id = emb->find(spans.rows[i].label)) {
            y.row(static_cast<Index>(keep.size())) = emb->vectors.row(*id);
            keep.push_back(static_cast<Index>(i));
            pt.word_of_row.push_back(spans.rows[i].label);
          }
        }
        x = select_rows(x, keep);
        ys.push_back(y.topRows(static_cast<Index>(keep.size())));
      } else {
        for (const auto& r : spans.rows) raw.push_back(r.label);
      }
      for (Index i = 0; i < x.rows(); ++i) pt.story_of_row.push_back(s.story_id);
      xs.push_back(std::move(x));
    }
    pt.x = vstack(xs);
    if (!ys.empty()) pt.y = vstack(ys);
    return std::make_pair(pt, raw);
  };

  ProbeResult result;
  for (const auto& task : tasks) {
    const bool classification = task == "phoneme" || task == "word";
    if (!classification && task != "embedding" && task.rfind("regression:", 0) != 0)
      fail("probe: unknown task '" + task + "'");
    for (const auto& layer : layers) {
      auto [pt, raw] = pooled(layer, task);
      std::vector<std::string> classes;
      const std::vector<int> labels = classification ? encode_labels(raw, classes) : std::vector<int>{};
      for (std::uint64_t seed : seeds) {
        const RowSplit rs = rows_for(pt.story_of_row, split_stories(ids, seed, sizes));
        if (classification) {
          const auto k = static_cast<int>(classes.size());
          const ClassifierResult c = classifier_probe(pt.x, labels, k, rs, ccfg);
          std::vector<int> ytr, yte;
          for (Index i : rs.train) ytr.push_back(labels[static_cast<std::size_t>(i)]);
          for (Index i : rs.test) yte.push_back(labels[static_cast<std::size_t>(i)]);
          const ClassifierResult base = most_frequent_baseline(ytr, yte, k);
          result.records.push_back({layer, task + "_accuracy", seed, MetricKind::accuracy, c.accuracy, base.accuracy});
          result.records.push_back({layer, task + "_perplexity", seed, MetricKind::perplexity, c.perplexity, base.perplexity});
        } else if (task == "embedding") {
          BottleneckConfig b = bcfg;
          b.seed = seed;
          const double metric = bottleneck_probe(pt.x, pt.y, rs, b).metric;
          auto targets = [&](const EmbeddingTable& t) {
            Matrix y(pt.y.rows(), pt.y.cols());
            for (std::size_t i = 0; i < pt.word_of_row.size(); ++i)
              y.row(static_cast<Index>(i)) = t.vectors.row(*t.find(pt.word_of_row[i]));
            return y;
          };
          const double base = bottleneck_probe(pt.x, random_targets(pt.x.rows(), emb->dim(), seed), rs, b).metric;
          result.records.push_back({layer, task, seed, MetricKind::mean_corr, metric, base});
          if (shuffle_baseline) {
            const double sh = bottleneck_probe(pt.x, targets(shuffled_embeddings(*emb, seed)), rs, b).metric;
            result.records.push_back({layer, task + "_shuffled", seed, MetricKind::mean_corr, sh, base});
          }
        } else {
          const auto r = regression_probe(pt.x, pt.y, rs, grid);
          result.records.push_back({layer, task, seed, MetricKind::mean_corr, r.metric,
                                    std::numeric_limits<double>::quiet_NaN()});
        }
      }
    }
  }
  Recorder rec(ctx, "probe");
  result.write_csv(rec.file("probe.csv"));
  json curves = result.normalized_curves();
  write_json(rec.file("curves.json"), json{{"perplexity_log_base", "e"}, {"label_smoothing", kLabelSmoothing}, {"tasks", curves}});
  return rec.finish();
}

// ---------------------------------------------------------------------------
// report: per-label mean rho over all voxels and per ROI mask

inline json build_report(const DatasetManifest& m, const std::vector<std::string>& labels, const fs::path& eval_dir) {
  std::vector<VoxelScores> scores;
  for (const auto& l : labels) scores.push_back(load_scores(eval_dir, l));
  const Index n_vox = scores.front().rho.size();
  for (const auto& s : scores)
    if (s.rho.size() != n_vox) fail("report: labels disagree on voxel count");
  // Per-voxel mean across models, subtracted before averaging ("adjusted").
  Vector across = Vector::Zero(n_vox);
  for (const auto& s : scores) across += s.rho;
  across /= static_cast<double>(scores.size());
  auto mean_over = [&](const Vector& v, const std::vector<Index>* idx) {
    if (!idx) return nan_mean(v);
    Vector sub(static_cast<Index>(idx->size()));
    for (std::size_t i = 0; i < idx->size(); ++i) sub(static_cast<Index>(i)) = v((*idx)[i]);
    return nan_mean(sub);
  };
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  json rows = json::array();
  for (const auto& s : scores) {
    json rois = json::object();
    for (const auto& [name, idx] : m.roi_masks) {
      for (Index v : idx)
        if (v >= n_vox) fail("report: ROI '" + name + "' index out of range");
      rois[name] = {{"mean_rho", num(mean_over(s.rho, &idx))}, {"adjusted", num(mean_over(Vector(s.rho - across), &idx))}};
    }
    rows.push_back({{"label", s.label},
                    {"mean_rho", num(mean_over(s.rho, nullptr))},
                    {"adjusted", num(mean_over(Vector(s.rho - across), nullptr))},
                    {"rois", rois}});
  }
  return json{{"version", kVersion}, {"n_voxels", n_vox}, {"sem", nullptr}, {"labels", rows}};
}

inline json cmd_report(const RunContext& ctx) {
  const DatasetManifest m = open_manifest(ctx);
  const auto labels = labels_for(ctx, m, section(ctx, "report"));
  const json report = build_report(m, labels, stage_dir(ctx, "eval_dir", "eval"));
  Recorder rec(ctx, "report");
  write_json(rec.file("report.json"), report);
  {
    std::ofstream out(rec.file("report.csv"));
    out.precision(17);
    out << "label,scope,mean_rho,adjusted\n";
    auto cell = [](const json& v) { return v.is_null() ? std::string() : std::to_string(v.get<double>()); };
    for (const auto& row : report.at("labels")) {
      out << row.at("label").get<std::string>() << ",all," << cell(row.at("mean_rho")) << ',' << cell(row.at("adjusted"))
          << '\n';
      for (const auto& [name, r] : row.at("rois").items())
        out << row.at("label").get<std::string>() << ',' << name << ',' << cell(r.at("mean_rho")) << ','
            << cell(r.at("adjusted")) << '\n';
    }
  }
  return rec.finish();
}

// ---------------------------------------------------------------------------

inline const std::map<std::string, std::function<json(const RunContext&)>>& commands() {
  static const std::map<std::string, std::function<json(const RunContext&)>> table{
      {"simulate", cmd_simulate}, {"features", cmd_features}, {"resample", cmd_resample},
      {"preprocess", cmd_preprocess}, {"fit", cmd_fit},       {"eval", cmd_eval},
      {"varpart", cmd_varpart},   {"layerpca", cmd_layerpca}, {"probe", cmd_probe},
      {"report", cmd_report}};
  return table;
}

inline json run_command(const std::string& name, const RunContext& ctx) {
  const auto& table = commands();
  const auto it = table.find(name);
  if (it == table.end()) fail("unknown command '" + name + "'");
  set_threads(ctx.threads);
  return it->second(ctx);
}

}  // namespace speechenc::pipeline

#endif  // SPEECHENC_PIPELINE_HPP
