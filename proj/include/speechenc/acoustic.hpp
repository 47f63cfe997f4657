#ifndef SPEECHENC_ACOUSTIC_HPP
#define SPEECHENC_ACOUSTIC_HPP

// Hand-engineered feature spaces: log mel filterbank energies, spectrotemporal
// modulation energies, articulatory feature streams and word-embedding streams.
// Every stream is produced at the same frame rate (100 Hz by default).

#include "speechenc/core.hpp"
#include "speechenc/io.hpp"

#include <unsupported/Eigen/FFT>

#include <array>
#include <cctype>
#include <complex>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace speechenc {

inline constexpr double kLogFloor = 1e-10;

struct Audio {
  std::vector<double> samples;  // mono
  double rate_hz = 16000.0;

  double duration_s() const { return static_cast<double>(samples.size()) / rate_hz; }
};

struct MelConfig {
  double frame_len_s = 0.025;
  double frame_hop_s = 0.010;
  int n_mels = 40;
};

struct MelSpec {
  Matrix frames;  // T x M log energies
  double frame_hop_s = 0.010;
  double frame_len_s = 0.025;
  int n_mels = 40;
  double sample_rate_hz = 16000.0;

  double frame_rate() const { return 1.0 / frame_hop_s; }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Center frequencies of n_mels triangles spaced uniformly on the mel scale
// between 0 Hz and Nyquist.
inline std::vector<double> mel_centers_hz(int n_mels, double sample_rate_hz) {
  const double top = hz_to_mel(sample_rate_hz / 2.0);
  std::vector<double> c(static_cast<std::size_t>(n_mels));
  for (int m = 0; m < n_mels; ++m) c[static_cast<std::size_t>(m)] = mel_to_hz(top * (m + 1) / (n_mels + 1));
  return c;
}

// n_mels x (n_fft/2 + 1) triangular weights with unit peak.
inline Matrix mel_filterbank(int n_mels, int n_fft, double sample_rate_hz) {
  const double top = hz_to_mel(sample_rate_hz / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i) edges[static_cast<std::size_t>(i)] = mel_to_hz(top * i / (n_mels + 1));
  const int n_bins = n_fft / 2 + 1;
  Matrix fb = Matrix::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m + 1)];
    const double hi = edges[static_cast<std::size_t>(m + 2)];
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * sample_rate_hz / n_fft;
      if (f > lo && f < hi) fb(m, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

// Log mel energies. Frame t is the window ending at sample (t+1)*hop, zero
// padded before the start of the audio, so T = floor(samples / hop).
inline MelSpec mel_spectrogram(const Audio& audio, const MelConfig& cfg = {}) {
  if (audio.samples.empty()) fail("fbank: empty audio");
  if (audio.rate_hz < 16000.0) fail("fbank: sample rate must be >= 16 kHz");
  require(cfg.n_mels >= 8, "fbank: need at least 8 mel filters");
  const auto len = static_cast<Index>(std::lround(cfg.frame_len_s * audio.rate_hz));
  const auto hop = static_cast<Index>(std::lround(cfg.frame_hop_s * audio.rate_hz));
  require(len > 0 && hop > 0, "fbank: frame length and hop must be positive");
  int n_fft = 1;
  while (n_fft < len) n_fft *= 2;
  const Matrix fb = mel_filterbank(cfg.n_mels, n_fft, audio.rate_hz);
  std::vector<double> window(static_cast<std::size_t>(len));
  for (Index i = 0; i < len; ++i)
    window[static_cast<std::size_t>(i)] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / static_cast<double>(len - 1));

  const auto n_samples = static_cast<Index>(audio.samples.size());
  const Index n_frames = n_samples / hop;
  if (n_frames < 1) fail("fbank: audio shorter than one hop");
  MelSpec out;
  out.frames.resize(n_frames, cfg.n_mels);
  out.frame_hop_s = cfg.frame_hop_s;
  out.frame_len_s = cfg.frame_len_s;
  out.n_mels = cfg.n_mels;
  out.sample_rate_hz = audio.rate_hz;
  parallel_for(static_cast<std::size_t>(n_frames), [&](std::size_t ts) {
    const auto t = static_cast<Index>(ts);
    Eigen::FFT<double> fft;
    std::vector<double> buf(static_cast<std::size_t>(n_fft), 0.0);
    const Index end = (t + 1) * hop;
    for (Index i = 0; i < len; ++i) {
      const Index s = end - len + i;
      if (s >= 0 && s < n_samples) buf[static_cast<std::size_t>(i)] = audio.samples[static_cast<std::size_t>(s)] * window[static_cast<std::size_t>(i)];
    }
    std::vector<std::complex<double>> spec;
    fft.fwd(spec, buf);
    Vector power(n_fft / 2 + 1);
    for (int k = 0; k <= n_fft / 2; ++k) power(k) = std::norm(spec[static_cast<std::size_t>(k)]);
    const Vector energies = fb * power;
    for (int m = 0; m < cfg.n_mels; ++m) out.frames(t, m) = std::log(std::max(energies(m), kLogFloor));
  });
  return out;
}

inline FeatureMatrix fbank(const Audio& audio, const MelConfig& cfg = {}) {
  const MelSpec mel = mel_spectrogram(audio, cfg);
  return FeatureMatrix{mel.frames, mel.frame_rate(), "fbank", true};
}

// ---------------------------------------------------------------------------
// Spectrotemporal modulation filterbank
//
// The log-mel spectrogram (global mean removed) is mapped onto a uniform
// log2-frequency axis. Each channel is a separable complex filter: a Gabor in
// spectral scale (cycles/octave, Gaussian envelope with sd 1/(pi*scale) octaves)
// times a causal gamma-envelope carrier in temporal rate (Hz, envelope
// t*exp(-t*pi*rate), zero mean). Both directions come from filtering the
// spectral response or its conjugate. Output per frame is the mean magnitude
// over spectral positions at the mel centers.

struct ModulationBank {
  std::vector<double> rates_hz{1, 2, 4, 8, 16, 32};
  std::vector<double> scales_cyc_per_oct{0.25, 0.5, 1, 2, 4, 8};

  Index dim() const { return static_cast<Index>(2 * rates_hz.size() * scales_cyc_per_oct.size()); }

  // Column index for (rate i, scale j, direction d); d = 0 downward, 1 upward.
  Index column(std::size_t rate, std::size_t scale, int direction) const {
    return static_cast<Index>((rate * scales_cyc_per_oct.size() + scale) * 2 + static_cast<std::size_t>(direction));
  }
};

inline std::string modulation_filter_description() {
  return "separable complex Gabor (spectral, sd 1/(pi*scale) oct) x causal gamma-envelope carrier "
         "(temporal, t*exp(-pi*rate*t), zero-mean), magnitude averaged over mel positions";
}

inline std::vector<std::complex<double>> temporal_kernel(double rate_hz, double frame_rate) {
  const double tau = 1.0 / (M_PI * rate_hz);
  const auto n = std::max<Index>(4, static_cast<Index>(std::ceil(8.0 * tau * frame_rate)));
  std::vector<std::complex<double>> h(static_cast<std::size_t>(n));
  std::complex<double> mean = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / frame_rate;
    h[static_cast<std::size_t>(i)] = t * std::exp(-t / tau) * std::polar(1.0, 2.0 * M_PI * rate_hz * t);
    mean += h[static_cast<std::size_t>(i)];
  }
  mean /= static_cast<double>(n);
  for (auto& v : h) v -= mean;
  // Unit gain at the carrier frequency.
  std::complex<double> gain = 0.0;
  for (Index i = 0; i < n; ++i)
    gain += h[static_cast<std::size_t>(i)] * std::polar(1.0, -2.0 * M_PI * rate_hz * static_cast<double>(i) / frame_rate);
  for (auto& v : h) v /= std::abs(gain);
  return h;
}

inline FeatureMatrix spectrotemporal(const MelSpec& mel, const ModulationBank& bank = {}) {
  require(!bank.rates_hz.empty() && !bank.scales_cyc_per_oct.empty(), "modulation bank: empty rates or scales");
  for (std::size_t i = 0; i < bank.rates_hz.size(); ++i) {
    require(bank.rates_hz[i] > 0.0 && (i == 0 || bank.rates_hz[i] > bank.rates_hz[i - 1]),
            "modulation bank: rates must be positive ascending");
  }
  for (std::size_t i = 0; i < bank.scales_cyc_per_oct.size(); ++i) {
    require(bank.scales_cyc_per_oct[i] > 0.0 && (i == 0 || bank.scales_cyc_per_oct[i] > bank.scales_cyc_per_oct[i - 1]),
            "modulation bank: scales must be positive ascending");
  }
  const int n_mels = static_cast<int>(mel.frames.cols());
  const double max_scale = bank.scales_cyc_per_oct.back();
  if (n_mels < 2.0 * max_scale) fail("modulation bank: scales exceed spectrogram support");
  const double frame_rate = mel.frame_rate();
  if (bank.rates_hz.back() >= frame_rate / 2.0) fail("modulation bank: rates exceed frame-rate Nyquist");
  const Index n_frames = mel.frames.rows();

  // Dense log-frequency axis, 4 samples per cycle of the finest scale.
  const auto centers = mel_centers_hz(n_mels, mel.sample_rate_hz);
  std::vector<double> mel_oct(centers.size());
  for (std::size_t m = 0; m < centers.size(); ++m) mel_oct[m] = std::log2(centers[m]);
  const double per_oct = std::max(16.0, 4.0 * max_scale);
  const double x0 = mel_oct.front();
  const auto n_dense = static_cast<Index>(std::floor((mel_oct.back() - x0) * per_oct)) + 1;
  Matrix interp = Matrix::Zero(n_dense, n_mels);  // linear interpolation weights
  for (Index j = 0; j < n_dense; ++j) {
    const double x = x0 + static_cast<double>(j) / per_oct;
    std::size_t m = 0;
    while (m + 2 < mel_oct.size() && mel_oct[m + 1] < x) ++m;
    const double w = std::clamp((x - mel_oct[m]) / (mel_oct[m + 1] - mel_oct[m]), 0.0, 1.0);
    interp(j, static_cast<Index>(m)) = 1.0 - w;
    interp(j, static_cast<Index>(m + 1)) = w;
  }
  Matrix centered = mel.frames.array() - mel.frames.mean();
  const Matrix dense = centered * interp.transpose();  // T x n_dense

  FeatureMatrix out;
  out.data = Matrix::Zero(n_frames, bank.dim());
  out.rate_hz = frame_rate;
  out.label = "spectrotemporal";
  out.causal = true;

  std::vector<std::vector<std::complex<double>>> tkernels;
  for (double r : bank.rates_hz) tkernels.push_back(temporal_kernel(r, frame_rate));

  parallel_for(bank.scales_cyc_per_oct.size(), [&](std::size_t si) {
    const double scale = bank.scales_cyc_per_oct[si];
    const double sigma = 1.0 / (M_PI * scale);
    // Spectral responses at each mel position: T x M complex.
    Eigen::MatrixXcd spectral(n_frames, n_mels);
    for (int m = 0; m < n_mels; ++m) {
      Eigen::VectorXcd g = Eigen::VectorXcd::Zero(n_dense);
      std::complex<double> gain = 0.0;
      for (Index j = 0; j < n_dense; ++j) {
        const double dx = x0 + static_cast<double>(j) / per_oct - mel_oct[static_cast<std::size_t>(m)];
        if (std::abs(dx) > 4.0 * sigma) continue;
        g(j) = std::exp(-dx * dx / (2.0 * sigma * sigma)) * std::polar(1.0, 2.0 * M_PI * scale * dx);
        gain += std::exp(-dx * dx / (2.0 * sigma * sigma));
      }
      g /= std::abs(gain);
      spectral.col(m) = dense * g;
    }
    for (std::size_t ri = 0; ri < bank.rates_hz.size(); ++ri) {
      const auto& h = tkernels[ri];
      const auto taps = static_cast<Index>(h.size());
      for (int dir = 0; dir < 2; ++dir) {
        const Index col = bank.column(ri, si, dir);
        for (int m = 0; m < n_mels; ++m) {
          for (Index t = 0; t < n_frames; ++t) {
            std::complex<double> acc = 0.0;
            const Index kmax = std::min(taps - 1, t);
            for (Index k = 0; k <= kmax; ++k) {
              const std::complex<double> z = spectral(t - k, m);
              acc += h[static_cast<std::size_t>(k)] * (dir == 0 ? z : std::conj(z));
            }
            out.data(t, col) += std::abs(acc);
          }
        }
        out.data.col(col) /= static_cast<double>(n_mels);
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Articulatory features

inline const std::array<const char*, 14>& articulation_feature_names() {
  static const std::array<const char*, 14> names{"bilabial", "labiodental", "dental",   "alveolar", "postalveolar",
                                                 "velar",    "glottal",     "plosive",  "fricative", "affricate",
                                                 "nasal",    "approximant", "vowel",    "voiced"};
  return names;
}

struct ArticulationTable {
  std::map<std::string, std::array<double, 14>> vectors;
  std::vector<std::string> feature_names;

  // ARPAbet labels are matched case-insensitively with stress digits removed.
  static std::string normalize(const std::string& label) {
    std::string s;
    for (char c : label)
      if (!std::isdigit(static_cast<unsigned char>(c))) s.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    return s;
  }

  static bool is_silence(const std::string& normalized) {
    return normalized.empty() || normalized == "SIL" || normalized == "SP" || normalized == "SPN" || normalized == "NS";
  }
};

// Place / manner / voicing assignments for the 39 ARPAbet phonemes.
inline ArticulationTable default_articulation_table() {
  ArticulationTable t;
  for (const char* n : articulation_feature_names()) t.feature_names.emplace_back(n);
  auto idx = [](const std::string& name) {
    const auto& names = articulation_feature_names();
    for (std::size_t i = 0; i < names.size(); ++i)
      if (name == names[i]) return i;
    fail("unknown articulatory feature " + name);
  };
  auto add = [&](const std::string& ph, std::initializer_list<const char*> feats) {
    std::array<double, 14> v{};
    for (const char* f : feats) v[idx(f)] = 1.0;
    t.vectors[ph] = v;
  };
  add("P", {"bilabial", "plosive"});
  add("B", {"bilabial", "plosive", "voiced"});
  add("M", {"bilabial", "nasal", "voiced"});
  add("W", {"bilabial", "velar", "approximant", "voiced"});
  add("F", {"labiodental", "fricative"});
  add("V", {"labiodental", "fricative", "voiced"});
  add("TH", {"dental", "fricative"});
  add("DH", {"dental", "fricative", "voiced"});
  add("T", {"alveolar", "plosive"});
  add("D", {"alveolar", "plosive", "voiced"});
  add("N", {"alveolar", "nasal", "voiced"});
  add("S", {"alveolar", "fricative"});
  add("Z", {"alveolar", "fricative", "voiced"});
  add("L", {"alveolar", "approximant", "voiced"});
  add("R", {"postalveolar", "approximant", "voiced"});
  add("SH", {"postalveolar", "fricative"});
  add("ZH", {"postalveolar", "fricative", "voiced"});
  add("CH", {"postalveolar", "affricate"});
  add("JH", {"postalveolar", "affricate", "voiced"});
  add("Y", {"postalveolar", "approximant", "voiced"});
  add("K", {"velar", "plosive"});
  add("G", {"velar", "plosive", "voiced"});
  add("NG", {"velar", "nasal", "voiced"});
  add("HH", {"glottal", "fricative"});
  for (const char* v : {"AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW"})
    add(v, {"vowel", "voiced"});
  return t;
}

// TSV: header "label<TAB>feature names...", then one row per phoneme.
inline ArticulationTable load_articulation_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path.string());
  ArticulationTable t;
  std::string line;
  if (!std::getline(in, line)) fail(path.string() + ": empty articulation table");
  {
    std::istringstream hs(line);
    std::string cell;
    std::getline(hs, cell, '\t');
    while (std::getline(hs, cell, '\t')) t.feature_names.push_back(trim(cell));
  }
  if (t.feature_names.size() != 14) fail(path.string() + ": articulation table must have 14 features");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    std::string label, cell;
    std::getline(ls, label, '\t');
    std::array<double, 14> v{};
    std::size_t k = 0;
    while (std::getline(ls, cell, '\t')) {
      if (k >= 14) fail(path.string() + " row " + std::to_string(lineno) + ": too many values");
      v[k++] = parse_double(cell, path.string() + " row " + std::to_string(lineno));
    }
    if (k != 14) fail(path.string() + " row " + std::to_string(lineno) + ": expected 14 values");
    t.vectors[ArticulationTable::normalize(label)] = v;
  }
  return t;
}

inline Index frames_for_duration(double duration_s, double rate_hz) {
  return static_cast<Index>(std::ceil(duration_s * rate_hz - 1e-9));
}

// Each frame carries the vector of the phoneme active at the frame midpoint;
// gaps and silence labels give zero vectors.
inline FeatureMatrix articulation_stream(const AlignmentTable& phonemes, const ArticulationTable& table, Index n_frames,
                                         double rate_hz = 100.0) {
  require(rate_hz > 0.0 && n_frames >= 1, "articulation: invalid frame grid");
  FeatureMatrix out{Matrix::Zero(n_frames, 14), rate_hz, "articulation", true};
  for (const auto& row : phonemes.rows) {
    const std::string key = ArticulationTable::normalize(row.label);
    if (ArticulationTable::is_silence(key)) continue;
    const auto it = table.vectors.find(key);
    if (it == table.vectors.end())
      fail("articulation: unknown phoneme '" + row.label + "' at " + std::to_string(row.start_s) + " s");
    // Frames with start <= (i + 0.5)/rate < end.
    const auto first = static_cast<Index>(std::max(0.0, std::ceil(row.start_s * rate_hz - 0.5)));
    for (Index i = first; i < n_frames && (static_cast<double>(i) + 0.5) / rate_hz < row.end_s; ++i)
      for (int k = 0; k < 14; ++k) out.data(i, k) = it->second[static_cast<std::size_t>(k)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Word embeddings

struct EmbeddingTable {
  std::vector<std::string> vocabulary;
  Matrix vectors;  // |vocab| x D
  std::unordered_map<std::string, Index> index;

  Index dim() const { return vectors.cols(); }

  const Index* find(const std::string& word) const {
    const auto it = index.find(lowercase(word));
    return it == index.end() ? nullptr : &it->second;
  }

  static std::string lowercase(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }

  static EmbeddingTable build(std::vector<std::string> words, Matrix vectors) {
    require(static_cast<Index>(words.size()) == vectors.rows(), "embeddings: vocabulary and vector count differ");
    require(all_finite(vectors), "embeddings: non-finite vector");
    EmbeddingTable t;
    t.vectors = std::move(vectors);
    for (auto& w : words) {
      std::string lw = lowercase(w);
      if (!t.index.emplace(lw, static_cast<Index>(t.vocabulary.size())).second)
        fail("embeddings: duplicate word '" + lw + "'");
      t.vocabulary.push_back(std::move(lw));
    }
    return t;
  }
};

// TSV rows "word<TAB>v1<TAB>v2...", no header.
inline EmbeddingTable load_embedding_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path.string());
  std::vector<std::string> words;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    std::string word, cell;
    std::getline(ls, word, '\t');
    std::vector<double> v;
    while (std::getline(ls, cell, '\t')) v.push_back(parse_double(cell, path.string() + " row " + std::to_string(lineno)));
    if (v.empty() || (!rows.empty() && v.size() != rows.front().size()))
      fail(path.string() + " row " + std::to_string(lineno) + ": inconsistent dimension");
    words.push_back(trim(word));
    rows.push_back(std::move(v));
  }
  if (rows.empty()) fail(path.string() + ": empty embedding table");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return EmbeddingTable::build(std::move(words), std::move(m));
}

struct WordStream {
  FeatureMatrix features;
  std::size_t n_words = 0;
  std::size_t oov = 0;

  double oov_rate() const { return n_words ? static_cast<double>(oov) / static_cast<double>(n_words) : 0.0; }
};

// Impulse coding: the frame at each word's end time carries its vector.
inline WordStream word_stream(const AlignmentTable& words, const EmbeddingTable& emb, Index n_frames, double rate_hz = 100.0) {
  require(words.kind == AlignmentKind::word, "word_stream: alignment table must be word-level");
  require(rate_hz > 0.0 && n_frames >= 1, "word_stream: invalid frame grid");
  WordStream ws;
  ws.features = FeatureMatrix{Matrix::Zero(n_frames, emb.dim()), rate_hz, "word_embedding", true};
  for (const auto& row : words.rows) {
    ++ws.n_words;
    const Index* id = emb.find(row.label);
    if (!id) {
      ++ws.oov;
      continue;
    }
    const auto frame = std::min<Index>(n_frames - 1, static_cast<Index>(std::llround(row.end_s * rate_hz)));
    ws.features.data.row(frame) += emb.vectors.row(*id);
  }
  return ws;
}

// ---------------------------------------------------------------------------
// WAV input (PCM 16/24/32-bit integer or 32-bit float; channels averaged)

inline Audio read_wav(const fs::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  auto u32 = [&](std::size_t at) { return detail::get<std::uint32_t>(bytes.data() + at); };
  auto u16 = [&](std::size_t at) { return detail::get<std::uint16_t>(bytes.data() + at); };
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    fail(path.string() + ": not a RIFF/WAVE file");
  std::size_t at = 12;
  int format = 0, channels = 0, bits = 0;
  double rate = 0.0;
  while (at + 8 <= bytes.size()) {
    const std::string id = bytes.substr(at, 4);
    const std::size_t size = u32(at + 4);
    const std::size_t body = at + 8;
    if (body + size > bytes.size()) fail(path.string() + ": truncated chunk '" + id + "'");
    if (id == "fmt ") {
      format = u16(body);
      channels = u16(body + 2);
      rate = u32(body + 4);
      bits = u16(body + 14);
      if (format == 0xFFFE && size >= 26) format = u16(body + 24);
    } else if (id == "data") {
      if (channels <= 0) fail(path.string() + ": data before fmt chunk");
      const int bytes_per = bits / 8;
      const bool is_float = format == 3 && bits == 32;
      if (!is_float && !(format == 1 && (bits == 16 || bits == 24 || bits == 32)))
        fail(path.string() + ": unsupported WAV encoding");
      const std::size_t n = size / static_cast<std::size_t>(bytes_per * channels);
      Audio a;
      a.rate_hz = rate;
      a.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
          const char* p = bytes.data() + body + (i * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)) * static_cast<std::size_t>(bytes_per);
          if (is_float) {
            acc += detail::get<float>(p);
          } else if (bits == 16) {
            acc += detail::get<std::int16_t>(p) / 32768.0;
          } else if (bits == 24) {
            std::int32_t v = static_cast<unsigned char>(p[0]) | (static_cast<unsigned char>(p[1]) << 8) |
                             (static_cast<std::int32_t>(static_cast<signed char>(p[2])) << 16);
            acc += v / 8388608.0;
          } else {
            acc += detail::get<std::int32_t>(p) / 2147483648.0;
          }
        }
        a.samples[i] = acc / channels;
      }
      return a;
    }
    at = body + size + (size & 1);
  }
  fail(path.string() + ": no data chunk");
}

inline void write_wav(const Audio& a, const fs::path& path) {
  std::string buf;
  const auto n = static_cast<std::uint32_t>(a.samples.size());
  buf.append("RIFF");
  detail::put<std::uint32_t>(buf, 36 + n * 4);
  buf.append("WAVEfmt ");
  detail::put<std::uint32_t>(buf, 16);
  detail::put<std::uint16_t>(buf, 3);
  detail::put<std::uint16_t>(buf, 1);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(a.rate_hz));
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(a.rate_hz) * 4);
  detail::put<std::uint16_t>(buf, 4);
  detail::put<std::uint16_t>(buf, 32);
  buf.append("data");
  detail::put<std::uint32_t>(buf, n * 4);
  for (double s : a.samples) detail::put<float>(buf, static_cast<float>(s));
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

}  // namespace speechenc

#endif  // SPEECHENC_ACOUSTIC_HPP
