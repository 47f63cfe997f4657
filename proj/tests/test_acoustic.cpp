#include "speechenc/acoustic.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace speechenc;

namespace {

Audio tone(double hz, double seconds, double amp = 0.5, double rate = 16000.0) {
  Audio a;
  a.rate_hz = rate;
  a.samples.resize(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < a.samples.size(); ++i) a.samples[i] = amp * std::sin(2 * M_PI * hz * static_cast<double>(i) / rate);
  return a;
}

Audio noise(double seconds, std::uint64_t seed, double am_hz = 0.0) {
  auto rng = make_rng(seed);
  Audio a;
  a.samples.resize(static_cast<std::size_t>(seconds * a.rate_hz));
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const double env = am_hz > 0.0 ? 0.5 * (1.0 + std::sin(2 * M_PI * am_hz * static_cast<double>(i) / a.rate_hz)) : 1.0;
    a.samples[i] = 0.1 * env * normal(rng);
  }
  return a;
}

AlignmentTable table(AlignmentKind kind, std::vector<AlignmentRow> rows) {
  AlignmentTable t;
  t.kind = kind;
  t.rows = std::move(rows);
  return t;
}

}  // namespace

TEST(Fbank, SilenceHitsLogFloor) {
  Audio a;
  a.samples.assign(16000, 0.0);
  const FeatureMatrix f = fbank(a);
  EXPECT_EQ(f.data.rows(), 100);
  EXPECT_EQ(f.data.cols(), 40);
  EXPECT_DOUBLE_EQ(f.rate_hz, 100.0);
  EXPECT_TRUE((f.data.array() == std::log(1e-10)).all());
}

TEST(Fbank, PureToneLandsInNearestFilter) {
  const MelSpec mel = mel_spectrogram(tone(440.0, 1.0));
  const auto centers = mel_centers_hz(40, 16000.0);
  Index nearest = 0;
  for (std::size_t m = 1; m < centers.size(); ++m)
    if (std::abs(centers[m] - 440.0) < std::abs(centers[static_cast<std::size_t>(nearest)] - 440.0)) nearest = static_cast<Index>(m);
  for (Index t = 3; t < mel.frames.rows(); ++t) {
    Index arg = 0;
    mel.frames.row(t).maxCoeff(&arg);
    EXPECT_EQ(arg, nearest) << "frame " << t;
  }
}

TEST(Fbank, SixtySecondsGiveSixThousandFrames) {
  Audio a;
  a.samples.assign(60 * 16000, 0.0);
  EXPECT_NEAR(static_cast<double>(mel_spectrogram(a).frames.rows()), 6000.0, 1.0);
}

TEST(Fbank, DoublingAmplitudeAddsLogFour) {
  const Audio a = noise(0.5, 1);
  Audio b = a;
  for (auto& s : b.samples) s *= 2.0;
  const Matrix fa = fbank(a).data, fb = fbank(b).data;
  for (Index t = 0; t < fa.rows(); ++t)
    for (Index m = 0; m < fa.cols(); ++m) {
      if (fa(t, m) > std::log(1e-10) + 1.0) {
        EXPECT_NEAR(fb(t, m) - fa(t, m), std::log(4.0), 1e-9);
      }
    }
}

TEST(Fbank, CausalFrames) {
  // frame t only depends on samples before (t+1) * hop
  const Audio a = noise(1.0, 2);
  Audio b = a;
  for (std::size_t i = 8000; i < b.samples.size(); ++i) b.samples[i] = 0.0;
  const Matrix fa = fbank(a).data, fb = fbank(b).data;
  EXPECT_EQ(fa.topRows(50), fb.topRows(50));
  EXPECT_NE(fa.row(50), fb.row(50));
}

TEST(Fbank, Errors) {
  EXPECT_THROW(fbank(Audio{}), Error);
  Audio low = tone(100.0, 1.0, 0.5, 8000.0);
  EXPECT_THROW(fbank(low), Error);
  MelConfig cfg;
  cfg.n_mels = 4;
  EXPECT_THROW(fbank(tone(100.0, 1.0), cfg), Error);
}

TEST(MelFilterbank, TrianglesPeakAtCenters) {
  const Matrix fb = mel_filterbank(40, 512, 16000.0);
  EXPECT_EQ(fb.rows(), 40);
  EXPECT_EQ(fb.cols(), 257);
  EXPECT_GE(fb.minCoeff(), 0.0);
  EXPECT_LE(fb.maxCoeff(), 1.0);
  EXPECT_NEAR(mel_to_hz(hz_to_mel(1234.5)), 1234.5, 1e-9);
}

TEST(Spectrotemporal, DimensionAndSilence) {
  Audio a;
  a.samples.assign(16000, 0.0);
  const FeatureMatrix f = spectrotemporal(mel_spectrogram(a));
  EXPECT_EQ(f.data.cols(), 72);
  EXPECT_EQ(f.data.rows(), 100);
  EXPECT_LT(f.data.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Spectrotemporal, FourHertzModulationPeaksAtFourHertz) {
  const MelSpec mel = mel_spectrogram(noise(6.0, 3, 4.0));
  const ModulationBank bank;
  const FeatureMatrix f = spectrotemporal(mel, bank);
  std::vector<double> per_rate(bank.rates_hz.size(), 0.0);
  for (std::size_t r = 0; r < bank.rates_hz.size(); ++r)
    for (std::size_t s = 0; s < bank.scales_cyc_per_oct.size(); ++s)
      for (int d = 0; d < 2; ++d) per_rate[r] += f.data.col(bank.column(r, s, d)).bottomRows(400).mean();
  const auto best = std::max_element(per_rate.begin(), per_rate.end()) - per_rate.begin();
  EXPECT_EQ(bank.rates_hz[static_cast<std::size_t>(best)], 4.0);
}

TEST(Spectrotemporal, WhiteNoiseDirectionsBalance) {
  const MelSpec mel = mel_spectrogram(noise(6.0, 4));
  const ModulationBank bank;
  const FeatureMatrix f = spectrotemporal(mel, bank);
  double down = 0.0, up = 0.0;
  for (std::size_t r = 0; r < bank.rates_hz.size(); ++r)
    for (std::size_t s = 0; s < bank.scales_cyc_per_oct.size(); ++s) {
      down += f.data.col(bank.column(r, s, 0)).mean();
      up += f.data.col(bank.column(r, s, 1)).mean();
    }
  EXPECT_NEAR(up / down, 1.0, 0.05);
}

TEST(Spectrotemporal, InvariantToGlobalMeanShift) {
  MelSpec mel = mel_spectrogram(noise(2.0, 5));
  const Matrix a = spectrotemporal(mel).data;
  mel.frames.array() += 3.7;
  EXPECT_LT((spectrotemporal(mel).data - a).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Spectrotemporal, CausalKernels) {
  const Audio a = noise(2.0, 6);
  MelSpec m1 = mel_spectrogram(a);
  MelSpec m2 = m1;
  const double tail_mean = m1.frames.bottomRows(100).mean();
  m2.frames.bottomRows(100).setRandom();
  // keep the global mean fixed; the spectrogram mean is removed before filtering
  m2.frames.bottomRows(100).array() += tail_mean - m2.frames.bottomRows(100).mean();
  const Matrix f1 = spectrotemporal(m1).data, f2 = spectrotemporal(m2).data;
  EXPECT_LT((f1.topRows(100) - f2.topRows(100)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Spectrotemporal, BankValidation) {
  const MelSpec mel = mel_spectrogram(noise(1.0, 7));
  ModulationBank bad;
  bad.rates_hz = {2, 1};
  EXPECT_THROW(spectrotemporal(mel, bad), Error);
  bad = ModulationBank{};
  bad.scales_cyc_per_oct = {1, 32};
  EXPECT_THROW(spectrotemporal(mel, bad), Error);
  bad = ModulationBank{};
  bad.rates_hz = {1, 60};
  EXPECT_THROW(spectrotemporal(mel, bad), Error);
}

TEST(Articulation, ShippedTableMatchesBuiltIn) {
  const auto shipped = load_articulation_table(fs::path(SPEECHENC_SOURCE_DIR) / "data" / "articulation_arpabet.tsv");
  const auto builtin = default_articulation_table();
  EXPECT_EQ(shipped.vectors, builtin.vectors);
  EXPECT_EQ(shipped.feature_names, builtin.feature_names);
  EXPECT_EQ(builtin.vectors.size(), 39u);
}

TEST(Articulation, IntervalFillsFramesAtMidpoints) {
  const auto t = default_articulation_table();
  const auto f = articulation_stream(table(AlignmentKind::phoneme, {{0.0, 0.1, "P"}, {0.2, 0.25, "aa1"}}), t, 30);
  ASSERT_EQ(f.data.cols(), 14);
  const auto& p = t.vectors.at("P");
  for (Index i = 0; i < 10; ++i)
    for (int k = 0; k < 14; ++k) EXPECT_EQ(f.data(i, k), p[static_cast<std::size_t>(k)]);
  for (Index i = 10; i < 20; ++i) EXPECT_TRUE(f.data.row(i).isZero(0.0));
  for (Index i = 20; i < 25; ++i) EXPECT_EQ(f.data(i, 12), 1.0);
  EXPECT_TRUE(f.data.row(25).isZero(0.0));
}

TEST(Articulation, NonzeroFramesMatchDurations) {
  const auto t = default_articulation_table();
  auto rng = make_rng(8);
  std::vector<AlignmentRow> rows;
  double clock = 0.0, total = 0.0;
  std::vector<std::string> labels{"B", "IY", "SH", "sil", "NG"};
  for (int i = 0; i < 40; ++i) {
    const double gap = 0.01 * static_cast<double>(uniform_index(rng, 5));
    const double dur = 0.013 + 0.2 * uniform01(rng);
    const std::string label = labels[uniform_index(rng, labels.size())];
    rows.push_back({clock + gap, clock + gap + dur, label});
    if (label != "sil") total += dur;
    clock += gap + dur;
  }
  const auto f = articulation_stream(table(AlignmentKind::phoneme, rows), t, frames_for_duration(clock, 100.0));
  Index nonzero = 0;
  for (Index i = 0; i < f.data.rows(); ++i) nonzero += !f.data.row(i).isZero(0.0);
  EXPECT_NEAR(static_cast<double>(nonzero), total * 100.0, 40.0);
}

TEST(Articulation, UnknownPhonemeReportsTime) {
  try {
    articulation_stream(table(AlignmentKind::phoneme, {{0.0, 0.1, "XX"}}), default_articulation_table(), 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("XX"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("0.0"), std::string::npos);
  }
}

TEST(WordStream, ImpulseAtWordEnd) {
  const auto emb = EmbeddingTable::build({"Hello", "world"}, (Matrix(2, 3) << 1, 2, 3, 4, 5, 6).finished());
  const auto ws = word_stream(table(AlignmentKind::word, {{0.4, 1.0, "hello"}}), emb, 200);
  for (Index i = 0; i < 200; ++i) EXPECT_EQ(ws.features.data.row(i).isZero(0.0), i != 100) << i;
  EXPECT_EQ(ws.features.data(100, 2), 3.0);
  EXPECT_EQ(ws.oov, 0u);
}

TEST(WordStream, EmptyAndOov) {
  const auto emb = EmbeddingTable::build({"a"}, Matrix::Ones(1, 4));
  EXPECT_TRUE(word_stream(table(AlignmentKind::word, {}), emb, 50).features.data.isZero(0.0));
  const auto ws = word_stream(table(AlignmentKind::word, {{0.0, 0.2, "zzz"}, {0.2, 0.3, "A"}}), emb, 50);
  EXPECT_EQ(ws.oov, 1u);
  EXPECT_EQ(ws.n_words, 2u);
  EXPECT_DOUBLE_EQ(ws.oov_rate(), 0.5);
  EXPECT_EQ(ws.features.data.row(30).sum(), 4.0);
  EXPECT_THROW(word_stream(table(AlignmentKind::phoneme, {}), emb, 50), Error);
}

TEST(EmbeddingTable, LoadAndValidate) {
  testutil::TempDir dir;
  testutil::write_text(dir / "e.tsv", "Cat\t1\t2\ndog\t3\t4\n");
  const auto t = load_embedding_table(dir / "e.tsv");
  EXPECT_EQ(t.dim(), 2);
  ASSERT_NE(t.find("CAT"), nullptr);
  EXPECT_EQ(t.vectors(*t.find("dog"), 1), 4.0);
  testutil::write_text(dir / "dup.tsv", "cat\t1\nCat\t2\n");
  EXPECT_THROW(load_embedding_table(dir / "dup.tsv"), Error);
  testutil::write_text(dir / "ragged.tsv", "a\t1\t2\nb\t1\n");
  EXPECT_THROW(load_embedding_table(dir / "ragged.tsv"), Error);
}

TEST(Wav, FloatRoundTrip) {
  testutil::TempDir dir;
  const Audio a = tone(300.0, 0.1);
  write_wav(a, dir / "a.wav");
  const Audio b = read_wav(dir / "a.wav");
  ASSERT_EQ(b.samples.size(), a.samples.size());
  EXPECT_EQ(b.rate_hz, 16000.0);
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_NEAR(b.samples[i], a.samples[i], 1e-7);
  testutil::write_text(dir / "bad.wav", "not a wav");
  EXPECT_THROW(read_wav(dir / "bad.wav"), Error);
}
