#include "speechenc/pipeline.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>

#include "test_util.hpp"

using namespace speechenc;

namespace {

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path o = scratch / "stdout.txt", e = scratch / "stderr.txt";
  const std::string cmd = std::string(SPEECHENC_CLI) + " " + args + " >" + o.string() + " 2>" + e.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testutil::read_text(o);
  r.err = testutil::read_text(e);
  return r;
}

json small_config(const fs::path& out) {
  return json{{"out", out.string()},
              {"manifest", (out / "simulate" / "manifest.json").string()},
              {"seed", 5},
              {"cv", {{"n_iterations", 6}}},
              {"simulate",
               {{"n_stories", 40},
                {"n_test_stories", 4},
                {"story_len_tr", 300},
                {"n_voxels", 40},
                {"n_layers", 4},
                {"snr", 1.0},
                {"profile", "gradient"}}},
              {"labels", {"sim/acoustic", "sim/semantic", "sim/layer0", "sim/layer1", "sim/layer2", "sim/layer3"}},
              {"varpart", {{"space1", "sim/acoustic"}, {"space2", "sim/acoustic"}}}};
}

// Runs simulate -> fit -> eval -> varpart -> report once for the suite.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testutil::TempDir;
    const fs::path out = dir_->path() / "out";
    testutil::write_text(dir_->path() / "run.json", small_config(out).dump(2));
    for (const char* cmd : {"simulate", "fit", "eval", "varpart", "report"}) {
      const CliResult r = run_cli(std::string(cmd) + " -c " + (dir_->path() / "run.json").string(), dir_->path());
      codes_[cmd] = r.code;
      if (r.code != 0) ADD_FAILURE() << cmd << ": " << r.err;
    }
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path out() { return dir_->path() / "out"; }

  static testutil::TempDir* dir_;
  static std::map<std::string, int> codes_;
};
testutil::TempDir* Pipeline::dir_ = nullptr;
std::map<std::string, int> Pipeline::codes_;

}  // namespace

TEST(Cli, MissingManifestExitsTwoWithJsonError) {
  testutil::TempDir dir;
  testutil::write_text(dir / "c.json", json{{"manifest", (dir / "nope.json").string()}, {"out", (dir / "o").string()}}.dump());
  const CliResult r = run_cli("fit -c " + (dir / "c.json").string(), dir.path());
  EXPECT_EQ(r.code, 2);
  const json err = json::parse(r.err);
  EXPECT_NE(err.at("error").get<std::string>().find("manifest not found"), std::string::npos);
  EXPECT_EQ(err.at("command"), "fit");
  EXPECT_EQ(err.at("exit_code"), 2);
}

TEST(Cli, MissingConfigExitsTwo) {
  testutil::TempDir dir;
  const CliResult r = run_cli("fit -c " + (dir / "absent.json").string(), dir.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(json::parse(r.err).at("error").get<std::string>().find("config not found"), std::string::npos);
}

TEST(Cli, UnknownCommandIsUsageError) {
  testutil::TempDir dir;
  EXPECT_EQ(run_cli("frobnicate", dir.path()).code, 2);
  EXPECT_EQ(run_cli("", dir.path()).code, 2);
}

TEST(Cli, ModuleErrorExitsOne) {
  testutil::TempDir dir;
  json c = small_config(dir / "o");
  c["simulate"]["n_layers"] = 2;
  testutil::write_text(dir / "c.json", c.dump());
  const CliResult r = run_cli("simulate -c " + (dir / "c.json").string(), dir.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(json::parse(r.err).at("exit_code"), 1);
}

TEST(Cli, FlagsOverrideConfig) {
  testutil::TempDir dir;
  json c = small_config(dir / "ignored");
  c["simulate"]["n_stories"] = 3;
  c["simulate"]["n_test_stories"] = 1;
  c["simulate"]["story_len_tr"] = 40;
  c["simulate"]["n_voxels"] = 4;
  testutil::write_text(dir / "c.json", c.dump());
  const CliResult r = run_cli("simulate -c " + (dir / "c.json").string() + " --seed 9 --out " + (dir / "o").string(), dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const json run = read_json(dir / "o" / "simulate" / "run.json");
  EXPECT_EQ(run.at("seed"), 9);
  EXPECT_EQ(run.at("config").at("seed"), 9);
  EXPECT_FALSE(fs::exists(dir / "ignored"));
  EXPECT_NE(r.out.find("run.json"), std::string::npos);
}

TEST_F(Pipeline, AllCommandsSucceed) {
  for (const auto& [cmd, code] : codes_) EXPECT_EQ(code, 0) << cmd;
}

TEST_F(Pipeline, RunJsonListsEveryOutput) {
  for (const char* cmd : {"simulate", "fit", "eval", "varpart", "report"}) {
    const fs::path d = out() / cmd;
    const json run = read_json(d / "run.json");
    EXPECT_EQ(run.at("command"), cmd);
    EXPECT_EQ(run.at("config_hash").get<std::string>().size(), 16u);
    std::set<std::string> listed;
    for (const auto& p : run.at("outputs")) {
      listed.insert(p.get<std::string>());
      EXPECT_TRUE(fs::exists(d / p.get<std::string>())) << cmd << ": " << p;
    }
    for (const auto& e : fs::recursive_directory_iterator(d)) {
      if (!e.is_regular_file()) continue;
      const std::string rel = fs::relative(e.path(), d).generic_string();
      if (rel != "run.json") {
        EXPECT_TRUE(listed.count(rel)) << cmd << ": orphan " << rel;
      }
    }
  }
}

TEST_F(Pipeline, IdenticalSpacesHaveNoUniqueVariance) {
  const json run = read_json(out() / "varpart" / "run.json");
  const json& s = run.at("summary");
  const MtxFile part = read_mtx(out() / "varpart" / "sim_acoustic__sim_acoustic.mtx");
  ASSERT_EQ(part.data.rows(), 40);
  // columns: rho1 rho2 rho_joint inter unique1 unique2 dominant mask
  EXPECT_LT(std::abs(nan_mean(part.data.col(4))), 0.05);
  EXPECT_LT(std::abs(nan_mean(part.data.col(5))), 0.05);
  EXPECT_EQ(part.data.col(0), part.data.col(1));
  EXPECT_TRUE(s.is_object());
}

TEST_F(Pipeline, ReportMatchesOracleMeans) {
  const json report = read_json(out() / "report" / "report.json");
  const json truth = read_json(out() / "simulate" / "run.json").at("truth").at("labels");
  EXPECT_TRUE(report.at("sem").is_null());
  EXPECT_EQ(report.at("n_voxels"), 40);
  ASSERT_EQ(report.at("labels").size(), 6u);
  double adjusted_sum = 0.0;
  for (const auto& row : report.at("labels")) {
    const std::string label = row.at("label");
    EXPECT_NEAR(row.at("mean_rho").get<double>(), truth.at(label).at("mean_oracle_test").get<double>(), 0.01) << label;
    adjusted_sum += row.at("adjusted").get<double>();
    ASSERT_TRUE(row.at("rois").contains("lower_half"));
    const double lo = row.at("rois").at("lower_half").at("mean_rho"), hi = row.at("rois").at("upper_half").at("mean_rho");
    EXPECT_NEAR(0.5 * (lo + hi), row.at("mean_rho").get<double>(), 1e-12);
  }
  // adjusted means subtract the per-voxel mean over models
  EXPECT_NEAR(adjusted_sum, 0.0, 1e-12);
  const std::string csv = testutil::read_text(out() / "report" / "report.csv");
  EXPECT_EQ(csv.rfind("label,scope,mean_rho,adjusted\n", 0), 0u);
  EXPECT_NE(csv.find("sim/layer3,upper_half,"), std::string::npos);
}

TEST_F(Pipeline, ReportIsDeterministic) {
  const fs::path cfg = dir_->path() / "run.json";
  json c = read_json(cfg);
  c["out"] = (dir_->path() / "again").string();
  c["eval_dir"] = (out() / "eval").string();
  testutil::write_text(dir_->path() / "again.json", c.dump());
  ASSERT_EQ(run_cli("report -c " + (dir_->path() / "again.json").string(), dir_->path()).code, 0);
  EXPECT_EQ(testutil::read_text(dir_->path() / "again" / "report" / "report.json"),
            testutil::read_text(out() / "report" / "report.json"));
}

TEST_F(Pipeline, EvalReadsFitsFromConfiguredDir) {
  testutil::TempDir dir;
  json c = read_json(dir_->path() / "run.json");
  c["out"] = (dir / "o").string();
  c["labels"] = {"sim/semantic"};
  c["fit_dir"] = (dir / "missing").string();
  testutil::write_text(dir / "c.json", c.dump());
  const CliResult r = run_cli("eval -c " + (dir / "c.json").string(), dir.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("fit not found"), std::string::npos);
  c["fit_dir"] = (out() / "fit").string();
  testutil::write_text(dir / "c.json", c.dump());
  ASSERT_EQ(run_cli("eval -c " + (dir / "c.json").string(), dir.path()).code, 0);
  EXPECT_EQ(read_mtx(dir / "o" / "eval" / "sim_semantic.rho.mtx").data,
            read_mtx(out() / "eval" / "sim_semantic.rho.mtx").data);
}

// Raw inputs: WAV audio, ARPAbet phoneme alignment and unprocessed responses.
TEST(Cli, AudioFeaturesResamplePreprocessFitEval) {
  testutil::TempDir dir;
  const double dur = 130.0;
  const Index n_tr = 65;
  auto rng = make_rng(17);
  const std::vector<std::string> phones{"AA", "B", "S", "IY", "sil", "M", "T"};
  json stories = json::array();
  for (int i = 0; i < 3; ++i) {
    const std::string id = "story" + std::to_string(i);
    Audio a;
    a.rate_hz = 16000.0;
    a.samples.resize(static_cast<std::size_t>(dur * a.rate_hz));
    for (std::size_t k = 0; k < a.samples.size(); ++k)
      a.samples[k] = 0.3 * std::sin(2.0 * M_PI * 220.0 * static_cast<double>(k) / a.rate_hz) + 0.05 * normal(rng);
    write_wav(a, dir / (id + ".wav"));
    AlignmentTable t;
    t.kind = AlignmentKind::phoneme;
    for (int k = 0; k < 260; ++k)
      t.rows.push_back({k * 0.5, (k + 1) * 0.5, phones[static_cast<std::size_t>(uniform_index(rng, phones.size()))]});
    write_alignment(t, dir / (id + ".phones.csv"));
    write_matrix(ResponseMatrix{normal_matrix(n_tr, 5, rng), 2.0, false}, dir / (id + ".resp.mtx"));
    stories.push_back({{"story_id", id},
                       {"duration_s", dur},
                       {"response_path", id + ".resp.mtx"},
                       {"alignment_paths", {{"phonemes", id + ".phones.csv"}}},
                       {"role", i == 2 ? "test" : "train"}});
  }
  write_json(dir / "manifest.json", json{{"stories", stories}, {"roi_masks", {{"first", {0, 1}}}}});

  const fs::path out = dir / "out";
  json c{{"out", out.string()},
         {"seed", 3},
         {"cv", {{"n_iterations", 3}, {"n_chunks", 2}, {"chunk_len_tr", 10}}},
         {"features",
          {{"kinds", {"fbank", "articulation"}},
           {"audio_dir", dir.path().string()},
           {"n_mels", 16},
           {"articulation_table", std::string(SPEECHENC_SOURCE_DIR) + "/data/articulation_arpabet.tsv"}}},
         {"labels", {"baseline/fbank", "baseline/articulation"}}};
  auto step = [&](const std::string& cmd, const fs::path& manifest) {
    c["manifest"] = manifest.string();
    testutil::write_text(dir / "c.json", c.dump());
    const CliResult r = run_cli(cmd + " -c " + (dir / "c.json").string(), dir.path());
    EXPECT_EQ(r.code, 0) << cmd << ": " << r.err;
    return r.code == 0;
  };
  ASSERT_TRUE(step("features", dir / "manifest.json"));
  const MtxFile fb = read_mtx(out / "features" / "features" / "story0.fbank.mtx");
  EXPECT_EQ(fb.data.cols(), 16);
  EXPECT_EQ(fb.meta.at("rate_hz"), 100.0);
  EXPECT_EQ(read_mtx(out / "features" / "features" / "story0.articulation.mtx").data.rows(), 13000);

  ASSERT_TRUE(step("resample", out / "features" / "manifest.json"));
  const MtxFile rs = read_mtx(out / "resample" / "features" / "story1.baseline_fbank.mtx");
  EXPECT_EQ(rs.data.rows(), n_tr);
  EXPECT_EQ(rs.meta.at("rate_hz"), 0.5);

  ASSERT_TRUE(step("preprocess", out / "resample" / "manifest.json"));
  const MtxFile pr = read_mtx(out / "preprocess" / "responses" / "story2.mtx");
  EXPECT_EQ(pr.data.rows(), n_tr - 20);
  EXPECT_TRUE(pr.meta.at("preprocessed").get<bool>());
  EXPECT_NEAR(pr.data.col(0).mean(), 0.0, 1e-12);

  ASSERT_TRUE(step("fit", out / "preprocess" / "manifest.json"));
  ASSERT_TRUE(step("eval", out / "preprocess" / "manifest.json"));
  const json scores = read_json(out / "eval" / "scores.json");
  EXPECT_EQ(scores.at("baseline/articulation").at("n_test_tr"), n_tr - 20);
}

TEST(PipelineUnit, ConfigHashAndFileNames) {
  EXPECT_EQ(pipeline::fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(pipeline::hex64(pipeline::fnv1a("a")), "af63dc4c8601ec8c");
  EXPECT_EQ(pipeline::file_safe("sim/layer3"), "sim_layer3");
}
