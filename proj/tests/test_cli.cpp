#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>

#include "nirsfs/geometry.hpp"
#include "nirsfs/trainer.hpp"
#include "test_util.hpp"

using namespace nirsfs;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out, err;
};

// Runs the CLI with `args`, capturing stdout and stderr.
RunResult run_cli(const std::string& args, const testutil::TempDir& scratch) {
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd = std::string(NIRSFS_CLI) + " " + args + " 2>" + err.string();
  RunResult r;
  std::FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = testutil::read_bytes(err);
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch_size = 2;
  c.total_iterations = 4;
  c.checkpoint_every = 2;
  c.generator.width_scale = 0.0625;
  c.discriminator.width_scale = 0.0625;
  return c;
}

// Checkpoint whose generator outputs (0, 0, tanh(4)) everywhere.
void write_flat_checkpoint(const fs::path& path, const TrainConfig& cfg) {
  TrainingState<float> st = make_training_state<float>(cfg);
  for (auto& p : st.gen.named_parameters()) {
    Tensor<float> t = p.tensor;
    const bool last_bias = p.name == "gen.conv5.bias";
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = last_bias && i == 2 ? 4.0f : 0.0f;
  }
  for (auto& b : st.gen.norm_layers()) b.stats.initialized = true;
  save_checkpoint(path.string(), st, to_json(cfg).dump());
}

}  // namespace

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = std::make_unique<testutil::TempDir>("cli_ds");
    DatasetManifest m;
    m.counts = {{"train", 8}, {"val", 0}, {"test", 3}};
    m.patch_size = 64;
    std::ofstream(data_->path() / "manifest_in.json") << to_json(m).dump(2);
  }
  static void TearDownTestSuite() { data_.reset(); }

  testutil::TempDir tmp_{"cli"};
  static inline std::unique_ptr<testutil::TempDir> data_;
};

TEST_F(Cli, HelpListsSubcommands) {
  const RunResult r = run_cli("--help", tmp_);
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"generate", "train", "eval", "infer", "integrate", "plot"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
}

TEST_F(Cli, GenerateWritesDatasetAndEcho) {
  const fs::path out = tmp_ / "ds";
  const RunResult r = run_cli("--json generate --manifest " + q(data_->path() / "manifest_in.json") + " --out " + q(out), tmp_);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  EXPECT_TRUE(fs::exists(out / "generate_config.json"));
  EXPECT_TRUE(fs::exists(out / "test" / "000002_nir.png"));
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("command"), "generate");
}

TEST_F(Cli, MalformedJsonIsExitTwoWithLine) {
  std::ofstream(tmp_ / "bad.json") << "{\n  \"patch_size\": 32,\n  \"seed\": ,\n}\n";
  const RunResult r = run_cli("generate --manifest " + q(tmp_ / "bad.json") + " --out " + q(tmp_ / "ds"), tmp_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownManifestKeyIsExitTwo) {
  std::ofstream(tmp_ / "m.json") << R"({"patch_sise": 32})";
  EXPECT_EQ(run_cli("generate --manifest " + q(tmp_ / "m.json") + " --out " + q(tmp_ / "ds"), tmp_).code, 2);
  EXPECT_EQ(run_cli("generate --bogus-flag", tmp_).code, 2);
}

TEST_F(Cli, UnwritableOutputIsExitThree) {
  std::ofstream(tmp_ / "blocker") << "x";
  const RunResult r = run_cli("generate --out " + q(tmp_ / "blocker" / "ds"), tmp_);
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST_F(Cli, TrainEvalInferPipeline) {
  const fs::path ds = tmp_ / "ds", run = tmp_ / "run";
  ASSERT_EQ(run_cli("generate --manifest " + q(data_->path() / "manifest_in.json") + " --out " + q(ds), tmp_).code, 0);
  std::ofstream(tmp_ / "train.json") << to_json(tiny_config()).dump();
  const RunResult t = run_cli("--json train --quiet --config " + q(tmp_ / "train.json") + " --data " + q(ds) +
                                  " --out " + q(run),
                              tmp_);
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(nlohmann::json::parse(t.out).at("final_iteration"), 4);
  EXPECT_TRUE(fs::exists(run / "ckpt_2.bin"));
  EXPECT_TRUE(fs::exists(run / "ckpt_4.bin"));
  EXPECT_TRUE(fs::exists(run / "train_config.json"));

  const RunResult e = run_cli("eval --ckpt " + q(run / "ckpt_4.bin") + " --data " + q(ds) + " --out " +
                                  q(tmp_ / "rep" / "report.json"),
                              tmp_);
  ASSERT_EQ(e.code, 0) << e.err;
  const auto rep = nlohmann::json::parse(testutil::read_bytes(tmp_ / "rep" / "report.json"));
  EXPECT_EQ(rep.at("images"), 3);
  EXPECT_EQ(rep.at("iteration"), 4);
  EXPECT_TRUE(fs::exists(tmp_ / "rep" / "eval_config.json"));

  const std::string in = q(ds / "test" / "000000_nir.png");
  for (const char* prefix : {"a", "b"}) {
    const RunResult i = run_cli("infer --ckpt " + q(run / "ckpt_4.bin") + " --input " + in + " --out " +
                                    q(tmp_ / prefix),
                                tmp_);
    ASSERT_EQ(i.code, 0) << i.err;
  }
  const std::string a = testutil::read_bytes(tmp_ / "a_nrm.png");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, testutil::read_bytes(tmp_ / "b_nrm.png"));
  const NormalMap n = io::read_normal_png((tmp_ / "a_nrm.png").string());
  EXPECT_EQ(n.width(), 64u);
  EXPECT_EQ(n.height(), 64u);

  const RunResult p = run_cli("plot --log " + q(run / "losses.jsonl") + " --out " + q(tmp_ / "curves.png"), tmp_);
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_GT(fs::file_size(tmp_ / "curves.png"), 0u);
}

TEST_F(Cli, ArchMismatchIsExitFour) {
  const TrainConfig cfg = tiny_config();
  write_flat_checkpoint(tmp_ / "flat.bin", cfg);
  TrainConfig other = cfg;
  other.generator.width_scale = 0.125;
  std::ofstream(tmp_ / "other.json") << to_json(other).dump();
  NirImage nir{ScalarField(32, 32), Radiance::Normalized};
  io::write_nir_png((tmp_ / "in.png").string(), nir);
  const RunResult r = run_cli("infer --ckpt " + q(tmp_ / "flat.bin") + " --config " + q(tmp_ / "other.json") +
                                  " --input " + q(tmp_ / "in.png") + " --out " + q(tmp_ / "x"),
                              tmp_);
  EXPECT_EQ(r.code, 4) << r.err;
}

TEST_F(Cli, InferMeshOnFlatPredictionIsPlanar) {
  write_flat_checkpoint(tmp_ / "flat.bin", tiny_config());
  NirImage nir{ScalarField(40, 24), Radiance::Normalized};
  for (std::size_t i = 0; i < nir.field.values.size(); ++i) nir.field.values[i] = std::sin(0.1 * double(i));
  io::write_nir_png((tmp_ / "in.png").string(), nir);
  const RunResult r = run_cli("infer --mesh --ckpt " + q(tmp_ / "flat.bin") + " --input " + q(tmp_ / "in.png") +
                                  " --out " + q(tmp_ / "flat"),
                              tmp_);
  ASSERT_EQ(r.code, 0) << r.err;
  const Mesh m = read_obj((tmp_ / "flat.obj").string());
  ASSERT_EQ(m.vertices.size(), 40u * 24);
  for (const auto& v : m.vertices) EXPECT_NEAR(v.z, 0.0, 1e-6);
  EXPECT_TRUE(fs::exists(tmp_ / "flat_config.json"));
}

TEST_F(Cli, InferRejectsTinyInput) {
  write_flat_checkpoint(tmp_ / "flat.bin", tiny_config());
  io::write_nir_png((tmp_ / "in.png").string(), NirImage{ScalarField(8, 8), Radiance::Normalized});
  const RunResult r = run_cli("infer --ckpt " + q(tmp_ / "flat.bin") + " --input " + q(tmp_ / "in.png") +
                                  " --out " + q(tmp_ / "x"),
                              tmp_);
  EXPECT_EQ(r.code, 2) << r.err;
}

TEST_F(Cli, IntegrateWritesMeshAndDepth) {
  const Surface s = generate_surface({SurfaceKind::GaussianBumps, 1.0, 3.0, 3}, 32);
  io::write_normal_png((tmp_ / "n.png").string(), s.normals);
  const RunResult r = run_cli("integrate --depth-pfm --normals " + q(tmp_ / "n.png") + " --out " + q(tmp_ / "surf"),
                              tmp_);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_obj((tmp_ / "surf.obj").string()).vertices.size(), 32u * 32);
  EXPECT_TRUE(fs::exists(tmp_ / "surf_depth.pfm"));
}

TEST_F(Cli, PlotEmptyLogIsExitFive) {
  std::ofstream(tmp_ / "losses.jsonl") << "";
  const RunResult r = run_cli("plot --log " + q(tmp_ / "losses.jsonl") + " --out " + q(tmp_ / "p.png"), tmp_);
  EXPECT_EQ(r.code, 5) << r.err;
}

TEST_F(Cli, PlotWarnsOnMissingTermAndCorruptLines) {
  std::ofstream(tmp_ / "losses.jsonl") << R"({"iteration":1,"d_loss":1,"g_bce":1,"l_p":1,"l_ang":1})" << "\n"
                                       << R"({"iteration":2,"d_loss":1,"g_bce":1,"l_p":1,"l_ang":1})" << "\n"
                                       << "oops\n";
  const RunResult r = run_cli("plot --log " + q(tmp_ / "losses.jsonl") + " --out " + q(tmp_ / "p.png"), tmp_);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("l_curl"), std::string::npos);
  EXPECT_NE(r.err.find("1 corrupt"), std::string::npos);
}
