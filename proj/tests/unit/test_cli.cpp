#if SFM_HAVE_COMMANDS

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "sfm/cli/commands.hpp"
#include "sfm/io/wav.hpp"
#include "sfm/train/toy.hpp"

namespace sfm::cli {
namespace {

struct Result {
  int code;
  std::string out, err;
  nlohmann::json json() const { return nlohmann::json::parse(out); }
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "sfm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("sfm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Toy-sized model: W=16, H=8, 8 bins.
  std::string small_model(bool identity, const std::string& name = "model.sfmw") const {
    auto m = default_model(dsp::TaskId::SE, 16, 8, 3);
    m.net.channels = {4, 8};
    m.net.freq_groups = 2;
    m.net.max_channel_groups = 2;
    m.net.emb_dim = 8;
    Rng rng(5);
    net::InitOptions init;
    init.zero_output = identity;
    m.weights = net::init_weights(net::build_program(m.net), rng, init);
    if (identity) m.flow = {{1e-6}, {1e-6}};
    io::save_model(path(name), m);
    return path(name);
  }

  std::string noisy_wav(const std::string& name, int rate = 16000, std::size_t n = 400) const {
    Rng rng(9);
    Signal x(n);
    for (auto& v : x) v = 0.3 * rng.normal();
    io::write_wav(path(name), x, rate);
    return path(name);
  }

  fs::path dir_;
};

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, kOk);
  EXPECT_EQ(run({"process", "--help"}).code, kOk);
  EXPECT_EQ(run({}).code, kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kUsage);
  EXPECT_EQ(run({"validate-tableau", "se", "--format", "yaml"}).code, kUsage);
}

TEST_F(CliTest, ZeroInputWithIdentityWeightsGivesZeroOutput) {
  const auto model = small_model(true);
  io::write_wav(path("zero.wav"), Signal(300, 0.0), 16000);
  const auto r = run({"process", path("zero.wav"), "-o", path("out.wav"), "--weights", model, "--solver", "euler:4"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto out = io::read_wav(path("out.wav"));
  ASSERT_EQ(out.samples.size(), 300u);
  for (double v : out.samples) EXPECT_LE(std::abs(v), 1e-9);
}

TEST_F(CliTest, ProcessIsDeterministicPerSeed) {
  const auto model = small_model(false);
  const auto in = noisy_wav("in.wav");
  for (const auto* out : {"a.wav", "b.wav"})
    ASSERT_EQ(run({"process", in, "-o", path(out), "--weights", model, "--seed", "7", "--solver", "rk:se"}).code, kOk);
  EXPECT_EQ(read_bytes(path("a.wav")), read_bytes(path("b.wav")));
  ASSERT_EQ(run({"process", in, "-o", path("c.wav"), "--weights", model, "--seed", "8", "--solver", "rk:se"}).code, kOk);
  EXPECT_NE(read_bytes(path("a.wav")), read_bytes(path("c.wav")));
}

TEST_F(CliTest, ProcessStructuredReport) {
  const auto model = small_model(false);
  const auto r = run({"process", noisy_wav("in.wav"), "-o", path("o.wav"), "--weights", model, "--solver", "euler",
                      "--nfe", "3", "--format", "structured", "--report", path("rep.json")});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto j = r.json();
  EXPECT_EQ(j["nfe"], 3);
  EXPECT_EQ(j["algorithmic_latency_samples"], 15);
  EXPECT_DOUBLE_EQ(j["total_latency_ms"].get<double>(), 1000.0 * 23 / 16000);
  EXPECT_EQ(j["samples"], 400);
  EXPECT_GT(j["rtf_median"].get<double>(), 0.0);
  EXPECT_EQ(nlohmann::json::parse(read_bytes(path("rep.json"))), j);
}

TEST_F(CliTest, ProcessErrorsHaveDistinctCodes) {
  const auto model = small_model(false);
  const auto in = noisy_wav("in.wav");
  auto proc = [&](std::vector<std::string> extra) {
    std::vector<std::string> a{"process", in, "-o", path("o.wav"), "--weights", model};
    a.insert(a.end(), extra.begin(), extra.end());
    return run(a).code;
  };
  EXPECT_EQ(run({"process", path("missing.wav"), "-o", path("o.wav"), "--weights", model}).code, kIoError);
  EXPECT_EQ(run({"process", noisy_wav("r.wav", 8000), "-o", path("o.wav"), "--weights", model}).code, kRateMismatch);
  std::ofstream(path("junk.sfmw")) << "not a container";
  EXPECT_EQ(run({"process", in, "-o", path("o.wav"), "--weights", path("junk.sfmw")}).code, kFormatError);
  EXPECT_EQ(proc({"--task", "dereverb"}), kModelMismatch);
  EXPECT_EQ(proc({"--solver", "euler:2", "--nfe", "3"}), kUsage);
  std::ofstream(path("sched.txt")) << "0.1 0.1";
  EXPECT_EQ(proc({"--solver", "euler:3", "--sde-schedule", path("sched.txt")}), kUsage);
  EXPECT_EQ(proc({"--solver", "euler:2", "--sde-schedule", path("sched.txt")}), kOk);
  std::ofstream(path("bad.txt")) << "0.1 x";
  EXPECT_EQ(proc({"--solver", "euler:2", "--sde-schedule", path("bad.txt")}), kFormatError);

  Signal x(200, 0.1);
  x[50] = std::numeric_limits<double>::quiet_NaN();
  io::write_wav(path("nan.wav"), x, 16000);
  EXPECT_EQ(run({"process", path("nan.wav"), "-o", path("o.wav"), "--weights", model}).code, kNumericError);
  EXPECT_EQ(run({"process", path("nan.wav"), "-o", path("o.wav"), "--weights", model, "--probe"}).code, kOk);

  // Net bins disagree with the container's STFT.
  auto m = io::load_model(model);
  m.stft.window_len = 32;
  m.stft.hop_len = 16;
  io::save_model(path("wrong.sfmw"), m);
  EXPECT_EQ(run({"process", in, "-o", path("o.wav"), "--weights", path("wrong.sfmw")}).code, kModelMismatch);
}

TEST_F(CliTest, CorruptOperators) {
  Rng rng(2);
  Signal clean(800);
  for (auto& v : clean) v = 0.2 * rng.normal();
  io::write_wav(path("clean.wav"), clean, 16000);

  const auto se = run({"corrupt", path("clean.wav"), "-o", path("se.wav"), "--task", "se", "--snr", "10",
                       "--format", "structured"});
  ASSERT_EQ(se.code, kOk) << se.err;
  EXPECT_NEAR(se.json()["snr_db"].get<double>(), 10.0, 1e-9);

  io::write_wav(path("zero_noise.wav"), Signal(800, 0.0), 16000);
  ASSERT_EQ(run({"corrupt", path("clean.wav"), "-o", path("id.wav"), "--task", "se", "--noise", path("zero_noise.wav")}).code, kOk);
  EXPECT_EQ(io::read_wav(path("id.wav")).samples, io::read_wav(path("clean.wav")).samples);

  io::write_wav(path("impulse.wav"), Signal{1.0}, 16000);
  ASSERT_EQ(run({"corrupt", path("clean.wav"), "-o", path("dr.wav"), "--task", "dereverb", "--rir", path("impulse.wav")}).code, kOk);
  EXPECT_EQ(io::read_wav(path("dr.wav")).samples, io::read_wav(path("clean.wav")).samples);

  EXPECT_EQ(run({"corrupt", path("clean.wav"), "-o", path("b.wav"), "--task", "bwe", "--bwe-factor", "2"}).code, kOk);
  EXPECT_EQ(run({"corrupt", path("clean.wav"), "-o", path("b.wav"), "--task", "bwe", "--bwe-factor", "3"}).code, kUsage);
  EXPECT_EQ(run({"corrupt", path("clean.wav"), "-o", path("c.wav"), "--task", "codec", "--codec-cmd", "false"}).code,
            kExternalTool);
  EXPECT_EQ(run({"corrupt", path("clean.wav"), "-o", path("p.wav"), "--task", "pr"}).code, kUsage);
  EXPECT_EQ(run({"corrupt", path("clean.wav"), "-o", path("p.wav"), "--task", "se"}).code, kUsage);
  EXPECT_EQ(run({"corrupt", path("clean.wav"), "-o", path("p.wav"), "--task", "se", "--noise", noisy_wav("n8k.wav", 8000, 800)}).code,
            kRateMismatch);
}

TEST_F(CliTest, ProbeLatencyMatchesTheory) {
  const auto r = run({"probe-latency", "--window", "16", "--hop", "8", "--format", "structured"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto j = r.json();
  EXPECT_EQ(j["latency_samples"], 15);
  EXPECT_EQ(j["matches_theory"], true);
  const auto m = run({"probe-latency", "--weights", small_model(false), "--solver", "midpoint:1", "--threads", "2",
                      "--stride", "2", "--format", "structured"});
  ASSERT_EQ(m.code, kOk) << m.err;
  EXPECT_EQ(m.json()["latency_samples"], 15);
}

TEST_F(CliTest, BenchReport) {
  const auto r = run({"bench", "--weights", small_model(false), "--frames", "5", "--nfe-list", "1,4", "--seconds",
                      "0.05", "--format", "structured"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto j = r.json();
  EXPECT_EQ(j["nfe_scaling"].size(), 2u);
  EXPECT_EQ(j["nfe_scaling"][1]["flops_per_frame"].get<double>(), 4 * j["nfe_scaling"][0]["flops_per_frame"].get<double>());
  EXPECT_TRUE(j.contains("rtf_ratio_4_over_1"));
  EXPECT_GT(j["offline_rtf"].get<double>(), 0.0);
  const auto text = run({"bench", "--weights", small_model(false), "--frames", "5", "--nfe-list", "1", "--seconds", "0.05"});
  EXPECT_NE(text.out.find("nfe_scaling[0]: nfe=1"), std::string::npos);
}

TEST_F(CliTest, CompressRoundTrip) {
  auto m = default_model(dsp::TaskId::SE, 32, 16, 4);
  io::save_model(path("desk.sfmw"), m);
  const auto r = run({"compress", "--weights", path("desk.sfmw"), "-o", path("c.sfmw"), "--rank", "2", "--format",
                      "structured"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto j = r.json();
  EXPECT_EQ(j["replaced_layers"], 6);
  EXPECT_LT(j["flops_after"].get<double>(), j["flops_before"].get<double>());
  const auto c = io::load_model(path("c.sfmw"));
  EXPECT_EQ(c.net.decouple_rank, 2);
  EXPECT_EQ(run({"process", noisy_wav("in.wav"), "-o", path("o.wav"), "--weights", path("c.sfmw")}).code, kOk);
  EXPECT_EQ(run({"compress", "--weights", path("c.sfmw"), "-o", path("d.sfmw")}).code, kUsage);
  EXPECT_EQ(run({"compress", "--weights", path("desk.sfmw"), "-o", path("d.sfmw"), "--rank", "10"}).code, kUsage);
}

TEST_F(CliTest, ValidateTableau) {
  for (const char* name : {"se", "dereverb", "codec", "bwe", "pr", "mel"}) EXPECT_EQ(run({"validate-tableau", name}).code, kOk) << name;
  EXPECT_EQ(run({"validate-tableau", "kutta38", "--tol", "1e-12"}).code, kCheckFailed);
  EXPECT_EQ(run({"validate-tableau", "kutta38", "--tol", "1e-12", "--structural"}).code, kOk);
  std::ofstream(path("t.txt")) << "rk 2\n0 0\n0.5 0\n0 1\n0 0.5\n";
  EXPECT_EQ(run({"validate-tableau", path("t.txt"), "--structural"}).code, kOk);
  std::ofstream(path("u.txt")) << "rk 2\n0 0\n0.5 0\n0 1\n";
  EXPECT_EQ(run({"validate-tableau", path("u.txt")}).code, kFormatError);
  const auto j = run({"validate-tableau", "se", "--format", "structured"}).json();
  EXPECT_NEAR(j["sum_b"].get<double>(), 0.999, 1e-12);
  EXPECT_NEAR(j["row_sums"][3].get<double>(), 0.850, 1e-12);
}

TEST_F(CliTest, TrainToyZeroStepsAndDeterminism) {
  ASSERT_EQ(run({"train-toy", "--steps", "0", "-o", path("z.sfmw"), "--eval-clips", "0"}).code, kOk);
  const auto cfg = train::ToyTrainConfig::desk();
  Rng rng(cfg.seed);
  EXPECT_EQ(io::load_model(path("z.sfmw")).weights, net::init_weights(net::build_program(cfg.net), rng));

  for (const auto* out : {"a.sfmw", "b.sfmw"})
    ASSERT_EQ(run({"train-toy", "--steps", "3", "--seed", "4", "-o", path(out), "--eval-clips", "1", "--loss-curve",
                   path(std::string(out) + ".csv")})
                  .code,
              kOk);
  EXPECT_EQ(read_bytes(path("a.sfmw")), read_bytes(path("b.sfmw")));
  EXPECT_EQ(read_bytes(path("a.sfmw.csv")), read_bytes(path("b.sfmw.csv")));
  EXPECT_EQ(run({"train-toy", "--task", "mel", "-o", path("m.sfmw")}).code, kUsage);
}

#ifdef SFM_CLI_PATH
TEST_F(CliTest, BinaryExitStatus) {
  const std::string cmd = std::string(SFM_CLI_PATH) + " validate-tableau kutta38 --tol 1e-12 > /dev/null";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), kCheckFailed);
  const int ok = std::system((std::string("SFM_LOG=debug ") + SFM_CLI_PATH + " validate-tableau se > /dev/null").c_str());
  EXPECT_EQ(WEXITSTATUS(ok), kOk);
}
#endif

}  // namespace
}  // namespace sfm::cli

#endif
