#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sfm/error.hpp"
#include "sfm/io/container.hpp"
#include "sfm/io/wav.hpp"
#include "sfm/ode/solver.hpp"
#include "sfm/stream/engine.hpp"

namespace sfm::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,     // command ran but a reported check failed
  kUsage = 2,           // bad flags or configuration
  kIoError = 3,         // unreadable input or unwritable output
  kFormatError = 4,     // malformed WAV, container, tableau or schedule
  kRateMismatch = 5,    // input sample rate differs from the model's
  kModelMismatch = 6,   // weights do not fit the spec or the requested task
  kNumericError = 7,    // NaN/Inf during processing or training
  kExternalTool = 8,    // codec command failed
  kInternal = 9,
};

class RateMismatchError : public Error {
 public:
  using Error::Error;
};

class ModelMismatchError : public Error {
 public:
  using Error::Error;
};

// Maps the active exception to an exit code and writes a one-line diagnostic.
int exit_code_for_current_exception(std::ostream& err);

enum class OutputFormat { Text, Structured };

struct OutputOptions {
  OutputFormat format = OutputFormat::Text;
  fs::path report_file;  // structured report written here in addition to stdout
};

// "euler:N", "midpoint:N", "rk:<name|file>" or "ralston2+3"; a bare "euler" or
// "midpoint" takes its step count from `nfe`. With both given they must agree.
ode::SolverSpec resolve_solver(const std::string& text, std::optional<int> nfe);

// Model used when no weight file is given: the desk U-Net at W/2 bins with
// random (non-zero output) weights.
io::ModelFile default_model(dsp::TaskId task, int window, int hop, std::uint64_t seed);

stream::EngineConfig engine_config(const io::ModelFile& model, const ode::SolverSpec& solver,
                                   std::vector<double> sde_schedule = {}, bool probe = false);

struct RunConfig {
  std::optional<dsp::TaskId> task;  // when set, must match the model's task
  std::string solver = "euler:4";
  std::optional<int> nfe;
  std::uint64_t seed = 0;
  fs::path input, output, weights;
  bool probe = false;
  fs::path sde_schedule;
  int threads = 1;
  io::WavFormat wav_format = io::WavFormat::Float32;

  void validate() const;
};

int cmd_process(const RunConfig& run, const OutputOptions& out_opt, std::ostream& out);

struct CorruptOptions {
  dsp::TaskId task = dsp::TaskId::SE;
  fs::path input, output;
  fs::path noise, rir;               // SE noise WAV, Dereverb impulse response WAV
  std::optional<double> snr_db;      // SE without a noise file: white noise at this SNR
  std::optional<std::string> codec_command;
  std::optional<int> bwe_factor;
  std::uint64_t seed = 0;
  io::WavFormat wav_format = io::WavFormat::Float32;
};

int cmd_corrupt(const CorruptOptions& opt, const OutputOptions& out_opt, std::ostream& out);

struct ProbeCliOptions {
  fs::path weights;
  int window = 512, hop = 256, sample_rate = 16000;
  std::string solver = "euler:1";
  std::optional<int> nfe;
  std::size_t input_len = 0;  // samples; 0 selects 8 W
  std::size_t stride = 0;     // 0: automatic
  int threads = 1;
  std::uint64_t seed = 0;
};

int cmd_probe_latency(const ProbeCliOptions& opt, const OutputOptions& out_opt, std::ostream& out);

struct BenchOptions {
  fs::path weights;
  int window = 512, hop = 256;
  std::string solver = "euler:4";
  std::optional<int> nfe;
  int frames = 200;
  std::vector<int> nfe_list{1, 2, 4, 8};
  double offline_seconds = 1.0;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchOptions& opt, const OutputOptions& out_opt, std::ostream& out);

struct CompressOptions {
  fs::path input, output;
  int rank = 4;
};

int cmd_compress(const CompressOptions& opt, const OutputOptions& out_opt, std::ostream& out);

struct TableauOptions {
  std::string source;  // builtin name or tableau file
  double tolerance = 2e-3;
  bool structural = false;  // accept violations of learned-scheme-only constraints
};

int cmd_validate_tableau(const TableauOptions& opt, const OutputOptions& out_opt, std::ostream& out);

struct TrainOptions {
  dsp::TaskId task = dsp::TaskId::SE;
  int steps = 2000;
  std::uint64_t seed = 1;
  fs::path output;
  fs::path loss_curve;  // optional CSV: step,loss
  int eval_clips = 16;  // 0 skips evaluation
  std::string eval_solver = "euler:5";
};

int cmd_train_toy(const TrainOptions& opt, const OutputOptions& out_opt, std::ostream& out);

// Full command line: subcommand dispatch, logging setup from SFM_LOG, and
// exception to exit-code mapping.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sfm::cli
