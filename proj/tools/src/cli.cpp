#include <cstdlib>
#include <ostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "sfm/cli/commands.hpp"

namespace sfm::cli {
namespace {

void setup_logging() {
  auto logger = std::make_shared<spdlog::logger>("sfm", std::make_shared<spdlog::sinks::stderr_sink_mt>());
  logger->set_pattern("[%l] %v");
  auto level = spdlog::level::warn;
  if (const char* env = std::getenv("SFM_LOG")) {
    const auto parsed = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only "off" itself may select it.
    if (parsed != spdlog::level::off || std::string(env) == "off") level = parsed;
  }
  logger->set_level(level);
  spdlog::set_default_logger(logger);
}

struct Common {
  std::string format = "text";
  std::string report;
  OutputOptions output() const {
    OutputOptions o;
    o.format = format == "structured" ? OutputFormat::Structured : OutputFormat::Text;
    o.report_file = report;
    return o;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--format", c.format, "Report format on stdout")->check(CLI::IsMember({"text", "structured"}));
  cmd->add_option("--report", c.report, "Also write the structured report to this file");
}

const char* kReportHelp =
    "Reports: text prints one 'key: value' line per field and 'table[i]: k=v ...' per table row; "
    "structured prints the same fields as one JSON object.";

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  setup_logging();
  CLI::App app{"Streaming flow-matching speech restoration toolkit"};
  app.footer(std::string(kReportHelp) +
             "\nExit codes: 0 ok, 1 check failed, 2 usage/config, 3 i/o, 4 format, 5 sample-rate mismatch, "
             "6 weight/spec mismatch, 7 numeric, 8 external tool, 9 internal.\nSFM_LOG=trace|debug|info|warn|error|off "
             "sets log verbosity (default warn).");
  app.require_subcommand(1);

  Common common;
  std::string task;
  std::optional<int> nfe;
  bool pcm16 = false;

  RunConfig run;
  auto* process = app.add_subcommand("process", "Restore a WAV file with streaming inference");
  process->add_option("input", run.input, "Input WAV (mono)")->required();
  process->add_option("-o,--output", run.output, "Output WAV")->required();
  process->add_option("--weights", run.weights, "Weight container (.sfmw)")->required();
  process->add_option("--task", task, "Expected task of the weights: se, dereverb, codec, bwe, pr, mel");
  process->add_option("--solver", run.solver, "euler:N, midpoint:N, rk:<name|file>, ralston2+3");
  process->add_option("--nfe", nfe, "Field evaluations per frame");
  process->add_option("--seed", run.seed, "Noise seed");
  process->add_flag("--probe", run.probe, "Probe mode: no finiteness checks, NaNs propagate");
  process->add_option("--sde-schedule", run.sde_schedule, "File with one noise level per solver step");
  process->add_option("--threads", run.threads, "Worker threads (processing is sequential)");
  process->add_flag("--pcm16", pcm16, "Write 16-bit PCM instead of float32");
  add_common(process, common);
  process->footer("Report fields: task solver nfe seed sde samples frames input_rms output_rms "
                  "algorithmic_latency_samples algorithmic_latency_ms total_latency_ms rtf_median rtf_p95 output");

  CorruptOptions corrupt;
  std::optional<double> snr;
  std::string codec_cmd;
  std::optional<int> bwe;
  auto* corrupt_cmd = app.add_subcommand("corrupt", "Apply a waveform corruption operator");
  corrupt_cmd->add_option("input", corrupt.input, "Clean WAV")->required();
  corrupt_cmd->add_option("-o,--output", corrupt.output, "Corrupted WAV")->required();
  corrupt_cmd->add_option("--task", task, "se, dereverb, codec or bwe")->required();
  corrupt_cmd->add_option("--noise", corrupt.noise, "SE: noise WAV (truncated to the input length)");
  corrupt_cmd->add_option("--snr", snr, "SE: white noise at this SNR in dB");
  corrupt_cmd->add_option("--rir", corrupt.rir, "Dereverb: room impulse response WAV");
  corrupt_cmd->add_option("--codec-cmd", codec_cmd, "Codec: shell template with {in} and {out}");
  corrupt_cmd->add_option("--bwe-factor", bwe, "BWE: 2 or 4 (random when omitted)");
  corrupt_cmd->add_option("--seed", corrupt.seed, "Seed for generated noise and random factors");
  corrupt_cmd->add_flag("--pcm16", pcm16, "Write 16-bit PCM instead of float32");
  add_common(corrupt_cmd, common);

  ProbeCliOptions probe;
  auto* probe_cmd = app.add_subcommand("probe-latency", "Measure algorithmic latency with the NaN probe");
  probe_cmd->add_option("--weights", probe.weights, "Weight container; default: random desk model");
  probe_cmd->add_option("--window", probe.window, "Window length W without --weights");
  probe_cmd->add_option("--hop", probe.hop, "Hop length H without --weights");
  probe_cmd->add_option("--rate", probe.sample_rate, "Sample rate without --weights");
  probe_cmd->add_option("--solver", probe.solver, "Solver");
  probe_cmd->add_option("--nfe", nfe, "Field evaluations per frame");
  probe_cmd->add_option("--length", probe.input_len, "Probe input length in samples (default 8 W)");
  probe_cmd->add_option("--stride", probe.stride, "Sweep stride in samples (default: automatic)");
  probe_cmd->add_option("--threads", probe.threads, "Parallel probe workers");
  probe_cmd->add_option("--seed", probe.seed, "Seed");
  add_common(probe_cmd, common);
  probe_cmd->footer("Exit 1 when the measured latency differs from W-1 samples. Report fields: window hop "
                    "sample_rate solver input_samples evaluations latency_samples latency_ms unbounded "
                    "theoretical_samples algorithmic_latency_ms total_latency_ms matches_theory");

  BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "Streaming and offline real-time factors");
  bench_cmd->add_option("--weights", bench.weights, "Weight container; default: random desk model");
  bench_cmd->add_option("--window", bench.window, "Window length W without --weights");
  bench_cmd->add_option("--hop", bench.hop, "Hop length H without --weights");
  bench_cmd->add_option("--solver", bench.solver, "Solver");
  bench_cmd->add_option("--nfe", nfe, "Field evaluations per frame");
  bench_cmd->add_option("--frames", bench.frames, "Timed frames after warm-up");
  bench_cmd->add_option("--nfe-list", bench.nfe_list, "Euler NFE values for the scaling table")->delimiter(',');
  bench_cmd->add_option("--seconds", bench.offline_seconds, "Offline input duration");
  bench_cmd->add_option("--seed", bench.seed, "Seed");
  bench_cmd->add_option("--threads", probe.threads, "Ignored: benchmarks run on one thread");
  add_common(bench_cmd, common);
  bench_cmd->footer("Report fields: solver nfe frames hop_ms flops_per_frame frame_ms_median frame_ms_p95 "
                    "streaming_rtf_median streaming_rtf_p95 gflops_per_second offline_rtf "
                    "nfe_scaling[i](nfe rtf_median rtf_p95 flops_per_frame) rtf_ratio_4_over_1");

  CompressOptions comp;
  auto* comp_cmd = app.add_subcommand("compress", "SVD-decouple eligible 3x3 convolutions");
  comp_cmd->add_option("--weights", comp.input, "Input weight container")->required();
  comp_cmd->add_option("-o,--output", comp.output, "Output weight container")->required();
  comp_cmd->add_option("--rank", comp.rank, "Rank J per input channel");
  add_common(comp_cmd, common);

  TableauOptions tab;
  auto* tab_cmd = app.add_subcommand("validate-tableau", "Check a Butcher tableau against the constraint set");
  tab_cmd->add_option("tableau", tab.source, "Builtin name (se, dereverb, codec, bwe, pr, mel, kutta38, ralston23) or file")
      ->required();
  tab_cmd->add_option("--tol", tab.tolerance, "Constraint tolerance");
  tab_cmd->add_flag("--structural", tab.structural, "Accept violations of learned-scheme-only constraints");
  add_common(tab_cmd, common);

  TrainOptions tr;
  std::string train_task = "se";
  auto* train_cmd = app.add_subcommand("train-toy", "Train the desk-scale model on synthetic data");
  train_cmd->add_option("--task", train_task, "se or dereverb");
  train_cmd->add_option("--steps", tr.steps, "Optimizer steps");
  train_cmd->add_option("--seed", tr.seed, "Seed");
  train_cmd->add_option("-o,--output", tr.output, "Weight container to write")->required();
  train_cmd->add_option("--loss-curve", tr.loss_curve, "CSV file for the per-step loss");
  train_cmd->add_option("--eval-clips", tr.eval_clips, "Held-out clips for the MSE evaluation (0 skips)");
  train_cmd->add_option("--solver", tr.eval_solver, "Solver for the evaluation");
  train_cmd->add_option("--threads", probe.threads, "Ignored: training runs on one thread");
  add_common(train_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\nRun with --help for usage.\n";
    return kUsage;
  }

  try {
    const auto output = common.output();
    const auto wav_format = pcm16 ? io::WavFormat::Pcm16 : io::WavFormat::Float32;
    if (*process) {
      if (!task.empty()) run.task = dsp::parse_task(task);
      run.nfe = nfe;
      run.wav_format = wav_format;
      return cmd_process(run, output, out);
    }
    if (*corrupt_cmd) {
      corrupt.task = dsp::parse_task(task);
      corrupt.snr_db = snr;
      if (!codec_cmd.empty()) corrupt.codec_command = codec_cmd;
      corrupt.bwe_factor = bwe;
      corrupt.wav_format = wav_format;
      return cmd_corrupt(corrupt, output, out);
    }
    if (*probe_cmd) {
      probe.nfe = nfe;
      return cmd_probe_latency(probe, output, out);
    }
    if (*bench_cmd) {
      bench.nfe = nfe;
      return cmd_bench(bench, output, out);
    }
    if (*comp_cmd) return cmd_compress(comp, output, out);
    if (*tab_cmd) return cmd_validate_tableau(tab, output, out);
    if (*train_cmd) {
      tr.task = dsp::parse_task(train_task);
      return cmd_train_toy(tr, output, out);
    }
  } catch (...) {
    return exit_code_for_current_exception(err);
  }
  return kUsage;
}

}  // namespace sfm::cli
