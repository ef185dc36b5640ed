#include "sfm/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include <spdlog/spdlog.h>

#include "report.hpp"
#include "sfm/compress/decouple.hpp"
#include "sfm/probe/probe.hpp"
#include "sfm/train/toy.hpp"

namespace sfm::cli {
namespace {

io::ModelFile load_or_default(const fs::path& weights, int window, int hop, std::uint64_t seed) {
  if (!weights.empty()) return io::load_model(weights);
  spdlog::info("no --weights given: using a random desk-scale model at W={} H={}", window, hop);
  return default_model(dsp::TaskId::SE, window, hop, seed);
}

double rtf_after_warmup(const stream::RunReport& r, double hop_seconds, double q) {
  std::vector<double> v(r.frame_seconds.begin() + std::min<std::ptrdiff_t>(r.warmup_frames, std::ssize(r.frame_seconds)),
                        r.frame_seconds.end());
  if (v.empty()) v = r.frame_seconds;
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::min(v.size() - 1, k == 0 ? 0 : k - 1)] / hop_seconds;
}

double rms(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  return x.empty() ? 0.0 : std::sqrt(p / static_cast<double>(x.size()));
}

io::WavData read_at_rate(const fs::path& path, int rate, const std::string& what) {
  auto w = io::read_wav(path);
  if (w.sample_rate != rate)
    throw RateMismatchError(what + " '" + path.string() + "' is " + std::to_string(w.sample_rate) +
                            " Hz but " + std::to_string(rate) + " Hz is required; resample it first");
  return w;
}

}  // namespace

int exit_code_for_current_exception(std::ostream& err) {
  try {
    throw;
  } catch (const RateMismatchError& e) {
    err << "sample-rate mismatch: " << e.what() << '\n';
    return kRateMismatch;
  } catch (const ModelMismatchError& e) {
    err << "model mismatch: " << e.what() << '\n';
    return kModelMismatch;
  } catch (const ShapeError& e) {
    err << "model mismatch: " << e.what() << '\n';
    return kModelMismatch;
  } catch (const NumericError& e) {
    err << "numeric error at index " << e.index() << ": " << e.what() << '\n';
    return kNumericError;
  } catch (const probe::ProbeError& e) {
    err << "probe failed at input index " << e.index() << ": " << e.what() << '\n';
    return kNumericError;
  } catch (const ExternalToolError& e) {
    err << "external tool failed (status " << e.exit_status() << "): " << e.what() << '\n';
    return kExternalTool;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIoError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kFormatError;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

ode::SolverSpec resolve_solver(const std::string& text, std::optional<int> nfe) {
  if (nfe && *nfe < 1) throw ConfigError("--nfe must be positive");
  if (text == "euler" || text == "midpoint") {
    if (!nfe) throw ConfigError("solver '" + text + "' needs a step count (" + text + ":N) or --nfe");
    if (text == "euler") return ode::Euler{*nfe};
    if (*nfe % 2 != 0) throw ConfigError("midpoint uses 2 evaluations per step; --nfe must be even");
    return ode::Midpoint{*nfe / 2};
  }
  auto spec = ode::parse_solver(text);
  ode::validate(spec);
  if (nfe && ode::nfe(spec) != *nfe)
    throw ConfigError("solver " + ode::describe(spec) + " uses " + std::to_string(ode::nfe(spec)) +
                      " evaluations per frame, --nfe asks for " + std::to_string(*nfe));
  return spec;
}

io::ModelFile default_model(dsp::TaskId task, int window, int hop, std::uint64_t seed) {
  io::ModelFile m;
  m.task = task;
  m.stft.window_len = window;
  m.stft.hop_len = hop;
  m.stft.validate();
  m.net = net::NetSpec::desk();
  m.net.bins = m.stft.bins();
  m.flow = task == dsp::TaskId::BWE ? flow::FlowPathParams{{0.25}, {0.001}} : flow::default_flow_params(task);
  Rng rng(seed);
  net::InitOptions init;
  init.zero_output = false;
  m.weights = net::init_weights(net::build_program(m.net), rng, init);
  return m;
}

stream::EngineConfig engine_config(const io::ModelFile& model, const ode::SolverSpec& solver,
                                   std::vector<double> sde_schedule, bool probe) {
  if (model.net.bins != model.stft.bins())
    throw ModelMismatchError("net has " + std::to_string(model.net.bins) + " bins, the container's STFT yields " +
                             std::to_string(model.stft.bins()));
  if (!model.net.time_conditioning || model.net.in_complex != 2 || model.net.out_complex != 1)
    throw ModelMismatchError("container net is not a time-conditioned flow field ([X, Y] -> velocity)");
  if (model.predictor && (model.predictor->bins != model.net.bins || model.predictor->time_conditioning))
    throw ModelMismatchError("container predictor does not fit the flow net");
  stream::EngineConfig cfg;
  cfg.net = net::build_program(model.net);
  cfg.weights = model.flow_weights();
  if (model.predictor) {
    cfg.predictor = net::build_program(*model.predictor);
    cfg.predictor_weights = model.predictor_weights();
  }
  cfg.solver = solver;
  cfg.flow = model.flow;
  cfg.stft = model.stft;
  cfg.sde_schedule = std::move(sde_schedule);
  cfg.probe_mode = probe;
  return cfg;
}

void RunConfig::validate() const {
  if (input.empty()) throw ConfigError("an input WAV is required");
  if (output.empty()) throw ConfigError("an output path is required (--output)");
  if (weights.empty()) throw ConfigError("a weight container is required (--weights)");
  if (threads < 1) throw ConfigError("--threads must be positive");
}

int cmd_process(const RunConfig& run, const OutputOptions& out_opt, std::ostream& out) {
  run.validate();
  const auto model = io::load_model(run.weights);
  if (run.task && *run.task != model.task)
    throw ModelMismatchError("weights were trained for task '" + std::string(dsp::task_name(model.task)) +
                             "', --task asks for '" + std::string(dsp::task_name(*run.task)) + "'");
  const auto wav = read_at_rate(run.input, model.stft.sample_rate, "input");
  const auto solver = resolve_solver(run.solver, run.nfe);
  std::vector<double> schedule;
  if (!run.sde_schedule.empty()) schedule = io::read_schedule(run.sde_schedule);
  const stream::Engine<float> engine(engine_config(model, solver, schedule, run.probe));
  auto state = stream::init_state(engine, run.seed);
  stream::RunReport rr;
  spdlog::debug("processing {} samples with {}", wav.samples.size(), ode::describe(solver));
  const auto restored = stream::process_audio(engine, state, wav.samples, &rr);
  io::write_wav(run.output, restored, wav.sample_rate, run.wav_format);

  const auto lat = probe::theoretical_latency(model.stft);
  const double hop_s = model.stft.hop_seconds();
  Report rep("process");
  rep.set("task", std::string(dsp::task_name(model.task)));
  rep.set("solver", ode::describe(solver));
  rep.set("nfe", engine.nfe());
  rep.set("seed", run.seed);
  rep.set("sde", !schedule.empty());
  rep.set("samples", restored.size());
  rep.set("frames", rr.frames);
  rep.set("input_rms", rms(wav.samples));
  rep.set("output_rms", rms(restored));
  rep.set("algorithmic_latency_samples", lat.algorithmic_samples);
  rep.set("algorithmic_latency_ms", lat.algorithmic_ms);
  rep.set("total_latency_ms", lat.total_ms);
  rep.set("rtf_median", rtf_after_warmup(rr, hop_s, 0.5));
  rep.set("rtf_p95", rtf_after_warmup(rr, hop_s, 0.95));
  rep.set("output", run.output.string());
  rep.emit(out_opt, out);
  return kOk;
}

int cmd_corrupt(const CorruptOptions& opt, const OutputOptions& out_opt, std::ostream& out) {
  if (opt.input.empty() || opt.output.empty()) throw ConfigError("corrupt needs an input and an --output");
  if (!dsp::has_waveform_corruption(opt.task))
    throw ConfigError("task '" + std::string(dsp::task_name(opt.task)) +
                      "' corrupts model features, not waveforms; use it through process/train");
  const auto clean = io::read_wav(opt.input);
  const auto n = clean.samples.size();
  Rng rng(opt.seed);
  dsp::CorruptionAux aux;
  aux.sample_rate = clean.sample_rate;
  Report rep("corrupt");
  rep.set("task", std::string(dsp::task_name(opt.task)));
  switch (opt.task) {
    case dsp::TaskId::SE: {
      Signal noise;
      if (!opt.noise.empty()) {
        noise = read_at_rate(opt.noise, clean.sample_rate, "noise").samples;
        if (noise.size() < n) throw ConfigError("noise file is shorter than the clean input");
        noise.resize(n);
      } else if (opt.snr_db) {
        noise.resize(n);
        for (auto& v : noise) v = rng.normal();
        const double c = rms(clean.samples), r = rms(noise);
        const double g = r > 0.0 ? c / (r * std::pow(10.0, *opt.snr_db / 20.0)) : 0.0;
        for (auto& v : noise) v *= g;
      } else {
        throw ConfigError("se corruption needs --noise <wav> or --snr <dB>");
      }
      const double nr = rms(noise);
      if (nr > 0.0) rep.set("snr_db", 20.0 * std::log10(rms(clean.samples) / nr));
      aux.noise = std::move(noise);
      break;
    }
    case dsp::TaskId::Dereverb:
      if (opt.rir.empty()) throw ConfigError("dereverb corruption needs --rir <wav>");
      aux.rir = read_at_rate(opt.rir, clean.sample_rate, "impulse response").samples;
      break;
    case dsp::TaskId::CodecPF:
      if (!opt.codec_command) throw ConfigError("codec corruption needs --codec-cmd");
      aux.codec_command = opt.codec_command;
      break;
    case dsp::TaskId::BWE:
      aux.bwe_factor = opt.bwe_factor;
      break;
    default:
      break;
  }
  const auto corrupted = dsp::corrupt(opt.task, clean.samples, aux, rng);
  io::write_wav(opt.output, corrupted, clean.sample_rate, opt.wav_format);
  rep.set("samples", corrupted.size());
  rep.set("sample_rate", clean.sample_rate);
  rep.set("input_rms", rms(clean.samples));
  rep.set("output_rms", rms(corrupted));
  rep.set("output", opt.output.string());
  rep.emit(out_opt, out);
  return kOk;
}

int cmd_probe_latency(const ProbeCliOptions& opt, const OutputOptions& out_opt, std::ostream& out) {
  if (opt.threads < 1) throw ConfigError("--threads must be positive");
  auto model = load_or_default(opt.weights, opt.window, opt.hop, opt.seed);
  if (opt.weights.empty()) model.stft.sample_rate = opt.sample_rate;
  const auto solver = resolve_solver(opt.solver, opt.nfe);
  const stream::Engine<float> engine(engine_config(model, solver, {}, true));
  const std::size_t len = opt.input_len ? opt.input_len : static_cast<std::size_t>(8 * model.stft.window_len);
  probe::ProbeOptions po;
  po.sample_rate = model.stft.sample_rate;
  po.stride = opt.stride;
  po.hop = static_cast<std::size_t>(model.stft.hop_len);
  po.threads = opt.threads;
  po.seed = opt.seed + 1;
  const auto r = probe::nan_latency_probe(probe::engine_processor(engine, opt.seed), len, po);
  const auto theory = probe::theoretical_latency(model.stft);
  const bool match = !r.unbounded && r.samples == theory.algorithmic_samples;

  Report rep("probe-latency");
  rep.set("window", model.stft.window_len);
  rep.set("hop", model.stft.hop_len);
  rep.set("sample_rate", model.stft.sample_rate);
  rep.set("solver", ode::describe(solver));
  rep.set("input_samples", len);
  rep.set("evaluations", r.evaluations);
  rep.set("latency_samples", r.samples);
  rep.set("latency_ms", r.ms);
  rep.set("unbounded", r.unbounded);
  rep.set("theoretical_samples", theory.algorithmic_samples);
  rep.set("algorithmic_latency_ms", theory.algorithmic_ms);
  rep.set("total_latency_ms", theory.total_ms);
  rep.set("matches_theory", match);
  rep.emit(out_opt, out);
  return match ? kOk : kCheckFailed;
}

int cmd_bench(const BenchOptions& opt, const OutputOptions& out_opt, std::ostream& out) {
  if (opt.frames < 1) throw ConfigError("--frames must be positive");
  const auto model = load_or_default(opt.weights, opt.window, opt.hop, opt.seed);
  const auto solver = resolve_solver(opt.solver, opt.nfe);
  const auto cfg = engine_config(model, solver);
  const stream::Engine<float> engine(cfg);
  const auto s = probe::streaming_rtf(engine, opt.frames, stream::steady_clock_seconds, opt.seed);
  const double off = probe::offline_rtf(engine, opt.offline_seconds, stream::steady_clock_seconds, opt.seed);

  Report rep("bench");
  rep.set("solver", ode::describe(solver));
  rep.set("nfe", s.nfe);
  rep.set("frames", opt.frames);
  rep.set("hop_ms", 1000.0 * s.hop_seconds);
  rep.set("flops_per_frame", s.flops_per_frame);
  rep.set("frame_ms_median", 1000.0 * s.median_seconds);
  rep.set("frame_ms_p95", 1000.0 * s.p95_seconds);
  rep.set("streaming_rtf_median", s.rtf_median);
  rep.set("streaming_rtf_p95", s.rtf_p95);
  rep.set("gflops_per_second", s.gflops_per_second);
  rep.set("offline_rtf", off);
  double rtf1 = 0.0, rtf4 = 0.0;
  if (!opt.nfe_list.empty()) {
    for (const auto& row : probe::nfe_scaling(cfg, opt.nfe_list, opt.frames)) {
      rep.add_row("nfe_scaling", {{"nfe", row.nfe},
                                  {"rtf_median", row.report.rtf_median},
                                  {"rtf_p95", row.report.rtf_p95},
                                  {"flops_per_frame", row.report.flops_per_frame}});
      if (row.nfe == 1) rtf1 = row.report.rtf_median;
      if (row.nfe == 4) rtf4 = row.report.rtf_median;
    }
  }
  if (rtf1 > 0.0 && rtf4 > 0.0) rep.set("rtf_ratio_4_over_1", rtf4 / rtf1);
  rep.emit(out_opt, out);
  return kOk;
}

int cmd_compress(const CompressOptions& opt, const OutputOptions& out_opt, std::ostream& out) {
  if (opt.input.empty() || opt.output.empty()) throw ConfigError("compress needs --weights and --output");
  auto model = io::load_model(opt.input);
  const auto before = compress::flop_count(model.net);
  const auto flow_w = model.flow_weights();
  const auto c = compress::compress_netspec(model.net, flow_w, opt.rank);

  Report rep("compress");
  rep.set("rank", opt.rank);
  rep.set("replaced_layers", c.replaced.size());
  for (const auto& name : c.replaced) {
    const auto& w = flow_w.at(name + ".weight");
    const auto dc = compress::decouple(w, opt.rank);
    double total = 0.0, dropped = 0.0;
    for (float v : w.data) total += static_cast<double>(v) * v;
    for (double d : dc.discarded_norm()) dropped += d * d;
    rep.add_row("layers", {{"name", name},
                           {"in", dc.in_channels},
                           {"out", dc.out_channels},
                           {"relative_error", total > 0.0 ? std::sqrt(dropped / total) : 0.0}});
  }
  auto predictor = model.predictor_weights();
  model.net = c.spec;
  model.weights = c.weights;
  if (model.predictor) net::merge_prefixed(model.weights, predictor, "predictor.");
  io::save_model(opt.output, model);
  rep.set("flops_before", before);
  rep.set("flops_after", compress::flop_count(c.spec));
  rep.set("output", opt.output.string());
  rep.emit(out_opt, out);
  return kOk;
}

int cmd_validate_tableau(const TableauOptions& opt, const OutputOptions& out_opt, std::ostream& out) {
  if (opt.source.empty()) throw ConfigError("validate-tableau needs a builtin name or a tableau file");
  if (!(opt.tolerance > 0.0)) throw ConfigError("--tol must be positive");
  const auto& builtins = ode::builtin_tableaus();
  const auto it = builtins.find(opt.source);
  const auto t = it != builtins.end() ? it->second : ode::load_tableau(opt.source);
  const auto r = ode::validate_tableau(t, opt.tolerance);

  Report rep("validate-tableau");
  rep.set("tableau", t.name);
  rep.set("stages", t.stages());
  rep.set("tolerance", opt.tolerance);
  rep.set("sum_b", t.b.sum());
  std::vector<double> rows;
  for (int i = 0; i < t.stages(); ++i) rows.push_back(t.a.row(i).sum());
  rep.set("row_sums", rows);
  rep.set("c", std::vector<double>(t.c.data(), t.c.data() + t.c.size()));
  for (const auto& v : r.violations) {
    Report::Json row{{"constraint", std::string(ode::constraint_name(v.kind))}};
    if (v.row >= 0) row["row"] = v.row + 1;
    if (v.col >= 0) row["col"] = v.col + 1;
    row["magnitude"] = v.magnitude;
    row["learned_only"] = v.learned_only;
    rep.add_row("violations", std::move(row));
  }
  const bool ok = opt.structural ? r.ok_structural() : r.ok();
  rep.set("valid", ok);
  rep.emit(out_opt, out);
  return ok ? kOk : kCheckFailed;
}

int cmd_train_toy(const TrainOptions& opt, const OutputOptions& out_opt, std::ostream& out) {
  if (opt.output.empty()) throw ConfigError("train-toy needs --output for the weight container");
  if (opt.eval_clips < 0) throw ConfigError("--eval-clips must be non-negative");
  auto cfg = train::ToyTrainConfig::desk(opt.task);
  cfg.steps = opt.steps;
  cfg.seed = opt.seed;
  const auto eval_solver = resolve_solver(opt.eval_solver, std::nullopt);
  const auto res = train::train_toy(cfg, [&](int step, double loss) {
    if (step % 100 == 0 || step + 1 == cfg.steps) spdlog::info("step {:>5}  loss {:.6f}", step, loss);
  });
  io::save_model(opt.output, res.model);
  if (!opt.loss_curve.empty()) {
    std::ofstream f(opt.loss_curve);
    if (!f) throw IoError("cannot write loss curve '" + opt.loss_curve.string() + "'");
    f.precision(17);
    f << "step,loss\n";
    for (std::size_t i = 0; i < res.loss_curve.size(); ++i) f << i << ',' << res.loss_curve[i] << '\n';
  }

  Report rep("train-toy");
  rep.set("task", std::string(dsp::task_name(opt.task)));
  rep.set("steps", opt.steps);
  rep.set("seed", opt.seed);
  rep.set("initial_loss", res.initial_loss);
  rep.set("final_loss", res.final_loss);
  rep.set("loss_ratio", res.initial_loss > 0.0 ? res.final_loss / res.initial_loss : 0.0);
  if (opt.eval_clips > 0) {
    const auto ev = train::evaluate_toy(res.model, cfg.data, eval_solver, opt.eval_clips, opt.seed);
    rep.set("eval_solver", ode::describe(eval_solver));
    rep.set("input_mse", ev.input_mse);
    rep.set("output_mse", ev.output_mse);
    rep.set("mse_reduction", ev.reduction());
  }
  rep.set("output", opt.output.string());
  rep.emit(out_opt, out);
  return kOk;
}

}  // namespace sfm::cli
