#include "sfm/train/toy.hpp"

#include <cmath>
#include <numbers>

#include "sfm/error.hpp"
#include "sfm/net/network.hpp"
#include "sfm/stream/engine.hpp"

namespace sfm::train {
namespace {

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kValidationStream = 2;
constexpr std::uint64_t kEvalStream = 3;

using Scalar = float;

struct Batch {
  net::Activation<Scalar> input, target;
  std::vector<double> taus;
};

// Draws `n` pairs and their path samples; tau is uniform unless `fixed_taus`.
Batch make_batch(const ToyData& data, const flow::FlowPathParams& params, int n, Rng& rng, bool fixed_taus) {
  Batch b;
  for (int i = 0; i < n; ++i) {
    const auto pair = make_toy_pair(data, rng.next_u64());
    const auto s = dsp::stft_analyze(pair.clean, data.stft);
    const auto y = dsp::stft_analyze(pair.corrupted, data.stft);
    const double tau = fixed_taus ? (i + 0.5) / n : rng.uniform();
    const auto eps = flow::draw_noise(s.frames(), s.bins(), rng);
    const auto x = flow::x_tau_from_noise(s, y, tau, params, eps);
    const auto tgt = flow::jfm_target(s, y, params, eps);
    const int T = static_cast<int>(s.frames()), F = static_cast<int>(s.bins());
    if (i == 0) {
      b.input = net::Activation<Scalar>(4, n, T, F);
      b.target = net::Activation<Scalar>(2, n, T, F);
    }
    for (int t = 0; t < T; ++t)
      for (int f = 0; f < F; ++f) {
        b.input.at(0, i, t, f) = static_cast<Scalar>(x(t, f).real());
        b.input.at(1, i, t, f) = static_cast<Scalar>(x(t, f).imag());
        b.input.at(2, i, t, f) = static_cast<Scalar>(y(t, f).real());
        b.input.at(3, i, t, f) = static_cast<Scalar>(y(t, f).imag());
        b.target.at(0, i, t, f) = static_cast<Scalar>(tgt(t, f).real());
        b.target.at(1, i, t, f) = static_cast<Scalar>(tgt(t, f).imag());
      }
    b.taus.push_back(tau);
  }
  return b;
}

// Mean over real components, matching flow::jfm_loss.
double mse(const net::Activation<Scalar>& out, const net::Activation<Scalar>& target) {
  double acc = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double d = static_cast<double>(out.data[i]) - target.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(out.data.size());
}

Signal white(std::size_t n, Rng& rng) {
  Signal x(n);
  for (auto& v : x) v = rng.normal();
  return x;
}

double power(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  return p / static_cast<double>(x.size());
}

}  // namespace

void ToyData::validate() const {
  stft.validate();
  if (task != dsp::TaskId::SE && task != dsp::TaskId::Dereverb)
    throw ConfigError("toy data: only the se and dereverb tasks have a synthetic generator");
  if (clip_frames < 1) throw ConfigError("toy data: clip_frames must be positive");
  if (!(snr_db_lo <= snr_db_hi)) throw ConfigError("toy data: empty SNR range");
}

ToyPair make_toy_pair(const ToyData& data, std::uint64_t seed) {
  data.validate();
  Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(data.clip_frames) * data.stft.hop_len;
  const double fs = data.stft.sample_rate;
  ToyPair p;
  p.clean.assign(n, 0.0);
  const int tones = 1 + static_cast<int>(rng.below(2));
  for (int k = 0; k < tones; ++k) {
    const double freq = rng.uniform(0.02, 0.47) * fs;
    const double amp = rng.uniform(0.2, 0.8);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < n; ++i)
      p.clean[i] += amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / fs + phase);
  }
  dsp::CorruptionAux aux;
  if (data.task == dsp::TaskId::SE) {
    auto noise = white(n, rng);
    const double snr = std::pow(10.0, rng.uniform(data.snr_db_lo, data.snr_db_hi) / 10.0);
    const double g = std::sqrt(power(p.clean) / (snr * power(noise)));
    for (auto& v : noise) v *= g;
    aux.noise = std::move(noise);
  } else {
    const std::size_t len = static_cast<std::size_t>(data.stft.window_len) * 4;
    const double decay = rng.uniform(0.02, 0.08);
    Signal rir(len);
    rir[0] = 1.0;
    for (std::size_t i = 1; i < len; ++i) rir[i] = 0.5 * rng.normal() * std::exp(-decay * static_cast<double>(i));
    aux.rir = std::move(rir);
  }
  p.corrupted = dsp::corrupt(data.task, p.clean, aux, rng);
  return p;
}

ToyTrainConfig ToyTrainConfig::desk(dsp::TaskId task) {
  ToyTrainConfig c;
  c.data.task = task;
  c.net = net::NetSpec::desk();
  c.net.bins = c.data.stft.bins();
  c.net.channels = {16, 32};
  c.net.emb_dim = 64;
  return c;
}

void ToyTrainConfig::validate() const {
  data.validate();
  net.validate();
  if (net.bins != data.stft.bins())
    throw ConfigError("toy training: net has " + std::to_string(net.bins) + " bins, data frames have " +
                      std::to_string(data.stft.bins()));
  if (!net.time_conditioning || net.in_complex != 2 || net.out_complex != 1)
    throw ConfigError("toy training: the flow net needs time conditioning, 2 complex inputs and 1 output");
  if (steps < 0 || batch < 1 || validation_clips < 1) throw ConfigError("toy training: bad step or batch count");
  if (!(learning_rate > 0.0) || !(final_lr_fraction >= 0.0)) throw ConfigError("toy training: learning rate must be positive");
}

ToyTrainResult train_toy(const ToyTrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  const auto prog = net::build_program(cfg.net);
  Rng init_rng(cfg.seed);
  net::Network<Scalar> net(prog, net::init_weights(prog, init_rng));
  const auto flow_params = flow::default_flow_params(cfg.data.task);

  Rng val_rng(cfg.seed, kValidationStream);
  const auto val = make_batch(cfg.data, flow_params, cfg.validation_clips, val_rng, true);
  auto validation_loss = [&](const net::WeightStore& w) {
    return mse(net::Network<Scalar>(prog, w).forward(val.input, val.taus), val.target);
  };

  ToyTrainResult res;
  res.initial_loss = validation_loss(net.to_weights());

  auto params = net.parameters();
  auto grads = net.make_grads();
  std::vector<std::vector<double>> m(params.size()), v(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    m[k].assign(params[k].size, 0.0);
    v[k].assign(params[k].size, 0.0);
  }
  net::Tape<Scalar> tape;
  Rng rng(cfg.seed, kTrainStream);
  for (int step = 0; step < cfg.steps; ++step) {
    const auto b = make_batch(cfg.data, flow_params, cfg.batch, rng, false);
    const auto out = net.forward_train(b.input, b.taus, tape, true, cfg.norm_momentum);
    const double loss = mse(out, b.target);
    if (!std::isfinite(loss)) throw NumericError("toy training diverged at step " + std::to_string(step), step);
    res.loss_curve.push_back(loss);

    net::Activation<Scalar> g = out;
    const double scale = 2.0 / static_cast<double>(out.data.size());
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = static_cast<Scalar>(scale * (static_cast<double>(out.data[i]) - b.target.data[i]));
    grads.zero();
    net.backward(tape, g, grads);

    const double progress = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
    const double lr = cfg.learning_rate * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * 0.5 *
                                                                      (1.0 + std::cos(std::numbers::pi * progress)));
    const double c1 = 1.0 - std::pow(cfg.beta1, step + 1), c2 = 1.0 - std::pow(cfg.beta2, step + 1);
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (!params[k].trainable) continue;
      Scalar* p = params[k].data;
      const auto& gk = grads.grads[k];
      for (std::size_t i = 0; i < params[k].size; ++i) {
        m[k][i] = cfg.beta1 * m[k][i] + (1.0 - cfg.beta1) * gk[i];
        v[k][i] = cfg.beta2 * v[k][i] + (1.0 - cfg.beta2) * gk[i] * gk[i];
        p[i] -= static_cast<Scalar>(lr * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + cfg.adam_eps));
      }
    }
    if (on_step) on_step(step, loss);
  }

  res.model.task = cfg.data.task;
  res.model.net = cfg.net;
  res.model.flow = flow_params;
  res.model.stft = cfg.data.stft;
  res.model.weights = net.to_weights();
  res.final_loss = validation_loss(res.model.weights);
  return res;
}

ToyEvaluation evaluate_toy(const io::ModelFile& model, const ToyData& data, const ode::SolverSpec& solver, int clips,
                           std::uint64_t seed) {
  if (clips < 1) throw ConfigError("toy evaluation: need at least one clip");
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
  const stream::Engine<float> engine(std::move(cfg));

  ToyEvaluation ev;
  Rng rng(seed, kEvalStream);
  std::size_t total = 0;
  for (int i = 0; i < clips; ++i) {
    const auto pair = make_toy_pair(data, rng.next_u64());
    auto state = stream::init_state(engine, rng.next_u64());
    const auto out = stream::process_audio(engine, state, pair.corrupted);
    for (std::size_t k = 0; k < pair.clean.size(); ++k) {
      ev.input_mse += (pair.corrupted[k] - pair.clean[k]) * (pair.corrupted[k] - pair.clean[k]);
      ev.output_mse += (out[k] - pair.clean[k]) * (out[k] - pair.clean[k]);
    }
    total += pair.clean.size();
  }
  ev.input_mse /= static_cast<double>(total);
  ev.output_mse /= static_cast<double>(total);
  return ev;
}

}  // namespace sfm::train
