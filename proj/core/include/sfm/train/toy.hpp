#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sfm/io/container.hpp"
#include "sfm/ode/solver.hpp"

namespace sfm::train {

// Synthetic restoration data at toy scale: one or two stationary tones per
// clip, corrupted by white noise (SE) or an exponentially decaying random
// room response (Dereverb).
struct ToyData {
  dsp::TaskId task = dsp::TaskId::SE;
  dsp::StftConfig stft{16, 8, 16000};
  int clip_frames = 32;
  double snr_db_lo = -5.0, snr_db_hi = 5.0;

  void validate() const;
};

struct ToyPair {
  Signal clean, corrupted;
};

// Deterministic in (data, seed).
ToyPair make_toy_pair(const ToyData& data, std::uint64_t seed);

struct ToyTrainConfig {
  ToyData data;
  net::NetSpec net;  // bins must equal data.stft.bins()
  int steps = 2000;
  int batch = 8;
  double learning_rate = 2e-3;
  double final_lr_fraction = 0.05;  // cosine decay of the step size to this fraction
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double norm_momentum = 0.05;
  int validation_clips = 16;
  std::uint64_t seed = 1;

  // The desk U-Net at the toy data's bin count, widened to 16/32 channels.
  static ToyTrainConfig desk(dsp::TaskId task = dsp::TaskId::SE);
  void validate() const;
};

struct ToyTrainResult {
  io::ModelFile model;
  std::vector<double> loss_curve;  // training batch loss per step
  double initial_loss = 0.0;       // fixed validation batch, before the first step
  double final_loss = 0.0;         // same batch after the last step
};

// Called after every step with (step, batch loss).
using StepCallback = std::function<void(int, double)>;

// Adam (fp32 network, fp64 moments) on the joint flow matching loss with uniformly drawn tau per sequence.
// Throws NumericError carrying the step index if the loss becomes non-finite.
ToyTrainResult train_toy(const ToyTrainConfig& cfg, const StepCallback& on_step = {});

struct ToyEvaluation {
  double input_mse = 0.0;   // corrupted vs clean waveform
  double output_mse = 0.0;  // streamed restoration vs clean waveform
  double reduction() const { return input_mse > 0.0 ? 1.0 - output_mse / input_mse : 0.0; }
};

// Streams held-out clips through an fp32 engine built from `model`.
ToyEvaluation evaluate_toy(const io::ModelFile& model, const ToyData& data, const ode::SolverSpec& solver, int clips,
                           std::uint64_t seed);

}  // namespace sfm::train
