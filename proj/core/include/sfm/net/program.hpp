#pragma once

#include <string>
#include <vector>

namespace sfm::net {

enum class OpKind {
  Conv,      // causal conv, time dilation, symmetric frequency padding
  DConv,     // SVD-decoupled conv: per-channel depthwise (rank J) + pointwise
  SiLU,
  Norm,      // sub-band grouped batch norm
  FreqDown,  // 2x frequency FIR decimation
  FreqUp,    // 2x frequency FIR interpolation
  Add,       // (a + b) * scale
  Inject,    // per-channel shift from the time embedding
};

const char* op_name(OpKind kind);

// One node of the layer graph. Reads slot `in` (and `in2` for Add) and writes
// slot `out`. Time stride is always 1.
struct LayerSpec {
  OpKind kind = OpKind::Conv;
  std::string name;  // parameter prefix in the weight store
  int in = -1, in2 = -1, out = -1;
  int cin = 0, cout = 0;
  int kt = 1, kf = 1, dt = 1;  // time kernel, frequency kernel, time dilation
  int rank = 0;                // DConv: J
  int channel_groups = 1, freq_groups = 1;
  double scale = 1.0;

  // Past frames this layer reads: (kt - 1) * dt for convolutions, else 0.
  int delay() const noexcept { return (kind == OpKind::Conv || kind == OpKind::DConv) ? (kt - 1) * dt : 0; }
  bool has_params() const noexcept {
    return kind == OpKind::Conv || kind == OpKind::DConv || kind == OpKind::Norm || kind == OpKind::Inject;
  }
};

struct SlotInfo {
  int channels = 0;
  int bins = 0;
};

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
  bool trainable = true;  // running statistics are not
};

// A frame-causal layer graph in single static assignment form: layers are
// topologically ordered and every slot is written exactly once.
struct Program {
  std::vector<SlotInfo> slots;
  std::vector<LayerSpec> layers;
  int input_slot = 0;
  int output_slot = 0;
  std::vector<double> fir{1.0, 3.0, 3.0, 1.0};
  int emb_dim = 256;
  bool time_conditioned = false;

  int input_channels() const { return slots.at(input_slot).channels; }
  int output_channels() const { return slots.at(output_slot).channels; }
  int input_bins() const { return slots.at(input_slot).bins; }

  // Exact receptive field in frames: 1 + longest delay path input -> output.
  int receptive_field() const;
  // Upper bound 1 + sum over all layers of (R_l - 1).
  int receptive_field_bound() const;
  std::vector<ParamInfo> params() const;
  std::size_t parameter_count() const;
  // Checks slot shapes, SSA form, and that every layer's shape rules hold.
  void validate() const;
};

// Appends layers one at a time, tracking slot shapes.
class ProgramBuilder {
 public:
  ProgramBuilder(int in_channels, int bins, std::vector<double> fir = {1.0, 3.0, 3.0, 1.0}, int emb_dim = 256);

  int input() const noexcept { return 0; }
  int channels(int slot) const { return prog_.slots.at(slot).channels; }
  int bins(int slot) const { return prog_.slots.at(slot).bins; }

  int conv(const std::string& name, int in, int cout, int kt, int kf, int dt = 1);
  int dconv(const std::string& name, int in, int cout, int kt, int kf, int dt, int rank);
  int silu(int in);
  int norm(const std::string& name, int in, int channel_groups, int freq_groups);
  int freq_down(int in);
  int freq_up(int in);
  int add(int a, int b, double scale = 1.0);
  int inject(const std::string& name, int in);

  Program finish(int output_slot);

 private:
  int new_slot(int channels, int bins);
  int push(LayerSpec l, int channels, int bins);
  Program prog_;
};

// Declarative causal U-Net description.
struct NetSpec {
  int bins = 16;                    // F at the top level
  std::vector<int> channels{8, 16}; // per level
  int res_blocks = 1;               // per level
  int kt = 3, kf = 3, dt = 2;
  std::vector<double> fir{1.0, 3.0, 3.0, 1.0};
  int freq_groups = 4;
  int max_channel_groups = 32;
  int emb_dim = 256;
  bool time_conditioning = true;
  int in_complex = 2;   // complex input channels (X_tau and Y for the flow model)
  int out_complex = 1;
  bool progressive_input = true;  // add a 1x1 projection of the downsampled input at each level
  int decouple_rank = 0;          // > 0: eligible 3x3 convs become rank-J decoupled convs

  static NetSpec desk();
  static NetSpec full_scale();
  // The same U-Net without time conditioning and a single complex input.
  NetSpec predictor_variant() const;

  int levels() const noexcept { return static_cast<int>(channels.size()); }
  void validate() const;
  friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

// Layer graph for a NetSpec. Residual block: norm, SiLU, conv, [inject], norm,
// SiLU, conv, plus (1x1-projected) skip, scaled by 1/sqrt(2).
Program build_program(const NetSpec& spec);

int receptive_field(const NetSpec& spec);

// Channel groups used by SGBatchNorm for a C-channel activation.
int norm_channel_groups(int channels, int max_groups);

}  // namespace sfm::net
