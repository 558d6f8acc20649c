#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "ews/rng.hpp"
#include "ews/subnet.hpp"
#include "ews/tensor.hpp"
#include "ews/topology.hpp"

namespace ews {

enum class Mode { kTrain, kEval };

// Named flat parameter collection; layout fully determined by the topology.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  int add(const std::string& name, std::vector<int> shape);
  int find(const std::string& name) const;  // -1 when absent
  std::size_t total_scalars() const;
};

// Gradients parallel to a ParamSet.
struct GradSet {
  std::vector<Tensor> grads;
  void init_like(const ParamSet& params);
  void zero();
};

// Cached activations of one forward pass, consumed by backward().
struct UnitTrace {
  Tensor conv_out;               // post-conv, deselected channels zero
  std::vector<float> mean;       // batch-norm statistics actually used
  std::vector<float> invstd;
  Tensor out;                    // post-bn(+relu), deselected channels zero
  std::vector<int> sel_out;      // selected output channels, ascending
  std::vector<int> sel_in;
};

struct PathTrace {
  bool selected = false;
  std::vector<UnitTrace> units;
};

struct BlockTrace {
  std::vector<PathTrace> paths;
  Tensor out;                      // post-sum, post-relu
  std::vector<std::uint8_t> keep;  // dropout keep mask per (n, c); empty = off
};

struct ForwardTrace {
  const Tensor* input = nullptr;
  Mode mode = Mode::kEval;
  float dropout_rate = 0.0f;
  UnitTrace stem;
  std::vector<BlockTrace> blocks;
  Tensor pooled;
  Tensor logits;
};

// The maskable classifier M. Parameters and normalization running statistics
// are owned here; forward passes write activations into a caller-provided
// trace so that independent traces can coexist (full vs subnet branch).
class MaskableModel {
 public:
  MaskableModel(ModelTopology topo, int groups);

  void init_params(Rng& rng);

  const ModelTopology& topology() const { return topo_; }
  int groups() const { return groups_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  // Running batch-norm statistics, serialized alongside parameters.
  ParamSet& norm_state() { return norm_state_; }
  const ParamSet& norm_state() const { return norm_state_; }

  // subnet == nullptr runs the full network. Batch-stat normalization is
  // used in train mode (running statistics are only advanced on unmasked
  // train-mode passes); eval mode always uses the full model's running
  // statistics. dropout_rng enables channel dropout after each block in
  // train mode (baseline trainer only).
  void forward(const Tensor& batch, const SubnetSpec* subnet, Mode mode,
               ForwardTrace& trace, float dropout_rate = 0.0f,
               Rng* dropout_rng = nullptr) const;

  // Convenience: forward and return logits.
  Tensor forward_full(const Tensor& batch, Mode mode) const;
  Tensor forward_masked(const Tensor& batch, const SubnetSpec& subnet,
                        Mode mode) const;

  // Accumulates parameter gradients into `grads`; when dinput is non-null
  // also produces the gradient w.r.t. the input batch (used by the attack).
  void backward(const ForwardTrace& trace, const Tensor& dlogits,
                GradSet& grads, Tensor* dinput = nullptr) const;

  // Advances running statistics from the batch statistics recorded in an
  // unmasked train-mode trace.
  void update_running_stats(const ForwardTrace& trace);

  std::uint64_t param_hash() const;

 private:
  struct Unit {  // conv + norm (+ relu)
    LayerKind kind;
    int in_c, out_c, ksize, stride, pad;
    bool relu;
    int w;              // param ids
    int gamma, beta;
    int run_mean, run_var;  // norm_state ids
  };
  struct Path {
    std::vector<Unit> units;
  };
  struct Block {
    std::vector<Path> paths;
  };

  void run_unit(const Unit& u, const Tensor& in, const std::vector<int>& sel_in,
                const std::vector<int>& sel_out, Mode mode,
                UnitTrace& t) const;
  void backward_unit(const Unit& u, const Tensor& in, const UnitTrace& t,
                     const Tensor& dout, GradSet& grads, Mode mode,
                     Tensor* din) const;

  ModelTopology topo_;
  int groups_;
  ParamSet params_;
  ParamSet norm_state_;
  Unit stem_;
  std::vector<Block> blocks_;
  int head_w_, head_b_;

  static constexpr float kBnEps = 1e-5f;
  static constexpr float kBnMomentum = 0.1f;
};

std::vector<int> all_channels(int n);

}  // namespace ews
