#pragma once

// The behavioral-cloning policy: three conv/ReLU/pool stages, two hidden
// dense layers, and a 5-way softmax head. Trained with minibatch Adam on
// mean cross-entropy.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bcp/dataset.hpp"
#include "bcp/envsim.hpp"
#include "bcp/nncore.hpp"

namespace bcp::policy {

using envsim::Action;
using envsim::Observation;

using ActionDistribution = std::array<double, envsim::kNumActions>;

struct Widths {
  std::array<int, 3> conv{8, 16, 32};
  std::array<int, 2> fc{128, 32};

  bool operator==(const Widths&) const = default;
};

inline constexpr int kConvLayers = 3;
inline constexpr int kParamLayers = 6;

struct PolicyNet {
  int height = 0;
  int width = 0;
  Widths widths;
  std::array<nn::LayerState, kParamLayers> layers;  // conv1..3, fc1..3

  int flatten_size() const { return widths.conv[2] * (height / 8) * (width / 8); }
  std::size_t parameter_count() const;
  /// Throws ShapeError unless the net accepts frames of this size.
  void require_input(int h, int w) const;
};

/// Throws ConfigError unless h and w are positive multiples of 8.
PolicyNet init_policy(int height, int width, const Widths& widths, std::uint64_t seed);

/// Per-thread activation and gradient buffers for one net shape.
class Workspace {
 public:
  explicit Workspace(const PolicyNet& net);

  /// Runs the stack on `obs`, leaving activations cached for backward().
  ActionDistribution forward(const PolicyNet& net, const Observation& obs);
  /// Backward pass for the cached sample; accumulates parameter gradients
  /// into `d_weights[l]` / `d_biases[l]`. Returns the sample's loss.
  double backward(const PolicyNet& net, int label, std::array<std::vector<float>, kParamLayers>& d_weights,
                  std::array<std::vector<float>, kParamLayers>& d_biases);

 private:
  struct Stage {
    int c_in, c_out, h, w;  // conv input geometry; output is c_out x h x w before pooling
  };
  std::array<Stage, kConvLayers> stages_;
  std::vector<float> input_;
  std::array<std::vector<float>, kConvLayers> padded_in_;  // padded conv inputs, kept for backward
  std::array<std::vector<float>, kConvLayers> act_;        // post-ReLU conv outputs
  std::array<std::vector<float>, kConvLayers> pooled_;
  std::array<std::vector<std::int32_t>, kConvLayers> argmax_;
  std::vector<float> h1_, h2_, logits_;
  std::vector<float> g_h2_, g_h1_, g_flat_, g_pool_, g_act_, scratch_;
  bool cached_ = false;
};

ActionDistribution forward(const PolicyNet& net, const Observation& obs);

/// Distributions for many frames; frames are spread over OpenMP threads and
/// results are returned in input order.
std::vector<ActionDistribution> forward_batch(const PolicyNet& net, std::span<const Observation* const> frames);

/// Index of the largest probability, lowest action on ties.
Action argmax(const ActionDistribution& dist);

/// Natural-log entropy with 0 log 0 = 0. Throws InputError on negative
/// entries or a total that is not 1.
double entropy(std::span<const double> dist);

struct TrainConfig {
  nn::AdamConfig adam;  // lr 0.001
  int batch_size = 64;
  int epochs = 8;
  std::uint64_t shuffle_seed = 0;
  double holdout_fraction = 0.1;
  // Each minibatch is split into this many gradient shards (computed in
  // parallel, summed in shard order). Results depend on the shard count but
  // not on the thread count.
  int grad_shards = 4;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // argmax matches during the epoch's forward passes
  double holdout_accuracy = 0.0;
  double wall_seconds = 0.0;
};

struct FrameSplit {
  std::vector<data::FrameIndex> train;    // sorted
  std::vector<data::FrameIndex> holdout;  // sorted, disjoint from train
};

/// Seeded split of all frames; round_half_up(fraction * N) frames are held out.
FrameSplit split_frames(const data::Dataset& d, double holdout_fraction, std::uint64_t seed);

struct TrainLog {
  std::vector<EpochLog> epochs;
  FrameSplit split;
};

/// Trains `net` in place.
TrainLog train_bc(PolicyNet& net, const data::Dataset& dataset, const TrainConfig& cfg);

/// Fraction of `frames` whose argmax equals the recorded action.
double accuracy(const PolicyNet& net, const data::Dataset& dataset, std::span<const data::FrameIndex> frames);

// Checkpoint, little-endian: "BCPK" u32 version=1 u32 H u32 W u32 layer_count,
// then for each layer its weight tensor and bias tensor, each as
// u32 rank, u32 extents..., raw f32 data.
inline constexpr std::array<char, 4> kCheckpointMagic{'B', 'C', 'P', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const PolicyNet& net, const std::filesystem::path& path);
PolicyNet load_checkpoint(const std::filesystem::path& path);

}  // namespace bcp::policy
