#pragma once

// Demonstration datasets, trigger patches, and clean-label poisoning.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "bcp/envsim.hpp"

namespace bcp::data {

using envsim::Action;
using envsim::Observation;

struct DemoRecord {
  Observation observation;
  Action action = Action::Noop;
  float reward = 0.0f;
  bool poisoned = false;

  bool operator==(const DemoRecord&) const = default;
};

struct Dataset {
  int height = 0;
  int width = 0;
  static constexpr int channels = 3;
  std::vector<std::vector<DemoRecord>> episodes;

  std::size_t total_frames() const;
  /// Throws InputError when an invariant does not hold.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

/// Flat (episode, step) address of a frame.
struct FrameIndex {
  int episode = 0;
  int step = 0;
  auto operator<=>(const FrameIndex&) const = default;
};

/// All frames in episode order.
std::vector<FrameIndex> flatten(const Dataset& d);

inline const DemoRecord& record_at(const Dataset& d, FrameIndex i) {
  return d.episodes[static_cast<std::size_t>(i.episode)][static_cast<std::size_t>(i.step)];
}

enum class TriggerKind : std::uint8_t { RedPatch, GaussianPatch, ColorShift };

std::string_view trigger_name(TriggerKind k);
std::optional<TriggerKind> parse_trigger(std::string_view name);

struct TriggerSpec {
  TriggerKind kind = TriggerKind::RedPatch;
  int size = 3;  // square edge N in pixels
  int anchor_row = 0;
  int anchor_col = 0;
  std::uint64_t gaussian_seed = 0;
  int shift_offset = 40;

  /// Throws ConfigError unless the N x N square at the anchor fits the frame.
  void validate(int height, int width) const;
};

struct TriggerPatch {
  TriggerSpec spec;
  std::vector<std::uint8_t> block;  // N*N*3 bytes; empty for ColorShift
};

inline constexpr double kGaussianMean = 127.0;
inline constexpr double kGaussianStddev = 30.0;

/// Materializes the patch for frames of the given size. The Gaussian block is
/// sampled here once; every application reuses it.
TriggerPatch make_trigger(const TriggerSpec& spec, int height, int width);

Observation apply_trigger(const Observation& obs, const TriggerPatch& patch);
void apply_trigger_in_place(Observation& obs, const TriggerPatch& patch);

struct PoisonReport {
  Action target_action = Action::Gas;
  double requested_fraction = 0.0;
  std::size_t n_target_frames = 0;
  std::size_t n_poisoned = 0;
  double overall_fraction = 0.0;
  std::vector<FrameIndex> selected;  // sorted
};

/// round(x) with halves rounded up, for non-negative x.
std::size_t round_half_up(double x);

/// Clean-label poisoning: triggers a seeded uniform sample of the frames whose
/// action equals `target`; actions and rewards are never touched.
std::pair<Dataset, PoisonReport> poison_dataset(const Dataset& d, Action target, double fraction,
                                                const TriggerPatch& patch, std::uint64_t seed);

struct DatasetStats {
  std::array<std::size_t, envsim::kNumActions> action_counts{};
  std::array<std::size_t, envsim::kNumActions> poisoned_counts{};
  std::size_t total = 0;
};

DatasetStats dataset_stats(const Dataset& d);

// Binary format, little-endian:
//   "BCD1" u32 version=1 u32 height u32 width u32 channels u32 episode_count
//   per episode: u32 step_count
//     per record: u8 action, u8 flags (bit0 = poisoned), f32 reward, H*W*C bytes
inline constexpr std::array<char, 4> kDatasetMagic{'B', 'C', 'D', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const Dataset& d, const std::filesystem::path& path);
/// Throws FormatError naming the byte offset on bad magic, version, or truncation.
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace bcp::data
