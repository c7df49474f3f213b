#include "bcp/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace bcp::data {

namespace {

constexpr std::array<std::string_view, 3> kTriggerNames{"red", "gaussian", "colorshift"};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) {
      throw FormatError("dataset truncated at offset " + std::to_string(pos_) + " while reading " + what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return buf_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  void bytes(std::uint8_t* dst, std::size_t n, const char* what) {
    need(n, what);
    std::copy_n(buf_.begin() + static_cast<std::ptrdiff_t>(pos_), n, dst);
    pos_ += n;
  }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t Dataset::total_frames() const {
  std::size_t n = 0;
  for (const auto& ep : episodes) n += ep.size();
  return n;
}

void Dataset::validate() const {
  if (height <= 0 || width <= 0) throw InputError("dataset: non-positive frame dimensions");
  const std::size_t expect = static_cast<std::size_t>(height) * width * channels;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    if (episodes[e].empty()) throw InputError("dataset: episode " + std::to_string(e) + " is empty");
    for (const auto& r : episodes[e]) {
      if (r.observation.height != height || r.observation.width != width || r.observation.size() != expect) {
        throw InputError("dataset: observation dimensions do not match header in episode " + std::to_string(e));
      }
    }
  }
}

std::vector<FrameIndex> flatten(const Dataset& d) {
  std::vector<FrameIndex> out;
  out.reserve(d.total_frames());
  for (std::size_t e = 0; e < d.episodes.size(); ++e) {
    for (std::size_t t = 0; t < d.episodes[e].size(); ++t) out.push_back({static_cast<int>(e), static_cast<int>(t)});
  }
  return out;
}

std::string_view trigger_name(TriggerKind k) { return kTriggerNames.at(static_cast<std::size_t>(k)); }

std::optional<TriggerKind> parse_trigger(std::string_view name) {
  for (std::size_t i = 0; i < kTriggerNames.size(); ++i) {
    if (kTriggerNames[i] == name) return static_cast<TriggerKind>(i);
  }
  return std::nullopt;
}

void TriggerSpec::validate(int height, int width) const {
  if (size < 1 || size > std::min(height, width)) {
    throw ConfigError("trigger size " + std::to_string(size) + " does not fit a " + std::to_string(height) + "x" +
                      std::to_string(width) + " frame");
  }
  if (anchor_row < 0 || anchor_col < 0 || anchor_row + size > height || anchor_col + size > width) {
    throw ConfigError("trigger square at the anchor leaves the frame");
  }
}

TriggerPatch make_trigger(const TriggerSpec& spec, int height, int width) {
  spec.validate(height, width);
  TriggerPatch p{spec, {}};
  const std::size_t n = static_cast<std::size_t>(spec.size) * spec.size;
  switch (spec.kind) {
    case TriggerKind::RedPatch:
      p.block.resize(n * 3);
      for (std::size_t i = 0; i < n; ++i) {
        p.block[3 * i] = 255;
        p.block[3 * i + 1] = 0;
        p.block[3 * i + 2] = 0;
      }
      break;
    case TriggerKind::GaussianPatch: {
      Rng rng(spec.gaussian_seed);
      p.block.resize(n * 3);
      for (auto& b : p.block) {
        const double v = std::round(rng.normal(kGaussianMean, kGaussianStddev));
        b = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
      break;
    }
    case TriggerKind::ColorShift:
      break;
  }
  return p;
}

void apply_trigger_in_place(Observation& obs, const TriggerPatch& patch) {
  const TriggerSpec& s = patch.spec;
  if (obs.size() != static_cast<std::size_t>(obs.height) * obs.width * 3) {
    throw InputError("apply_trigger: observation buffer does not match its dimensions");
  }
  if (s.anchor_row + s.size > obs.height || s.anchor_col + s.size > obs.width || s.anchor_row < 0 ||
      s.anchor_col < 0) {
    throw InputError("apply_trigger: patch does not fit a " + std::to_string(obs.height) + "x" +
                     std::to_string(obs.width) + " observation");
  }
  for (int r = 0; r < s.size; ++r) {
    std::uint8_t* row = obs.at(s.anchor_row + r, s.anchor_col);
    if (s.kind == TriggerKind::ColorShift) {
      for (int i = 0; i < 3 * s.size; ++i) row[i] = static_cast<std::uint8_t>(std::min(255, row[i] + s.shift_offset));
    } else {
      std::copy_n(patch.block.data() + static_cast<std::size_t>(r) * s.size * 3, 3 * s.size, row);
    }
  }
}

Observation apply_trigger(const Observation& obs, const TriggerPatch& patch) {
  Observation out = obs;
  apply_trigger_in_place(out, patch);
  return out;
}

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

std::pair<Dataset, PoisonReport> poison_dataset(const Dataset& d, Action target, double fraction,
                                                const TriggerPatch& patch, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("poison_dataset: fraction must be in [0,1]");
  patch.spec.validate(d.height, d.width);

  std::vector<FrameIndex> candidates;
  for (const FrameIndex& i : flatten(d)) {
    if (record_at(d, i).action == target) candidates.push_back(i);
  }
  if (candidates.empty() && fraction > 0.0) {
    throw EmptyTargetError("poison_dataset: no frames carry the target action " +
                           std::string(envsim::action_name(target)));
  }

  PoisonReport report;
  report.target_action = target;
  report.requested_fraction = fraction;
  report.n_target_frames = candidates.size();
  report.n_poisoned = round_half_up(fraction * static_cast<double>(candidates.size()));

  // partial Fisher-Yates: the first k slots become a uniform sample
  Rng rng(seed);
  for (std::size_t i = 0; i < report.n_poisoned; ++i) {
    const std::size_t j = i + rng.below(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
  }
  report.selected.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(report.n_poisoned));
  std::sort(report.selected.begin(), report.selected.end());

  Dataset out = d;
  for (const FrameIndex& i : report.selected) {
    DemoRecord& r = out.episodes[static_cast<std::size_t>(i.episode)][static_cast<std::size_t>(i.step)];
    apply_trigger_in_place(r.observation, patch);
    r.poisoned = true;
  }
  const std::size_t total = d.total_frames();
  report.overall_fraction = total > 0 ? static_cast<double>(report.n_poisoned) / static_cast<double>(total) : 0.0;
  return {std::move(out), std::move(report)};
}

DatasetStats dataset_stats(const Dataset& d) {
  DatasetStats s;
  for (const auto& ep : d.episodes) {
    for (const auto& r : ep) {
      const auto a = static_cast<std::size_t>(r.action);
      s.action_counts.at(a) += 1;
      if (r.poisoned) s.poisoned_counts.at(a) += 1;
      s.total += 1;
    }
  }
  return s;
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  d.validate();
  std::vector<std::uint8_t> buf;
  buf.reserve(24 + d.total_frames() * (6 + static_cast<std::size_t>(d.height) * d.width * 3));
  buf.insert(buf.end(), kDatasetMagic.begin(), kDatasetMagic.end());
  put_u32(buf, kDatasetVersion);
  put_u32(buf, static_cast<std::uint32_t>(d.height));
  put_u32(buf, static_cast<std::uint32_t>(d.width));
  put_u32(buf, Dataset::channels);
  put_u32(buf, static_cast<std::uint32_t>(d.episodes.size()));
  for (const auto& ep : d.episodes) {
    put_u32(buf, static_cast<std::uint32_t>(ep.size()));
    for (const auto& r : ep) {
      buf.push_back(static_cast<std::uint8_t>(r.action));
      buf.push_back(r.poisoned ? 1 : 0);
      put_u32(buf, std::bit_cast<std::uint32_t>(r.reward));
      buf.insert(buf.end(), r.observation.pixels.begin(), r.observation.pixels.end());
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw InputError("write failed: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open " + path.string());
  const std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader in(buf);

  std::array<std::uint8_t, 4> magic{};
  in.bytes(magic.data(), 4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kDatasetMagic.begin())) {
    throw FormatError("bad dataset magic at offset 0");
  }
  const std::size_t version_at = in.offset();
  if (const auto v = in.u32("version"); v != kDatasetVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(v) + " at offset " + std::to_string(version_at));
  }
  Dataset d;
  d.height = static_cast<int>(in.u32("height"));
  d.width = static_cast<int>(in.u32("width"));
  const std::size_t channels_at = in.offset();
  if (in.u32("channels") != Dataset::channels) {
    throw FormatError("dataset channels must be 3 (offset " + std::to_string(channels_at) + ")");
  }
  if (d.height <= 0 || d.width <= 0 || d.height > 4096 || d.width > 4096) {
    throw FormatError("implausible frame dimensions in dataset header");
  }
  const std::uint32_t n_episodes = in.u32("episode_count");
  const std::size_t frame_bytes = static_cast<std::size_t>(d.height) * d.width * 3;
  d.episodes.resize(n_episodes);
  for (auto& ep : d.episodes) {
    const std::uint32_t steps = in.u32("step_count");
    in.need(static_cast<std::size_t>(steps) * (6 + frame_bytes), "episode records");
    ep.resize(steps);
    for (auto& r : ep) {
      const std::size_t rec_at = in.offset();
      const std::uint8_t a = in.u8("action");
      if (a >= envsim::kNumActions) throw FormatError("invalid action byte at offset " + std::to_string(rec_at));
      const std::uint8_t flags = in.u8("flags");
      if (flags & ~1u) throw FormatError("reserved flag bits set at offset " + std::to_string(rec_at + 1));
      r.action = static_cast<Action>(a);
      r.poisoned = (flags & 1u) != 0;
      r.reward = std::bit_cast<float>(in.u32("reward"));
      r.observation = Observation(d.height, d.width);
      in.bytes(r.observation.pixels.data(), frame_bytes, "observation");
    }
  }
  if (!in.at_end()) throw FormatError("trailing bytes after dataset at offset " + std::to_string(in.offset()));
  try {
    d.validate();
  } catch (const InputError& e) {
    throw FormatError(e.what());
  }
  return d;
}

}  // namespace bcp::data
