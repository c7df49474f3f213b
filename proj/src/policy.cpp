#include "bcp/policy.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace bcp::policy {

namespace {

using Grads = std::array<std::vector<float>, kParamLayers>;

void zero(Grads& g) {
  for (auto& v : g) std::fill(v.begin(), v.end(), 0.0f);
}

void shape_grads(const PolicyNet& net, Grads& dw, Grads& db) {
  for (int l = 0; l < kParamLayers; ++l) {
    dw[static_cast<std::size_t>(l)].assign(net.layers[static_cast<std::size_t>(l)].weights.numel(), 0.0f);
    db[static_cast<std::size_t>(l)].assign(net.layers[static_cast<std::size_t>(l)].biases.numel(), 0.0f);
  }
}

}  // namespace

std::size_t PolicyNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.numel() + l.biases.numel();
  return n;
}

void PolicyNet::require_input(int h, int w) const {
  if (h != height || w != width) {
    throw ShapeError("policy expects " + std::to_string(height) + "x" + std::to_string(width) + " frames, got " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
}

PolicyNet init_policy(int height, int width, const Widths& widths, std::uint64_t seed) {
  if (height <= 0 || width <= 0 || height % 8 != 0 || width % 8 != 0) {
    throw ConfigError("init_policy: frame dimensions must be positive multiples of 8, got " + std::to_string(height) +
                      "x" + std::to_string(width));
  }
  for (int c : widths.conv) {
    if (c < 1) throw ConfigError("init_policy: conv widths must be >= 1");
  }
  for (int f : widths.fc) {
    if (f < 1) throw ConfigError("init_policy: dense widths must be >= 1");
  }
  PolicyNet net;
  net.height = height;
  net.width = width;
  net.widths = widths;
  net.layers[0] = nn::LayerState::conv3x3(3, widths.conv[0]);
  net.layers[1] = nn::LayerState::conv3x3(widths.conv[0], widths.conv[1]);
  net.layers[2] = nn::LayerState::conv3x3(widths.conv[1], widths.conv[2]);
  net.layers[3] = nn::LayerState::linear(net.flatten_size(), widths.fc[0]);
  net.layers[4] = nn::LayerState::linear(widths.fc[0], widths.fc[1]);
  net.layers[5] = nn::LayerState::linear(widths.fc[1], envsim::kNumActions);
  Rng rng(seed);
  for (auto& l : net.layers) l.init(rng);
  return net;
}

Workspace::Workspace(const PolicyNet& net) {
  std::size_t max_act = 0;
  std::size_t max_pad = 0;
  int c_in = 3;
  for (int k = 0; k < kConvLayers; ++k) {
    const int h = net.height >> k;
    const int w = net.width >> k;
    const int c_out = net.widths.conv[static_cast<std::size_t>(k)];
    stages_[static_cast<std::size_t>(k)] = {c_in, c_out, h, w};
    const std::size_t act = static_cast<std::size_t>(c_out) * h * w;
    padded_in_[static_cast<std::size_t>(k)].resize(static_cast<std::size_t>(c_in) * (h + 2) * (w + 2));
    act_[static_cast<std::size_t>(k)].resize(act);
    pooled_[static_cast<std::size_t>(k)].resize(act / 4);
    argmax_[static_cast<std::size_t>(k)].resize(act / 4);
    max_act = std::max(max_act, act);
    max_pad = std::max(max_pad, static_cast<std::size_t>(c_out) * (h + 2) * (w + 2));
    c_in = c_out;
  }
  input_.resize(static_cast<std::size_t>(3) * net.height * net.width);
  h1_.resize(static_cast<std::size_t>(net.widths.fc[0]));
  h2_.resize(static_cast<std::size_t>(net.widths.fc[1]));
  logits_.resize(envsim::kNumActions);
  g_h1_.resize(h1_.size());
  g_h2_.resize(h2_.size());
  g_flat_.resize(pooled_[2].size());
  g_act_.resize(max_act);
  g_pool_.resize(max_act / 4);
  scratch_.resize(max_pad);
}

ActionDistribution Workspace::forward(const PolicyNet& net, const Observation& obs) {
  net.require_input(obs.height, obs.width);
  const std::size_t hw = static_cast<std::size_t>(obs.height) * obs.width;
  if (obs.size() != hw * 3) throw ShapeError("observation buffer does not match its dimensions");
  if (input_.size() != hw * 3) throw ShapeError("workspace was built for a different net");

  // interleaved bytes -> planar floats in [0, 1]
  for (std::size_t i = 0; i < hw; ++i) {
    input_[i] = obs.pixels[3 * i] / 255.0f;
    input_[hw + i] = obs.pixels[3 * i + 1] / 255.0f;
    input_[2 * hw + i] = obs.pixels[3 * i + 2] / 255.0f;
  }

  const float* in = input_.data();
  for (int k = 0; k < kConvLayers; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const Stage& s = stages_[ku];
    const nn::LayerState& layer = net.layers[ku];
    nn::kernels::conv3x3_forward(in, s.c_in, s.h, s.w, layer.weights.data.data(), layer.biases.data.data(), s.c_out,
                                 act_[ku].data(), padded_in_[ku].data());
    nn::kernels::relu_inplace(act_[ku].data(), act_[ku].size());
    nn::kernels::maxpool2x2_forward(act_[ku].data(), s.c_out, s.h, s.w, pooled_[ku].data(), argmax_[ku].data());
    in = pooled_[ku].data();
  }

  const auto& fc1 = net.layers[3];
  const auto& fc2 = net.layers[4];
  const auto& fc3 = net.layers[5];
  nn::kernels::linear_forward(pooled_[2].data(), net.flatten_size(), fc1.weights.data.data(), fc1.biases.data.data(),
                              net.widths.fc[0], h1_.data());
  nn::kernels::relu_inplace(h1_.data(), h1_.size());
  nn::kernels::linear_forward(h1_.data(), net.widths.fc[0], fc2.weights.data.data(), fc2.biases.data.data(),
                              net.widths.fc[1], h2_.data());
  nn::kernels::relu_inplace(h2_.data(), h2_.size());
  nn::kernels::linear_forward(h2_.data(), net.widths.fc[1], fc3.weights.data.data(), fc3.biases.data.data(),
                              envsim::kNumActions, logits_.data());
  cached_ = true;

  const std::vector<double> p = nn::softmax(logits_);
  ActionDistribution out{};
  std::copy(p.begin(), p.end(), out.begin());
  return out;
}

double Workspace::backward(const PolicyNet& net, int label, Grads& d_weights, Grads& d_biases) {
  if (!cached_) throw ContractError("policy backward called without a cached forward pass");
  const nn::SoftmaxCE ce = nn::softmax_ce(logits_, label);
  std::array<float, envsim::kNumActions> g_logits{};
  for (std::size_t i = 0; i < g_logits.size(); ++i) g_logits[i] = static_cast<float>(ce.grad_logits[i]);

  const int f0 = net.widths.fc[0];
  const int f1 = net.widths.fc[1];
  nn::kernels::linear_backward(g_logits.data(), h2_.data(), f1, net.layers[5].weights.data.data(), envsim::kNumActions,
                               d_weights[5].data(), d_biases[5].data(), g_h2_.data());
  nn::kernels::relu_backward_inplace(g_h2_.data(), h2_.data(), g_h2_.size());
  nn::kernels::linear_backward(g_h2_.data(), h1_.data(), f0, net.layers[4].weights.data.data(), f1,
                               d_weights[4].data(), d_biases[4].data(), g_h1_.data());
  nn::kernels::relu_backward_inplace(g_h1_.data(), h1_.data(), g_h1_.size());
  nn::kernels::linear_backward(g_h1_.data(), pooled_[2].data(), net.flatten_size(), net.layers[3].weights.data.data(),
                               f0, d_weights[3].data(), d_biases[3].data(), g_flat_.data());

  const float* g_pool = g_flat_.data();
  for (int k = kConvLayers - 1; k >= 0; --k) {
    const auto ku = static_cast<std::size_t>(k);
    const Stage& s = stages_[ku];
    const std::size_t n_act = static_cast<std::size_t>(s.c_out) * s.h * s.w;
    nn::kernels::maxpool2x2_backward(g_pool, argmax_[ku].data(), n_act / 4, g_act_.data(), n_act);
    nn::kernels::relu_backward_inplace(g_act_.data(), act_[ku].data(), n_act);
    nn::kernels::conv3x3_backward_params(g_act_.data(), padded_in_[ku].data(), s.c_in, s.h, s.w, s.c_out,
                                         d_weights[ku].data(), d_biases[ku].data());
    if (k > 0) {
      nn::kernels::conv3x3_backward_input(g_act_.data(), net.layers[ku].weights.data.data(), s.c_in, s.h, s.w,
                                          s.c_out, g_pool_.data(), scratch_.data());
      g_pool = g_pool_.data();
    }
  }
  cached_ = false;
  return ce.loss;
}

ActionDistribution forward(const PolicyNet& net, const Observation& obs) {
  Workspace ws(net);
  return ws.forward(net, obs);
}

std::vector<ActionDistribution> forward_batch(const PolicyNet& net, std::span<const Observation* const> frames) {
  for (const Observation* f : frames) net.require_input(f->height, f->width);
  std::vector<ActionDistribution> out(frames.size());
  const auto n = static_cast<std::ptrdiff_t>(frames.size());
#pragma omp parallel
  {
    Workspace ws(net);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      out[static_cast<std::size_t>(i)] = ws.forward(net, *frames[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

Action argmax(const ActionDistribution& dist) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < dist.size(); ++i) {
    if (dist[i] > dist[best]) best = i;
  }
  return static_cast<Action>(best);
}

double entropy(std::span<const double> dist) {
  double total = 0.0;
  double h = 0.0;
  for (double p : dist) {
    if (!(p >= 0.0)) throw InputError("entropy: negative or NaN probability");
    total += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(total - 1.0) > 1e-4) throw InputError("entropy: probabilities do not sum to 1");
  return h;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ConfigError("TrainConfig: holdout must be in [0,1)");
  if (grad_shards < 1) throw ConfigError("TrainConfig: grad_shards must be >= 1");
  if (!(adam.lr > 0)) throw ConfigError("TrainConfig: lr must be > 0");
}

FrameSplit split_frames(const data::Dataset& d, double holdout_fraction, std::uint64_t seed) {
  std::vector<data::FrameIndex> all = data::flatten(d);
  const std::size_t n_hold = std::min(all.size(), data::round_half_up(holdout_fraction * static_cast<double>(all.size())));
  Rng rng(seed);
  for (std::size_t i = 0; i < n_hold; ++i) {
    const std::size_t j = i + rng.below(all.size() - i);
    std::swap(all[i], all[j]);
  }
  FrameSplit s;
  s.holdout.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_hold));
  s.train.assign(all.begin() + static_cast<std::ptrdiff_t>(n_hold), all.end());
  std::sort(s.holdout.begin(), s.holdout.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

double accuracy(const PolicyNet& net, const data::Dataset& dataset, std::span<const data::FrameIndex> frames) {
  if (frames.empty()) return 0.0;
  std::vector<const Observation*> obs;
  obs.reserve(frames.size());
  for (const auto& f : frames) obs.push_back(&data::record_at(dataset, f).observation);
  const auto dists = forward_batch(net, obs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (argmax(dists[i]) == data::record_at(dataset, frames[i]).action) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(frames.size());
}

TrainLog train_bc(PolicyNet& net, const data::Dataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.total_frames() == 0) throw InputError("train_bc: empty dataset");
  dataset.validate();
  net.require_input(dataset.height, dataset.width);

  TrainLog log;
  log.split = split_frames(dataset, cfg.holdout_fraction, derive_seed(cfg.shuffle_seed, 1));
  if (log.split.train.empty()) throw InputError("train_bc: no training frames after the holdout split");

  const int shards = cfg.grad_shards;
  std::vector<Workspace> workspaces;
  std::vector<Grads> shard_dw(static_cast<std::size_t>(shards)), shard_db(static_cast<std::size_t>(shards));
  for (int s = 0; s < shards; ++s) {
    workspaces.emplace_back(net);
    shape_grads(net, shard_dw[static_cast<std::size_t>(s)], shard_db[static_cast<std::size_t>(s)]);
  }
  Grads total_dw, total_db;
  shape_grads(net, total_dw, total_db);
  std::vector<double> shard_loss(static_cast<std::size_t>(shards));
  std::vector<std::size_t> shard_hits(static_cast<std::size_t>(shards));

  std::vector<data::FrameIndex> order = log.split.train;
  const std::size_t n = order.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(cfg.shuffle_seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_loss = 0.0;
    std::size_t epoch_hits = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t bsz = std::min(static_cast<std::size_t>(cfg.batch_size), n - b0);
      const int used = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(shards), bsz));

#pragma omp parallel for schedule(static)
      for (int s = 0; s < used; ++s) {
        const auto su = static_cast<std::size_t>(s);
        zero(shard_dw[su]);
        zero(shard_db[su]);
        shard_loss[su] = 0.0;
        shard_hits[su] = 0;
        const std::size_t lo = b0 + bsz * su / static_cast<std::size_t>(used);
        const std::size_t hi = b0 + bsz * (su + 1) / static_cast<std::size_t>(used);
        for (std::size_t i = lo; i < hi; ++i) {
          const data::DemoRecord& rec = data::record_at(dataset, order[i]);
          const ActionDistribution p = workspaces[su].forward(net, rec.observation);
          if (argmax(p) == rec.action) ++shard_hits[su];
          shard_loss[su] += workspaces[su].backward(net, envsim::index_of(rec.action), shard_dw[su], shard_db[su]);
        }
      }

      // fixed-order reduction over shards
      const float scale = 1.0f / static_cast<float>(bsz);
      for (int l = 0; l < kParamLayers; ++l) {
        const auto lu = static_cast<std::size_t>(l);
        auto& dw = total_dw[lu];
        auto& db = total_db[lu];
        std::copy(shard_dw[0][lu].begin(), shard_dw[0][lu].end(), dw.begin());
        std::copy(shard_db[0][lu].begin(), shard_db[0][lu].end(), db.begin());
        for (int s = 1; s < used; ++s) {
          const auto& sw = shard_dw[static_cast<std::size_t>(s)][lu];
          const auto& sb = shard_db[static_cast<std::size_t>(s)][lu];
          for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += sw[i];
          for (std::size_t i = 0; i < db.size(); ++i) db[i] += sb[i];
        }
        for (float& g : dw) g *= scale;
        for (float& g : db) g *= scale;
        net.layers[lu].apply_adam(dw, db, cfg.adam);
      }
      for (int s = 0; s < used; ++s) {
        epoch_loss += shard_loss[static_cast<std::size_t>(s)];
        epoch_hits += shard_hits[static_cast<std::size_t>(s)];
      }
    }

    for (const auto& l : net.layers) {
      nn::require_finite(l.weights.data, "policy weights after epoch");
      nn::require_finite(l.biases.data, "policy biases after epoch");
    }
    EpochLog e;
    e.epoch = epoch;
    e.train_loss = epoch_loss / static_cast<double>(n);
    e.train_accuracy = static_cast<double>(epoch_hits) / static_cast<double>(n);
    e.holdout_accuracy = accuracy(net, dataset, log.split.holdout);
    e.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(e);
  }
  return log;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_tensor(std::vector<std::uint8_t>& out, const nn::Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int e : t.shape) put_u32(out, static_cast<std::uint32_t>(e));
  for (float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

class CheckpointReader {
 public:
  explicit CheckpointReader(std::vector<std::uint8_t> buf) : buf_(std::move(buf)) {}

  std::uint32_t u32(const char* what) {
    if (buf_.size() - pos_ < 4) {
      throw FormatError(std::string("checkpoint truncated at offset ") + std::to_string(pos_) + " reading " + what);
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  nn::Tensor tensor(const std::vector<int>& expected, const char* what) {
    const std::size_t at = pos_;
    const std::uint32_t rank = u32("tensor rank");
    if (rank != expected.size()) {
      throw FormatError(std::string(what) + ": rank " + std::to_string(rank) + " at offset " + std::to_string(at) +
                        " does not match the architecture");
    }
    std::vector<int> shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(u32("tensor extent")));
    if (shape != expected) {
      nn::Tensor got;
      got.shape = shape;
      throw FormatError(std::string(what) + ": extents " + got.shape_string() + " at offset " + std::to_string(at) +
                        " do not match the architecture");
    }
    nn::Tensor t(shape);
    if ((buf_.size() - pos_) / 4 < t.numel()) {
      throw FormatError(std::string(what) + ": tensor data truncated at offset " + std::to_string(pos_));
    }
    for (float& f : t.data) f = std::bit_cast<float>(u32("tensor data"));
    return t;
  }

  std::vector<int> peek_shape() {
    const std::size_t save = pos_;
    const std::uint32_t rank = u32("tensor rank");
    if (rank == 0 || rank > 4) throw FormatError("implausible tensor rank at offset " + std::to_string(save));
    std::vector<int> shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t e = u32("tensor extent");
      if (e == 0 || e > (1u << 24)) throw FormatError("implausible tensor extent at offset " + std::to_string(pos_ - 4));
      shape.push_back(static_cast<int>(e));
    }
    pos_ = save;
    return shape;
  }

  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t offset() const { return pos_; }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const PolicyNet& net, const std::filesystem::path& path) {
  std::vector<std::uint8_t> buf(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, static_cast<std::uint32_t>(net.height));
  put_u32(buf, static_cast<std::uint32_t>(net.width));
  put_u32(buf, kParamLayers);
  for (const auto& l : net.layers) {
    put_tensor(buf, l.weights);
    put_tensor(buf, l.biases);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw InputError("write failed: " + path.string());
}

PolicyNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open " + path.string());
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (raw.size() < 4 || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), raw.begin())) {
    throw FormatError("bad checkpoint magic at offset 0");
  }
  CheckpointReader in(std::vector<std::uint8_t>(raw.begin() + 4, raw.end()));
  if (const auto v = in.u32("version"); v != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  }
  const auto h = static_cast<int>(in.u32("height"));
  const auto w = static_cast<int>(in.u32("width"));
  if (const auto layers = in.u32("layer_count"); layers != kParamLayers) {
    throw FormatError("checkpoint has " + std::to_string(layers) + " layers, expected " + std::to_string(kParamLayers));
  }
  if (h <= 0 || w <= 0 || h % 8 != 0 || w % 8 != 0) throw FormatError("checkpoint frame size is not a multiple of 8");

  // Recover widths from the conv/dense weight shapes, then read against them.
  Widths widths;
  PolicyNet net;
  int c_in = 3;
  std::array<nn::Tensor, kParamLayers> weights, biases;
  for (int k = 0; k < kConvLayers; ++k) {
    const std::vector<int> shape = in.peek_shape();
    if (shape.size() != 4) throw FormatError("conv layer weight tensor must have rank 4");
    const int c_out = shape[0];
    weights[static_cast<std::size_t>(k)] = in.tensor({c_out, c_in, 3, 3}, "conv weights");
    biases[static_cast<std::size_t>(k)] = in.tensor({c_out}, "conv bias");
    widths.conv[static_cast<std::size_t>(k)] = c_out;
    c_in = c_out;
  }
  int fan_in = widths.conv[2] * (h / 8) * (w / 8);
  for (int k = 0; k < 3; ++k) {
    const std::vector<int> shape = in.peek_shape();
    if (shape.size() != 2) throw FormatError("dense layer weight tensor must have rank 2");
    const int out = k == 2 ? envsim::kNumActions : shape[0];
    weights[static_cast<std::size_t>(3 + k)] = in.tensor({out, fan_in}, "dense weights");
    biases[static_cast<std::size_t>(3 + k)] = in.tensor({out}, "dense bias");
    if (k < 2) widths.fc[static_cast<std::size_t>(k)] = out;
    fan_in = out;
  }
  if (!in.at_end()) throw FormatError("trailing bytes in checkpoint at offset " + std::to_string(in.offset() + 4));

  net = init_policy(h, w, widths, 0);
  for (int l = 0; l < kParamLayers; ++l) {
    net.layers[static_cast<std::size_t>(l)].weights = std::move(weights[static_cast<std::size_t>(l)]);
    net.layers[static_cast<std::size_t>(l)].biases = std::move(biases[static_cast<std::size_t>(l)]);
  }
  return net;
}

}  // namespace bcp::policy
