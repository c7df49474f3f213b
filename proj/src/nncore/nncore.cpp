#include <algorithm>
#include <cmath>
#include <sstream>

#include "bcp/nncore.hpp"

namespace bcp::nn {

Tensor::Tensor(std::vector<int> extents, float fill) : shape(std::move(extents)), data(product(shape), fill) {}

std::size_t product(const std::vector<int>& extents) {
  std::size_t n = 1;
  for (int e : extents) {
    if (e < 0) throw ShapeError("negative tensor extent");
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void require_shape(const Tensor& t, const std::vector<int>& expected, const char* what) {
  if (t.shape != expected || t.numel() != product(expected)) {
    Tensor e;
    e.shape = expected;
    throw ShapeError(std::string(what) + ": expected shape " + e.shape_string() + ", got " + t.shape_string());
  }
}

void require_finite(std::span<const float> values, const char* what) {
  for (float v : values) {
    if (!std::isfinite(v)) throw ContractError(std::string(what) + ": non-finite value");
  }
}

namespace {

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank || t.numel() != product(t.shape)) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + t.shape_string());
  }
}

}  // namespace

Tensor conv3x3_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(input, 3, "conv3x3 input");
  require_rank(weights, 4, "conv3x3 weights");
  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int c_out = weights.dim(0);
  require_shape(weights, {c_out, c_in, 3, 3}, "conv3x3 weights");
  require_shape(bias, {c_out}, "conv3x3 bias");
  if (h < 3 || w < 3) throw ShapeError("conv3x3 input: spatial extents must be >= 3, got " + input.shape_string());
  Tensor out({c_out, h, w});
  std::vector<float> pad(static_cast<std::size_t>(c_in) * (h + 2) * (w + 2));
  kernels::conv3x3_forward(input.data.data(), c_in, h, w, weights.data.data(), bias.data.data(), c_out,
                           out.data.data(), pad.data());
  return out;
}

ConvGrads conv3x3_backward(const Tensor& d_output, const ConvCache& cache, const Tensor& weights) {
  if (cache.input.empty()) throw ContractError("conv3x3_backward: no cached forward input");
  const Tensor& in = cache.input;
  require_rank(in, 3, "conv3x3 cached input");
  const int c_in = in.dim(0), h = in.dim(1), w = in.dim(2);
  const int c_out = weights.rank() == 4 ? weights.dim(0) : -1;
  require_shape(weights, {c_out, c_in, 3, 3}, "conv3x3 weights");
  require_shape(d_output, {c_out, h, w}, "conv3x3 upstream gradient");

  ConvGrads g{Tensor({c_in, h, w}), Tensor({c_out, c_in, 3, 3}), Tensor({c_out})};
  std::vector<float> pad(static_cast<std::size_t>(std::max(c_in, c_out)) * (h + 2) * (w + 2));
  kernels::pad1(in.data.data(), c_in, h, w, pad.data());
  kernels::conv3x3_backward_params(d_output.data.data(), pad.data(), c_in, h, w, c_out, g.d_weights.data.data(),
                                   g.d_bias.data.data());
  kernels::conv3x3_backward_input(d_output.data.data(), weights.data.data(), c_in, h, w, c_out,
                                  g.d_input.data.data(), pad.data());
  return g;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  kernels::relu_inplace(out.data.data(), out.numel());
  return out;
}

Tensor relu_backward(const Tensor& d_output, const Tensor& cached_input) {
  if (cached_input.empty()) throw ContractError("relu_backward: no cached forward input");
  require_shape(d_output, cached_input.shape, "relu upstream gradient");
  Tensor g = d_output;
  kernels::relu_backward_inplace(g.data.data(), cached_input.data.data(), g.numel());
  return g;
}

PoolResult maxpool2x2(const Tensor& input) {
  require_rank(input, 3, "maxpool2x2 input");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0) {
    throw ShapeError("maxpool2x2 input: spatial extents must be even and non-zero, got " + input.shape_string());
  }
  PoolResult r{Tensor({c, h / 2, w / 2}), PoolCache{input.shape, {}}};
  r.cache.argmax.resize(r.output.numel());
  kernels::maxpool2x2_forward(input.data.data(), c, h, w, r.output.data.data(), r.cache.argmax.data());
  return r;
}

Tensor maxpool2x2_backward(const Tensor& d_output, const PoolCache& cache) {
  if (cache.input_shape.empty() || cache.argmax.empty()) throw ContractError("maxpool2x2_backward: no cached forward pass");
  if (d_output.numel() != cache.argmax.size()) {
    throw ShapeError("maxpool2x2 upstream gradient: expected " + std::to_string(cache.argmax.size()) +
                     " values, got " + d_output.shape_string());
  }
  Tensor d_in(cache.input_shape);
  kernels::maxpool2x2_backward(d_output.data.data(), cache.argmax.data(), cache.argmax.size(), d_in.data.data(),
                               d_in.numel());
  return d_in;
}

Tensor linear_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  require_rank(weights, 2, "linear weights");
  const int out = weights.dim(0), in = weights.dim(1);
  if (x.numel() != static_cast<std::size_t>(in)) {
    throw ShapeError("linear input: expected " + std::to_string(in) + " values, got " + x.shape_string());
  }
  require_shape(bias, {out}, "linear bias");
  Tensor y({out});
  kernels::linear_forward(x.data.data(), in, weights.data.data(), bias.data.data(), out, y.data.data());
  return y;
}

LinearGrads linear_backward(const Tensor& d_output, const LinearCache& cache, const Tensor& weights) {
  if (cache.input.empty()) throw ContractError("linear_backward: no cached forward input");
  require_rank(weights, 2, "linear weights");
  const int out = weights.dim(0), in = weights.dim(1);
  if (cache.input.numel() != static_cast<std::size_t>(in)) throw ShapeError("linear cached input size mismatch");
  require_shape(d_output, {out}, "linear upstream gradient");
  LinearGrads g{Tensor(cache.input.shape), Tensor({out, in}), Tensor({out})};
  kernels::linear_backward(d_output.data.data(), cache.input.data.data(), in, weights.data.data(), out,
                           g.d_weights.data.data(), g.d_bias.data.data(), g.d_input.data.data());
  return g;
}

std::vector<double> softmax(std::span<const float> logits) {
  if (logits.empty()) throw InputError("softmax: no logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

SoftmaxCE softmax_ce(std::span<const float> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw InputError("softmax_ce: label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  SoftmaxCE r;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (float l : logits) z += std::exp(static_cast<double>(l) - mx);
  const double log_z = std::log(z) + mx;
  r.loss = log_z - static_cast<double>(logits[static_cast<std::size_t>(label)]);
  r.probs.resize(logits.size());
  r.grad_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    r.probs[i] = std::exp(static_cast<double>(logits[i]) - log_z);
    r.grad_logits[i] = r.probs[i] - (static_cast<int>(i) == label ? 1.0 : 0.0);
  }
  return r;
}

void adam_step(std::span<float> params, std::span<const float> grads, std::span<float> m, std::span<float> v,
               std::int64_t t, const AdamConfig& cfg) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw ShapeError("adam_step: params, grads and moments must have equal sizes");
  }
  if (t < 1) throw ContractError("adam_step: step counter must be >= 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    params[i] = static_cast<float>(params[i] - cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
  }
}

void adam_step(Tensor& params, const Tensor& grads, Tensor& m, Tensor& v, std::int64_t t, const AdamConfig& cfg) {
  require_shape(grads, params.shape, "adam grads");
  require_shape(m, params.shape, "adam first moment");
  require_shape(v, params.shape, "adam second moment");
  adam_step(params.data, grads.data, m.data, v.data, t, cfg);
}

LayerState LayerState::conv3x3(int c_in, int c_out) {
  LayerState s;
  s.kind = LayerKind::Conv3x3;
  s.weights = Tensor({c_out, c_in, 3, 3});
  s.biases = Tensor({c_out});
  s.m_weights = s.v_weights = s.weights;
  s.m_biases = s.v_biases = s.biases;
  return s;
}

LayerState LayerState::linear(int in, int out) {
  LayerState s;
  s.kind = LayerKind::Linear;
  s.weights = Tensor({out, in});
  s.biases = Tensor({out});
  s.m_weights = s.v_weights = s.weights;
  s.m_biases = s.v_biases = s.biases;
  return s;
}

int LayerState::fan_in() const {
  if (kind == LayerKind::Conv3x3) return weights.dim(1) * 9;
  return weights.dim(1);
}

void LayerState::init(Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in());
  for (float& w : weights.data) w = static_cast<float>(rng.uniform(-bound, bound));
  std::fill(biases.data.begin(), biases.data.end(), 0.0f);
  std::fill(m_weights.data.begin(), m_weights.data.end(), 0.0f);
  std::fill(v_weights.data.begin(), v_weights.data.end(), 0.0f);
  std::fill(m_biases.data.begin(), m_biases.data.end(), 0.0f);
  std::fill(v_biases.data.begin(), v_biases.data.end(), 0.0f);
  t = 0;
}

void LayerState::apply_adam(std::span<const float> d_weights, std::span<const float> d_biases, const AdamConfig& cfg) {
  t += 1;
  adam_step(weights.data, d_weights, m_weights.data, v_weights.data, t, cfg);
  adam_step(biases.data, d_biases, m_biases.data, v_biases.data, t, cfg);
}

}  // namespace bcp::nn
