#pragma once

// Minimal numeric core for the policy CNN: same-padded 3x3 convolution,
// 2x2 max pooling, ReLU, dense layers, softmax cross-entropy, and Adam.
//
// Two tiers live here. The Tensor-level functions are value-in/value-out and
// check shapes; they are what tests and tools call. The `kernels` namespace
// holds the raw-buffer routines the policy runs in its training loop, and
// `ref` (nncore_reference.hpp) holds plain serial versions kept as a baseline
// for tests and benchmarks.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bcp/common.hpp"

namespace bcp::nn {

struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> extents, float fill = 0.0f);

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const { return data.size(); }
  bool empty() const { return data.empty(); }
  std::string shape_string() const;

  bool operator==(const Tensor&) const = default;
};

std::size_t product(const std::vector<int>& extents);

/// Throws ShapeError naming `what`, the expected and the actual shapes.
void require_shape(const Tensor& t, const std::vector<int>& expected, const char* what);
/// Throws ContractError on NaN or Inf.
void require_finite(std::span<const float> values, const char* what);

// ---------------------------------------------------------------------------
// Tensor-level operations (single sample, [C,H,W] layout)

Tensor conv3x3_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct ConvCache {
  Tensor input;  // empty = no forward pass recorded
};
struct ConvGrads {
  Tensor d_input;
  Tensor d_weights;
  Tensor d_bias;
};
ConvGrads conv3x3_backward(const Tensor& d_output, const ConvCache& cache, const Tensor& weights);

Tensor relu_forward(const Tensor& input);
/// Gradient is zero wherever the cached input is <= 0.
Tensor relu_backward(const Tensor& d_output, const Tensor& cached_input);

struct PoolCache {
  std::vector<int> input_shape;
  std::vector<std::int32_t> argmax;  // flat input offset chosen for each output cell
};
struct PoolResult {
  Tensor output;
  PoolCache cache;
};
/// Non-overlapping 2x2 max. Ties go to the first cell in (row, col) order.
PoolResult maxpool2x2(const Tensor& input);
Tensor maxpool2x2_backward(const Tensor& d_output, const PoolCache& cache);

/// weights [out, in], bias [out], x [in].
Tensor linear_forward(const Tensor& x, const Tensor& weights, const Tensor& bias);
struct LinearCache {
  Tensor input;
};
struct LinearGrads {
  Tensor d_input;
  Tensor d_weights;
  Tensor d_bias;
};
LinearGrads linear_backward(const Tensor& d_output, const LinearCache& cache, const Tensor& weights);

struct SoftmaxCE {
  double loss = 0.0;
  std::vector<double> probs;
  std::vector<double> grad_logits;  // probs - onehot(label)
};
SoftmaxCE softmax_ce(std::span<const float> logits, int label);
/// Softmax alone, max-subtracted.
std::vector<double> softmax(std::span<const float> logits);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update; `t` is the 1-based step number.
void adam_step(std::span<float> params, std::span<const float> grads, std::span<float> m, std::span<float> v,
               std::int64_t t, const AdamConfig& cfg);
void adam_step(Tensor& params, const Tensor& grads, Tensor& m, Tensor& v, std::int64_t t, const AdamConfig& cfg);

enum class LayerKind : std::uint8_t { Conv3x3, MaxPool2x2, ReLU, Linear, SoftmaxCE };

/// Trainable state of one parametrized layer plus its optimizer moments.
struct LayerState {
  LayerKind kind = LayerKind::Linear;
  Tensor weights;
  Tensor biases;
  Tensor m_weights, v_weights;
  Tensor m_biases, v_biases;
  std::int64_t t = 0;

  static LayerState conv3x3(int c_in, int c_out);
  static LayerState linear(int in, int out);

  /// Kaiming-uniform weights with bound sqrt(6 / fan_in); zero biases.
  void init(Rng& rng);
  int fan_in() const;
  void apply_adam(std::span<const float> d_weights, std::span<const float> d_biases, const AdamConfig& cfg);
};

// ---------------------------------------------------------------------------
// Raw-buffer kernels. All buffers are dense row-major [C,H,W]; `pad` scratch
// must hold (C)(H+2)(W+2) floats for the channel count of the padded tensor.

namespace kernels {

void pad1(const float* in, int c, int h, int w, float* pad);

void conv3x3_forward(const float* in, int c_in, int h, int w, const float* weights, const float* bias, int c_out,
                     float* out, float* pad);

/// Accumulates into d_weights [c_out,c_in,3,3] and d_bias [c_out]. `in_pad` is
/// the padded forward input.
void conv3x3_backward_params(const float* d_out, const float* in_pad, int c_in, int h, int w, int c_out,
                             float* d_weights, float* d_bias);

/// Overwrites d_in [c_in,h,w]. `pad` is scratch for the padded d_out.
void conv3x3_backward_input(const float* d_out, const float* weights, int c_in, int h, int w, int c_out, float* d_in,
                            float* pad);

void relu_inplace(float* x, std::size_t n);
/// g *= (activation > 0)
void relu_backward_inplace(float* g, const float* activation, std::size_t n);

void maxpool2x2_forward(const float* in, int c, int h, int w, float* out, std::int32_t* argmax);
/// Overwrites d_in (size c*h*w).
void maxpool2x2_backward(const float* d_out, const std::int32_t* argmax, std::size_t n_out, float* d_in,
                         std::size_t n_in);

void linear_forward(const float* x, int in, const float* weights, const float* bias, int out, float* y);
/// Accumulates d_weights, d_bias; writes d_x unless null.
void linear_backward(const float* d_y, const float* x, int in, const float* weights, int out, float* d_weights,
                     float* d_bias, float* d_x);

}  // namespace kernels

}  // namespace bcp::nn
