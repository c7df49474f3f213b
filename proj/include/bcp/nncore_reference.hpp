#pragma once

// Plain serial versions of the hot kernels: direct loops with explicit bounds
// checks, no padding buffers, no vectorization hints. Same signatures as
// bcp::nn::kernels where it makes sense so tests and benchmarks can swap them.

#include <cstdint>

namespace bcp::nn::ref {

void conv3x3_forward(const float* in, int c_in, int h, int w, const float* weights, const float* bias, int c_out,
                     float* out);

/// `in` is the unpadded forward input. Accumulates into d_weights and d_bias.
void conv3x3_backward_params(const float* d_out, const float* in, int c_in, int h, int w, int c_out,
                             float* d_weights, float* d_bias);

void conv3x3_backward_input(const float* d_out, const float* weights, int c_in, int h, int w, int c_out, float* d_in);

void maxpool2x2_forward(const float* in, int c, int h, int w, float* out, std::int32_t* argmax);

void linear_forward(const float* x, int in, const float* weights, const float* bias, int out, float* y);

}  // namespace bcp::nn::ref
