#include <algorithm>
#include <cstring>
#include <vector>

#include "bcp/nncore.hpp"

// Per-sample kernels. Parallelism lives one level up (minibatch shards in
// policy training, frames in batched inference); these routines are written
// so the innermost x loops vectorize.

namespace bcp::nn::kernels {

void pad1(const float* in, int c, int h, int w, float* pad) {
  const int pw = w + 2;
  const int ph = h + 2;
  std::memset(pad, 0, sizeof(float) * static_cast<std::size_t>(c) * ph * pw);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      std::memcpy(pad + (static_cast<std::size_t>(ch) * ph + y + 1) * pw + 1,
                  in + (static_cast<std::size_t>(ch) * h + y) * w, sizeof(float) * static_cast<std::size_t>(w));
    }
  }
}

namespace {

// Portable fixed-width vectors; the compiler lowers them to whatever SIMD
// the target offers.
constexpr int kLanes = 16;
typedef float vf __attribute__((vector_size(kLanes * sizeof(float))));

inline vf loadu(const float* p) {
  vf v;
  __builtin_memcpy(&v, p, sizeof(v));
  return v;
}
inline void storeu(float* p, vf v) { __builtin_memcpy(p, &v, sizeof(v)); }
typedef int vi __attribute__((vector_size(kLanes * sizeof(int))));

inline vf swizzle(vf v, vi m) {
#if defined(__clang__)
  vf r;
  for (int l = 0; l < kLanes; ++l) r[l] = v[m[l]];
  return r;
#else
  return __builtin_shuffle(v, m);
#endif
}

inline float hsum(vf v) {
  v += swizzle(v, vi{8, 9, 10, 11, 12, 13, 14, 15, 0, 1, 2, 3, 4, 5, 6, 7});
  v += swizzle(v, vi{4, 5, 6, 7, 0, 1, 2, 3, 4, 5, 6, 7, 0, 1, 2, 3});
  v += swizzle(v, vi{2, 3, 0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3, 0, 1});
  v += swizzle(v, vi{1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0});
  return v[0];
}

constexpr int kOutBlock = 8;

// out[d] += sum_s k(d,s) (*) pad[s] for a block of NB destination planes.
// `k` has layout [n_dst][n_src][9]; `pad` is [n_src][h+2][w+2].
template <int NB>
void conv_block(const float* pad, int n_src, int h, int w, const float* k, int d0, float* out) {
  const int pw = w + 2;
  const std::size_t plane = static_cast<std::size_t>(h + 2) * pw;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const int w_main = w - w % kLanes;
  for (int y = 0; y < h; ++y) {
    for (int x0 = 0; x0 < w_main; x0 += kLanes) {
      vf acc[NB];
      for (int b = 0; b < NB; ++b) acc[b] = loadu(out + (d0 + b) * hw + static_cast<std::size_t>(y) * w + x0);
      for (int s = 0; s < n_src; ++s) {
        const float* r = pad + s * plane + static_cast<std::size_t>(y) * pw + x0;
        vf in[9];
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) in[ky * 3 + kx] = loadu(r + ky * pw + kx);
        }
        for (int b = 0; b < NB; ++b) {
          const float* kk = k + (static_cast<std::size_t>(d0 + b) * n_src + s) * 9;
          for (int t = 0; t < 9; ++t) acc[b] += kk[t] * in[t];
        }
      }
      for (int b = 0; b < NB; ++b) storeu(out + (d0 + b) * hw + static_cast<std::size_t>(y) * w + x0, acc[b]);
    }
    for (int x = w_main; x < w; ++x) {
      for (int b = 0; b < NB; ++b) {
        float a = out[(d0 + b) * hw + static_cast<std::size_t>(y) * w + x];
        for (int s = 0; s < n_src; ++s) {
          const float* r = pad + s * plane + static_cast<std::size_t>(y) * pw + x;
          const float* kk = k + (static_cast<std::size_t>(d0 + b) * n_src + s) * 9;
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) a += kk[ky * 3 + kx] * r[ky * pw + kx];
          }
        }
        out[(d0 + b) * hw + static_cast<std::size_t>(y) * w + x] = a;
      }
    }
  }
}

void conv_planes(const float* pad, int n_src, int h, int w, int n_dst, const float* k, float* out) {
  int d = 0;
  for (; d + kOutBlock <= n_dst; d += kOutBlock) conv_block<kOutBlock>(pad, n_src, h, w, k, d, out);
  for (; d < n_dst; ++d) conv_block<1>(pad, n_src, h, w, k, d, out);
}

// Nine named accumulators so the compiler keeps them in registers.
struct Taps {
  vf t0{}, t1{}, t2{}, t3{}, t4{}, t5{}, t6{}, t7{}, t8{};

  void fma(vf g, const float* r, int pw) {
    t0 += g * loadu(r);
    t1 += g * loadu(r + 1);
    t2 += g * loadu(r + 2);
    t3 += g * loadu(r + pw);
    t4 += g * loadu(r + pw + 1);
    t5 += g * loadu(r + pw + 2);
    t6 += g * loadu(r + 2 * pw);
    t7 += g * loadu(r + 2 * pw + 1);
    t8 += g * loadu(r + 2 * pw + 2);
  }
  void flush(float* dw) const {
    dw[0] += hsum(t0);
    dw[1] += hsum(t1);
    dw[2] += hsum(t2);
    dw[3] += hsum(t3);
    dw[4] += hsum(t4);
    dw[5] += hsum(t5);
    dw[6] += hsum(t6);
    dw[7] += hsum(t7);
    dw[8] += hsum(t8);
  }
};

// d_weights[co][ci] += sum_{y,x} g[co][y][x] * pad[ci][y+ky][x+kx] for one
// or two consecutive output channels.
template <int NB>
void params_block(const float* d_out, const float* in_pad, int c_in, int h, int w, int co0, float* d_weights) {
  static_assert(NB == 1 || NB == 2);
  const int pw = w + 2;
  const std::size_t plane = static_cast<std::size_t>(h + 2) * pw;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const int w_main = w - w % kLanes;
  const float* g0 = d_out + co0 * hw;
  const float* g1 = NB == 2 ? g0 + hw : g0;
  for (int ci = 0; ci < c_in; ++ci) {
    const float* p = in_pad + ci * plane;
    Taps a, b;
    for (int y = 0; y < h; ++y) {
      const float* r = p + static_cast<std::size_t>(y) * pw;
      const std::size_t row = static_cast<std::size_t>(y) * w;
      for (int x0 = 0; x0 < w_main; x0 += kLanes) {
        a.fma(loadu(g0 + row + x0), r + x0, pw);
        if constexpr (NB == 2) b.fma(loadu(g1 + row + x0), r + x0, pw);
      }
    }
    float* dw0 = d_weights + (static_cast<std::size_t>(co0) * c_in + ci) * 9;
    float* dw1 = dw0 + static_cast<std::size_t>(c_in) * 9;
    a.flush(dw0);
    if constexpr (NB == 2) b.flush(dw1);
    if (w_main == w) continue;
    for (int y = 0; y < h; ++y) {
      const float* r = p + static_cast<std::size_t>(y) * pw;
      const std::size_t row = static_cast<std::size_t>(y) * w;
      for (int x = w_main; x < w; ++x) {
        for (int k = 0; k < 9; ++k) {
          const float v = r[(k / 3) * pw + x + k % 3];
          dw0[k] += g0[row + x] * v;
          if constexpr (NB == 2) dw1[k] += g1[row + x] * v;
        }
      }
    }
  }
}

}  // namespace

void conv3x3_forward(const float* in, int c_in, int h, int w, const float* weights, const float* bias, int c_out,
                     float* out, float* pad) {
  pad1(in, c_in, h, w, pad);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int co = 0; co < c_out; ++co) std::fill_n(out + co * hw, hw, bias[co]);
  conv_planes(pad, c_in, h, w, c_out, weights, out);
}

void conv3x3_backward_input(const float* d_out, const float* weights, int c_in, int h, int w, int c_out, float* d_in,
                            float* pad) {
  // Transposed, 180-degree-rotated kernels: [c_in][c_out][9].
  thread_local std::vector<float> flipped;
  flipped.resize(static_cast<std::size_t>(c_in) * c_out * 9);
  for (int co = 0; co < c_out; ++co) {
    for (int ci = 0; ci < c_in; ++ci) {
      const float* src = weights + (static_cast<std::size_t>(co) * c_in + ci) * 9;
      float* dst = flipped.data() + (static_cast<std::size_t>(ci) * c_out + co) * 9;
      for (int t = 0; t < 9; ++t) dst[t] = src[8 - t];
    }
  }
  pad1(d_out, c_out, h, w, pad);
  std::fill_n(d_in, static_cast<std::size_t>(c_in) * h * w, 0.0f);
  conv_planes(pad, c_out, h, w, c_in, flipped.data(), d_in);
}

void conv3x3_backward_params(const float* d_out, const float* in_pad, int c_in, int h, int w, int c_out,
                             float* d_weights, float* d_bias) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int co = 0; co < c_out; ++co) {
    const float* g = d_out + co * hw;
    float bsum = 0.0f;
    for (std::size_t i = 0; i < hw; ++i) bsum += g[i];
    d_bias[co] += bsum;
  }
  int co = 0;
  for (; co + 2 <= c_out; co += 2) params_block<2>(d_out, in_pad, c_in, h, w, co, d_weights);
  for (; co < c_out; ++co) params_block<1>(d_out, in_pad, c_in, h, w, co, d_weights);
}

void relu_inplace(float* x, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward_inplace(float* g, const float* activation, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) g[i] = activation[i] > 0.0f ? g[i] : 0.0f;
}

void maxpool2x2_forward(const float* in, int c, int h, int w, float* out, std::int32_t* argmax) {
  const int oh = h / 2;
  const int ow = w / 2;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      const std::int32_t base = (ch * h + 2 * y) * w;
      const float* __restrict top = in + base;
      const float* __restrict bot = top + w;
      float* __restrict o = out + (static_cast<std::size_t>(ch) * oh + y) * ow;
      std::int32_t* __restrict am = argmax + (static_cast<std::size_t>(ch) * oh + y) * ow;
      // Ties go to the earliest cell in (0,0), (0,1), (1,0), (1,1) order.
#pragma omp simd
      for (int x = 0; x < ow; ++x) {
        float v = top[2 * x];
        std::int32_t best = base + 2 * x;
        const float v1 = top[2 * x + 1];
        best = v1 > v ? base + 2 * x + 1 : best;
        v = v1 > v ? v1 : v;
        const float v2 = bot[2 * x];
        best = v2 > v ? base + w + 2 * x : best;
        v = v2 > v ? v2 : v;
        const float v3 = bot[2 * x + 1];
        best = v3 > v ? base + w + 2 * x + 1 : best;
        v = v3 > v ? v3 : v;
        o[x] = v;
        am[x] = best;
      }
    }
  }
}

void maxpool2x2_backward(const float* d_out, const std::int32_t* argmax, std::size_t n_out, float* d_in,
                         std::size_t n_in) {
  std::fill_n(d_in, n_in, 0.0f);
  for (std::size_t i = 0; i < n_out; ++i) d_in[argmax[i]] += d_out[i];
}

void linear_forward(const float* x, int in, const float* weights, const float* bias, int out, float* y) {
  for (int o = 0; o < out; ++o) {
    const float* wr = weights + static_cast<std::size_t>(o) * in;
    float s = 0.0f;
#pragma omp simd reduction(+ : s)
    for (int i = 0; i < in; ++i) s += wr[i] * x[i];
    y[o] = s + bias[o];
  }
}

void linear_backward(const float* d_y, const float* x, int in, const float* weights, int out, float* d_weights,
                     float* d_bias, float* d_x) {
  if (d_x) std::fill_n(d_x, in, 0.0f);
  for (int o = 0; o < out; ++o) {
    const float g = d_y[o];
    d_bias[o] += g;
    if (g == 0.0f) continue;
    float* dw = d_weights + static_cast<std::size_t>(o) * in;
    const float* wr = weights + static_cast<std::size_t>(o) * in;
#pragma omp simd
    for (int i = 0; i < in; ++i) dw[i] += g * x[i];
    if (d_x) {
#pragma omp simd
      for (int i = 0; i < in; ++i) d_x[i] += g * wr[i];
    }
  }
}

}  // namespace bcp::nn::kernels
