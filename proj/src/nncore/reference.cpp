#include "bcp/nncore_reference.hpp"

namespace bcp::nn::ref {

void conv3x3_forward(const float* in, int c_in, int h, int w, const float* weights, const float* bias, int c_out,
                     float* out) {
  for (int co = 0; co < c_out; ++co) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        float s = bias[co];
        for (int ci = 0; ci < c_in; ++ci) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = y + ky - 1;
              const int ix = x + kx - 1;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              s += weights[((co * c_in + ci) * 3 + ky) * 3 + kx] * in[(ci * h + iy) * w + ix];
            }
          }
        }
        out[(co * h + y) * w + x] = s;
      }
    }
  }
}

void conv3x3_backward_params(const float* d_out, const float* in, int c_in, int h, int w, int c_out,
                             float* d_weights, float* d_bias) {
  for (int co = 0; co < c_out; ++co) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float g = d_out[(co * h + y) * w + x];
        d_bias[co] += g;
        for (int ci = 0; ci < c_in; ++ci) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = y + ky - 1;
              const int ix = x + kx - 1;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              d_weights[((co * c_in + ci) * 3 + ky) * 3 + kx] += g * in[(ci * h + iy) * w + ix];
            }
          }
        }
      }
    }
  }
}

void conv3x3_backward_input(const float* d_out, const float* weights, int c_in, int h, int w, int c_out, float* d_in) {
  for (int i = 0; i < c_in * h * w; ++i) d_in[i] = 0.0f;
  for (int co = 0; co < c_out; ++co) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float g = d_out[(co * h + y) * w + x];
        for (int ci = 0; ci < c_in; ++ci) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = y + ky - 1;
              const int ix = x + kx - 1;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              d_in[(ci * h + iy) * w + ix] += g * weights[((co * c_in + ci) * 3 + ky) * 3 + kx];
            }
          }
        }
      }
    }
  }
}

void maxpool2x2_forward(const float* in, int c, int h, int w, float* out, std::int32_t* argmax) {
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h / 2; ++y) {
      for (int x = 0; x < w / 2; ++x) {
        std::int32_t best = -1;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::int32_t q = (ch * h + 2 * y + dy) * w + 2 * x + dx;
            if (best < 0 || in[q] > in[best]) best = q;
          }
        }
        out[(ch * (h / 2) + y) * (w / 2) + x] = in[best];
        argmax[(ch * (h / 2) + y) * (w / 2) + x] = best;
      }
    }
  }
}

void linear_forward(const float* x, int in, const float* weights, const float* bias, int out, float* y) {
  for (int o = 0; o < out; ++o) {
    float s = bias[o];
    for (int i = 0; i < in; ++i) s += weights[o * in + i] * x[i];
    y[o] = s;
  }
}

}  // namespace bcp::nn::ref
