// Vectorized kernels against the serial reference, and batched inference and
// training at 1 vs all threads.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <vector>

#include "bcp/expert.hpp"
#include "bcp/nncore.hpp"
#include "bcp/nncore_reference.hpp"
#include "bcp/policy.hpp"

using namespace bcp;

namespace {

struct ConvShape {
  int c_in, c_out, size;
};

// The three conv layers of the default 64x64 policy.
constexpr ConvShape kLayers[] = {{3, 8, 64}, {8, 16, 32}, {16, 32, 16}};

struct ConvData {
  std::vector<float> in, in_pad, w, b, out, d_out, d_w, d_b, d_in, pad;

  explicit ConvData(const ConvShape& s) {
    Rng rng(1);
    auto fill = [&](std::vector<float>& v, std::size_t n) {
      v.resize(n);
      for (float& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    };
    const std::size_t hw = static_cast<std::size_t>(s.size) * s.size;
    const std::size_t padded = static_cast<std::size_t>(s.size + 2) * (s.size + 2);
    fill(in, s.c_in * hw);
    fill(w, static_cast<std::size_t>(s.c_out) * s.c_in * 9);
    fill(b, s.c_out);
    fill(d_out, s.c_out * hw);
    out.resize(s.c_out * hw);
    d_w.resize(w.size());
    d_b.resize(b.size());
    d_in.resize(in.size());
    in_pad.resize(s.c_in * padded);
    pad.resize(std::max(s.c_in, s.c_out) * padded);
    nn::kernels::pad1(in.data(), s.c_in, s.size, s.size, in_pad.data());
  }
};

void conv_args(benchmark::internal::Benchmark* b) {
  for (int i = 0; i < 3; ++i) b->Arg(i);
}

void BM_ConvForwardKernel(benchmark::State& st) {
  const ConvShape s = kLayers[st.range(0)];
  ConvData d(s);
  for (auto _ : st) {
    nn::kernels::conv3x3_forward(d.in.data(), s.c_in, s.size, s.size, d.w.data(), d.b.data(), s.c_out, d.out.data(),
                                 d.pad.data());
    benchmark::DoNotOptimize(d.out.data());
  }
}
BENCHMARK(BM_ConvForwardKernel)->Apply(conv_args);

void BM_ConvForwardReference(benchmark::State& st) {
  const ConvShape s = kLayers[st.range(0)];
  ConvData d(s);
  for (auto _ : st) {
    nn::ref::conv3x3_forward(d.in.data(), s.c_in, s.size, s.size, d.w.data(), d.b.data(), s.c_out, d.out.data());
    benchmark::DoNotOptimize(d.out.data());
  }
}
BENCHMARK(BM_ConvForwardReference)->Apply(conv_args);

void BM_ConvBackwardKernel(benchmark::State& st) {
  const ConvShape s = kLayers[st.range(0)];
  ConvData d(s);
  for (auto _ : st) {
    nn::kernels::conv3x3_backward_params(d.d_out.data(), d.in_pad.data(), s.c_in, s.size, s.size, s.c_out,
                                         d.d_w.data(), d.d_b.data());
    nn::kernels::conv3x3_backward_input(d.d_out.data(), d.w.data(), s.c_in, s.size, s.size, s.c_out, d.d_in.data(),
                                        d.pad.data());
    benchmark::DoNotOptimize(d.d_in.data());
  }
}
BENCHMARK(BM_ConvBackwardKernel)->Apply(conv_args);

void BM_ConvBackwardReference(benchmark::State& st) {
  const ConvShape s = kLayers[st.range(0)];
  ConvData d(s);
  for (auto _ : st) {
    nn::ref::conv3x3_backward_params(d.d_out.data(), d.in.data(), s.c_in, s.size, s.size, s.c_out, d.d_w.data(),
                                     d.d_b.data());
    nn::ref::conv3x3_backward_input(d.d_out.data(), d.w.data(), s.c_in, s.size, s.size, s.c_out, d.d_in.data());
    benchmark::DoNotOptimize(d.d_in.data());
  }
}
BENCHMARK(BM_ConvBackwardReference)->Apply(conv_args);

const data::Dataset& demos() {
  static const data::Dataset d = [] {
    expert::EnvConfig env;
    return expert::collect_demos(env, expert::ExpertParams{}, 2, 1);
  }();
  return d;
}

// range(0) = OpenMP threads (0 = runtime default)
void thread_args(benchmark::internal::Benchmark* b) {
  b->Arg(1);
  if (omp_get_num_procs() > 1) b->Arg(omp_get_num_procs());
  b->UseRealTime();
}

void BM_ForwardBatch(benchmark::State& st) {
  const int keep = omp_get_max_threads();
  omp_set_num_threads(static_cast<int>(st.range(0)));
  const auto& d = demos();
  std::vector<const envsim::Observation*> frames;
  for (const auto& ep : d.episodes)
    for (const auto& r : ep)
      if (frames.size() < 256) frames.push_back(&r.observation);
  const auto net = policy::init_policy(d.height, d.width, policy::Widths{}, 1);
  for (auto _ : st) benchmark::DoNotOptimize(policy::forward_batch(net, frames));
  st.SetItemsProcessed(st.iterations() * static_cast<long>(frames.size()));
  omp_set_num_threads(keep);
}
BENCHMARK(BM_ForwardBatch)->Apply(thread_args)->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& st) {
  const int keep = omp_get_max_threads();
  omp_set_num_threads(static_cast<int>(st.range(0)));
  const auto& d = demos();
  policy::TrainConfig cfg;
  cfg.epochs = 1;
  for (auto _ : st) {
    auto net = policy::init_policy(d.height, d.width, policy::Widths{}, 1);
    benchmark::DoNotOptimize(policy::train_bc(net, d, cfg));
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(d.total_frames()));
  omp_set_num_threads(keep);
}
BENCHMARK(BM_TrainEpoch)->Apply(thread_args)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
