#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "bcp/common.hpp"
#include "bcp/dataset.hpp"
#include "bcp/envsim.hpp"
#include "bcp/nncore.hpp"

namespace bcp::testing {

inline nn::Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  nn::Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline envsim::Observation random_obs(int h, int w, Rng& rng) {
  envsim::Observation obs(h, w);
  for (auto& b : obs.pixels) b = static_cast<std::uint8_t>(rng.below(256));
  return obs;
}

/// Dataset of `n_episodes` episodes of random frames with random actions.
inline data::Dataset random_dataset(int h, int w, int n_episodes, int max_len, Rng& rng) {
  data::Dataset d;
  d.height = h;
  d.width = w;
  for (int e = 0; e < n_episodes; ++e) {
    const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len)));
    std::vector<data::DemoRecord> ep;
    for (int s = 0; s < len; ++s) {
      data::DemoRecord r;
      r.observation = random_obs(h, w, rng);
      r.action = envsim::action_from_index(static_cast<int>(rng.below(5)));
      r.reward = static_cast<float>(rng.uniform(-1.0, 40.0));
      ep.push_back(std::move(r));
    }
    d.episodes.push_back(std::move(ep));
  }
  return d;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bcp_unit_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double rel_error(double a, double b) { return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)}); }

}  // namespace bcp::testing
