#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "lazyconv/network.hpp"

namespace lazyconv {

/// Portable seeded generator.
///
/// Each (seed, stream) pair seeds an independent std::mt19937_64 through the
/// SplitMix64 finalizer of `seed + stream * 0x9E3779B97F4A7C15`. Floating-point
/// draws are built from raw 64-bit outputs (53-bit mantissa for uniforms,
/// Box-Muller for normals), so values do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next() { return engine_(); }
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Stream ids used by gen_synthetic.
inline constexpr std::uint64_t kStreamLayerBase = 1;       // + layer index
inline constexpr std::uint64_t kStreamPrototypes = 1'000'000;
inline constexpr std::uint64_t kStreamDataset = 2'000'000;

struct SyntheticSpec {
  Shape3 input_shape{3, 32, 32};
  std::vector<Index> conv_filters{16, 32, 32, 64};
  std::vector<Index> pool_after{2, 4};  // 1-based conv positions followed by a 2x2/2 max-pool
  Index kernel = 3;
  Index padding = 1;
  std::vector<Index> dense_dims{64, 10};  // hidden ... output; relu between dense layers
  bool softmax_head = false;
  bool column_group_layout = true;  // lazily-loadable layout for the flatten-fed dense layer
  Index dataset_size = 1000;
  std::uint64_t seed = 42;
  // Inputs are noisy, randomly scaled copies of smooth class prototypes.
  Index prototypes = 10;
  double noise = 0.3;

  /// Reference configuration used by the acceptance suite.
  static SyntheticSpec reference() { return {}; }
};

/// Builds a seeded VGG-style network and a self-labeled dataset (labels are the
/// network's own argmax, so eager accuracy is exactly 1).
std::pair<Network, Dataset> gen_synthetic(const SyntheticSpec& spec);

/// Network only (weights identical to gen_synthetic for the same spec).
Network gen_synthetic_network(const SyntheticSpec& spec);

}  // namespace lazyconv
