#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lazyconv/network.hpp"

namespace lazyconv {

struct ByteExtent {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

/// Where the weight columns fed by each conv filter live inside weights.bin.
struct WeightIndex {
  std::filesystem::path weights_path;
  std::string layer_name;
  Index in_dim = 0;
  Index out_dim = 0;
  Index group = 1;    // flattened inputs per conv filter (spatial size entering flatten)
  Index filters = 0;  // conv filters feeding the layer; filters * group == in_dim
  WeightLayout layout = WeightLayout::RowMajor;
  /// Per filter: one extent for column-group layout, out_dim extents (one per row) for row-major.
  std::vector<std::vector<ByteExtent>> extents;
  ByteExtent bias;

  std::uint64_t weight_bytes() const { return static_cast<std::uint64_t>(in_dim * out_dim) * 4; }
};

/// File reader that counts every byte it delivers.
class CountingReader {
 public:
  explicit CountingReader(const std::filesystem::path& path);

  void read(std::uint64_t offset, std::uint64_t length, float* dest);
  std::uint64_t bytes_read() const { return bytes_; }
  std::uint64_t reads() const { return reads_; }
  void reset_counters() { bytes_ = reads_ = 0; }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
  std::uint64_t bytes_ = 0;
  std::uint64_t reads_ = 0;
};

/// Indexes a dense layer fed through flatten by a conv layer (optionally via
/// relu / maxpool, which preserve channels and map zero channels to zero).
WeightIndex build_weight_index(const std::filesystem::path& model_dir, const std::string& dense_layer);

/// Dense layer that loads only the weight columns of the filters in `mask`.
/// Every input outside those filters' groups must be exactly zero.
/// Accumulates in ascending input order, matching dense().
Vector<float> dense_lazy(const Eigen::Ref<const Vector<float>>& x, const FilterMask& mask, const WeightIndex& index,
                         const Eigen::Ref<const Vector<float>>& bias, CountingReader& reader);

/// Weight bytes needed with `active_fraction` of the feeding filters live:
/// 4 * out_dim * group * kept_count(active_fraction, in_dim / group).
std::uint64_t memory_footprint(Index in_dim, Index out_dim, double active_fraction, Index group = 1);

struct MemoryReport {
  std::uint64_t full_bytes = 0;
  double loaded_bytes = 0.0;  // mean per sample
  double ratio = 0.0;
  Index samples = 0;
  double max_abs_diff = 0.0;  // dense_lazy vs in-memory dense
};

std::string memory_report_json(const MemoryReport& report, const std::string& layer);

}  // namespace lazyconv
