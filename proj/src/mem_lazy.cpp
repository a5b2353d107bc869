#include "lazyconv/mem_lazy.hpp"

#include <bit>
#include <cstring>

#include <json.hpp>

#include "lazyconv/lazy_eval.hpp"
#include "lazyconv/model_io.hpp"

namespace lazyconv {

namespace fs = std::filesystem;

CountingReader::CountingReader(const fs::path& path) : in_(path, std::ios::binary), path_(path) {
  if (!in_) throw MissingFileError("cannot open " + path.string());
}

void CountingReader::read(std::uint64_t offset, std::uint64_t length, float* dest) {
  if (length % 4 != 0) throw ContractError("weight reads must be whole floats");
  in_.seekg(static_cast<std::streamoff>(offset));
  in_.read(reinterpret_cast<char*>(dest), static_cast<std::streamsize>(length));
  if (!in_) {
    in_.clear();
    throw std::runtime_error("short read from " + path_.string() + " at offset " + std::to_string(offset));
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (std::uint64_t i = 0; i < length / 4; ++i) {
      std::uint32_t w;
      std::memcpy(&w, dest + i, 4);
      w = ((w & 0xffu) << 24) | ((w & 0xff00u) << 8) | ((w >> 8) & 0xff00u) | (w >> 24);
      std::memcpy(dest + i, &w, 4);
    }
  }
  bytes_ += length;
  ++reads_;
}

WeightIndex build_weight_index(const fs::path& model_dir, const std::string& dense_layer) {
  const std::string text = io::read_text(model_dir / "manifest.json");
  const Network net = load_model(model_dir);
  const std::size_t idx = net.index_of(dense_layer);
  if (net.layer(idx).kind() != LayerKind::Dense) throw ContractError("layer '" + dense_layer + "' is not dense");
  if (idx == 0 || net.layer(idx - 1).kind() != LayerKind::Flatten)
    throw ContractError("dense layer '" + dense_layer + "' is not fed by flatten");
  std::size_t k = idx - 1;
  const Index group = net.input_shape_of(k).plane();
  while (k > 0) {
    --k;
    const LayerKind kind = net.layer(k).kind();
    if (kind == LayerKind::Conv) break;
    if (kind != LayerKind::Relu && kind != LayerKind::MaxPool)
      throw ContractError("dense layer '" + dense_layer + "' is not conv-fed (found " + to_string(kind) + ")");
  }
  if (!net.layer(k).is_conv()) throw ContractError("dense layer '" + dense_layer + "' is not conv-fed");

  const auto& d = net.layer(idx).dense();
  WeightIndex w;
  w.weights_path = model_dir / "weights.bin";
  w.layer_name = dense_layer;
  w.in_dim = d.layer.in_dim;
  w.out_dim = d.layer.out_dim;
  w.group = group;
  w.filters = net.layer(k).conv().out_filters;
  w.layout = d.layout;
  if (w.filters * w.group != w.in_dim) throw ContractError("filter groups do not cover the dense input");
  if (d.layout == WeightLayout::ColumnGroup && d.group != group)
    throw ContractError("stored column group size does not match the feeding conv's spatial size");

  const auto manifest = nlohmann::json::parse(text);
  std::uint64_t base = 0;
  for (const auto& e : manifest.at("layers"))
    if (e.at("name").get<std::string>() == dense_layer) {
      base = e.at("weights").at("offset").get<std::uint64_t>() * 4;
      w.bias = {e.at("bias").at("offset").get<std::uint64_t>() * 4,
                e.at("bias").at("count").get<std::uint64_t>() * 4};
    }

  const auto g = static_cast<std::uint64_t>(group);
  const auto rows = static_cast<std::uint64_t>(w.out_dim);
  const auto cols = static_cast<std::uint64_t>(w.in_dim);
  w.extents.resize(static_cast<std::size_t>(w.filters));
  for (std::uint64_t f = 0; f < static_cast<std::uint64_t>(w.filters); ++f) {
    auto& ext = w.extents[f];
    if (w.layout == WeightLayout::ColumnGroup) {
      ext.push_back({base + f * rows * g * 4, rows * g * 4});
    } else {
      for (std::uint64_t r = 0; r < rows; ++r) ext.push_back({base + (r * cols + f * g) * 4, g * 4});
    }
  }
  return w;
}

Vector<float> dense_lazy(const Eigen::Ref<const Vector<float>>& x, const FilterMask& mask, const WeightIndex& index,
                         const Eigen::Ref<const Vector<float>>& bias, CountingReader& reader) {
  if (x.size() != index.in_dim) throw DimensionError("dense_lazy: input length != in_dim");
  if (bias.size() != index.out_dim) throw DimensionError("dense_lazy: bias length != out_dim");
  if (mask.layer_size() != index.filters) throw DimensionError("dense_lazy: mask size != feeding filter count");
  const Index g = index.group;
  for (Index f = 0; f < index.filters; ++f) {
    if (mask.contains(f)) continue;
    for (Index t = 0; t < g; ++t)
      if (x[f * g + t] != 0.0f)
        throw ContractError("dense_lazy: input " + std::to_string(f * g + t) + " of masked-out filter " +
                            std::to_string(f) + " is non-zero");
  }

  // strips[k] holds the out_dim x g block of the k-th active filter, row-major
  const Index rows = index.out_dim;
  std::vector<float> strips(static_cast<std::size_t>(mask.count() * rows * g));
  for (Index k = 0; k < mask.count(); ++k) {
    float* dst = strips.data() + k * rows * g;
    for (const ByteExtent& e : index.extents[static_cast<std::size_t>(mask.active()[static_cast<std::size_t>(k)])]) {
      reader.read(e.offset, e.length, dst);
      dst += e.length / 4;
    }
  }

  Vector<float> y(rows);
  for (Index j = 0; j < rows; ++j) {
    float acc = 0.0f;
    for (Index k = 0; k < mask.count(); ++k) {
      const Index col0 = mask.active()[static_cast<std::size_t>(k)] * g;
      const float* w = strips.data() + (k * rows + j) * g;
      for (Index t = 0; t < g; ++t) acc += w[t] * x[col0 + t];
    }
    y[j] = acc + bias[j];
  }
  return y;
}

std::uint64_t memory_footprint(Index in_dim, Index out_dim, double active_fraction, Index group) {
  if (group < 1 || in_dim % group != 0) throw ContractError("group must divide in_dim");
  if (!(active_fraction >= 0.0 && active_fraction <= 1.0)) throw ContractError("active fraction outside [0, 1]");
  const Index filters = kept_count(active_fraction, in_dim / group);
  return 4ULL * static_cast<std::uint64_t>(out_dim) * static_cast<std::uint64_t>(filters * group);
}

std::string memory_report_json(const MemoryReport& r, const std::string& layer) {
  nlohmann::ordered_json j;
  j["layer"] = layer;
  j["samples"] = r.samples;
  j["full_bytes"] = r.full_bytes;
  j["loaded_bytes"] = r.loaded_bytes;
  j["ratio"] = r.ratio;
  j["max_abs_diff"] = r.max_abs_diff;
  return j.dump(2) + "\n";
}

}  // namespace lazyconv
