#include "lazyconv/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace lazyconv {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace io {

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t h) {
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string file_fingerprint(const fs::path& path) {
  const std::string bytes = read_text(path);
  return hex64(fnv1a64(std::as_bytes(std::span(bytes.data(), bytes.size()))));
}

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

}  // namespace

void write_floats(const fs::path& path, std::span<const float> values) {
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) words[i] = to_le(std::bit_cast<std::uint32_t>(values[i]));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<float> read_floats(const fs::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() % 4 != 0)
    throw LengthMismatchError(path.string() + " holds " + std::to_string(bytes.size()) +
                              " bytes, not a whole number of float32 values");
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t w;
    std::memcpy(&w, bytes.data() + 4 * i, 4);
    values[i] = std::bit_cast<float>(to_le(w));
  }
  return values;
}

}  // namespace io

namespace {

const char* layout_name(WeightLayout l) { return l == WeightLayout::RowMajor ? "row_major" : "column_group"; }

void append_dense(std::vector<float>& blob, const Dense& d) {
  const auto& w = d.layer.weights;
  if (d.layout == WeightLayout::RowMajor) {
    blob.insert(blob.end(), w.data(), w.data() + w.size());
    return;
  }
  for (Index q = 0; q < d.layer.in_dim / d.group; ++q)
    for (Index r = 0; r < d.layer.out_dim; ++r)
      for (Index t = 0; t < d.group; ++t) blob.push_back(w(r, q * d.group + t));
}

ojson extent(std::size_t offset, Index count) { return ojson{{"offset", offset}, {"count", count}}; }

ojson build_manifest(const Network& net) {
  ojson layers = ojson::array();
  std::size_t offset = 0;
  for (const Layer& l : net.layers()) {
    ojson e;
    e["name"] = l.name;
    e["kind"] = to_string(l.kind());
    switch (l.kind()) {
      case LayerKind::Conv: {
        const auto& c = l.conv();
        e["out_filters"] = c.out_filters;
        e["in_channels"] = c.in_channels;
        e["kernel_h"] = c.kernel_h;
        e["kernel_w"] = c.kernel_w;
        e["stride"] = c.stride;
        e["padding"] = c.padding;
        e["weights"] = extent(offset, c.weights.size());
        offset += static_cast<std::size_t>(c.weights.size());
        e["bias"] = extent(offset, c.bias.size());
        offset += static_cast<std::size_t>(c.bias.size());
        break;
      }
      case LayerKind::MaxPool: {
        const auto& p = std::get<MaxPool>(l.op);
        e["pool"] = p.pool;
        e["stride"] = p.stride;
        break;
      }
      case LayerKind::Dense: {
        const auto& d = l.dense();
        e["in_dim"] = d.layer.in_dim;
        e["out_dim"] = d.layer.out_dim;
        e["layout"] = layout_name(d.layout);
        e["group"] = d.group;
        e["weights"] = extent(offset, d.layer.weights.size());
        offset += static_cast<std::size_t>(d.layer.weights.size());
        e["bias"] = extent(offset, d.layer.bias.size());
        offset += static_cast<std::size_t>(d.layer.bias.size());
        break;
      }
      default: break;
    }
    layers.push_back(std::move(e));
  }
  ojson m;
  m["format_version"] = kModelFormatVersion;
  const auto& s = net.input_shape();
  m["input_shape"] = {s.channels, s.height, s.width};
  m["total_floats"] = offset;
  m["layers"] = std::move(layers);
  return m;
}

template <typename T>
T field(const ojson& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": bad field '" + key + "': " + e.what());
  }
}

struct BlobReader {
  const std::vector<float>& blob;

  std::span<const float> take(const ojson& ext, Index expected, const std::string& where) {
    const auto offset = field<std::size_t>(ext, "offset", where);
    const auto count = field<Index>(ext, "count", where);
    if (count != expected)
      throw LengthMismatchError(where + ": manifest declares " + std::to_string(count) + " floats, geometry needs " +
                                std::to_string(expected));
    if (offset + static_cast<std::size_t>(count) > blob.size())
      throw LengthMismatchError(where + ": extent [" + std::to_string(offset) + ", +" + std::to_string(count) +
                                ") runs past the " + std::to_string(blob.size()) + "-float blob");
    return std::span(blob).subspan(offset, static_cast<std::size_t>(count));
  }
};

Layer parse_layer(const ojson& e, BlobReader& blob) {
  const auto name = field<std::string>(e, "name", "layer");
  const auto kind = field<std::string>(e, "kind", "layer '" + name + "'");
  const std::string where = "layer '" + name + "'";
  if (kind == "conv") {
    ConvLayerf c;
    c.out_filters = field<Index>(e, "out_filters", where);
    c.in_channels = field<Index>(e, "in_channels", where);
    c.kernel_h = field<Index>(e, "kernel_h", where);
    c.kernel_w = field<Index>(e, "kernel_w", where);
    c.stride = field<Index>(e, "stride", where);
    c.padding = field<Index>(e, "padding", where);
    if (c.out_filters <= 0 || c.in_channels <= 0 || c.kernel_h <= 0 || c.kernel_w <= 0)
      throw ShapeError(where + ": conv counts must be positive");
    auto w = blob.take(e.at("weights"), c.out_filters * c.fan_in(), where + " weights");
    auto b = blob.take(e.at("bias"), c.out_filters, where + " bias");
    c.weights = Eigen::Map<const RowMatrixXf>(w.data(), c.out_filters, c.fan_in());
    c.bias = Eigen::Map<const Vector<float>>(b.data(), c.out_filters);
    return {name, c};
  }
  if (kind == "relu") return {name, Relu{}};
  if (kind == "flatten") return {name, Flatten{}};
  if (kind == "softmax") return {name, Softmax{}};
  if (kind == "maxpool") return {name, MaxPool{field<Index>(e, "pool", where), field<Index>(e, "stride", where)}};
  if (kind == "dense") {
    Dense d;
    d.layer.in_dim = field<Index>(e, "in_dim", where);
    d.layer.out_dim = field<Index>(e, "out_dim", where);
    if (d.layer.in_dim <= 0 || d.layer.out_dim <= 0) throw ShapeError(where + ": dense dims must be positive");
    const auto layout = e.contains("layout") ? field<std::string>(e, "layout", where) : std::string("row_major");
    if (layout == "row_major")
      d.layout = WeightLayout::RowMajor;
    else if (layout == "column_group")
      d.layout = WeightLayout::ColumnGroup;
    else
      throw FormatError(where + ": unknown weight layout '" + layout + "'");
    d.group = e.contains("group") ? field<Index>(e, "group", where) : 1;
    if (d.group < 1 || d.layer.in_dim % d.group != 0)
      throw ShapeError(where + ": group " + std::to_string(d.group) + " does not divide in_dim");
    auto w = blob.take(e.at("weights"), d.layer.in_dim * d.layer.out_dim, where + " weights");
    auto b = blob.take(e.at("bias"), d.layer.out_dim, where + " bias");
    d.layer.weights.resize(d.layer.out_dim, d.layer.in_dim);
    if (d.layout == WeightLayout::RowMajor) {
      d.layer.weights = Eigen::Map<const RowMatrixXf>(w.data(), d.layer.out_dim, d.layer.in_dim);
    } else {
      std::size_t k = 0;
      for (Index q = 0; q < d.layer.in_dim / d.group; ++q)
        for (Index r = 0; r < d.layer.out_dim; ++r)
          for (Index t = 0; t < d.group; ++t) d.layer.weights(r, q * d.group + t) = w[k++];
    }
    d.layer.bias = Eigen::Map<const Vector<float>>(b.data(), d.layer.out_dim);
    return {name, d};
  }
  throw UnknownLayerKindError(where + ": unknown layer kind '" + kind + "'");
}

}  // namespace

std::string manifest_text(const Network& net) { return build_manifest(net).dump(2) + "\n"; }

std::vector<float> weight_blob(const Network& net) {
  std::vector<float> blob;
  for (const Layer& l : net.layers()) {
    if (l.kind() == LayerKind::Conv) {
      const auto& c = l.conv();
      blob.insert(blob.end(), c.weights.data(), c.weights.data() + c.weights.size());
      blob.insert(blob.end(), c.bias.data(), c.bias.data() + c.bias.size());
    } else if (l.kind() == LayerKind::Dense) {
      const auto& d = l.dense();
      append_dense(blob, d);
      blob.insert(blob.end(), d.layer.bias.data(), d.layer.bias.data() + d.layer.bias.size());
    }
  }
  return blob;
}

std::string network_fingerprint(const Network& net) {
  const std::string text = manifest_text(net);
  const auto blob = weight_blob(net);
  std::uint64_t h = io::fnv1a64(std::as_bytes(std::span(text.data(), text.size())));
  h = io::fnv1a64(std::as_bytes(std::span(blob)), h);
  return io::hex64(h);
}

void save_model(const Network& net, const fs::path& dir) {
  fs::create_directories(dir);
  io::write_text(dir / "manifest.json", manifest_text(net));
  io::write_floats(dir / "weights.bin", weight_blob(net));
}

Network load_model(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw MissingFileError("missing " + (dir / "manifest.json").string());
  if (!fs::exists(dir / "weights.bin")) throw MissingFileError("missing " + (dir / "weights.bin").string());
  ojson m;
  try {
    m = ojson::parse(io::read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest.json is not valid JSON: " + std::string(e.what()));
  }
  const auto version = field<int>(m, "format_version", "manifest");
  if (version != kModelFormatVersion) throw FormatError("unsupported format_version " + std::to_string(version));
  const auto shape = field<std::vector<Index>>(m, "input_shape", "manifest");
  if (shape.size() != 3) throw FormatError("input_shape must have 3 entries");
  const auto blob = io::read_floats(dir / "weights.bin");

  const auto declared = m.contains("total_floats") ? field<std::size_t>(m, "total_floats", "manifest") : blob.size();
  if (declared != blob.size())
    throw LengthMismatchError("manifest declares " + std::to_string(declared) + " floats but weights.bin holds " +
                              std::to_string(blob.size()));

  BlobReader reader{blob};
  std::vector<Layer> layers;
  std::size_t used = 0;
  for (const auto& e : field<ojson>(m, "layers", "manifest")) {
    layers.push_back(parse_layer(e, reader));
    for (const char* key : {"weights", "bias"})
      if (e.contains(key)) used += e.at(key).at("count").get<std::size_t>();
  }
  if (used != blob.size())
    throw LengthMismatchError("layers declare " + std::to_string(used) + " floats but weights.bin holds " +
                              std::to_string(blob.size()));
  return Network({shape[0], shape[1], shape[2]}, std::move(layers));
}

void save_dataset(const Dataset& data, const fs::path& dir) {
  data.validate();
  fs::create_directories(dir);
  std::vector<float> flat;
  flat.reserve(static_cast<std::size_t>(data.shape.size()) * data.size());
  for (const auto& t : data.inputs) flat.insert(flat.end(), t.data().data(), t.data().data() + t.size());
  io::write_floats(dir / "data.bin", flat);
  ojson j;
  j["shape"] = {data.shape.channels, data.shape.height, data.shape.width};
  j["count"] = data.size();
  if (data.labels) j["labels"] = *data.labels;
  io::write_text(dir / "data.json", j.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "data.json")) throw MissingFileError("missing " + (dir / "data.json").string());
  if (!fs::exists(dir / "data.bin")) throw MissingFileError("missing " + (dir / "data.bin").string());
  ojson j;
  try {
    j = ojson::parse(io::read_text(dir / "data.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("data.json is not valid JSON: " + std::string(e.what()));
  }
  const auto shape = field<std::vector<Index>>(j, "shape", "data.json");
  if (shape.size() != 3) throw FormatError("data.json shape must have 3 entries");
  const auto count = field<std::size_t>(j, "count", "data.json");
  Dataset data;
  data.shape = {shape[0], shape[1], shape[2]};
  const auto flat = io::read_floats(dir / "data.bin");
  const auto per = static_cast<std::size_t>(data.shape.size());
  if (flat.size() != per * count)
    throw LengthMismatchError("data.json declares " + std::to_string(count) + " samples of " + std::to_string(per) +
                              " floats but data.bin holds " + std::to_string(flat.size()));
  for (std::size_t s = 0; s < count; ++s)
    data.inputs.emplace_back(data.shape, Eigen::Map<const Vector<float>>(flat.data() + s * per, data.shape.size()));
  if (j.contains("labels")) data.labels = field<std::vector<Index>>(j, "labels", "data.json");
  data.validate();
  return data;
}

}  // namespace lazyconv
