#include "lazyconv/synthetic.hpp"

#include <cmath>
#include <numbers>

namespace lazyconv {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : engine_(splitmix64(seed + stream * 0x9E3779B97F4A7C15ULL)) {}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
  has_spare_ = true;
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below(0)");
  // rejection sampling keeps the draw unbiased
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v;
  do v = next();
  while (v >= limit);
  return v % n;
}

namespace {

void fill_uniform(float* p, Index n, Rng& rng, double bound) {
  for (Index i = 0; i < n; ++i) p[i] = static_cast<float>(rng.uniform(-bound, bound));
}

std::vector<Layer> build_layers(const SyntheticSpec& spec) {
  if (spec.conv_filters.empty()) throw GeometryError("synthetic spec needs at least one conv layer");
  if (spec.dense_dims.empty()) throw GeometryError("synthetic spec needs at least one dense layer");
  if (spec.kernel < 1 || spec.padding < 0) throw GeometryError("synthetic kernel/padding invalid");

  std::vector<Layer> layers;
  Index channels = spec.input_shape.channels;
  int block = 1;
  int in_block = 0;
  for (std::size_t k = 0; k < spec.conv_filters.size(); ++k) {
    ++in_block;
    const std::string tag = std::to_string(block) + "_" + std::to_string(in_block);
    ConvLayerf c;
    c.out_filters = spec.conv_filters[k];
    c.in_channels = channels;
    c.kernel_h = c.kernel_w = spec.kernel;
    c.padding = spec.padding;
    c.stride = 1;
    layers.push_back({"conv" + tag, c});
    layers.push_back({"relu" + tag, Relu{}});
    channels = c.out_filters;
    const Index position = static_cast<Index>(k) + 1;
    if (std::find(spec.pool_after.begin(), spec.pool_after.end(), position) != spec.pool_after.end()) {
      layers.push_back({"pool" + std::to_string(block), MaxPool{2, 2}});
      ++block;
      in_block = 0;
    }
  }
  layers.push_back({"flatten", Flatten{}});
  for (std::size_t k = 0; k < spec.dense_dims.size(); ++k) {
    Dense d;
    d.layer.out_dim = spec.dense_dims[k];
    layers.push_back({"fc" + std::to_string(k + 1), d});
    if (k + 1 < spec.dense_dims.size()) layers.push_back({"relu_fc" + std::to_string(k + 1), Relu{}});
  }
  if (spec.softmax_head) layers.push_back({"prob", Softmax{}});
  return layers;
}

}  // namespace

Network gen_synthetic_network(const SyntheticSpec& spec) {
  std::vector<Layer> layers = build_layers(spec);

  // Geometry first (dense in_dim depends on the conv stack), then weights.
  Shape3 cur = spec.input_shape;
  bool flatten_fed = false;
  Index group = 1;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Layer& l = layers[i];
    Rng rng(spec.seed, kStreamLayerBase + i);
    switch (l.kind()) {
      case LayerKind::Conv: {
        auto& c = std::get<ConvLayerf>(l.op);
        cur = c.output_shape(cur);
        c.weights.resize(c.out_filters, c.fan_in());
        c.bias.resize(c.out_filters);
        // He-uniform: variance 2 / fan_in keeps activation scale stable under ReLU.
        fill_uniform(c.weights.data(), c.weights.size(), rng, std::sqrt(6.0 / static_cast<double>(c.fan_in())));
        fill_uniform(c.bias.data(), c.bias.size(), rng, 0.1);
        break;
      }
      case LayerKind::MaxPool: cur = maxpool_output_shape(cur, 2, 2); break;
      case LayerKind::Flatten:
        flatten_fed = true;
        group = cur.plane();
        cur = {cur.size(), 1, 1};
        break;
      case LayerKind::Dense: {
        auto& d = std::get<Dense>(l.op);
        d.layer.in_dim = cur.size();
        d.layer.weights.resize(d.layer.out_dim, d.layer.in_dim);
        d.layer.bias.resize(d.layer.out_dim);
        const bool last = i + 1 == layers.size() || (i + 2 == layers.size() && spec.softmax_head);
        const double gain = last ? 3.0 : 6.0;
        fill_uniform(d.layer.weights.data(), d.layer.weights.size(), rng,
                     std::sqrt(gain / static_cast<double>(d.layer.in_dim)));
        fill_uniform(d.layer.bias.data(), d.layer.bias.size(), rng, 0.1);
        if (flatten_fed && spec.column_group_layout) {
          d.layout = WeightLayout::ColumnGroup;
          d.group = group;
        }
        flatten_fed = false;
        cur = {d.layer.out_dim, 1, 1};
        break;
      }
      default: break;
    }
  }
  return Network(spec.input_shape, std::move(layers));
}

std::pair<Network, Dataset> gen_synthetic(const SyntheticSpec& spec) {
  if (spec.dataset_size < 0) throw GeometryError("dataset_size must be non-negative");
  if (spec.prototypes < 1) throw GeometryError("need at least one prototype");
  Network net = gen_synthetic_network(spec);

  const Shape3 shape = spec.input_shape;
  // Each prototype channel is a sum of three random oriented gratings plus an offset.
  std::vector<Tensor3f> prototypes;
  Rng proto_rng(spec.seed, kStreamPrototypes);
  for (Index p = 0; p < spec.prototypes; ++p) {
    Tensor3f t(shape);
    for (Index c = 0; c < shape.channels; ++c) {
      double fx[3], fy[3], phase[3], amp[3];
      for (int k = 0; k < 3; ++k) {
        const double freq = proto_rng.uniform(0.1, 0.9);
        const double angle = proto_rng.uniform(0.0, std::numbers::pi);
        fx[k] = freq * std::cos(angle);
        fy[k] = freq * std::sin(angle);
        phase[k] = proto_rng.uniform(0.0, 2.0 * std::numbers::pi);
        amp[k] = proto_rng.uniform(0.3, 1.0);
      }
      const double offset = proto_rng.uniform(-0.5, 0.5);
      for (Index y = 0; y < shape.height; ++y)
        for (Index x = 0; x < shape.width; ++x) {
          double v = offset;
          for (int k = 0; k < 3; ++k) v += amp[k] * std::sin(fx[k] * x + fy[k] * y + phase[k]);
          t(c, y, x) = static_cast<float>(v);
        }
    }
    prototypes.push_back(std::move(t));
  }

  Dataset data;
  data.shape = shape;
  Rng rng(spec.seed, kStreamDataset);
  for (Index s = 0; s < spec.dataset_size; ++s) {
    const auto& proto = prototypes[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(spec.prototypes)))];
    const double gain = rng.uniform(0.6, 1.4);
    Tensor3f t(shape);
    for (Index i = 0; i < t.size(); ++i)
      t.data()[i] = static_cast<float>(gain * proto.data()[i] + spec.noise * rng.normal());
    data.inputs.push_back(std::move(t));
  }

  ConvHooks eager;
  std::vector<Index> labels;
  labels.reserve(data.size());
  for (const auto& x : data.inputs) labels.push_back(argmax(run_forward(net, x, eager)));
  data.labels = std::move(labels);
  return {std::move(net), std::move(data)};
}

}  // namespace lazyconv
