#include "lazyconv/network.hpp"

#include <set>

namespace lazyconv {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
  }
  return "unknown";
}

Network::Network(Shape3 input_shape, std::vector<Layer> layers)
    : input_shape_(input_shape), layers_(std::move(layers)) {
  validate();
}

void Network::validate() {
  if (input_shape_.channels <= 0 || input_shape_.height <= 0 || input_shape_.width <= 0)
    throw ShapeError("network input shape must be positive, got " + to_string(input_shape_));

  std::set<std::string> names;
  shapes_.clear();
  conv_indices_.clear();
  Shape3 cur = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (l.name.empty()) throw ShapeError("layer " + std::to_string(i) + " has an empty name");
    if (!names.insert(l.name).second) throw ShapeError("duplicate layer name '" + l.name + "'");
    const std::string where = "layer '" + l.name + "' (" + to_string(l.kind()) + "): ";
    try {
      switch (l.kind()) {
        case LayerKind::Conv: {
          const auto& c = l.conv();
          c.validate();
          cur = c.output_shape(cur);
          conv_indices_.push_back(i);
          break;
        }
        case LayerKind::Relu: break;
        case LayerKind::MaxPool: {
          const auto& p = std::get<MaxPool>(l.op);
          cur = maxpool_output_shape(cur, p.pool, p.stride);
          break;
        }
        case LayerKind::Flatten: cur = {cur.size(), 1, 1}; break;
        case LayerKind::Dense: {
          const auto& d = l.dense();
          d.layer.validate();
          if (cur.height != 1 || cur.width != 1 || cur.channels != d.layer.in_dim)
            throw DimensionError("expects a flat input of length " + std::to_string(d.layer.in_dim) + ", got " +
                                 to_string(cur));
          if (d.group < 1 || d.layer.in_dim % d.group != 0)
            throw DimensionError("column group size " + std::to_string(d.group) + " does not divide in_dim");
          cur = {d.layer.out_dim, 1, 1};
          break;
        }
        case LayerKind::Softmax:
          if (cur.height != 1 || cur.width != 1) throw DimensionError("softmax expects a flat input");
          break;
      }
    } catch (const ShapeError&) {
      throw;
    } catch (const std::exception& e) {
      throw ShapeError(where + e.what());
    }
    shapes_.push_back(cur);
  }
}

std::optional<std::size_t> Network::find(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].name == name) return i;
  return std::nullopt;
}

std::size_t Network::index_of(const std::string& name) const {
  if (auto i = find(name)) return *i;
  throw std::out_of_range("no layer named '" + name + "'");
}

std::vector<std::string> Network::conv_names() const {
  std::vector<std::string> out;
  for (auto i : conv_indices_) out.push_back(layers_[i].name);
  return out;
}

std::size_t Network::conv_ordinal(const std::string& name) const {
  for (std::size_t k = 0; k < conv_indices_.size(); ++k)
    if (layers_[conv_indices_[k]].name == name) return k;
  throw std::out_of_range("no conv layer named '" + name + "'");
}

namespace {

bool same_op(const LayerOp& a, const LayerOp& b) {
  if (a.index() != b.index()) return false;
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        const auto& y = std::get<T>(b);
        if constexpr (std::is_same_v<T, ConvLayerf>) {
          return x.out_filters == y.out_filters && x.in_channels == y.in_channels && x.kernel_h == y.kernel_h &&
                 x.kernel_w == y.kernel_w && x.stride == y.stride && x.padding == y.padding &&
                 x.weights == y.weights && x.bias == y.bias;
        } else if constexpr (std::is_same_v<T, MaxPool>) {
          return x.pool == y.pool && x.stride == y.stride;
        } else if constexpr (std::is_same_v<T, Dense>) {
          return x.layout == y.layout && x.group == y.group && x.layer.in_dim == y.layer.in_dim &&
                 x.layer.out_dim == y.layer.out_dim && x.layer.weights == y.layer.weights &&
                 x.layer.bias == y.layer.bias;
        } else {
          return true;
        }
      },
      a);
}

}  // namespace

bool Network::operator==(const Network& other) const {
  if (input_shape_ != other.input_shape_ || layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].name != other.layers_[i].name || !same_op(layers_[i].op, other.layers_[i].op)) return false;
  return true;
}

void Dataset::validate(Index num_classes) const {
  for (std::size_t i = 0; i < inputs.size(); ++i)
    if (inputs[i].shape() != shape)
      throw DimensionError("dataset sample " + std::to_string(i) + " has shape " + to_string(inputs[i].shape()) +
                           ", expected " + to_string(shape));
  if (!labels) return;
  if (labels->size() != inputs.size()) throw DimensionError("dataset label count does not match sample count");
  for (Index l : *labels)
    if (l < 0 || (num_classes >= 0 && l >= num_classes))
      throw DimensionError("dataset label " + std::to_string(l) + " out of range");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.shape = shape;
  if (labels) out.labels.emplace();
  for (auto i : indices) {
    out.inputs.push_back(inputs.at(i));
    if (labels) out.labels->push_back(labels->at(i));
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void masked_strengths(const Tensor3f& out, const FilterMask& mask, Vector<float>& s) {
  s.setZero(out.channels());
  const Index plane = out.shape().plane();
  for (Index c : mask.active()) {
    const float* p = out.channel_data(c);
    double acc = 0.0;
    for (Index i = 0; i < plane; ++i) acc += std::abs(static_cast<double>(p[i]));
    s[c] = static_cast<float>(acc);
  }
}

}  // namespace

void run_layers(const Network& net, std::size_t begin, std::size_t end, ForwardState& st, ConvHooks& hooks,
                ForwardProfile* profile) {
  if (profile != nullptr && profile->layer_seconds.size() != net.size()) profile->resize(net.size());
  if (end > net.size() || begin > end) throw std::out_of_range("run_layers: bad layer range");
  if (st.activation.shape() != net.input_shape_of(begin))
    throw DimensionError("activation shape " + to_string(st.activation.shape()) + " does not match layer input " +
                         to_string(net.input_shape_of(begin)));

  Tensor3f& cur = st.activation;
  Tensor3f next;
  Vector<float> vec;

  for (std::size_t i = begin; i < end; ++i) {
    const Layer& layer = net.layer(i);
    const auto t0 = Clock::now();
    double selection = 0.0;
    switch (layer.kind()) {
      case LayerKind::Conv: {
        const FilterMask* live = st.live ? &*st.live : nullptr;
        ConvSite site{i, st.conv_ordinal, &layer, st.have_previous ? &st.previous_strengths : nullptr, live};
        const auto ts = Clock::now();
        std::optional<FilterMask> mask = hooks.select(site);
        if (profile != nullptr) selection = seconds_since(ts);
        conv2d_into(cur, layer.conv(), next, mask ? &*mask : nullptr, live);
        Vector<float> strengths;
        if (mask)
          masked_strengths(next, *mask, strengths);
        else
          strengths = activation_strength(next);
        hooks.observe(site, next, strengths, mask);
        st.live = (mask && !mask->full()) ? std::move(mask) : std::nullopt;
        st.previous_strengths = std::move(strengths);
        st.have_previous = true;
        ++st.conv_ordinal;
        std::swap(cur, next);
        break;
      }
      case LayerKind::Relu: relu_inplace(cur); break;
      case LayerKind::MaxPool: {
        const auto& p = std::get<MaxPool>(layer.op);
        maxpool2d_into(cur, p.pool, p.stride, next);
        std::swap(cur, next);
        break;
      }
      case LayerKind::Flatten:
        cur.reshape({cur.size(), 1, 1});
        st.live.reset();
        break;
      case LayerKind::Dense: {
        const auto& d = layer.dense().layer;
        dense_into<float>(cur.data(), d, vec);
        cur = Tensor3f({d.out_dim, 1, 1}, vec);
        st.live.reset();
        break;
      }
      case LayerKind::Softmax: {
        Vector<float> p = softmax<float>(cur.data());
        cur.data() = p;
        break;
      }
    }
    if (profile != nullptr) {
      profile->layer_seconds[i] += seconds_since(t0) - selection;
      profile->selection_seconds += selection;
    }
  }
}

Vector<float> run_forward(const Network& net, const Tensor3f& input, ConvHooks& hooks, ForwardProfile* profile) {
  if (input.shape() != net.input_shape())
    throw DimensionError("input shape " + to_string(input.shape()) + " does not match network input " +
                         to_string(net.input_shape()));
  ForwardState st;
  st.activation = input;
  run_layers(net, 0, net.size(), st, hooks, profile);
  return std::move(st.activation.data());
}

}  // namespace lazyconv
