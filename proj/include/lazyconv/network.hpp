#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "lazyconv/ops.hpp"
#include "lazyconv/tensor.hpp"

namespace lazyconv {

enum class LayerKind { Conv, Relu, MaxPool, Flatten, Dense, Softmax };

std::string to_string(LayerKind kind);

/// On-disk arrangement of a dense weight matrix.
///   RowMajor:    out_dim rows of in_dim floats.
///   ColumnGroup: for each block of `group` consecutive input columns, the
///                out_dim x group sub-matrix in row-major order. One block is
///                fed by exactly one conv filter, so it loads with one read.
enum class WeightLayout { RowMajor, ColumnGroup };

struct Relu {};
struct MaxPool {
  Index pool = 2;
  Index stride = 2;
};
struct Flatten {};
struct Dense {
  DenseLayerf layer;
  WeightLayout layout = WeightLayout::RowMajor;
  Index group = 1;
};
struct Softmax {};

using LayerOp = std::variant<ConvLayerf, Relu, MaxPool, Flatten, Dense, Softmax>;

struct Layer {
  std::string name;
  LayerOp op;

  LayerKind kind() const { return static_cast<LayerKind>(op.index()); }
  bool is_conv() const { return kind() == LayerKind::Conv; }
  const ConvLayerf& conv() const { return std::get<ConvLayerf>(op); }
  const Dense& dense() const { return std::get<Dense>(op); }
};

/// Ordered layer stack with a fixed input shape. Immutable once validated.
class Network {
 public:
  Network() = default;
  Network(Shape3 input_shape, std::vector<Layer> layers);

  const Shape3& input_shape() const { return input_shape_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t size() const { return layers_.size(); }

  /// Output shape of layer i (flattened layers are C x 1 x 1).
  const Shape3& output_shape(std::size_t i) const { return shapes_.at(i); }
  const Shape3& input_shape_of(std::size_t i) const { return i == 0 ? input_shape_ : shapes_.at(i - 1); }
  Index output_dim() const { return shapes_.empty() ? input_shape_.size() : shapes_.back().size(); }

  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;

  /// Layer indices of conv layers, in network order.
  const std::vector<std::size_t>& conv_indices() const { return conv_indices_; }
  /// Conv layer names, in network order.
  std::vector<std::string> conv_names() const;
  /// Ordinal of a conv layer among conv layers (0 = first conv).
  std::size_t conv_ordinal(const std::string& name) const;

  bool operator==(const Network& other) const;

 private:
  void validate();

  Shape3 input_shape_;
  std::vector<Layer> layers_;
  std::vector<Shape3> shapes_;
  std::vector<std::size_t> conv_indices_;
};

/// Same-shape inputs with optional class labels.
struct Dataset {
  Shape3 shape;
  std::vector<Tensor3f> inputs;
  std::optional<std::vector<Index>> labels;

  std::size_t size() const { return inputs.size(); }
  void validate(Index num_classes = -1) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Per-layer wall-clock accumulated by the executor when profiling is requested.
struct ForwardProfile {
  std::vector<double> layer_seconds;  // indexed like Network::layers()
  double selection_seconds = 0.0;     // predict + select, inside conv layers

  void resize(std::size_t n) { layer_seconds.assign(n, 0.0); }
};

/// Describes one conv layer at the point the executor reaches it.
struct ConvSite {
  std::size_t layer_index = 0;
  std::size_t conv_ordinal = 0;
  const Layer* layer = nullptr;
  /// Observed strengths of the previous conv layer (zero for skipped filters); null for the first conv.
  const Vector<float>* previous_strengths = nullptr;
  /// Input channels known to be exactly zero are absent from this mask; null when all are live.
  const FilterMask* input_active = nullptr;
};

/// Customisation points of the shared forward executor.
class ConvHooks {
 public:
  virtual ~ConvHooks() = default;
  /// Chooses the filters to evaluate before the conv runs; nullopt evaluates all.
  virtual std::optional<FilterMask> select(const ConvSite&) { return std::nullopt; }
  /// Sees the conv output and its strengths. May zero channels, in which case it
  /// must also shrink `mask` and zero the matching strengths.
  virtual void observe(const ConvSite&, Tensor3f& /*output*/, Vector<float>& /*strengths*/,
                       std::optional<FilterMask>& /*mask*/) {}
};

/// Activation state between layers.
struct ForwardState {
  Tensor3f activation;
  std::optional<FilterMask> live;  // channels of `activation` that may be non-zero; nullopt = all
  Vector<float> previous_strengths;
  bool have_previous = false;
  std::size_t conv_ordinal = 0;
};

/// Runs layers [begin, end) starting from `state`.
void run_layers(const Network& net, std::size_t begin, std::size_t end, ForwardState& state, ConvHooks& hooks,
                ForwardProfile* profile = nullptr);

/// Runs the network on one input. Conv strengths are measured on the raw conv
/// output; channels zeroed by a mask are tracked through channel-preserving
/// layers (relu, maxpool) so the next conv can skip them.
Vector<float> run_forward(const Network& net, const Tensor3f& input, ConvHooks& hooks,
                          ForwardProfile* profile = nullptr);

}  // namespace lazyconv
