#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lazyconv/errors.hpp"

namespace lazyconv {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using RowMatrixXf = RowMatrix<float>;

struct Shape3 {
  Index channels = 0;
  Index height = 0;
  Index width = 0;

  Index plane() const { return height * width; }
  Index size() const { return channels * height * width; }
  bool operator==(const Shape3&) const = default;
};

inline std::string to_string(const Shape3& s);

/// Channel-major (c, h, w) activation tensor for a single image.
template <typename Scalar>
class Tensor3 {
 public:
  using ChannelMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstChannelMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor3() = default;
  explicit Tensor3(const Shape3& shape) : shape_(shape), data_(Vector<Scalar>::Zero(shape.size())) {}
  Tensor3(Index channels, Index height, Index width) : Tensor3(Shape3{channels, height, width}) {}

  Tensor3(const Shape3& shape, Vector<Scalar> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                           to_string(shape_));
  }

  const Shape3& shape() const { return shape_; }
  Index channels() const { return shape_.channels; }
  Index height() const { return shape_.height; }
  Index width() const { return shape_.width; }
  Index size() const { return data_.size(); }

  Vector<Scalar>& data() { return data_; }
  const Vector<Scalar>& data() const { return data_; }

  Scalar& operator()(Index c, Index h, Index w) { return data_[(c * shape_.height + h) * shape_.width + w]; }
  Scalar operator()(Index c, Index h, Index w) const { return data_[(c * shape_.height + h) * shape_.width + w]; }

  Scalar* channel_data(Index c) { return data_.data() + c * shape_.plane(); }
  const Scalar* channel_data(Index c) const { return data_.data() + c * shape_.plane(); }

  ChannelMap channel(Index c) { return ChannelMap(channel_data(c), shape_.height, shape_.width); }
  ConstChannelMap channel(Index c) const { return ConstChannelMap(channel_data(c), shape_.height, shape_.width); }

  /// Reallocates only when the element count changes; contents are unspecified afterwards.
  void reshape(const Shape3& shape) {
    if (shape.size() != data_.size()) data_.resize(shape.size());
    shape_ = shape;
  }

  bool operator==(const Tensor3& other) const { return shape_ == other.shape_ && data_ == other.data_; }

 private:
  Shape3 shape_;
  Vector<Scalar> data_;
};

using Tensor3f = Tensor3<float>;

/// Sorted set of output-filter indices evaluated for one layer on one sample.
class FilterMask {
 public:
  FilterMask() = default;
  FilterMask(Index layer_size, std::vector<Index> active);

  static FilterMask all(Index layer_size);
  static FilterMask none(Index layer_size) { return FilterMask(layer_size, {}); }

  Index layer_size() const { return layer_size_; }
  std::span<const Index> active() const { return active_; }
  Index count() const { return static_cast<Index>(active_.size()); }
  bool empty() const { return active_.empty(); }
  bool full() const { return count() == layer_size_; }
  bool contains(Index i) const { return i >= 0 && i < layer_size_ && flags_[static_cast<std::size_t>(i)] != 0; }

  bool operator==(const FilterMask& other) const {
    return layer_size_ == other.layer_size_ && active_ == other.active_;
  }

 private:
  Index layer_size_ = 0;
  std::vector<Index> active_;
  std::vector<std::uint8_t> flags_;
};

inline FilterMask::FilterMask(Index layer_size, std::vector<Index> active)
    : layer_size_(layer_size), active_(std::move(active)), flags_(static_cast<std::size_t>(layer_size), 0) {
  if (layer_size < 0) throw ContractError("filter mask layer size must be non-negative");
  for (std::size_t i = 0; i < active_.size(); ++i) {
    const Index idx = active_[i];
    if (idx < 0 || idx >= layer_size)
      throw ContractError("filter mask index " + std::to_string(idx) + " outside [0, " + std::to_string(layer_size) +
                          ")");
    if (i > 0 && active_[i - 1] >= idx) throw ContractError("filter mask indices must be strictly increasing");
    flags_[static_cast<std::size_t>(idx)] = 1;
  }
}

inline FilterMask FilterMask::all(Index layer_size) {
  std::vector<Index> idx(static_cast<std::size_t>(layer_size));
  for (Index i = 0; i < layer_size; ++i) idx[static_cast<std::size_t>(i)] = i;
  return FilterMask(layer_size, std::move(idx));
}

template <typename Scalar>
struct ConvLayer {
  Index out_filters = 0;
  Index in_channels = 0;
  Index kernel_h = 0;
  Index kernel_w = 0;
  Index stride = 1;
  Index padding = 0;
  RowMatrix<Scalar> weights;  // out_filters x (in_channels * kernel_h * kernel_w), O-major then I, kh, kw
  Vector<Scalar> bias;

  Index fan_in() const { return in_channels * kernel_h * kernel_w; }

  Scalar weight(Index o, Index i, Index kh, Index kw) const { return weights(o, (i * kernel_h + kh) * kernel_w + kw); }

  void validate() const {
    if (out_filters <= 0 || in_channels <= 0 || kernel_h <= 0 || kernel_w <= 0)
      throw GeometryError("conv layer counts must be positive");
    if (stride < 1) throw GeometryError("conv stride must be >= 1");
    if (padding < 0) throw GeometryError("conv padding must be >= 0");
    if (weights.rows() != out_filters || weights.cols() != fan_in())
      throw DimensionError("conv weights must be " + std::to_string(out_filters) + "x" + std::to_string(fan_in()));
    if (bias.size() != out_filters) throw DimensionError("conv bias length must equal out_filters");
  }

  Shape3 output_shape(const Shape3& in) const {
    if (in.channels != in_channels)
      throw DimensionError("conv expects " + std::to_string(in_channels) + " input channels, got " +
                           std::to_string(in.channels));
    const Index oh = (in.height + 2 * padding - kernel_h);
    const Index ow = (in.width + 2 * padding - kernel_w);
    if (oh < 0 || ow < 0) throw GeometryError("conv kernel larger than padded input " + to_string(in));
    return {out_filters, oh / stride + 1, ow / stride + 1};
  }
};

template <typename Scalar>
struct DenseLayer {
  Index in_dim = 0;
  Index out_dim = 0;
  RowMatrix<Scalar> weights;  // out_dim x in_dim, one row per output unit
  Vector<Scalar> bias;

  void validate() const {
    if (in_dim <= 0 || out_dim <= 0) throw GeometryError("dense dims must be positive");
    if (weights.rows() != out_dim || weights.cols() != in_dim)
      throw DimensionError("dense weights must be " + std::to_string(out_dim) + "x" + std::to_string(in_dim));
    if (bias.size() != out_dim) throw DimensionError("dense bias length must equal out_dim");
  }
};

using ConvLayerf = ConvLayer<float>;
using DenseLayerf = DenseLayer<float>;

inline std::string to_string(const Shape3& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

}  // namespace lazyconv
