#pragma once

#include <cmath>
#include <limits>

#include "lazyconv/tensor.hpp"

namespace lazyconv {

// Forward primitives. All of them are pure over their inputs and write into a
// caller-owned output; the value-returning overloads are thin wrappers.
//
// Accumulation order is fixed so that results can be compared bit-for-bit
// against scalar reference loops:
//   conv2d:  out[o,y,x] = bias[o], then += w[o,i,kh,kw] * in[i, y*s+kh-p, x*s+kw-p]
//            for i ascending, kh ascending, kw ascending; padded taps are skipped.
//   dense:   acc = 0, acc += w[j,i] * x[i] for i ascending, then y[j] = acc + bias[j].

/// Direct convolution (cross-correlation) with optional output and input masks.
///
/// Filters outside `mask` are zero-filled and never evaluated. Input channels
/// outside `input_active` are taken to be exactly zero (the producing layer
/// masked them out) and are skipped during accumulation.
template <typename Scalar>
void conv2d_into(const Tensor3<Scalar>& input, const ConvLayer<Scalar>& layer, Tensor3<Scalar>& out,
                 const FilterMask* mask = nullptr, const FilterMask* input_active = nullptr) {
  const Shape3 os = layer.output_shape(input.shape());
  if (mask != nullptr && mask->layer_size() != layer.out_filters)
    throw DimensionError("conv mask size " + std::to_string(mask->layer_size()) + " != out_filters " +
                         std::to_string(layer.out_filters));
  if (input_active != nullptr && input_active->layer_size() != layer.in_channels)
    throw DimensionError("conv input-channel mask size does not match in_channels");
  out.reshape(os);

  const Index in_h = input.height();
  const Index in_w = input.width();
  const Index out_h = os.height;
  const Index out_w = os.width;
  const Index stride = layer.stride;
  const Index pad = layer.padding;
  const Index plane = os.plane();

  auto evaluate = [&](Index o) {
    Scalar* dst = out.channel_data(o);
    std::fill(dst, dst + plane, layer.bias[o]);
    const Scalar* wrow = &layer.weights(o, 0);
    for (Index ic = 0; ic < layer.in_channels; ++ic) {
      if (input_active != nullptr && !input_active->contains(ic)) continue;
      const Scalar* src = input.channel_data(ic);
      for (Index kh = 0; kh < layer.kernel_h; ++kh) {
        // valid output rows: 0 <= y*stride + kh - pad < in_h
        const Index y_lo = kh >= pad ? 0 : (pad - kh + stride - 1) / stride;
        const Index y_num = in_h - 1 + pad - kh;
        const Index y_hi = y_num < 0 ? 0 : std::min(out_h, y_num / stride + 1);
        for (Index kw = 0; kw < layer.kernel_w; ++kw) {
          const Scalar w = wrow[(ic * layer.kernel_h + kh) * layer.kernel_w + kw];
          const Index x_lo = kw >= pad ? 0 : (pad - kw + stride - 1) / stride;
          const Index x_num = in_w - 1 + pad - kw;
          const Index x_hi = x_num < 0 ? 0 : std::min(out_w, x_num / stride + 1);
          if (x_lo >= x_hi) continue;
          for (Index y = y_lo; y < y_hi; ++y) {
            Scalar* d = dst + y * out_w;
            const Scalar* s = src + (y * stride + kh - pad) * in_w + (kw - pad);
            if (stride == 1) {
              for (Index x = x_lo; x < x_hi; ++x) d[x] += w * s[x];
            } else {
              for (Index x = x_lo; x < x_hi; ++x) d[x] += w * s[x * stride];
            }
          }
        }
      }
    }
  };

  if (mask == nullptr) {
    for (Index o = 0; o < layer.out_filters; ++o) evaluate(o);
    return;
  }
  out.data().setZero();
  for (Index o : mask->active()) evaluate(o);
}

template <typename Scalar>
Tensor3<Scalar> conv2d(const Tensor3<Scalar>& input, const ConvLayer<Scalar>& layer, const FilterMask* mask = nullptr,
                       const FilterMask* input_active = nullptr) {
  Tensor3<Scalar> out;
  conv2d_into(input, layer, out, mask, input_active);
  return out;
}

template <typename Scalar>
void relu_inplace(Tensor3<Scalar>& t) {
  t.data() = t.data().cwiseMax(Scalar(0));
}

template <typename Scalar>
Tensor3<Scalar> relu(Tensor3<Scalar> t) {
  relu_inplace(t);
  return t;
}

inline Shape3 maxpool_output_shape(const Shape3& in, Index pool, Index stride) {
  if (pool < 1 || stride < 1) throw GeometryError("maxpool window and stride must be >= 1");
  if (in.height < pool || in.width < pool) throw GeometryError("maxpool window larger than input " + to_string(in));
  return {in.channels, (in.height - pool) / stride + 1, (in.width - pool) / stride + 1};
}

template <typename Scalar>
void maxpool2d_into(const Tensor3<Scalar>& input, Index pool, Index stride, Tensor3<Scalar>& out) {
  const Shape3 os = maxpool_output_shape(input.shape(), pool, stride);
  out.reshape(os);
  for (Index c = 0; c < os.channels; ++c) {
    const auto src = input.channel(c);
    auto dst = out.channel(c);
    for (Index y = 0; y < os.height; ++y)
      for (Index x = 0; x < os.width; ++x) dst(y, x) = src.block(y * stride, x * stride, pool, pool).maxCoeff();
  }
}

template <typename Scalar>
Tensor3<Scalar> maxpool2d(const Tensor3<Scalar>& input, Index pool, Index stride) {
  Tensor3<Scalar> out;
  maxpool2d_into(input, pool, stride, out);
  return out;
}

template <typename Scalar>
void dense_into(const Eigen::Ref<const Vector<Scalar>>& x, const DenseLayer<Scalar>& layer, Vector<Scalar>& y) {
  if (x.size() != layer.in_dim)
    throw DimensionError("dense expects input length " + std::to_string(layer.in_dim) + ", got " +
                         std::to_string(x.size()));
  y.resize(layer.out_dim);
  const Scalar* xs = x.data();
  for (Index j = 0; j < layer.out_dim; ++j) {
    const Scalar* w = &layer.weights(j, 0);
    Scalar acc = 0;
    for (Index i = 0; i < layer.in_dim; ++i) acc += w[i] * xs[i];
    y[j] = acc + layer.bias[j];
  }
}

template <typename Scalar>
Vector<Scalar> dense(const Eigen::Ref<const Vector<Scalar>>& x, const DenseLayer<Scalar>& layer) {
  Vector<Scalar> y;
  dense_into(x, layer, y);
  return y;
}

/// Max-subtracted softmax.
template <typename Scalar>
Vector<Scalar> softmax(const Eigen::Ref<const Vector<Scalar>>& x) {
  if (x.size() == 0) return Vector<Scalar>();
  const Scalar peak = x.maxCoeff();
  Vector<Scalar> e = (x.array() - peak).exp().matrix();
  return e / e.sum();
}

/// Index of the largest element, lowest index on ties.
template <typename Derived>
Index argmax(const Eigen::MatrixBase<Derived>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Per-channel sum of absolute values over the spatial map.
template <typename Scalar>
Vector<Scalar> activation_strength(const Tensor3<Scalar>& featmap) {
  Vector<Scalar> s(featmap.channels());
  const Index plane = featmap.shape().plane();
  for (Index c = 0; c < featmap.channels(); ++c) {
    const Scalar* p = featmap.channel_data(c);
    double acc = 0.0;
    for (Index i = 0; i < plane; ++i) acc += std::abs(static_cast<double>(p[i]));
    s[c] = static_cast<Scalar>(acc);
  }
  return s;
}

}  // namespace lazyconv
