#pragma once

// Straightforward reference implementations used as test oracles. They share
// data types with the library but none of its algorithms.

#include <algorithm>
#include <array>
#include <climits>
#include <iterator>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "lazyconv/network.hpp"

namespace oracle {

using lazyconv::Index;

/// Six nested loops, float accumulation in the engine's documented order:
/// bias, then input channel, kernel row, kernel column. Padded taps contribute nothing.
inline lazyconv::Tensor3f conv(const lazyconv::Tensor3f& x, const lazyconv::ConvLayerf& L) {
  const Index oh = (x.height() + 2 * L.padding - L.kernel_h) / L.stride + 1;
  const Index ow = (x.width() + 2 * L.padding - L.kernel_w) / L.stride + 1;
  lazyconv::Tensor3f y(L.out_filters, oh, ow);
  for (Index o = 0; o < L.out_filters; ++o)
    for (Index r = 0; r < oh; ++r)
      for (Index c = 0; c < ow; ++c) {
        float acc = L.bias[o];
        for (Index i = 0; i < L.in_channels; ++i)
          for (Index kh = 0; kh < L.kernel_h; ++kh)
            for (Index kw = 0; kw < L.kernel_w; ++kw) {
              const Index yy = r * L.stride + kh - L.padding;
              const Index xx = c * L.stride + kw - L.padding;
              if (yy < 0 || yy >= x.height() || xx < 0 || xx >= x.width()) continue;
              acc += L.weight(o, i, kh, kw) * x(i, yy, xx);
            }
        y(o, r, c) = acc;
      }
  return y;
}

/// Same convolution accumulated in double, for tolerance checks.
inline std::vector<double> conv_double(const lazyconv::Tensor3f& x, const lazyconv::ConvLayerf& L) {
  const Index oh = (x.height() + 2 * L.padding - L.kernel_h) / L.stride + 1;
  const Index ow = (x.width() + 2 * L.padding - L.kernel_w) / L.stride + 1;
  std::vector<double> y(static_cast<std::size_t>(L.out_filters * oh * ow));
  for (Index o = 0; o < L.out_filters; ++o)
    for (Index r = 0; r < oh; ++r)
      for (Index c = 0; c < ow; ++c) {
        double acc = L.bias[o];
        for (Index i = 0; i < L.in_channels; ++i)
          for (Index kh = 0; kh < L.kernel_h; ++kh)
            for (Index kw = 0; kw < L.kernel_w; ++kw) {
              const Index yy = r * L.stride + kh - L.padding;
              const Index xx = c * L.stride + kw - L.padding;
              if (yy >= 0 && yy < x.height() && xx >= 0 && xx < x.width())
                acc += double(L.weight(o, i, kh, kw)) * x(i, yy, xx);
            }
        y[static_cast<std::size_t>((o * oh + r) * ow + c)] = acc;
      }
  return y;
}

inline lazyconv::Tensor3f maxpool(const lazyconv::Tensor3f& x, Index p, Index s) {
  const Index oh = (x.height() - p) / s + 1, ow = (x.width() - p) / s + 1;
  lazyconv::Tensor3f y(x.channels(), oh, ow);
  for (Index c = 0; c < x.channels(); ++c)
    for (Index r = 0; r < oh; ++r)
      for (Index q = 0; q < ow; ++q) {
        float m = x(c, r * s, q * s);
        for (Index a = 0; a < p; ++a)
          for (Index b = 0; b < p; ++b) m = std::max(m, x(c, r * s + a, q * s + b));
        y(c, r, q) = m;
      }
  return y;
}

inline std::vector<double> dense(const std::vector<float>& x, const lazyconv::DenseLayerf& L) {
  std::vector<double> y(static_cast<std::size_t>(L.out_dim));
  for (Index j = 0; j < L.out_dim; ++j) {
    double acc = L.bias[j];
    for (Index i = 0; i < L.in_dim; ++i) acc += double(L.weights(j, i)) * x[static_cast<std::size_t>(i)];
    y[static_cast<std::size_t>(j)] = acc;
  }
  return y;
}

inline std::vector<double> strengths(const lazyconv::Tensor3f& t) {
  std::vector<double> s(static_cast<std::size_t>(t.channels()), 0.0);
  for (Index c = 0; c < t.channels(); ++c)
    for (Index h = 0; h < t.height(); ++h)
      for (Index w = 0; w < t.width(); ++w) s[static_cast<std::size_t>(c)] += std::abs(double(t(c, h, w)));
  return s;
}

/// ceil(num * layer / den) with integers only.
inline Index kept_count_rational(std::int64_t num, std::int64_t den, Index layer) {
  return static_cast<Index>((num * layer + den - 1) / den);
}

/// Indices of the k largest values; equal values prefer the lower index. Sorted ascending.
inline std::vector<Index> top_k(const std::vector<double>& v, Index k) {
  std::vector<Index> idx(v.size());
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Index a, Index b) { return v[static_cast<std::size_t>(a)] > v[static_cast<std::size_t>(b)]; });
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline double overlap(const std::vector<double>& pred, const std::vector<double>& actual, Index k) {
  if (k == 0) return 1.0;
  const auto a = top_k(pred, k), b = top_k(actual, k);
  std::vector<Index> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  return double(both.size()) / double(k);
}

/// Pareto ranks by repeated peeling: rank r holds points dominated only by points of lower rank.
inline std::vector<std::size_t> pareto_ranks(const std::vector<std::array<double, 2>>& pts) {
  auto dom = [](const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1]);
  };
  const std::size_t n = pts.size();
  std::vector<std::size_t> rank(n, SIZE_MAX);
  std::size_t assigned = 0;
  for (std::size_t r = 0; assigned < n; ++r) {
    std::vector<std::size_t> layer;
    for (std::size_t i = 0; i < n; ++i) {
      if (rank[i] != SIZE_MAX) continue;
      bool dominated = false;
      for (std::size_t j = 0; j < n && !dominated; ++j)
        if (j != i && rank[j] == SIZE_MAX && dom(pts[j], pts[i])) dominated = true;
      if (!dominated) layer.push_back(i);
    }
    for (std::size_t i : layer) rank[i] = r;
    assigned += layer.size();
  }
  return rank;
}

/// Crowding distance straight from its definition, with ties in an objective
/// broken by position so boundary points are unambiguous.
inline std::vector<double> crowding(const std::vector<std::array<double, 2>>& f) {
  const std::size_t n = f.size();
  std::vector<double> d(n, 0.0);
  if (n <= 2) return std::vector<double>(n, INFINITY);
  for (int m = 0; m < 2; ++m) {
    std::vector<std::size_t> ord(n);
    std::iota(ord.begin(), ord.end(), 0);
    std::stable_sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return f[a][m] < f[b][m]; });
    const double range = f[ord.back()][m] - f[ord.front()][m];
    d[ord.front()] = d[ord.back()] = INFINITY;
    if (range <= 0) continue;
    for (std::size_t i = 1; i + 1 < n; ++i) d[ord[i]] += (f[ord[i + 1]][m] - f[ord[i - 1]][m]) / range;
  }
  return d;
}

inline lazyconv::Tensor3f random_tensor(Index c, Index h, Index w, std::mt19937& g, float lo = -1, float hi = 1) {
  std::uniform_real_distribution<float> u(lo, hi);
  lazyconv::Tensor3f t(c, h, w);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(g);
  return t;
}

inline lazyconv::ConvLayerf random_conv(Index o, Index i, Index k, Index stride, Index pad, std::mt19937& g) {
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  lazyconv::ConvLayerf L;
  L.out_filters = o;
  L.in_channels = i;
  L.kernel_h = L.kernel_w = k;
  L.stride = stride;
  L.padding = pad;
  L.weights.resize(o, i * k * k);
  for (Index r = 0; r < L.weights.rows(); ++r)
    for (Index c = 0; c < L.weights.cols(); ++c) L.weights(r, c) = u(g);
  L.bias.resize(o);
  for (Index r = 0; r < o; ++r) L.bias[r] = u(g);
  return L;
}

inline lazyconv::DenseLayerf random_dense(Index in, Index out, std::mt19937& g) {
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  lazyconv::DenseLayerf L;
  L.in_dim = in;
  L.out_dim = out;
  L.weights.resize(out, in);
  for (Index r = 0; r < out; ++r)
    for (Index c = 0; c < in; ++c) L.weights(r, c) = u(g);
  L.bias.resize(out);
  for (Index r = 0; r < out; ++r) L.bias[r] = u(g);
  return L;
}

/// Whole-network evaluation from the oracle primitives. `on_conv` sees each raw
/// conv output (by conv ordinal) and may modify it.
inline std::vector<double> forward(const lazyconv::Network& net, const lazyconv::Tensor3f& input,
                                   const std::function<void(std::size_t, lazyconv::Tensor3f&)>& on_conv = {}) {
  using lazyconv::LayerKind;
  lazyconv::Tensor3f t = input;
  std::vector<float> flat;
  bool flattened = false;
  std::size_t ordinal = 0;
  for (const lazyconv::Layer& L : net.layers()) {
    switch (L.kind()) {
      case LayerKind::Conv:
        t = conv(t, L.conv());
        if (on_conv) on_conv(ordinal, t);
        ++ordinal;
        break;
      case LayerKind::Relu:
        if (flattened)
          for (auto& v : flat) v = std::max(v, 0.0f);
        else
          for (Index n = 0; n < t.size(); ++n) t.data()[n] = std::max(t.data()[n], 0.0f);
        break;
      case LayerKind::MaxPool:
        t = maxpool(t, std::get<lazyconv::MaxPool>(L.op).pool, std::get<lazyconv::MaxPool>(L.op).stride);
        break;
      case LayerKind::Flatten:
        flat.assign(t.data().data(), t.data().data() + t.size());
        flattened = true;
        break;
      case LayerKind::Dense: {
        const auto y = dense(flat, L.dense().layer);
        flat.assign(y.begin(), y.end());
        break;
      }
      case LayerKind::Softmax:
        break;
    }
  }
  return std::vector<double>(flat.begin(), flat.end());
}

inline Index argmax(const std::vector<double>& v) {
  return static_cast<Index>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace oracle
