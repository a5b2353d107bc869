#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lazyconv/network.hpp"

namespace lazyconv {

struct EagerResult {
  Vector<float> logits;
  std::vector<Vector<float>> strengths;  // one per conv layer, network order, pre-ReLU
};

/// Unpruned forward pass; every filter of every layer is evaluated.
EagerResult forward_eager(const Network& net, const Tensor3f& input, ForwardProfile* profile = nullptr);

/// Per-sample, per-conv-layer activation strengths of unpruned runs.
struct TraceSet {
  std::string fingerprint;
  std::vector<std::string> layer_names;
  std::vector<RowMatrixXf> strengths;  // per layer: samples x filters

  Index sample_count() const { return strengths.empty() ? 0 : strengths.front().rows(); }
  std::size_t layer_position(const std::string& name) const;
  const RowMatrixXf& layer(const std::string& name) const { return strengths[layer_position(name)]; }
};

TraceSet collect_traces(const Network& net, const Dataset& data, unsigned threads = 1);

/// traces.bin: float32 LE, sample-major then layer-major (manifest order).
/// traces.json: {fingerprint, samples, layers: [{name, size}]}.
void save_traces(const TraceSet& traces, const std::filesystem::path& dir);
TraceSet load_traces(const std::filesystem::path& dir);

/// Fraction of samples whose argmax output equals its label.
double accuracy(std::span<const Index> predicted, std::span<const Index> labels);

/// Labels if present, otherwise the eager argmax of every sample.
std::vector<Index> reference_labels(const Network& net, const Dataset& data, unsigned threads = 1);

}  // namespace lazyconv
