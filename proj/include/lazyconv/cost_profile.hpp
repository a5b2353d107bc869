#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lazyconv/inference.hpp"
#include "lazyconv/lazy_eval.hpp"

namespace lazyconv {

/// 2*k*active_in*kh*kw*out_h*out_w multiply/add plus k*out_h*out_w bias adds.
std::uint64_t flops_conv(const ConvLayerf& layer, const Shape3& output_shape, Index kept_filters,
                         Index active_in_channels);

/// Model FLOPs of a non-conv layer given its input shape (relu: one per
/// element; maxpool: pool^2-1 comparisons per output; dense: 2*in*out+out;
/// softmax: 3 per element; flatten: 0).
std::uint64_t flops_layer(const Layer& layer, const Shape3& input_shape);

/// 2*m*n + m.
std::uint64_t flops_predictor(Index outputs, Index inputs);

struct LayerCost {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  double eager_flops = 0.0;  // per sample
  double lazy_flops = 0.0;   // per sample, mean over the dataset
  double eager_seconds = -1.0;  // median wall-clock per sample; negative when not measured
  double lazy_seconds = -1.0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  double predictor_flops = 0.0;       // per sample
  double overhead_seconds = -1.0;     // predict + select per sample; negative when not measured
  double eager_total_flops = 0.0;     // sum of layer eager flops
  double lazy_total_flops = 0.0;      // sum of layer lazy flops + predictor flops
  double eager_total_seconds = -1.0;
  double lazy_total_seconds = -1.0;
  Index samples = 0;
  double accuracy = 0.0;  // lazy top-1 agreement with the reference labels
};

/// Model-based FLOPs of the lazy pass using each sample's actual masks.
CostReport estimate_cost(const Network& net, const PredictorSet& predictors, const KeepPolicy& policy,
                         const Dataset& data, unsigned threads = 1);

/// Recount of lazy conv + predictor FLOPs for one sample from its diagnostics.
double lazy_flops_from_diagnostics(const Network& net, const PredictorSet& predictors, const LazyResult& run);

/// Eager FLOPs for one sample.
double eager_flops(const Network& net);

/// Fills the wall-clock fields of `report`: median over `repetitions` passes
/// over `inputs` (one warm-up pass discarded), single thread.
void measure_runtime(const Network& net, const PredictorSet& predictors, const KeepPolicy& policy,
                     std::span<const Tensor3f> inputs, int repetitions, CostReport& report);

struct BenchRow {
  double fraction = 0.0;
  double median_seconds = 0.0;
};

/// Times conv2d of one layer at each keep fraction with an oracle mask (the
/// largest eager strengths), median of `repetitions` after a warm-up.
std::vector<BenchRow> bench_layer(const Network& net, const std::string& layer_name, std::span<const double> fractions,
                                  const Tensor3f& input, int repetitions);

enum class SweepMode { Oracle, Predicted };

struct SweepRow {
  double fraction = 0.0;
  double accuracy = 0.0;
};

/// Accuracy with only `layer_name` pruned at each fraction. Oracle mode keeps
/// the filters with the largest actual strengths of that run; predicted mode
/// uses the strength predictor.
std::vector<SweepRow> sensitivity_sweep(const Network& net, const Dataset& data, const std::string& layer_name,
                                        std::span<const double> fractions, SweepMode mode,
                                        const PredictorSet* predictors = nullptr, unsigned threads = 1);

double median(std::vector<double> values);

std::string cost_report_json(const CostReport& report);

}  // namespace lazyconv
