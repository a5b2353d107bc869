#include "lazyconv/cost_profile.hpp"

#include <chrono>

#include <json.hpp>

#include "lazyconv/parallel.hpp"

namespace lazyconv {

using Clock = std::chrono::steady_clock;

std::uint64_t flops_conv(const ConvLayerf& layer, const Shape3& out, Index kept_filters, Index active_in_channels) {
  if (kept_filters < 0 || kept_filters > layer.out_filters)
    throw ContractError("kept filters outside [0, out_filters]");
  if (active_in_channels < 0 || active_in_channels > layer.in_channels)
    throw ContractError("active input channels outside [0, in_channels]");
  const auto k = static_cast<std::uint64_t>(kept_filters);
  const auto positions = static_cast<std::uint64_t>(out.height * out.width);
  const auto taps = static_cast<std::uint64_t>(active_in_channels * layer.kernel_h * layer.kernel_w);
  return 2 * k * taps * positions + k * positions;
}

std::uint64_t flops_layer(const Layer& layer, const Shape3& in) {
  const auto elems = static_cast<std::uint64_t>(in.size());
  switch (layer.kind()) {
    case LayerKind::Conv: {
      const auto& c = layer.conv();
      return flops_conv(c, c.output_shape(in), c.out_filters, c.in_channels);
    }
    case LayerKind::Relu: return elems;
    case LayerKind::MaxPool: {
      const auto& p = std::get<MaxPool>(layer.op);
      const Shape3 out = maxpool_output_shape(in, p.pool, p.stride);
      return static_cast<std::uint64_t>(out.size()) * static_cast<std::uint64_t>(p.pool * p.pool - 1);
    }
    case LayerKind::Flatten: return 0;
    case LayerKind::Dense: {
      const auto& d = layer.dense().layer;
      return static_cast<std::uint64_t>(2 * d.in_dim * d.out_dim + d.out_dim);
    }
    case LayerKind::Softmax: return 3 * elems;
  }
  return 0;
}

std::uint64_t flops_predictor(Index outputs, Index inputs) {
  return static_cast<std::uint64_t>(2 * outputs * inputs + outputs);
}

double eager_flops(const Network& net) {
  double total = 0.0;
  for (std::size_t i = 0; i < net.size(); ++i) total += static_cast<double>(flops_layer(net.layer(i), net.input_shape_of(i)));
  return total;
}

namespace {

/// Per-layer lazy FLOPs of one run (conv from masks, others as eager) plus predictor FLOPs.
std::pair<std::vector<double>, double> lazy_breakdown(const Network& net, const PredictorSet& predictors,
                                                      const LazyResult& run) {
  std::vector<double> per_layer(net.size(), 0.0);
  double pred = 0.0;
  std::size_t conv = 0;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Layer& l = net.layer(i);
    if (!l.is_conv()) {
      per_layer[i] = static_cast<double>(flops_layer(l, net.input_shape_of(i)));
      continue;
    }
    const ConvDiagnostics& d = run.layers.at(conv++);
    per_layer[i] = static_cast<double>(flops_conv(l.conv(), net.output_shape(i), d.mask.count(), d.active_inputs));
    if (d.predicted.size() > 0) {
      const auto& p = predictors.at(l.name);
      pred += static_cast<double>(flops_predictor(p.outputs(), p.inputs()));
    }
  }
  return {std::move(per_layer), pred};
}

}  // namespace

double lazy_flops_from_diagnostics(const Network& net, const PredictorSet& predictors, const LazyResult& run) {
  const auto [per_layer, pred] = lazy_breakdown(net, predictors, run);
  double total = pred;
  for (double f : per_layer) total += f;
  return total;
}

CostReport estimate_cost(const Network& net, const PredictorSet& predictors, const KeepPolicy& policy,
                         const Dataset& data, unsigned threads) {
  policy.validate(net);
  if (data.size() == 0) throw ContractError("estimate_cost needs at least one sample");
  const auto labels = reference_labels(net, data, threads);

  std::vector<std::vector<double>> per_sample(data.size());
  std::vector<double> pred_flops(data.size(), 0.0);
  std::vector<Index> predicted(data.size());
  parallel_for(data.size(), threads, [&](std::size_t s) {
    const LazyResult run = forward_lazy(net, predictors, policy, data.inputs[s]);
    auto [per_layer, pred] = lazy_breakdown(net, predictors, run);
    per_sample[s] = std::move(per_layer);
    pred_flops[s] = pred;
    predicted[s] = argmax(run.logits);
  });

  CostReport r;
  r.samples = static_cast<Index>(data.size());
  const auto n = static_cast<double>(data.size());
  for (std::size_t i = 0; i < net.size(); ++i) {
    LayerCost c;
    c.name = net.layer(i).name;
    c.kind = net.layer(i).kind();
    c.eager_flops = static_cast<double>(flops_layer(net.layer(i), net.input_shape_of(i)));
    // per-sample counts are integers; summing them before dividing keeps the mean exact at keep 1.0
    double sum = 0.0;
    for (const auto& s : per_sample) sum += s[i];
    c.lazy_flops = sum / n;
    r.eager_total_flops += c.eager_flops;
    r.lazy_total_flops += c.lazy_flops;
    r.layers.push_back(std::move(c));
  }
  double pred_sum = 0.0;
  for (double p : pred_flops) pred_sum += p;
  r.predictor_flops = pred_sum / n;
  r.lazy_total_flops += r.predictor_flops;
  r.accuracy = accuracy(predicted, labels);
  return r;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  if (values.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(values.begin(), mid);
  return 0.5 * (lo + hi);
}

void measure_runtime(const Network& net, const PredictorSet& predictors, const KeepPolicy& policy,
                     std::span<const Tensor3f> inputs, int repetitions, CostReport& report) {
  if (repetitions < 1) throw ContractError("repetitions must be >= 1");
  if (inputs.empty()) throw ContractError("measure_runtime needs at least one input");
  if (report.layers.size() != net.size()) throw ContractError("cost report does not describe this network");
  const auto n = static_cast<double>(inputs.size());
  std::vector<std::vector<double>> eager_layers(net.size()), lazy_layers(net.size());
  std::vector<double> eager_totals, lazy_totals, overhead;
  for (int rep = -1; rep < repetitions; ++rep) {
    ForwardProfile pe, pl;
    auto t0 = Clock::now();
    for (const auto& x : inputs) forward_eager(net, x, &pe);
    const double te = std::chrono::duration<double>(Clock::now() - t0).count();
    t0 = Clock::now();
    for (const auto& x : inputs) forward_lazy(net, predictors, policy, x, &pl);
    const double tl = std::chrono::duration<double>(Clock::now() - t0).count();
    if (rep < 0) continue;  // warm-up
    for (std::size_t i = 0; i < net.size(); ++i) {
      eager_layers[i].push_back(pe.layer_seconds[i] / n);
      lazy_layers[i].push_back(pl.layer_seconds[i] / n);
    }
    eager_totals.push_back(te / n);
    lazy_totals.push_back(tl / n);
    overhead.push_back(pl.selection_seconds / n);
  }
  for (std::size_t i = 0; i < net.size(); ++i) {
    report.layers[i].eager_seconds = median(eager_layers[i]);
    report.layers[i].lazy_seconds = median(lazy_layers[i]);
  }
  report.eager_total_seconds = median(eager_totals);
  report.lazy_total_seconds = median(lazy_totals);
  report.overhead_seconds = median(overhead);
}

namespace {

/// Activation entering layer `idx` of an eager run.
Tensor3f layer_input(const Network& net, std::size_t idx, const Tensor3f& input) {
  ConvHooks eager;
  ForwardState st;
  st.activation = input;
  run_layers(net, 0, idx, st, eager);
  return st.activation;
}

}  // namespace

std::vector<BenchRow> bench_layer(const Network& net, const std::string& layer_name, std::span<const double> fractions,
                                  const Tensor3f& input, int repetitions) {
  if (repetitions < 5) throw ContractError("bench_layer needs at least 5 repetitions");
  const std::size_t idx = net.index_of(layer_name);
  if (!net.layer(idx).is_conv()) throw ContractError("layer '" + layer_name + "' is not a conv layer");
  const ConvLayerf& conv = net.layer(idx).conv();
  const Tensor3f x = layer_input(net, idx, input);
  const Vector<float> strengths = activation_strength(conv2d(x, conv));

  std::vector<BenchRow> rows;
  Tensor3f out;
  for (double f : fractions) {
    const FilterMask mask = select_top_fraction(strengths, f, conv.out_filters);
    conv2d_into(x, conv, out, &mask);  // warm-up
    std::vector<double> times;
    for (int r = 0; r < repetitions; ++r) {
      const auto t0 = Clock::now();
      conv2d_into(x, conv, out, &mask);
      times.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
    rows.push_back({f, median(std::move(times))});
  }
  return rows;
}

namespace {

/// Keeps the top fraction of one layer's actual strengths and zeroes the rest.
void apply_oracle_mask(Tensor3f& out, Vector<float>& strengths, std::optional<FilterMask>& mask, double fraction) {
  FilterMask keep = select_top_fraction(strengths, fraction, out.channels());
  const Index plane = out.shape().plane();
  for (Index c = 0; c < out.channels(); ++c) {
    if (keep.contains(c)) continue;
    std::fill(out.channel_data(c), out.channel_data(c) + plane, 0.0f);
    strengths[c] = 0.0f;
  }
  mask = std::move(keep);
}

}  // namespace

std::vector<SweepRow> sensitivity_sweep(const Network& net, const Dataset& data, const std::string& layer_name,
                                        std::span<const double> fractions, SweepMode mode,
                                        const PredictorSet* predictors, unsigned threads) {
  const auto idx = net.find(layer_name);
  if (!idx || !net.layer(*idx).is_conv()) throw ContractError("unknown conv layer '" + layer_name + "'");
  if (mode == SweepMode::Predicted && predictors == nullptr)
    throw ContractError("predicted sweep mode needs strength predictors");
  if (mode == SweepMode::Predicted && net.conv_ordinal(layer_name) == 0)
    throw ContractError("the first conv layer has no predecessor to predict from");
  for (double f : fractions)
    if (!(f >= 0.0 && f <= 1.0)) throw ContractError("sweep fraction outside [0, 1]");

  const auto labels = reference_labels(net, data, threads);
  std::vector<std::vector<Index>> predicted(fractions.size(), std::vector<Index>(data.size()));

  parallel_for(data.size(), threads, [&](std::size_t s) {
    if (mode == SweepMode::Predicted) {
      for (std::size_t k = 0; k < fractions.size(); ++k) {
        KeepPolicy policy;
        policy.fractions[layer_name] = fractions[k];
        predicted[k][s] = argmax(forward_lazy(net, *predictors, policy, data.inputs[s]).logits);
      }
      return;
    }
    // The prefix up to and including the pruned layer is shared by every fraction.
    ConvHooks eager;
    ForwardState prefix;
    prefix.activation = data.inputs[s];
    run_layers(net, 0, *idx + 1, prefix, eager);
    for (std::size_t k = 0; k < fractions.size(); ++k) {
      ForwardState st = prefix;
      apply_oracle_mask(st.activation, st.previous_strengths, st.live, fractions[k]);
      if (st.live && st.live->full()) st.live.reset();
      run_layers(net, *idx + 1, net.size(), st, eager);
      predicted[k][s] = argmax(st.activation.data());
    }
  });

  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < fractions.size(); ++k) rows.push_back({fractions[k], accuracy(predicted[k], labels)});
  return rows;
}

std::string cost_report_json(const CostReport& r) {
  nlohmann::ordered_json j;
  j["samples"] = r.samples;
  j["accuracy"] = r.accuracy;
  j["eager_total_flops"] = r.eager_total_flops;
  j["lazy_total_flops"] = r.lazy_total_flops;
  j["flops_ratio"] = r.eager_total_flops > 0 ? r.lazy_total_flops / r.eager_total_flops : 0.0;
  j["predictor_flops"] = r.predictor_flops;
  if (r.eager_total_seconds >= 0) {
    j["eager_total_seconds"] = r.eager_total_seconds;
    j["lazy_total_seconds"] = r.lazy_total_seconds;
    j["overhead_seconds"] = r.overhead_seconds;
  }
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& c : r.layers) {
    nlohmann::ordered_json e;
    e["name"] = c.name;
    e["kind"] = to_string(c.kind);
    e["eager_flops"] = c.eager_flops;
    e["lazy_flops"] = c.lazy_flops;
    if (c.eager_seconds >= 0) {
      e["eager_seconds"] = c.eager_seconds;
      e["lazy_seconds"] = c.lazy_seconds;
    }
    layers.push_back(std::move(e));
  }
  j["layers"] = std::move(layers);
  return j.dump(2) + "\n";
}

}  // namespace lazyconv
