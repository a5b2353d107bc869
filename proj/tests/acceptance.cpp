// Acceptance suite on the reference configuration. Prints one PASS/FAIL line
// per criterion and exits nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "fixtures.hpp"
#include "lazyconv/cost_profile.hpp"
#include "lazyconv/inference.hpp"
#include "lazyconv/lazy_eval.hpp"
#include "lazyconv/mem_lazy.hpp"
#include "lazyconv/model_io.hpp"
#include "lazyconv/ops.hpp"
#include "lazyconv/pareto.hpp"
#include "lazyconv/predictor_train.hpp"
#include "oracles.hpp"

using namespace lazyconv;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s  %-28s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

/// Runs one criterion, turning an unexpected exception into a failure line.
void criterion(const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(false, name, std::string("threw: ") + e.what());
  }
}

Objectives toy(const Genome& x) {
  double tail = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) tail += x[i];
  tail /= double(x.size() - 1);
  return {x[0], 1.0 - x[0] + 2.0 * tail};
}

bool mutually_non_dominated(const Nsga2Result& r) {
  for (std::size_t i : r.front)
    for (std::size_t j : r.front)
      if (dominates(r.population[j].objectives, r.population[i].objectives)) return false;
  return true;
}

bool same_run(const Nsga2Result& a, const Nsga2Result& b) {
  if (a.archive.size() != b.archive.size() || a.front != b.front) return false;
  for (std::size_t i = 0; i < a.archive.size(); ++i)
    if (a.archive[i].genome != b.archive[i].genome || a.archive[i].objectives != b.archive[i].objectives) return false;
  return true;
}

}  // namespace

int main() {
  const unsigned threads = 1;
  auto t0 = Clock::now();
  const SyntheticSpec spec = SyntheticSpec::reference();
  const auto [net, data] = gen_synthetic(spec);
  const auto& labels = *data.labels;
  std::printf("reference net: %zu layers, %zu samples, eager %.0f FLOPs/sample (built in %.1fs)\n", net.size(),
              data.size(), eager_flops(net), seconds_since(t0));

  criterion("keep-1.0 equivalence", [&] {
    const auto t = Clock::now();
    const KeepPolicy policy = KeepPolicy::uniform(net, 1.0);
    double max_diff = 0.0;
    std::size_t agree = 0;
    for (std::size_t s = 0; s < data.size(); ++s) {
      const LazyResult lazy = forward_lazy(net, {}, policy, data.inputs[s]);
      const EagerResult eager = forward_eager(net, data.inputs[s]);
      max_diff = std::max(max_diff, double((lazy.logits - eager.logits).cwiseAbs().maxCoeff()));
      agree += argmax(lazy.logits) == labels[s];
    }
    const double acc = double(agree) / double(data.size());
    const double secs = seconds_since(t);
    report(max_diff <= 1e-5 && acc == 1.0 && secs < 60.0, "keep-1.0 equivalence",
           fmt("max|lazy-eager|=%.3g accuracy=%.4f time=%.1fs (limits 1e-5, 1.0, 60s)", max_diff, acc, secs));
  });

  criterion("FLOP linearity", [&] {
    std::size_t checked = 0, bad = 0;
    for (std::size_t i : net.conv_indices()) {
      const auto& L = net.layer(i).conv();
      const Shape3 out = net.output_shape(i);
      const std::uint64_t full = flops_conv(L, out, L.out_filters, L.in_channels);
      for (Index k = 1; k <= L.out_filters; ++k) {
        ++checked;
        if (flops_conv(L, out, k, L.in_channels) * static_cast<std::uint64_t>(L.out_filters) !=
            full * static_cast<std::uint64_t>(k))
          ++bad;
      }
    }
    report(bad == 0, "FLOP linearity", fmt("%zu (layer, k) pairs, %zu not exactly k/O", checked, bad));
  });

  // Predictors for the runtime criteria and the Pareto search.
  t0 = Clock::now();
  const TraceSet traces = collect_traces(net, data, threads);
  const double trace_secs = seconds_since(t0);
  const PredictorSet preds = train_all(traces, TrainConfig{}, threads).first;

  criterion("predictor quality", [&] {
    const auto t = Clock::now();
    bool mae_ok = true;
    double ov = 0.0, base = 0.0;
    int n = 0;
    std::string worst;
    for (std::uint64_t seed = 42; seed < 47; ++seed) {
      TrainConfig cfg;
      cfg.seed = seed;
      for (const TrainReport& r : train_all(traces, cfg, threads).second) {
        if (!(r.validation_mae <= r.baseline_mae)) {
          mae_ok = false;
          worst = r.target_layer;
        }
        ov += r.overlap[1];
        base += r.baseline_overlap[1];
        ++n;
      }
    }
    ov /= n;
    base /= n;
    const double secs = seconds_since(t) + trace_secs;
    report(mae_ok && ov - base >= 0.05 && secs < 300.0, "predictor quality",
           fmt("val MAE <= baseline on all %d pair-seeds%s; top-50%% overlap %.4f vs baseline %.4f (gain %.4f, need "
               ">= 0.05); time=%.1fs",
               n, mae_ok ? "" : (" (violated at " + worst + ")").c_str(), ov, base, ov - base, secs));
  });

  criterion("wall-clock speedup", [&] {
    const KeepPolicy policy = KeepPolicy::uniform(net, 0.25);
    const std::span<const Tensor3f> inputs = std::span(data.inputs).first(100);
    CostReport rep;
    rep.layers.resize(net.size());
    measure_runtime(net, preds, policy, inputs, 5, rep);
    const double speedup = rep.eager_total_seconds / rep.lazy_total_seconds;
    bool mono = true;
    std::string detail;
    const std::vector<double> fractions{0.25, 0.5, 0.75, 1.0};
    for (const auto& name : net.conv_names()) {
      const auto rows = bench_layer(net, name, fractions, data.inputs[0], 25);
      bool ok = rows.back().median_seconds >= rows.front().median_seconds;
      for (std::size_t i = 1; i < rows.size(); ++i) ok = ok && rows[i].median_seconds >= 0.9 * rows[i - 1].median_seconds;
      mono = mono && ok;
      detail += fmt(" %s[%.0f %.0f %.0f %.0f us]%s", name.c_str(), rows[0].median_seconds * 1e6,
                    rows[1].median_seconds * 1e6, rows[2].median_seconds * 1e6, rows[3].median_seconds * 1e6,
                    ok ? "" : "!");
    }
    report(speedup >= 1.5 && mono, "wall-clock speedup",
           fmt("policy 0.25 throughput %.2fx eager (need >= 1.5); bench monotone within 10%%: %s;", speedup,
               mono ? "yes" : "no") +
               detail);
  });

  criterion("prediction overhead", [&] {
    const KeepPolicy policy = KeepPolicy::uniform(net, 0.25);
    CostReport rep;
    rep.layers.resize(net.size());
    measure_runtime(net, preds, policy, std::span(data.inputs).first(100), 5, rep);
    const double ratio = rep.overhead_seconds / rep.eager_total_seconds;
    report(ratio <= 0.05, "prediction overhead",
           fmt("predict+select %.2f us vs eager %.2f us per sample = %.2f%% (limit 5%%)", rep.overhead_seconds * 1e6,
               rep.eager_total_seconds * 1e6, 100.0 * ratio));
  });

  criterion("sensitivity ordering", [&] {
    const std::vector<double> fractions{0.2, 0.4, 0.6, 0.8, 1.0};
    bool ok = true;
    std::string detail;
    for (const auto& name : net.conv_names()) {
      const auto rows = sensitivity_sweep(net, data, name, fractions, SweepMode::Oracle, nullptr, threads);
      bool layer_ok = rows.back().accuracy == 1.0;
      for (std::size_t i = 1; i < rows.size(); ++i) layer_ok = layer_ok && rows[i].accuracy >= rows[i - 1].accuracy - 0.03;
      ok = ok && layer_ok;
      detail += " " + name + "[";
      for (const auto& r : rows) detail += fmt("%.3f%s", r.accuracy, &r == &rows.back() ? "" : " ");
      detail += layer_ok ? "]" : "]!";
    }
    report(ok, "sensitivity ordering", "oracle sweep 0.2..1.0:" + detail);
  });

  criterion("NSGA-II correctness", [&] {
    std::mt19937 g(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> grid(0, 19);
    int sort_mismatch = 0;
    for (int inst = 0; inst < 100; ++inst) {
      std::vector<Objectives> pts(200);
      for (auto& p : pts) p = inst % 2 ? Objectives{u(g), u(g)} : Objectives{double(grid(g)), double(grid(g))};
      const auto fronts = non_dominated_sort(pts);
      const auto rank = oracle::pareto_ranks({pts.begin(), pts.end()});
      std::size_t seen = 0;
      bool ok = true;
      for (std::size_t r = 0; r < fronts.size(); ++r)
        for (std::size_t i : fronts[r]) {
          ok = ok && rank[i] == r;
          ++seen;
        }
      if (!ok || seen != pts.size()) ++sort_mismatch;
    }

    Nsga2Config cfg;
    cfg.generations = 60;
    const auto a = nsga2(cfg, 4, toy);
    const auto b = nsga2(cfg, 4, toy);
    double worst = 0.0;
    for (std::size_t i : a.front) {
      const auto& f = a.population[i].objectives;
      worst = std::max(worst, std::abs(f[0] + f[1] - 1.0));
    }

    Nsga2Config small;
    small.population = 8;
    small.generations = 3;
    const Dataset sub = data.subset(choose_subset(data.size(), 50, 7));
    PolicyEvaluator e1(net, preds, sub), e2(net, preds, sub);
    const std::size_t len = e1.prunable_layers().size();
    const auto r1 = nsga2(small, len, std::cref(e1));
    const auto r2 = nsga2(small, len, std::cref(e2));

    const bool nd = mutually_non_dominated(a) && mutually_non_dominated(b) && mutually_non_dominated(r1);
    const bool same = same_run(a, b) && same_run(r1, r2);
    report(sort_mismatch == 0 && nd && worst <= 0.05 && same, "NSGA-II correctness",
           fmt("sort mismatches %d/100; fronts non-dominated: %s; toy max|f1+f2-1| %.4f (limit 0.05); same-seed "
               "bit-identical: %s",
               sort_mismatch, nd ? "yes" : "no", worst, same ? "yes" : "no"));
  });

  criterion("Pareto anchors", [&] {
    const auto t = Clock::now();
    const Dataset sub = data.subset(choose_subset(data.size(), 200, 42));
    PolicyEvaluator ev(net, preds, sub);
    Nsga2Config cfg;
    cfg.threads = threads;
    const std::vector<Genome> seeds{Genome(ev.prunable_layers().size(), 1.0)};
    const auto res = nsga2(cfg, ev.prunable_layers().size(), std::cref(ev), seeds);
    const double secs = seconds_since(t);
    bool anchor = false;
    for (const auto& a : res.archive) anchor = anchor || (a.objectives[0] == 0.0 && a.objectives[1] == ev.eager_cost());
    double best_err = INFINITY, best_cost = INFINITY;
    for (std::size_t i : res.front) {
      const auto& f = res.population[i].objectives;
      if (f[1] <= 0.6 * ev.eager_cost() && f[0] < best_err) {
        best_err = f[0];
        best_cost = f[1] / ev.eager_cost();
      }
    }
    report(anchor && best_err <= 0.15 && secs < 900.0 && mutually_non_dominated(res), "Pareto anchors",
           fmt("archive has (error 0, eager cost): %s; best front error at <= 0.6x cost: %.3f at %.3fx (limit "
               "0.15); %zu evaluations, %zu distinct; time=%.1fs",
               anchor ? "yes" : "no", best_err, best_cost, res.archive.size(), ev.evaluations(), secs));
  });

  criterion("memory-lazy exactness", [&] {
    const auto dir = fixture::temp_dir("acceptance_model");
    save_model(net, dir);
    const WeightIndex index = build_weight_index(dir, "fc1");
    const auto& L = net.layer(net.index_of("fc1")).dense().layer;
    CountingReader reader(index.weights_path);
    std::mt19937 g(99);
    std::uniform_real_distribution<float> u(0.0f, 2.0f);
    std::uniform_int_distribution<Index> count(0, index.filters);
    double max_diff = 0.0;
    bool bytes_ok = true;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Index> all(static_cast<std::size_t>(index.filters));
      std::iota(all.begin(), all.end(), Index{0});
      std::shuffle(all.begin(), all.end(), g);
      all.resize(static_cast<std::size_t>(count(g)));
      std::sort(all.begin(), all.end());
      const FilterMask mask(index.filters, all);
      Vector<float> x = Vector<float>::Zero(index.in_dim);
      for (Index f : all)
        for (Index t = 0; t < index.group; ++t) x[f * index.group + t] = u(g);
      reader.reset_counters();
      const Vector<float> y = dense_lazy(x, mask, index, L.bias, reader);
      max_diff = std::max(max_diff, double((y - dense<float>(x, L)).cwiseAbs().maxCoeff()));
      bytes_ok = bytes_ok && reader.bytes_read() * static_cast<std::uint64_t>(index.filters) ==
                                 index.weight_bytes() * static_cast<std::uint64_t>(mask.count());
    }
    const std::uint64_t bytes = memory_footprint(25088, 4096, 1.0);
    const std::uint64_t params = bytes / 4 + 4096;  // weights plus one bias per output
    const long mb = std::lround(double(bytes) / 1e6);
    report(max_diff <= 1e-6 && bytes_ok && params == 102764544ull && mb == 411, "memory-lazy exactness",
           fmt("max|lazy-dense| %.3g over 100 masks (limit 1e-6); bytes read == |mask|/O of %llu: %s; 25088x4096 "
               "-> %llu weights + 4096 biases = %llu parameters, %llu weight bytes = %ld MB",
               max_diff, static_cast<unsigned long long>(index.weight_bytes()), bytes_ok ? "yes" : "no",
               static_cast<unsigned long long>(bytes / 4), static_cast<unsigned long long>(params),
               static_cast<unsigned long long>(bytes), mb));
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
