#include "lazyconv/cli.hpp"

#include <chrono>
#include <ctime>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lazyconv/cost_profile.hpp"
#include "lazyconv/inference.hpp"
#include "lazyconv/lazy_eval.hpp"
#include "lazyconv/mem_lazy.hpp"
#include "lazyconv/model_io.hpp"
#include "lazyconv/pareto.hpp"
#include "lazyconv/predictor_train.hpp"
#include "lazyconv/synthetic.hpp"

namespace lazyconv::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Collects what is needed to re-run a command and writes run_manifest.json next to its outputs.
class RunManifest {
 public:
  RunManifest(const CLI::App& sub, std::string command) : command_(std::move(command)), started_(utc_now()) {
    for (const CLI::Option* opt : sub.get_options()) {
      const std::string name = opt->get_single_name();
      if (name.empty() || name == "help") continue;
      if (opt->count() > 0) {
        std::string v;
        for (const auto& r : opt->results()) v += (v.empty() ? "" : ",") + r;
        flags_[name] = opt->get_expected_min() == 0 && v.empty() ? "true" : v;
      } else {
        flags_[name] = opt->get_default_str();
      }
    }
  }

  void seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }
  void input(const fs::path& path) {
    if (fs::is_regular_file(path)) inputs_[path.string()] = io::file_fingerprint(path);
  }
  void input_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) return;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() != "run_manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) input(f);
  }
  ojson& extra() { return extra_; }

  void write(const fs::path& out_dir) const {
    ojson j;
    j["command"] = command_;
    j["flags"] = flags_;
    j["seeds"] = seeds_;
    j["inputs"] = inputs_;
    j["tool_version"] = LAZYCONV_VERSION;
    j["started"] = started_;
    j["finished"] = utc_now();
    if (!extra_.empty()) j["extra"] = extra_;
    fs::create_directories(out_dir);
    io::write_text(out_dir / "run_manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::string started_;
  std::map<std::string, std::string> flags_;
  std::map<std::string, std::uint64_t> seeds_;
  std::map<std::string, std::string> inputs_;
  ojson extra_ = ojson::object();
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

struct Options {
  std::string model, data, traces, predictors, out, policy = "all-1.0", mode = "oracle", objective = "flops";
  std::vector<std::string> layers;
  std::vector<double> fractions;
  std::uint64_t seed = 42;
  unsigned threads = 1;
  std::size_t pop = 40, gens = 30, subset = 200;
  int reps = 25;
  std::size_t sample = 0;
  // gen-synthetic
  std::size_t samples = 1000;
  std::vector<Index> filters{16, 32, 32, 64}, pool_after{2, 4}, dense{64, 10}, input{3, 32, 32};
  Index prototypes = 10;
  double noise = 0.3;
  bool softmax = false;
  // train-predictor
  TrainConfig train;
};

Network open_model(const std::string& path, RunManifest& m) {
  m.input_dir(path);
  return load_model(path);
}

Dataset open_data(const std::string& path, RunManifest& m) {
  m.input_dir(path);
  return load_dataset(path);
}

PredictorSet open_predictors(const std::string& path, const Network& net, RunManifest& m) {
  m.input_dir(path);
  auto loaded = load_predictors(path);
  if (loaded.fingerprint != network_fingerprint(net))
    throw FingerprintError("predictors in " + path + " were trained for a different network");
  return std::move(loaded.predictors);
}

std::vector<std::string> conv_layers_or(const Network& net, const std::vector<std::string>& requested) {
  if (!requested.empty()) return requested;
  return net.conv_names();
}

void write_csv(const fs::path& path, const std::string& header, const std::vector<std::pair<double, double>>& rows) {
  std::string text = header + "\n";
  for (const auto& [a, b] : rows) text += fmt(a) + "," + fmt(b) + "\n";
  io::write_text(path, text);
}

int cmd_gen(const Options& o, RunManifest& m) {
  if (o.input.size() != 3) throw ContractError("--input takes C,H,W");
  SyntheticSpec spec;
  spec.input_shape = {o.input[0], o.input[1], o.input[2]};
  spec.conv_filters = o.filters;
  spec.pool_after = o.pool_after;
  spec.dense_dims = o.dense;
  spec.softmax_head = o.softmax;
  spec.dataset_size = static_cast<Index>(o.samples);
  spec.seed = o.seed;
  spec.prototypes = o.prototypes;
  spec.noise = o.noise;
  m.seed("seed", o.seed);
  auto [net, data] = gen_synthetic(spec);
  save_model(net, fs::path(o.out) / "model");
  save_dataset(data, fs::path(o.out) / "data");
  std::cout << "wrote " << (fs::path(o.out) / "model").string() << " (" << net.size() << " layers, fingerprint "
            << network_fingerprint(net) << ") and " << data.size() << " samples\n";
  return 0;
}

int cmd_trace(const Options& o, RunManifest& m) {
  const Network net = open_model(o.model, m);
  const Dataset data = open_data(o.data, m);
  const TraceSet t = collect_traces(net, data, o.threads);
  save_traces(t, o.out);
  std::cout << "traced " << t.sample_count() << " samples over " << t.layer_names.size() << " conv layers\n";
  return 0;
}

int cmd_train(const Options& o, RunManifest& m) {
  m.input_dir(o.traces);
  const TraceSet t = load_traces(o.traces);
  TrainConfig cfg = o.train;
  cfg.seed = o.seed;
  m.seed("seed", cfg.seed);
  auto [set, reports] = train_all(t, cfg, o.threads);
  save_predictors(set, t.fingerprint, o.out);
  io::write_text(fs::path(o.out) / "train_report.json", report_json(reports));
  for (const auto& r : reports)
    std::cout << r.source_layer << " -> " << r.target_layer << ": val MAE " << fmt(r.validation_mae) << " (baseline "
              << fmt(r.baseline_mae) << "), top-50% overlap " << fmt(r.overlap[1]) << "\n";
  return 0;
}

int cmd_eval(const Options& o, RunManifest& m) {
  const Network net = open_model(o.model, m);
  const Dataset data = open_data(o.data, m);
  const PredictorSet preds = o.predictors.empty() ? PredictorSet{} : open_predictors(o.predictors, net, m);
  if (fs::is_regular_file(o.policy)) m.input(o.policy);
  const KeepPolicy policy = parse_policy(o.policy, net);
  CostReport r = estimate_cost(net, preds, policy, data, o.threads);
  if (o.reps > 0) {
    const std::size_t n = std::min<std::size_t>(data.size(), o.subset);
    measure_runtime(net, preds, policy, std::span(data.inputs).first(n), o.reps, r);
  }
  io::write_text(fs::path(o.out) / "cost_report.json", cost_report_json(r));
  std::cout << "accuracy " << fmt(r.accuracy) << ", flops " << fmt(r.lazy_total_flops) << " / "
            << fmt(r.eager_total_flops) << " eager\n";
  return 0;
}

int cmd_sweep(const Options& o, RunManifest& m) {
  const Network net = open_model(o.model, m);
  const Dataset data = open_data(o.data, m);
  SweepMode mode;
  if (o.mode == "oracle")
    mode = SweepMode::Oracle;
  else if (o.mode == "predicted")
    mode = SweepMode::Predicted;
  else
    throw ContractError("--mode must be oracle or predicted");
  PredictorSet preds;
  if (mode == SweepMode::Predicted) preds = open_predictors(o.predictors, net, m);
  const std::vector<double> fractions = o.fractions.empty() ? std::vector<double>{0.2, 0.4, 0.6, 0.8, 1.0} : o.fractions;
  for (const auto& layer : conv_layers_or(net, o.layers)) {
    if (mode == SweepMode::Predicted && net.conv_ordinal(layer) == 0 && o.layers.empty()) continue;
    const auto rows = sensitivity_sweep(net, data, layer, fractions, mode, &preds, o.threads);
    std::vector<std::pair<double, double>> out;
    for (const auto& r : rows) out.emplace_back(r.fraction, r.accuracy);
    write_csv(fs::path(o.out) / ("sensitivity_" + layer + ".csv"), "fraction,accuracy", out);
    std::cout << layer << ":";
    for (const auto& r : rows) std::cout << " " << fmt(r.fraction) << "->" << fmt(r.accuracy);
    std::cout << "\n";
  }
  return 0;
}

int cmd_bench(const Options& o, RunManifest& m) {
  const Network net = open_model(o.model, m);
  const Dataset data = open_data(o.data, m);
  if (o.sample >= data.size()) throw ContractError("--sample out of range");
  const std::vector<double> fractions = o.fractions.empty() ? std::vector<double>{0.25, 0.5, 0.75, 1.0} : o.fractions;
  for (const auto& layer : conv_layers_or(net, o.layers)) {
    const auto rows = bench_layer(net, layer, fractions, data.inputs[o.sample], o.reps);
    std::vector<std::pair<double, double>> out;
    for (const auto& r : rows) out.emplace_back(r.fraction, r.median_seconds);
    write_csv(fs::path(o.out) / ("bench_" + layer + ".csv"), "fraction,median_seconds", out);
    std::cout << layer << ":";
    for (const auto& r : rows) std::cout << " " << fmt(r.fraction) << "->" << fmt(r.median_seconds * 1e3) << "ms";
    std::cout << "\n";
  }
  return 0;
}

int cmd_pareto(const Options& o, RunManifest& m) {
  const Network net = open_model(o.model, m);
  const Dataset data = open_data(o.data, m);
  const PredictorSet preds = open_predictors(o.predictors, net, m);
  const auto subset = choose_subset(data.size(), o.subset, o.seed);
  m.seed("seed", o.seed);
  m.extra()["subset"] = subset;
  PolicyEvaluator evaluator(net, preds, data.subset(subset));
  Evaluator objective = std::cref(evaluator);
  if (o.objective == "seconds") {
    // wall-clock cost; not reproducible bit-for-bit
    const Dataset sub = data.subset(subset);
    objective = [&evaluator, &net, &preds, sub](const Genome& g) {
      const Objectives flops = evaluator(g);
      CostReport r;
      r.layers.resize(net.size());
      measure_runtime(net, preds, evaluator.policy(g), sub.inputs, 3, r);
      return Objectives{flops[0], r.lazy_total_seconds};
    };
  } else if (o.objective != "flops") {
    throw ContractError("--objective must be flops or seconds");
  }
  Nsga2Config cfg;
  cfg.population = o.pop;
  cfg.generations = o.gens;
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  const std::vector<Genome> seeds{Genome(evaluator.prunable_layers().size(), 1.0)};
  const Nsga2Result res = nsga2(cfg, evaluator.prunable_layers().size(), objective, seeds);
  io::write_text(fs::path(o.out) / "pareto.csv", archive_csv(res.archive, evaluator.prunable_layers()));
  io::write_text(fs::path(o.out) / "front.csv", front_csv(res, evaluator.prunable_layers()));
  std::cout << "evaluated " << res.archive.size() << " points (" << evaluator.evaluations()
            << " distinct), front has " << res.front.size() << " points; eager flops " << fmt(evaluator.eager_cost())
            << "\n";
  return 0;
}

int cmd_mem(const Options& o, RunManifest& m) {
  const Network net = open_model(o.model, m);
  const Dataset data = open_data(o.data, m);
  const PredictorSet preds = o.predictors.empty() ? PredictorSet{} : open_predictors(o.predictors, net, m);
  if (fs::is_regular_file(o.policy)) m.input(o.policy);
  const KeepPolicy policy = parse_policy(o.policy, net);

  std::string layer = o.layers.empty() ? std::string() : o.layers.front();
  if (layer.empty()) {
    for (std::size_t i = 1; i < net.size() && layer.empty(); ++i)
      if (net.layer(i).kind() == LayerKind::Dense && net.layer(i - 1).kind() == LayerKind::Flatten)
        layer = net.layer(i).name;
    if (layer.empty()) throw ContractError("network has no flatten-fed dense layer");
  }
  const WeightIndex index = build_weight_index(o.model, layer);
  const std::size_t dense_idx = net.index_of(layer);
  const auto& dense_layer = net.layer(dense_idx).dense().layer;
  const std::size_t feeding_conv = [&] {
    std::size_t k = dense_idx;
    while (!net.layer(k).is_conv()) --k;
    return net.conv_ordinal(net.layer(k).name);
  }();

  CountingReader reader(index.weights_path);
  MemoryReport rep;
  rep.full_bytes = index.weight_bytes();
  const std::size_t n = std::min<std::size_t>(data.size(), o.subset);
  for (std::size_t s = 0; s < n; ++s) {
    // activation entering the dense layer under the lazy policy
    const LazyResult run = forward_lazy(net, preds, policy, data.inputs[s]);
    ForwardState st;
    st.activation = data.inputs[s];
    class Replay : public ConvHooks {
     public:
      explicit Replay(const LazyResult& r) : r_(r) {}
      std::optional<FilterMask> select(const ConvSite& site) override {
        const auto& mask = r_.layers[site.conv_ordinal].mask;
        return mask.full() ? std::nullopt : std::optional<FilterMask>(mask);
      }

     private:
      const LazyResult& r_;
    } replay(run);
    run_layers(net, 0, dense_idx, st, replay);
    const Vector<float> x = st.activation.data();
    reader.reset_counters();
    const Vector<float> lazy = dense_lazy(x, run.layers[feeding_conv].mask, index, dense_layer.bias, reader);
    const Vector<float> full = dense<float>(x, dense_layer);
    rep.loaded_bytes += static_cast<double>(reader.bytes_read());
    rep.max_abs_diff = std::max(rep.max_abs_diff, static_cast<double>((lazy - full).cwiseAbs().maxCoeff()));
  }
  rep.samples = static_cast<Index>(n);
  rep.loaded_bytes /= static_cast<double>(std::max<std::size_t>(n, 1));
  rep.ratio = rep.loaded_bytes / static_cast<double>(rep.full_bytes);
  io::write_text(fs::path(o.out) / "memory_report.json", memory_report_json(rep, layer));
  std::cout << layer << ": loaded " << fmt(rep.loaded_bytes) << " of " << rep.full_bytes << " weight bytes (ratio "
            << fmt(rep.ratio) << "), max |lazy - dense| " << fmt(rep.max_abs_diff) << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Lazy evaluation of convolutional filters: inference, predictor training, profiling, Pareto search"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  Options o;

  auto add_model = [&](CLI::App* s) { s->add_option("--model", o.model, "Model container directory")->required(); };
  auto add_data = [&](CLI::App* s) { s->add_option("--data", o.data, "Dataset container directory")->required(); };
  auto add_out = [&](CLI::App* s) { s->add_option("--out", o.out, "Output directory")->required(); };
  auto add_threads = [&](CLI::App* s) {
    s->add_option("--threads", o.threads, "Worker threads (1 = serial, 0 = all cores)");
  };

  auto* gen = app.add_subcommand("gen-synthetic", "Generate a seeded network and self-labeled dataset");
  add_out(gen);
  gen->add_option("--seed", o.seed, "PRNG seed");
  gen->add_option("--samples", o.samples, "Dataset size");
  gen->add_option("--filters", o.filters, "Conv filters per layer")->delimiter(',');
  gen->add_option("--pool-after", o.pool_after, "1-based conv layers followed by 2x2 max-pool")->delimiter(',');
  gen->add_option("--dense", o.dense, "Dense layer widths after flatten")->delimiter(',');
  gen->add_option("--input", o.input, "Input shape C,H,W")->delimiter(',');
  gen->add_option("--prototypes", o.prototypes, "Input prototype count");
  gen->add_option("--noise", o.noise, "Input noise standard deviation");
  gen->add_flag("--softmax", o.softmax, "Append a softmax layer");

  auto* trace = app.add_subcommand("trace", "Record eager activation strengths");
  add_model(trace);
  add_data(trace);
  add_out(trace);
  add_threads(trace);

  auto* train = app.add_subcommand("train-predictor", "Fit strength predictors for consecutive conv layers");
  train->add_option("--traces", o.traces, "Trace directory")->required();
  add_out(train);
  train->add_option("--seed", o.seed, "Split / minibatch seed");
  train->add_option("--lr", o.train.learning_rate, "Initial learning rate");
  train->add_option("--epochs", o.train.epochs, "Epochs");
  train->add_option("--batch", o.train.batch_size, "Minibatch size");
  train->add_option("--split", o.train.train_fraction, "Training fraction");
  train->add_option("--ridge", o.train.ridge, "L2 penalty on W");
  add_threads(train);

  auto* eval = app.add_subcommand("eval", "Accuracy and cost of one keep policy");
  add_model(eval);
  add_data(eval);
  add_out(eval);
  eval->add_option("--predictors", o.predictors, "Predictor directory (needed when any layer is pruned)");
  eval->add_option("--policy", o.policy, "all-<fraction> or a policy JSON file");
  eval->add_option("--reps", o.reps, "Timing repetitions (0 disables wall-clock)");
  eval->add_option("--subset", o.subset, "Samples used for timing");
  add_threads(eval);

  auto* sweep = app.add_subcommand("sweep", "Per-layer accuracy sensitivity to pruning");
  add_model(sweep);
  add_data(sweep);
  add_out(sweep);
  sweep->add_option("--layer", o.layers, "Conv layer(s); default all")->delimiter(',');
  sweep->add_option("--fractions", o.fractions, "Keep fractions")->delimiter(',')->default_str("0.2,0.4,0.6,0.8,1.0");
  sweep->add_option("--mode", o.mode, "oracle or predicted");
  sweep->add_option("--predictors", o.predictors, "Predictor directory (predicted mode)");
  add_threads(sweep);

  auto* bench = app.add_subcommand("bench", "Single-thread conv timing versus keep fraction");
  add_model(bench);
  add_data(bench);
  add_out(bench);
  bench->add_option("--layer", o.layers, "Conv layer(s); default all")->delimiter(',');
  bench->add_option("--fractions", o.fractions, "Keep fractions")->delimiter(',')->default_str("0.25,0.5,0.75,1.0");
  bench->add_option("--reps", o.reps, "Timed repetitions per fraction (>= 5)");
  bench->add_option("--sample", o.sample, "Dataset sample used as input");

  auto* pareto = app.add_subcommand("pareto", "NSGA-II search over per-layer keep fractions");
  add_model(pareto);
  add_data(pareto);
  add_out(pareto);
  pareto->add_option("--predictors", o.predictors, "Predictor directory")->required();
  pareto->add_option("--pop", o.pop, "Population size (even, >= 8)");
  pareto->add_option("--gens", o.gens, "Generations");
  pareto->add_option("--seed", o.seed, "Search and subset seed");
  pareto->add_option("--subset", o.subset, "Evaluation samples");
  pareto->add_option("--objective", o.objective, "Cost objective: flops or seconds");
  add_threads(pareto);

  auto* mem = app.add_subcommand("mem-report", "Weight bytes loaded by lazy dense evaluation");
  add_model(mem);
  add_data(mem);
  add_out(mem);
  mem->add_option("--predictors", o.predictors, "Predictor directory (needed when any layer is pruned)");
  mem->add_option("--policy", o.policy, "all-<fraction> or a policy JSON file");
  mem->add_option("--layer", o.layers, "Dense layer; default the first flatten-fed one")->delimiter(',');
  mem->add_option("--subset", o.subset, "Samples evaluated");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  CLI::App* sub = app.get_subcommands().front();
  RunManifest manifest(*sub, sub->get_name());
  try {
    int rc = 0;
    fs::create_directories(o.out);
    const std::string& name = sub->get_name();
    if (name == "gen-synthetic") rc = cmd_gen(o, manifest);
    else if (name == "trace") rc = cmd_trace(o, manifest);
    else if (name == "train-predictor") rc = cmd_train(o, manifest);
    else if (name == "eval") rc = cmd_eval(o, manifest);
    else if (name == "sweep") rc = cmd_sweep(o, manifest);
    else if (name == "bench") rc = cmd_bench(o, manifest);
    else if (name == "pareto") rc = cmd_pareto(o, manifest);
    else if (name == "mem-report") rc = cmd_mem(o, manifest);
    manifest.write(o.out);
    return rc;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace lazyconv::cli
