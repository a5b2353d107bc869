#include "lazyconv/inference.hpp"

#include <json.hpp>

#include "lazyconv/model_io.hpp"
#include "lazyconv/parallel.hpp"

namespace lazyconv {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

class RecordStrengths : public ConvHooks {
 public:
  explicit RecordStrengths(std::vector<Vector<float>>& out) : out_(out) {}
  void observe(const ConvSite&, Tensor3f&, Vector<float>& strengths, std::optional<FilterMask>&) override {
    out_.push_back(strengths);
  }

 private:
  std::vector<Vector<float>>& out_;
};

}  // namespace

EagerResult forward_eager(const Network& net, const Tensor3f& input, ForwardProfile* profile) {
  EagerResult r;
  RecordStrengths hooks(r.strengths);
  r.logits = run_forward(net, input, hooks, profile);
  return r;
}

std::size_t TraceSet::layer_position(const std::string& name) const {
  for (std::size_t i = 0; i < layer_names.size(); ++i)
    if (layer_names[i] == name) return i;
  throw std::out_of_range("trace set has no layer '" + name + "'");
}

TraceSet collect_traces(const Network& net, const Dataset& data, unsigned threads) {
  if (data.size() == 0) throw ContractError("cannot collect traces from an empty dataset");
  if (data.shape != net.input_shape())
    throw DimensionError("dataset shape " + to_string(data.shape) + " does not match network input " +
                         to_string(net.input_shape()));
  TraceSet t;
  t.fingerprint = network_fingerprint(net);
  t.layer_names = net.conv_names();
  const auto n = static_cast<Index>(data.size());
  for (auto idx : net.conv_indices()) t.strengths.emplace_back(n, net.layer(idx).conv().out_filters);

  parallel_for(data.size(), threads, [&](std::size_t s) {
    const EagerResult r = forward_eager(net, data.inputs[s]);
    for (std::size_t l = 0; l < r.strengths.size(); ++l)
      t.strengths[l].row(static_cast<Index>(s)) = r.strengths[l].transpose();
  });
  return t;
}

void save_traces(const TraceSet& traces, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<float> flat;
  for (Index s = 0; s < traces.sample_count(); ++s)
    for (const auto& m : traces.strengths)
      for (Index c = 0; c < m.cols(); ++c) flat.push_back(m(s, c));
  io::write_floats(dir / "traces.bin", flat);

  ojson j;
  j["fingerprint"] = traces.fingerprint;
  j["samples"] = traces.sample_count();
  ojson layers = ojson::array();
  for (std::size_t l = 0; l < traces.layer_names.size(); ++l)
    layers.push_back({{"name", traces.layer_names[l]}, {"size", traces.strengths[l].cols()}});
  j["layers"] = std::move(layers);
  io::write_text(dir / "traces.json", j.dump(2) + "\n");
}

TraceSet load_traces(const fs::path& dir) {
  if (!fs::exists(dir / "traces.json")) throw MissingFileError("missing " + (dir / "traces.json").string());
  ojson j;
  try {
    j = ojson::parse(io::read_text(dir / "traces.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("traces.json: ") + e.what());
  }
  TraceSet t;
  Index samples = 0;
  std::vector<Index> sizes;
  try {
    t.fingerprint = j.at("fingerprint").get<std::string>();
    samples = j.at("samples").get<Index>();
    for (const auto& l : j.at("layers")) {
      t.layer_names.push_back(l.at("name").get<std::string>());
      sizes.push_back(l.at("size").get<Index>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("traces.json: ") + e.what());
  }
  const auto flat = io::read_floats(dir / "traces.bin");
  Index per = 0;
  for (auto s : sizes) per += s;
  if (static_cast<Index>(flat.size()) != per * samples)
    throw LengthMismatchError("traces.bin holds " + std::to_string(flat.size()) + " floats, expected " +
                              std::to_string(per * samples));
  for (auto s : sizes) t.strengths.emplace_back(samples, s);
  std::size_t k = 0;
  for (Index s = 0; s < samples; ++s)
    for (auto& m : t.strengths)
      for (Index c = 0; c < m.cols(); ++c) m(s, c) = flat[k++];
  return t;
}

double accuracy(std::span<const Index> predicted, std::span<const Index> labels) {
  if (predicted.size() != labels.size()) throw DimensionError("prediction and label counts differ");
  if (predicted.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

std::vector<Index> reference_labels(const Network& net, const Dataset& data, unsigned threads) {
  if (data.labels) return *data.labels;
  std::vector<Index> out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t s) { out[s] = argmax(forward_eager(net, data.inputs[s]).logits); });
  return out;
}

}  // namespace lazyconv
