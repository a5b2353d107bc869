#include "lazyconv/lazy_eval.hpp"

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "lazyconv/model_io.hpp"

namespace lazyconv {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

void StrengthPredictor::validate() const {
  const Index m = weights.rows();
  const Index n = weights.cols();
  if (bias.size() != m) throw DimensionError("predictor '" + target_layer + "': bias length != rows of W");
  if (feature_mean.size() != n || feature_std.size() != n)
    throw DimensionError("predictor '" + target_layer + "': normalization stats length != columns of W");
  for (Index i = 0; i < n; ++i)
    if (!(feature_std[i] > 0.0f)) throw ContractError("predictor '" + target_layer + "': feature std must be > 0");
}

StrengthPredictor StrengthPredictor::affine(std::string target, std::string source, RowMatrixXf weights,
                                            Vector<float> bias) {
  StrengthPredictor p;
  p.target_layer = std::move(target);
  p.source_layer = std::move(source);
  p.feature_mean = Vector<float>::Zero(weights.cols());
  p.feature_std = Vector<float>::Ones(weights.cols());
  p.weights = std::move(weights);
  p.bias = std::move(bias);
  p.validate();
  return p;
}

double KeepPolicy::fraction(const std::string& layer) const {
  auto it = fractions.find(layer);
  return it == fractions.end() ? 1.0 : it->second;
}

void KeepPolicy::validate(const Network& net) const {
  for (const auto& [name, f] : fractions) {
    const auto idx = net.find(name);
    if (!idx || !net.layer(*idx).is_conv()) throw ContractError("policy names unknown conv layer '" + name + "'");
    if (!(f >= 0.0 && f <= 1.0)) throw ContractError("policy fraction for '" + name + "' outside [0, 1]");
  }
}

KeepPolicy KeepPolicy::uniform(const Network& net, double fraction) {
  KeepPolicy p;
  const auto names = net.conv_names();
  for (std::size_t i = 1; i < names.size(); ++i) p.fractions[names[i]] = fraction;
  return p;
}

Vector<float> predict_strengths(const StrengthPredictor& pred, const Eigen::Ref<const Vector<float>>& s_prev) {
  if (s_prev.size() != pred.inputs())
    throw DimensionError("predictor '" + pred.target_layer + "' expects " + std::to_string(pred.inputs()) +
                         " source strengths, got " + std::to_string(s_prev.size()));
  const Vector<float> z = ((s_prev - pred.feature_mean).array() / pred.feature_std.array()).matrix();
  return pred.weights * z + pred.bias;
}

Index kept_count(double fraction, Index layer_size) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ContractError("keep fraction outside [0, 1]");
  if (fraction == 0.0) return 0;
  if (fraction >= 1.0) return layer_size;
  const double exact = fraction * static_cast<double>(layer_size);
  const auto k = static_cast<Index>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  return std::clamp<Index>(k, 0, layer_size);
}

FilterMask select_top_fraction(const Eigen::Ref<const Vector<float>>& strengths, double fraction, Index layer_size) {
  if (strengths.size() != layer_size)
    throw DimensionError("strength vector length " + std::to_string(strengths.size()) + " != layer size " +
                         std::to_string(layer_size));
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ContractError("keep fraction outside [0, 1]");
  const Index k = kept_count(fraction, layer_size);
  if (k == layer_size) return FilterMask::all(layer_size);
  std::vector<Index> order(static_cast<std::size_t>(layer_size));
  std::iota(order.begin(), order.end(), Index{0});
  const auto by_strength = [&](Index a, Index b) {
    return strengths[a] > strengths[b] || (strengths[a] == strengths[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), by_strength);
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return FilterMask(layer_size, std::move(order));
}

namespace {

class LazyHooks : public ConvHooks {
 public:
  LazyHooks(const PredictorSet& predictors, const KeepPolicy& policy, std::vector<ConvDiagnostics>& diag)
      : predictors_(predictors), policy_(policy), diag_(diag) {}

  std::optional<FilterMask> select(const ConvSite& site) override {
    const ConvLayerf& conv = site.layer->conv();
    ConvDiagnostics d;
    d.layer = site.layer->name;
    d.active_inputs = site.input_active ? site.input_active->count() : conv.in_channels;
    std::optional<FilterMask> mask;
    if (site.previous_strengths != nullptr) {
      const Index k = kept_count(policy_.fraction(d.layer), conv.out_filters);
      if (k == 0) {
        mask = FilterMask::none(conv.out_filters);
      } else if (k < conv.out_filters) {
        auto it = predictors_.find(d.layer);
        if (it == predictors_.end()) throw ContractError("missing strength predictor for layer '" + d.layer + "'");
        const StrengthPredictor& pred = it->second;
        if (pred.outputs() != conv.out_filters)
          throw DimensionError("predictor for '" + d.layer + "' has " + std::to_string(pred.outputs()) +
                               " outputs, layer has " + std::to_string(conv.out_filters) + " filters");
        d.predicted = predict_strengths(pred, *site.previous_strengths);
        mask = select_top_fraction(d.predicted, policy_.fraction(d.layer), conv.out_filters);
      }
    }
    diag_.push_back(std::move(d));
    return mask;
  }

  void observe(const ConvSite& site, Tensor3f&, Vector<float>& strengths, std::optional<FilterMask>& mask) override {
    ConvDiagnostics& d = diag_.back();
    d.observed = strengths;
    d.mask = mask ? *mask : FilterMask::all(site.layer->conv().out_filters);
  }

 private:
  const PredictorSet& predictors_;
  const KeepPolicy& policy_;
  std::vector<ConvDiagnostics>& diag_;
};

}  // namespace

LazyResult forward_lazy(const Network& net, const PredictorSet& predictors, const KeepPolicy& policy,
                        const Tensor3f& input, ForwardProfile* profile) {
  LazyResult r;
  r.layers.reserve(net.conv_indices().size());
  LazyHooks hooks(predictors, policy, r.layers);
  r.logits = run_forward(net, input, hooks, profile);
  return r;
}

void save_predictors(const PredictorSet& predictors, const std::string& fingerprint, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<float> blob;
  ojson list = ojson::array();
  for (const auto& [target, p] : predictors) {
    p.validate();
    const std::size_t offset = blob.size();
    blob.insert(blob.end(), p.weights.data(), p.weights.data() + p.weights.size());
    blob.insert(blob.end(), p.bias.data(), p.bias.data() + p.bias.size());
    blob.insert(blob.end(), p.feature_mean.data(), p.feature_mean.data() + p.feature_mean.size());
    blob.insert(blob.end(), p.feature_std.data(), p.feature_std.data() + p.feature_std.size());
    list.push_back({{"target", target},
                    {"source", p.source_layer},
                    {"outputs", p.outputs()},
                    {"inputs", p.inputs()},
                    {"offset", offset},
                    {"count", blob.size() - offset}});
  }
  ojson j;
  j["format_version"] = 1;
  j["fingerprint"] = fingerprint;
  j["predictors"] = std::move(list);
  io::write_text(dir / "predictors.json", j.dump(2) + "\n");
  io::write_floats(dir / "predictors.bin", blob);
}

LoadedPredictors load_predictors(const fs::path& dir) {
  if (!fs::exists(dir / "predictors.json")) throw MissingFileError("missing " + (dir / "predictors.json").string());
  LoadedPredictors out;
  const auto blob = io::read_floats(dir / "predictors.bin");
  try {
    const auto j = ojson::parse(io::read_text(dir / "predictors.json"));
    out.fingerprint = j.at("fingerprint").get<std::string>();
    for (const auto& e : j.at("predictors")) {
      StrengthPredictor p;
      p.target_layer = e.at("target").get<std::string>();
      p.source_layer = e.at("source").get<std::string>();
      const auto m = e.at("outputs").get<Index>();
      const auto n = e.at("inputs").get<Index>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      if (count != static_cast<std::size_t>(m * n + m + 2 * n) || offset + count > blob.size())
        throw LengthMismatchError("predictor '" + p.target_layer + "' section does not fit predictors.bin");
      const float* base = blob.data() + offset;
      p.weights = Eigen::Map<const RowMatrixXf>(base, m, n);
      p.bias = Eigen::Map<const Vector<float>>(base + m * n, m);
      p.feature_mean = Eigen::Map<const Vector<float>>(base + m * n + m, n);
      p.feature_std = Eigen::Map<const Vector<float>>(base + m * n + m + n, n);
      p.validate();
      out.predictors.emplace(p.target_layer, std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("predictors.json: ") + e.what());
  }
  return out;
}

void save_policy(const KeepPolicy& policy, const fs::path& path) {
  ojson j = ojson::object();
  for (const auto& [name, f] : policy.fractions) j[name] = f;
  io::write_text(path, j.dump(2) + "\n");
}

KeepPolicy load_policy(const fs::path& path) {
  KeepPolicy p;
  try {
    const auto j = ojson::parse(io::read_text(path));
    for (const auto& [name, f] : j.items()) p.fractions[name] = f.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return p;
}

KeepPolicy parse_policy(const std::string& spec, const Network& net) {
  KeepPolicy p;
  if (spec.rfind("all-", 0) == 0) {
    std::size_t used = 0;
    double f = 0.0;
    try {
      f = std::stod(spec.substr(4), &used);
    } catch (const std::exception&) {
      throw ContractError("bad policy '" + spec + "'");
    }
    if (used != spec.size() - 4) throw ContractError("bad policy '" + spec + "'");
    p = KeepPolicy::uniform(net, f);
  } else {
    p = load_policy(spec);
  }
  p.validate(net);
  return p;
}

}  // namespace lazyconv
