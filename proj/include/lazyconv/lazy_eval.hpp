#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lazyconv/network.hpp"

namespace lazyconv {

/// Affine map from the previous conv layer's strengths to this layer's:
///   predicted = weights * ((s_prev - feature_mean) / feature_std) + bias
/// with weights m x n (m target filters, n source filters).
struct StrengthPredictor {
  std::string target_layer;
  std::string source_layer;
  RowMatrixXf weights;
  Vector<float> bias;
  Vector<float> feature_mean;
  Vector<float> feature_std;

  Index inputs() const { return weights.cols(); }
  Index outputs() const { return weights.rows(); }
  void validate() const;

  /// Unit normalization with the given weights and bias.
  static StrengthPredictor affine(std::string target, std::string source, RowMatrixXf weights, Vector<float> bias);
};

/// Keyed by target layer name.
using PredictorSet = std::map<std::string, StrengthPredictor>;

/// Per-conv-layer keep fraction; layers not listed keep everything. The first
/// conv layer is always evaluated in full regardless of its entry.
struct KeepPolicy {
  std::map<std::string, double> fractions;

  double fraction(const std::string& layer) const;
  void validate(const Network& net) const;
  /// Same fraction on every conv layer that has a conv predecessor.
  static KeepPolicy uniform(const Network& net, double fraction);
};

Vector<float> predict_strengths(const StrengthPredictor& pred, const Eigen::Ref<const Vector<float>>& s_prev);

/// ceil(fraction * layer_size), computed so that products that are integral in
/// exact arithmetic (0.3 * 10) are not bumped up by rounding error.
Index kept_count(double fraction, Index layer_size);

/// The kept_count(fraction) largest strengths; ties go to the lower index.
FilterMask select_top_fraction(const Eigen::Ref<const Vector<float>>& strengths, double fraction, Index layer_size);

struct ConvDiagnostics {
  std::string layer;
  FilterMask mask;
  Vector<float> predicted;  // empty when the layer was not predicted (first conv, or nothing to skip)
  Vector<float> observed;   // strengths of the computed output; zero for skipped filters
  Index active_inputs = 0;  // input channels accumulated (skipped zero channels excluded)
};

struct LazyResult {
  Vector<float> logits;
  std::vector<ConvDiagnostics> layers;  // one per conv layer
};

/// Lazy forward pass: every conv layer after the first predicts its strengths
/// from the previous conv layer's observed strengths, evaluates the top keep
/// fraction and zero-fills the rest. Other layers run unchanged. Prediction is
/// skipped when the policy keeps all (or none) of a layer's filters, so
/// predictors are only required for layers that are actually pruned.
LazyResult forward_lazy(const Network& net, const PredictorSet& predictors, const KeepPolicy& policy,
                        const Tensor3f& input, ForwardProfile* profile = nullptr);

// predictors.json {format_version, fingerprint, predictors: [{target, source,
// outputs, inputs, offset, count}]} + predictors.bin float32 LE sections of
// W (row-major m x n), b (m), feature mean (n), feature std (n).
void save_predictors(const PredictorSet& predictors, const std::string& fingerprint,
                     const std::filesystem::path& dir);

struct LoadedPredictors {
  PredictorSet predictors;
  std::string fingerprint;
};
LoadedPredictors load_predictors(const std::filesystem::path& dir);

/// JSON object {layer: fraction}.
void save_policy(const KeepPolicy& policy, const std::filesystem::path& path);
KeepPolicy load_policy(const std::filesystem::path& path);
/// Accepts "all-<fraction>" or a path to a policy file.
KeepPolicy parse_policy(const std::string& spec, const Network& net);

}  // namespace lazyconv
