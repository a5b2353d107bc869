#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lazyconv/inference.hpp"
#include "lazyconv/lazy_eval.hpp"

namespace lazyconv {

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 200;
  int batch_size = 32;
  std::uint64_t seed = 42;
  double train_fraction = 0.8;
  double ridge = 0.0;

  void validate() const;
};

inline const std::vector<double> kOverlapFractions{0.25, 0.5, 0.75};

struct TrainReport {
  std::string source_layer;
  std::string target_layer;
  Index train_samples = 0;
  Index validation_samples = 0;
  double train_mae = 0.0;
  double validation_mae = 0.0;
  double baseline_mae = 0.0;  // validation MAE of the training-split per-filter mean
  bool improved = false;      // validation MAE below 95% of baseline
  std::vector<Index> degenerate_features;  // zero-variance source filters (std forced to 1)
  std::vector<double> overlap;             // mean validation topn_overlap at kOverlapFractions
  std::vector<double> baseline_overlap;    // same, for the per-filter-mean predictor
};

/// Mean over all entries of |predicted - actual|.
double mae(const Eigen::Ref<const RowMatrixXf>& predicted, const Eigen::Ref<const RowMatrixXf>& actual);

/// Fraction of the actual top-k filters also in the predicted top-k, k = kept_count(fraction, n).
double topn_overlap(const Eigen::Ref<const Vector<float>>& predicted, const Eigen::Ref<const Vector<float>>& actual,
                    double fraction);

/// Subgradient of sum_f mean_b |Z W^T + 1 b^T - T| (one MAE per target filter,
/// summed) with respect to W and b. Residuals exactly zero contribute 0.
struct MaeGradient {
  Eigen::MatrixXd weights;  // m x n
  Eigen::VectorXd bias;     // m
};
MaeGradient mae_subgradient(const Eigen::MatrixXd& weights, const Eigen::VectorXd& bias, const Eigen::MatrixXd& z,
                            const Eigen::MatrixXd& targets);
/// The objective mae_subgradient differentiates.
double mae_objective(const Eigen::MatrixXd& weights, const Eigen::VectorXd& bias, const Eigen::MatrixXd& z,
                     const Eigen::MatrixXd& targets);

/// Fits target strengths from source strengths by minibatch subgradient descent on MAE.
std::pair<StrengthPredictor, TrainReport> train_predictor(const TraceSet& traces, const std::string& source_layer,
                                                          const std::string& target_layer, const TrainConfig& cfg);

/// One predictor per consecutive conv pair of the trace set (trained independently).
std::pair<PredictorSet, std::vector<TrainReport>> train_all(const TraceSet& traces, const TrainConfig& cfg,
                                                           unsigned threads = 1);

std::string report_json(const std::vector<TrainReport>& reports);

}  // namespace lazyconv
