#include "lazyconv/predictor_train.hpp"

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "lazyconv/parallel.hpp"
#include "lazyconv/synthetic.hpp"

namespace lazyconv {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ContractError("learning rate must be > 0");
  if (epochs <= 0 || batch_size <= 0) throw ContractError("epochs and batch size must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ContractError("train fraction must be in (0, 1)");
  if (ridge < 0.0) throw ContractError("ridge penalty must be >= 0");
}

double mae(const Eigen::Ref<const RowMatrixXf>& predicted, const Eigen::Ref<const RowMatrixXf>& actual) {
  if (predicted.rows() != actual.rows() || predicted.cols() != actual.cols())
    throw DimensionError("mae: shape mismatch");
  if (predicted.size() == 0) return 0.0;
  double acc = 0.0;
  for (Index r = 0; r < predicted.rows(); ++r)
    for (Index c = 0; c < predicted.cols(); ++c)
      acc += std::abs(static_cast<double>(predicted(r, c)) - static_cast<double>(actual(r, c)));
  return acc / static_cast<double>(predicted.size());
}

double topn_overlap(const Eigen::Ref<const Vector<float>>& predicted, const Eigen::Ref<const Vector<float>>& actual,
                    double fraction) {
  if (predicted.size() != actual.size()) throw DimensionError("topn_overlap: length mismatch");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractError("topn_overlap: fraction must be in (0, 1]");
  const Index n = predicted.size();
  const Index k = kept_count(fraction, n);
  if (k == 0) return 1.0;
  const FilterMask a = select_top_fraction(predicted, fraction, n);
  const FilterMask b = select_top_fraction(actual, fraction, n);
  Index common = 0;
  for (Index i : a.active()) common += b.contains(i) ? 1 : 0;
  return static_cast<double>(common) / static_cast<double>(k);
}

double mae_objective(const Eigen::MatrixXd& weights, const Eigen::VectorXd& bias, const Eigen::MatrixXd& z,
                     const Eigen::MatrixXd& targets) {
  const Eigen::MatrixXd r = (z * weights.transpose()).rowwise() + bias.transpose() - targets;
  return r.cwiseAbs().sum() / static_cast<double>(z.rows());
}

MaeGradient mae_subgradient(const Eigen::MatrixXd& weights, const Eigen::VectorXd& bias, const Eigen::MatrixXd& z,
                            const Eigen::MatrixXd& targets) {
  const Eigen::MatrixXd r = (z * weights.transpose()).rowwise() + bias.transpose() - targets;
  const Eigen::MatrixXd g = r.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }) /
                            static_cast<double>(z.rows());
  return {g.transpose() * z, g.colwise().sum().transpose()};
}

namespace {

struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;
  std::vector<Index> degenerate;

  static Standardizer fit(const Eigen::MatrixXd& x) {
    Standardizer s;
    const auto n = static_cast<double>(x.rows());
    s.mean = x.colwise().mean();
    s.std = ((x.rowwise() - s.mean).array().square().colwise().sum() / n).sqrt().matrix();
    for (Index c = 0; c < s.std.size(); ++c)
      if (!(s.std[c] > 0.0) || !std::isfinite(s.std[c])) {
        s.std[c] = 1.0;
        s.degenerate.push_back(c);
      }
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    return ((x.rowwise() - mean).array().rowwise() / std.array()).matrix();
  }
};

Eigen::MatrixXd gather_rows(const RowMatrixXf& m, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(static_cast<Index>(rows[i])).cast<double>();
  return out;
}

RowMatrixXf predict_rows(const StrengthPredictor& p, const Eigen::MatrixXd& source) {
  RowMatrixXf out(source.rows(), p.outputs());
  for (Index r = 0; r < source.rows(); ++r)
    out.row(r) = predict_strengths(p, source.row(r).transpose().cast<float>()).transpose();
  return out;
}

}  // namespace

std::pair<StrengthPredictor, TrainReport> train_predictor(const TraceSet& traces, const std::string& source_layer,
                                                          const std::string& target_layer, const TrainConfig& cfg) {
  cfg.validate();
  const RowMatrixXf& source = traces.layer(source_layer);
  const RowMatrixXf& target = traces.layer(target_layer);
  const Index samples = traces.sample_count();
  if (samples < 10) throw ContractError("predictor training needs at least 10 samples, got " + std::to_string(samples));

  std::vector<std::size_t> order(static_cast<std::size_t>(samples));
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(cfg.seed, 0);
  split_rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(
      std::clamp<double>(std::round(cfg.train_fraction * static_cast<double>(samples)), 1.0, static_cast<double>(samples - 1)));
  const std::span<const std::size_t> train_rows(order.data(), n_train);
  const std::span<const std::size_t> val_rows(order.data() + n_train, order.size() - n_train);

  const Eigen::MatrixXd x_train = gather_rows(source, train_rows);
  const Eigen::MatrixXd y_train = gather_rows(target, train_rows);
  const Eigen::MatrixXd x_val = gather_rows(source, val_rows);
  const Eigen::MatrixXd y_val = gather_rows(target, val_rows);

  // Descent runs on standardized features and standardized targets; the target
  // scaling is folded back into W and b afterwards.
  const Standardizer fx = Standardizer::fit(x_train);
  Standardizer fy = Standardizer::fit(y_train);
  const Eigen::MatrixXd z = fx.apply(x_train);
  const Eigen::MatrixXd t = fy.apply(y_train);

  const Index n = source.cols();
  const Index m = target.cols();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m);

  Rng batch_rng(cfg.seed, 1);
  std::vector<Index> rows(n_train);
  std::iota(rows.begin(), rows.end(), Index{0});
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // linear decay to 1% of the initial step: subgradient steps must shrink to converge
    const double lr = cfg.learning_rate * (1.0 - 0.99 * epoch / static_cast<double>(cfg.epochs));
    batch_rng.shuffle(rows);
    for (std::size_t start = 0; start < rows.size(); start += batch) {
      const std::size_t end = std::min(rows.size(), start + batch);
      const auto count = static_cast<Index>(end - start);
      Eigen::MatrixXd zb(count, n);
      Eigen::MatrixXd tb(count, m);
      for (Index i = 0; i < count; ++i) {
        zb.row(i) = z.row(rows[start + static_cast<std::size_t>(i)]);
        tb.row(i) = t.row(rows[start + static_cast<std::size_t>(i)]);
      }
      MaeGradient g = mae_subgradient(w, b, zb, tb);
      if (cfg.ridge > 0.0) g.weights += cfg.ridge * w;
      w -= lr * g.weights;
      b -= lr * g.bias;
    }
  }

  StrengthPredictor pred;
  pred.source_layer = source_layer;
  pred.target_layer = target_layer;
  pred.weights = (fy.std.transpose().asDiagonal() * w).cast<float>();
  pred.bias = (fy.std.transpose().cwiseProduct(b) + fy.mean.transpose()).cast<float>();
  pred.feature_mean = fx.mean.transpose().cast<float>();
  pred.feature_std = fx.std.transpose().cast<float>();
  pred.validate();

  TrainReport rep;
  rep.source_layer = source_layer;
  rep.target_layer = target_layer;
  rep.train_samples = static_cast<Index>(train_rows.size());
  rep.validation_samples = static_cast<Index>(val_rows.size());
  rep.degenerate_features = fx.degenerate;

  const RowMatrixXf pred_train = predict_rows(pred, x_train);
  const RowMatrixXf pred_val = predict_rows(pred, x_val);
  const RowMatrixXf actual_train = y_train.cast<float>();
  const RowMatrixXf actual_val = y_val.cast<float>();
  const Vector<float> mean_target = fy.mean.transpose().cast<float>();
  const RowMatrixXf baseline_val = mean_target.transpose().replicate(actual_val.rows(), 1);
  rep.train_mae = mae(pred_train, actual_train);
  rep.validation_mae = mae(pred_val, actual_val);
  rep.baseline_mae = mae(baseline_val, actual_val);
  rep.improved = rep.validation_mae < 0.95 * rep.baseline_mae;
  for (double f : kOverlapFractions) {
    double o = 0.0;
    double ob = 0.0;
    for (Index r = 0; r < actual_val.rows(); ++r) {
      o += topn_overlap(pred_val.row(r).transpose(), actual_val.row(r).transpose(), f);
      ob += topn_overlap(mean_target, actual_val.row(r).transpose(), f);
    }
    const auto rows_val = static_cast<double>(std::max<Index>(1, actual_val.rows()));
    rep.overlap.push_back(o / rows_val);
    rep.baseline_overlap.push_back(ob / rows_val);
  }
  return {std::move(pred), std::move(rep)};
}

std::pair<PredictorSet, std::vector<TrainReport>> train_all(const TraceSet& traces, const TrainConfig& cfg,
                                                           unsigned threads) {
  const auto& names = traces.layer_names;
  const std::size_t pairs = names.size() > 1 ? names.size() - 1 : 0;
  std::vector<std::optional<std::pair<StrengthPredictor, TrainReport>>> results(pairs);
  parallel_for(pairs, threads, [&](std::size_t i) { results[i] = train_predictor(traces, names[i], names[i + 1], cfg); });
  PredictorSet set;
  std::vector<TrainReport> reports;
  for (auto& r : results) {
    set.emplace(r->first.target_layer, std::move(r->first));
    reports.push_back(std::move(r->second));
  }
  return {std::move(set), std::move(reports)};
}

std::string report_json(const std::vector<TrainReport>& reports) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["source"] = r.source_layer;
    j["target"] = r.target_layer;
    j["train_samples"] = r.train_samples;
    j["validation_samples"] = r.validation_samples;
    j["mae_train"] = r.train_mae;
    j["mae_validation"] = r.validation_mae;
    j["mae_baseline"] = r.baseline_mae;
    j["improved_over_baseline"] = r.improved;
    j["degenerate_features"] = r.degenerate_features;
    nlohmann::ordered_json ov = nlohmann::ordered_json::object();
    nlohmann::ordered_json ob = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < kOverlapFractions.size(); ++k) {
      const std::string key = std::to_string(kOverlapFractions[k]).substr(0, 4);
      ov[key] = r.overlap[k];
      ob[key] = r.baseline_overlap[k];
    }
    j["overlap"] = std::move(ov);
    j["baseline_overlap"] = std::move(ob);
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

}  // namespace lazyconv
