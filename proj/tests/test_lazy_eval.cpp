#include <doctest.h>

#include "fixtures.hpp"
#include "lazyconv/inference.hpp"
#include "lazyconv/lazy_eval.hpp"
#include "lazyconv/ops.hpp"
#include "oracles.hpp"

using namespace lazyconv;

namespace {

PredictorSet random_predictors(const Network& net, std::mt19937& g) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  PredictorSet set;
  const auto names = net.conv_names();
  for (std::size_t l = 1; l < names.size(); ++l) {
    const Index m = net.layer(net.index_of(names[l])).conv().out_filters;
    const Index k = net.layer(net.index_of(names[l - 1])).conv().out_filters;
    StrengthPredictor p;
    p.target_layer = names[l];
    p.source_layer = names[l - 1];
    p.weights = RowMatrixXf::NullaryExpr(m, k, [&] { return n(g); });
    p.bias = Vector<float>::NullaryExpr(m, [&] { return n(g); });
    p.feature_mean = Vector<float>::NullaryExpr(k, [&] { return 5.0f * std::abs(n(g)); });
    p.feature_std = Vector<float>::NullaryExpr(k, [&] { return 0.5f + std::abs(n(g)); });
    set.emplace(names[l], p);
  }
  return set;
}

std::vector<double> oracle_predict(const StrengthPredictor& p, const std::vector<double>& s) {
  std::vector<double> out(static_cast<std::size_t>(p.outputs()));
  for (Index j = 0; j < p.outputs(); ++j) {
    double acc = p.bias[j];
    for (Index i = 0; i < p.inputs(); ++i)
      acc += double(p.weights(j, i)) * ((s[static_cast<std::size_t>(i)] - p.feature_mean[i]) / p.feature_std[i]);
    out[static_cast<std::size_t>(j)] = acc;
  }
  return out;
}

struct OracleLazy {
  std::vector<double> logits;
  std::vector<std::vector<Index>> masks;
};

/// The lazy procedure written out directly: full conv, then zero the filters the
/// predictor did not choose. The first conv always runs in full.
OracleLazy oracle_lazy(const Network& net, const PredictorSet& preds, double f, const Tensor3f& input) {
  OracleLazy out;
  Tensor3f t = input;
  std::vector<float> flat;
  std::vector<double> prev;
  bool first = true, flattened = false;
  for (const Layer& L : net.layers()) {
    switch (L.kind()) {
      case LayerKind::Conv: {
        const Index O = L.conv().out_filters;
        std::vector<Index> keep(static_cast<std::size_t>(O));
        std::iota(keep.begin(), keep.end(), Index{0});
        const Index k = oracle::kept_count_rational(static_cast<std::int64_t>(std::llround(f * 1000)), 1000, O);
        if (!first && k < O) keep = oracle::top_k(oracle_predict(preds.at(L.name), prev), k);
        t = oracle::conv(t, L.conv());
        for (Index c = 0; c < O; ++c)
          if (!std::binary_search(keep.begin(), keep.end(), c)) t.channel(c).setZero();
        prev = oracle::strengths(t);
        out.masks.push_back(keep);
        first = false;
        break;
      }
      case LayerKind::Relu:
        if (flattened)
          for (auto& v : flat) v = std::max(v, 0.0f);
        else
          for (Index n = 0; n < t.size(); ++n) t.data()[n] = std::max(t.data()[n], 0.0f);
        break;
      case LayerKind::MaxPool:
        t = oracle::maxpool(t, std::get<MaxPool>(L.op).pool, std::get<MaxPool>(L.op).stride);
        break;
      case LayerKind::Flatten:
        flat.assign(t.data().data(), t.data().data() + t.size());
        flattened = true;
        break;
      case LayerKind::Dense: {
        const auto y = oracle::dense(flat, L.dense().layer);
        flat.assign(y.begin(), y.end());
        break;
      }
      case LayerKind::Softmax:
        break;
    }
  }
  out.logits.assign(flat.begin(), flat.end());
  return out;
}

}  // namespace

TEST_CASE("kept_count is the ceiling of fraction times layer size") {
  for (Index O : {1, 3, 7, 16, 32, 64, 100, 512}) {
    for (std::int64_t p = 0; p <= 20; ++p) CHECK(kept_count(double(p) / 20.0, O) == oracle::kept_count_rational(p, 20, O));
    for (std::int64_t p = 0; p <= 10; ++p) CHECK(kept_count(double(p) / 10.0, O) == oracle::kept_count_rational(p, 10, O));
  }
  CHECK(kept_count(0.3, 10) == 3);
  CHECK(kept_count(0.7, 10) == 7);
  CHECK_THROWS_AS(kept_count(1.5, 4), ContractError);
  CHECK_THROWS_AS(kept_count(-0.1, 4), ContractError);
}

TEST_CASE("top-fraction selection matches a stable-sort oracle including ties") {
  std::mt19937 g(31);
  std::uniform_int_distribution<int> small(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const Index O = 1 + trial % 40;
    Vector<float> s(O);
    std::vector<double> sd(static_cast<std::size_t>(O));
    for (Index i = 0; i < O; ++i) sd[static_cast<std::size_t>(i)] = s[i] = float(small(g));  // many ties
    for (double f : {0.0, 0.1, 0.25, 0.5, 0.8, 1.0}) {
      const FilterMask m = select_top_fraction(s, f, O);
      const auto want = oracle::top_k(sd, kept_count(f, O));
      CHECK(std::vector<Index>(m.active().begin(), m.active().end()) == want);
    }
  }
  CHECK_THROWS_AS(select_top_fraction(Vector<float>::Zero(3), 0.5, 4), DimensionError);
}

TEST_CASE("predict_strengths applies standardisation then the affine map") {
  std::mt19937 g(32);
  const Network net = gen_synthetic_network(fixture::small_spec());
  const auto preds = random_predictors(net, g);
  const auto& p = preds.at("conv1_2");
  std::vector<double> s(4);
  Vector<float> sf(4);
  for (Index i = 0; i < 4; ++i) s[static_cast<std::size_t>(i)] = sf[i] = float(i * 3 + 1);
  const Vector<float> y = predict_strengths(p, sf);
  const auto want = oracle_predict(p, s);
  for (Index j = 0; j < y.size(); ++j) CHECK(y[j] == doctest::Approx(want[static_cast<std::size_t>(j)]).epsilon(1e-5));
  CHECK_THROWS_AS(predict_strengths(p, Vector<float>::Zero(5)), DimensionError);
}

TEST_CASE("keep-1.0 lazy evaluation is identical to eager") {
  const auto [net, data] = gen_synthetic(fixture::small_spec(33, 20));
  const KeepPolicy policy = KeepPolicy::uniform(net, 1.0);
  for (const auto& x : data.inputs) {
    const LazyResult lazy = forward_lazy(net, {}, policy, x);
    const EagerResult eager = forward_eager(net, x);
    CHECK(lazy.logits == eager.logits);
    for (std::size_t l = 0; l < lazy.layers.size(); ++l) {
      CHECK(lazy.layers[l].mask.full());
      CHECK(lazy.layers[l].observed == eager.strengths[l]);
    }
  }
}

TEST_CASE("lazy evaluation follows the direct procedure") {
  std::mt19937 g(34);
  const auto [net, data] = gen_synthetic(fixture::small_spec(34, 25));
  const auto preds = random_predictors(net, g);
  for (double f : {0.25, 0.5, 0.75}) {
    const KeepPolicy policy = KeepPolicy::uniform(net, f);
    int mask_agree = 0;
    for (const auto& x : data.inputs) {
      const LazyResult got = forward_lazy(net, preds, policy, x);
      const OracleLazy want = oracle_lazy(net, preds, f, x);
      bool same = true;
      for (std::size_t l = 0; l < got.layers.size(); ++l) {
        const auto& m = got.layers[l].mask;
        CHECK(m.count() == (l == 0 ? m.layer_size() : kept_count(f, m.layer_size())));
        same = same && std::vector<Index>(m.active().begin(), m.active().end()) == want.masks[l];
        for (Index c = 0; c < m.layer_size(); ++c)
          if (!m.contains(c)) CHECK(got.layers[l].observed[c] == 0.0f);
      }
      if (same) {
        ++mask_agree;
        for (Index j = 0; j < got.logits.size(); ++j)
          CHECK(std::abs(got.logits[j] - want.logits[static_cast<std::size_t>(j)]) < 1e-4);
      }
    }
    // float and double strengths may order a near-tie differently; that must stay rare
    CHECK(mask_agree >= 23);
  }
}

TEST_CASE("lazy evaluation errors") {
  std::mt19937 g(35);
  const auto [net, data] = gen_synthetic(fixture::small_spec(35, 2));
  auto preds = random_predictors(net, g);
  const KeepPolicy policy = KeepPolicy::uniform(net, 0.5);
  PredictorSet missing = preds;
  missing.erase("conv2_1");
  CHECK_THROWS_AS(forward_lazy(net, missing, policy, data.inputs[0]), ContractError);
  PredictorSet wrong = preds;
  wrong.at("conv2_1").weights = RowMatrixXf::Zero(3, 8);
  wrong.at("conv2_1").bias = Vector<float>::Zero(3);
  CHECK_THROWS(forward_lazy(net, wrong, policy, data.inputs[0]));
  KeepPolicy bad;
  bad.fractions["conv1_2"] = 1.2;
  CHECK_THROWS(bad.validate(net));
}

TEST_CASE("predictor and policy persistence") {
  std::mt19937 g(36);
  const Network net = gen_synthetic_network(fixture::small_spec());
  const auto preds = random_predictors(net, g);
  const auto dir = fixture::temp_dir("predictors");
  save_predictors(preds, "abc123", dir / "p");
  const auto back = load_predictors(dir / "p");
  CHECK(back.fingerprint == "abc123");
  REQUIRE(back.predictors.size() == preds.size());
  for (const auto& [name, p] : preds) {
    const auto& q = back.predictors.at(name);
    CHECK(q.source_layer == p.source_layer);
    CHECK(q.weights == p.weights);
    CHECK(q.bias == p.bias);
    CHECK(q.feature_mean == p.feature_mean);
    CHECK(q.feature_std == p.feature_std);
  }

  KeepPolicy policy;
  policy.fractions = {{"conv1_2", 0.3}, {"conv2_2", 0.9}};
  save_policy(policy, dir / "policy.json");
  CHECK(load_policy(dir / "policy.json").fractions == policy.fractions);
  CHECK(parse_policy((dir / "policy.json").string(), net).fractions == policy.fractions);
  const KeepPolicy half = parse_policy("all-0.5", net);
  CHECK(half.fraction("conv2_1") == 0.5);
  CHECK(half.fraction("conv1_1") == 1.0);
}
