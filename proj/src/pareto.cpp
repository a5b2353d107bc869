#include "lazyconv/pareto.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "lazyconv/parallel.hpp"
#include "lazyconv/synthetic.hpp"

namespace lazyconv {

bool dominates(const Objectives& a, const Objectives& b) {
  return a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1]);
}

std::vector<std::vector<std::size_t>> non_dominated_sort(std::span<const Objectives> points) {
  const std::size_t n = points.size();
  std::vector<std::vector<std::size_t>> dominated(n);
  std::vector<std::size_t> dominators(n, 0);
  std::vector<std::vector<std::size_t>> fronts;
  std::vector<std::size_t> current;
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) {
      if (p == q) continue;
      if (dominates(points[p], points[q]))
        dominated[p].push_back(q);
      else if (dominates(points[q], points[p]))
        ++dominators[p];
    }
    if (dominators[p] == 0) current.push_back(p);
  }
  while (!current.empty()) {
    std::vector<std::size_t> next;
    for (std::size_t p : current)
      for (std::size_t q : dominated[p])
        if (--dominators[q] == 0) next.push_back(q);
    std::sort(next.begin(), next.end());
    fronts.push_back(std::move(current));
    current = std::move(next);
  }
  return fronts;
}

std::vector<double> crowding_distance(std::span<const Objectives> front) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const std::size_t n = front.size();
  std::vector<double> d(n, 0.0);
  if (n <= 2) return std::vector<double>(n, inf);
  std::vector<std::size_t> order(n);
  for (std::size_t obj = 0; obj < 2; ++obj) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return front[a][obj] < front[b][obj]; });
    d[order.front()] = inf;
    d[order.back()] = inf;
    const double range = front[order.back()][obj] - front[order.front()][obj];
    if (!(range > 0.0)) continue;
    for (std::size_t k = 1; k + 1 < n; ++k)
      d[order[k]] += (front[order[k + 1]][obj] - front[order[k - 1]][obj]) / range;
  }
  return d;
}

void Nsga2Config::validate() const {
  if (population < 8 || population % 2 != 0) throw ContractError("NSGA-II population must be even and >= 8");
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(crossover_probability)) throw ContractError("crossover probability outside [0, 1]");
  if (mutation_probability >= 0.0 && !prob(mutation_probability))
    throw ContractError("mutation probability outside [0, 1]");
  if (!(crossover_eta >= 0.0) || !(mutation_eta >= 0.0)) throw ContractError("distribution indices must be >= 0");
}

namespace {

void assign_rank_and_crowding(std::vector<Individual>& pop) {
  std::vector<Objectives> obj;
  for (const auto& ind : pop) obj.push_back(ind.objectives);
  const auto fronts = non_dominated_sort(obj);
  for (std::size_t r = 0; r < fronts.size(); ++r) {
    std::vector<Objectives> f;
    for (auto i : fronts[r]) f.push_back(obj[i]);
    const auto cd = crowding_distance(f);
    for (std::size_t k = 0; k < fronts[r].size(); ++k) {
      pop[fronts[r][k]].rank = r;
      pop[fronts[r][k]].crowding = cd[k];
    }
  }
}

bool crowded_better(const Individual& a, const Individual& b) {
  return a.rank < b.rank || (a.rank == b.rank && a.crowding > b.crowding);
}

std::size_t tournament(const std::vector<Individual>& pop, Rng& rng) {
  const auto a = static_cast<std::size_t>(rng.below(pop.size()));
  const auto b = static_cast<std::size_t>(rng.below(pop.size()));
  return crowded_better(pop[b], pop[a]) ? b : a;
}

void sbx(Genome& c1, Genome& c2, double eta, Rng& rng) {
  for (std::size_t i = 0; i < c1.size(); ++i) {
    if (rng.uniform() > 0.5) continue;
    const double y1 = std::min(c1[i], c2[i]);
    const double y2 = std::max(c1[i], c2[i]);
    if (y2 - y1 <= 1e-14) continue;
    const double u = rng.uniform();
    auto spread = [&](double beta) {
      const double alpha = 2.0 - std::pow(beta, -(eta + 1.0));
      return u <= 1.0 / alpha ? std::pow(u * alpha, 1.0 / (eta + 1.0))
                              : std::pow(1.0 / (2.0 - u * alpha), 1.0 / (eta + 1.0));
    };
    const double b1 = spread(1.0 + 2.0 * y1 / (y2 - y1));
    const double b2 = spread(1.0 + 2.0 * (1.0 - y2) / (y2 - y1));
    double v1 = std::clamp(0.5 * ((y1 + y2) - b1 * (y2 - y1)), 0.0, 1.0);
    double v2 = std::clamp(0.5 * ((y1 + y2) + b2 * (y2 - y1)), 0.0, 1.0);
    if (rng.uniform() <= 0.5) std::swap(v1, v2);
    c1[i] = v1;
    c2[i] = v2;
  }
}

void polynomial_mutation(Genome& g, double probability, double eta, Rng& rng) {
  const double power = 1.0 / (eta + 1.0);
  for (double& y : g) {
    if (rng.uniform() > probability) continue;
    const double r = rng.uniform();
    double dq;
    if (r < 0.5) {
      const double xy = 1.0 - y;
      dq = std::pow(2.0 * r + (1.0 - 2.0 * r) * std::pow(xy, eta + 1.0), power) - 1.0;
    } else {
      const double xy = y;
      dq = 1.0 - std::pow(2.0 * (1.0 - r) + 2.0 * (r - 0.5) * std::pow(xy, eta + 1.0), power);
    }
    y = std::clamp(y + dq, 0.0, 1.0);
  }
}

void evaluate_all(std::vector<Individual>& inds, const Evaluator& evaluate, unsigned threads) {
  parallel_for(inds.size(), threads, [&](std::size_t i) {
    inds[i].objectives = evaluate(inds[i].genome);
    for (double v : inds[i].objectives)
      if (!std::isfinite(v)) throw ContractError("evaluator returned a non-finite objective");
  });
}

}  // namespace

Nsga2Result nsga2(const Nsga2Config& cfg, std::size_t genome_length, const Evaluator& evaluate,
                  std::span<const Genome> seeds) {
  cfg.validate();
  if (genome_length == 0) throw ContractError("genome length must be positive");
  const double pm = cfg.mutation_probability < 0.0 ? 1.0 / static_cast<double>(genome_length) : cfg.mutation_probability;
  Rng rng(cfg.seed, 0);
  Nsga2Result result;

  std::vector<Individual> pop(cfg.population);
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (i < seeds.size()) {
      if (seeds[i].size() != genome_length) throw ContractError("seed genome has the wrong length");
      pop[i].genome = seeds[i];
      for (double& v : pop[i].genome) v = std::clamp(v, 0.0, 1.0);
    } else {
      pop[i].genome.resize(genome_length);
      for (double& v : pop[i].genome) v = rng.uniform();
    }
  }
  evaluate_all(pop, evaluate, cfg.threads);
  for (const auto& ind : pop) result.archive.push_back({0, ind.genome, ind.objectives});
  assign_rank_and_crowding(pop);

  for (std::size_t gen = 1; gen <= cfg.generations; ++gen) {
    std::vector<Individual> offspring;
    while (offspring.size() < cfg.population) {
      Genome c1 = pop[tournament(pop, rng)].genome;
      Genome c2 = pop[tournament(pop, rng)].genome;
      if (rng.uniform() <= cfg.crossover_probability) sbx(c1, c2, cfg.crossover_eta, rng);
      polynomial_mutation(c1, pm, cfg.mutation_eta, rng);
      polynomial_mutation(c2, pm, cfg.mutation_eta, rng);
      offspring.push_back({std::move(c1)});
      offspring.push_back({std::move(c2)});
    }
    evaluate_all(offspring, evaluate, cfg.threads);
    for (const auto& ind : offspring) result.archive.push_back({gen, ind.genome, ind.objectives});

    std::vector<Individual> combined = std::move(pop);
    combined.insert(combined.end(), std::make_move_iterator(offspring.begin()),
                    std::make_move_iterator(offspring.end()));
    assign_rank_and_crowding(combined);
    std::vector<std::size_t> order(combined.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return crowded_better(combined[a], combined[b]); });
    pop.clear();
    for (std::size_t k = 0; k < cfg.population; ++k) pop.push_back(std::move(combined[order[k]]));
    assign_rank_and_crowding(pop);
  }

  for (std::size_t i = 0; i < pop.size(); ++i)
    if (pop[i].rank == 0) result.front.push_back(i);
  result.population = std::move(pop);
  return result;
}

PolicyEvaluator::PolicyEvaluator(const Network& net, const PredictorSet& predictors, Dataset data)
    : net_(net), predictors_(predictors), data_(std::move(data)) {
  if (data_.size() == 0) throw ContractError("policy evaluation needs at least one sample");
  labels_ = reference_labels(net_, data_);
  const auto names = net_.conv_names();
  for (std::size_t i = 1; i < names.size(); ++i) {
    layers_.push_back(names[i]);
    sizes_.push_back(net_.layer(net_.conv_indices()[i]).conv().out_filters);
  }
  eager_cost_ = eager_flops(net_);
}

KeepPolicy PolicyEvaluator::policy(const Genome& genome) const {
  if (genome.size() != layers_.size())
    throw DimensionError("genome length " + std::to_string(genome.size()) + " != prunable layer count " +
                         std::to_string(layers_.size()));
  KeepPolicy p;
  for (std::size_t i = 0; i < genome.size(); ++i) p.fractions[layers_[i]] = std::clamp(genome[i], 0.0, 1.0);
  return p;
}

Objectives PolicyEvaluator::operator()(const Genome& genome) const {
  const KeepPolicy p = policy(genome);
  std::vector<Index> key;
  for (std::size_t i = 0; i < layers_.size(); ++i) key.push_back(kept_count(p.fractions.at(layers_[i]), sizes_[i]));
  {
    std::lock_guard lock(mutex_);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  }
  std::vector<Index> predicted(data_.size());
  double cost = 0.0;
  for (std::size_t s = 0; s < data_.size(); ++s) {
    const LazyResult run = forward_lazy(net_, predictors_, p, data_.inputs[s]);
    predicted[s] = argmax(run.logits);
    cost += lazy_flops_from_diagnostics(net_, predictors_, run);
  }
  const Objectives obj{1.0 - accuracy(predicted, labels_), cost / static_cast<double>(data_.size())};
  std::lock_guard lock(mutex_);
  memo_.emplace(std::move(key), obj);
  return obj;
}

std::size_t PolicyEvaluator::evaluations() const {
  std::lock_guard lock(mutex_);
  return memo_.size();
}

Objectives evaluate_policy(const Network& net, const PredictorSet& predictors, const Dataset& data,
                           const Genome& genome) {
  return PolicyEvaluator(net, predictors, data)(genome);
}

std::vector<std::size_t> choose_subset(std::size_t dataset_size, std::size_t size, std::uint64_t seed) {
  std::vector<std::size_t> idx(dataset_size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (size >= dataset_size) return idx;
  Rng rng(seed, 3);
  rng.shuffle(idx);
  idx.resize(size);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string header(const std::vector<std::string>& names, bool with_generation) {
  std::string h = with_generation ? "generation," : "";
  for (const auto& n : names) h += n + ",";
  return h + "error,flops\n";
}

std::string row(const Genome& g, const Objectives& o) {
  std::string r;
  for (double v : g) r += num(v) + ",";
  return r + num(o[0]) + "," + num(o[1]) + "\n";
}

}  // namespace

std::string archive_csv(const std::vector<ArchiveEntry>& archive, const std::vector<std::string>& layer_names) {
  std::string out = header(layer_names, true);
  for (const auto& e : archive) out += std::to_string(e.generation) + "," + row(e.genome, e.objectives);
  return out;
}

std::string front_csv(const Nsga2Result& result, const std::vector<std::string>& layer_names) {
  std::string out = header(layer_names, false);
  for (auto i : result.front) out += row(result.population[i].genome, result.population[i].objectives);
  return out;
}

}  // namespace lazyconv
