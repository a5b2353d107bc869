#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "lazyconv/cost_profile.hpp"

namespace lazyconv {

/// (error, cost), both minimized.
using Objectives = std::array<double, 2>;
using Genome = std::vector<double>;

/// a is no worse than b in every objective and strictly better in one.
bool dominates(const Objectives& a, const Objectives& b);

/// Fast non-dominated sort. Front 0 holds the non-dominated points; indices
/// within a front are ascending.
std::vector<std::vector<std::size_t>> non_dominated_sort(std::span<const Objectives> points);

/// Crowding distance of each member of one front (infinite at the boundaries,
/// and for fronts of at most two points).
std::vector<double> crowding_distance(std::span<const Objectives> front);

struct Individual {
  Genome genome;
  Objectives objectives{};
  std::size_t rank = 0;
  double crowding = 0.0;
};

struct Nsga2Config {
  std::size_t population = 40;
  std::size_t generations = 30;
  double crossover_probability = 0.9;
  double crossover_eta = 15.0;
  double mutation_probability = -1.0;  // negative: 1 / genome length
  double mutation_eta = 20.0;
  std::uint64_t seed = 42;
  unsigned threads = 1;

  void validate() const;
};

struct ArchiveEntry {
  std::size_t generation = 0;
  Genome genome;
  Objectives objectives{};
};

struct Nsga2Result {
  std::vector<Individual> population;  // final parents
  std::vector<std::size_t> front;      // indices into population with rank 0
  std::vector<ArchiveEntry> archive;   // every evaluated individual, by generation
};

/// Must be safe to call concurrently when cfg.threads > 1.
using Evaluator = std::function<Objectives(const Genome&)>;

/// Generational NSGA-II over genomes in [0, 1]^length: binary crowded
/// tournament, simulated binary crossover, polynomial mutation, elitist
/// (rank, crowding) survival. `seeds` fill the start of generation 0; the rest
/// is uniform random.
Nsga2Result nsga2(const Nsga2Config& cfg, std::size_t genome_length, const Evaluator& evaluate,
                  std::span<const Genome> seeds = {});

/// Error and per-sample model FLOPs of lazy inference under a genome policy
/// (one keep fraction per prunable conv layer, in network order). Results are
/// memoized by per-layer kept-filter counts.
class PolicyEvaluator {
 public:
  PolicyEvaluator(const Network& net, const PredictorSet& predictors, Dataset data);

  Objectives operator()(const Genome& genome) const;

  const std::vector<std::string>& prunable_layers() const { return layers_; }
  KeepPolicy policy(const Genome& genome) const;
  double eager_cost() const { return eager_cost_; }
  std::size_t evaluations() const;

 private:
  const Network& net_;
  const PredictorSet& predictors_;
  Dataset data_;
  std::vector<Index> labels_;
  std::vector<std::string> layers_;
  std::vector<Index> sizes_;
  double eager_cost_ = 0.0;
  mutable std::mutex mutex_;
  mutable std::map<std::vector<Index>, Objectives> memo_;
};

Objectives evaluate_policy(const Network& net, const PredictorSet& predictors, const Dataset& data,
                           const Genome& genome);

/// Seeded sample of `size` distinct dataset indices (all indices, in order, if size >= dataset size).
std::vector<std::size_t> choose_subset(std::size_t dataset_size, std::size_t size, std::uint64_t seed);

/// generation, one column per layer, error, flops.
std::string archive_csv(const std::vector<ArchiveEntry>& archive, const std::vector<std::string>& layer_names);
/// Final front-1, same columns without generation.
std::string front_csv(const Nsga2Result& result, const std::vector<std::string>& layer_names);

}  // namespace lazyconv
