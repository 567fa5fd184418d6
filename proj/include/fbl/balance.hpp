// Client-side rebalancing: balance point, class classification, loss-based
// knowledge sampling, periodic knowledge replay, and knowledge filling.

#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "fbl/alignment.hpp"
#include "fbl/config.hpp"
#include "fbl/data.hpp"
#include "fbl/model.hpp"
#include "fbl/rng.hpp"

namespace fbl {

enum class BalanceMode { Constrained, Unconstrained };

// How a client participates: balanced under the floor-mean budget, balanced
// up to the max class count, or unable to generate at all (trains like a
// plain FedAvg client).
enum class ComputeMode { Constrained, Unconstrained, GenerationIncapable };

struct BalancePoint {
  std::size_t value = 0;
  BalanceMode mode = BalanceMode::Constrained;
};

struct ClassPartition {
  std::vector<std::size_t> excessive;  // count >  B_k
  std::vector<std::size_t> scarce;     // 0 < count <= B_k
  std::vector<std::size_t> missing;    // count == 0

  std::vector<std::size_t> special() const;  // scarce + missing, sorted
};

// Constrained: max(1, floor(mean count)); the clamp keeps tiny skewed clients
// from rounding themselves empty. Unconstrained: max count.
BalancePoint compute_balance_point(const std::vector<std::size_t>& counts, BalanceMode mode);

ClassPartition classify_classes(const std::vector<std::size_t>& counts,
                                std::size_t balance_point);

// Indices of the `budget` largest losses (all indices when budget >= pool),
// ties to the lower index; returned sorted ascending.
std::vector<std::size_t> knowledge_sample(const std::vector<double>& losses,
                                          std::size_t budget);

// Uniform variant used by the random-sampling ablation.
std::vector<std::size_t> knowledge_sample_random(std::size_t pool_size, std::size_t budget,
                                                 RandomStream& rng);

// Next active set: floor(retain_ratio * budget) uniform draws from `active`,
// topped up from the complement of the pool by current loss (or uniformly
// when loss_ranked_new is false). If the complement runs out, the shortfall
// is backfilled from the unretained part of `active`. losses covers the whole
// pool; active holds pool indices.
std::vector<std::size_t> knowledge_replay(const std::vector<std::size_t>& active,
                                          const std::vector<double>& losses,
                                          double retain_ratio, std::size_t budget,
                                          RandomStream& rng, bool loss_ranked_new = true);

// Exactly `deficit` synthetic samples of class `label`.
std::vector<Sample> knowledge_fill(const ClassGenerator& generator, std::size_t label,
                                   std::size_t deficit, RandomStream& rng);

struct ReplayState {
  std::map<std::size_t, std::vector<std::size_t>> active;  // per excessive class
  std::size_t cycle = 0;
};

struct ClientState {
  std::size_t id = 0;
  LabeledDataset data;
  ComputeMode mode = ComputeMode::Constrained;

  // Filled by init_client_balance for generation-capable clients.
  std::vector<std::size_t> counts;
  std::vector<std::vector<std::size_t>> by_class;  // local indices per class
  std::size_t balance_point = 0;
  bool balance_clamped = false;
  ClassPartition partition;
  ReplayState replay;
  AlignmentTable table;
  std::map<std::size_t, std::vector<Sample>> synth_cache;
  bool balance_ready = false;
};

// Computes counts, the balance point for the client's mode, the class
// partition, and a zero alignment table over the special classes. No-op for
// GenerationIncapable clients.
void init_client_balance(ClientState& client);

// Per-sample cross-entropy under `model` for the given local indices.
std::vector<double> per_sample_losses(const Classifier& model, const LabeledDataset& data,
                                      const std::vector<std::size_t>& indices);

// Builds the round's working set: active excessive subsets (selected on
// first participation, refreshed by knowledge_replay every replay_period
// rounds, reused otherwise), all scarce real samples, and the cached
// synthetic fill. Every class ends at exactly B_k samples. Incapable clients
// get their raw data back.
LabeledDataset rebalance_client(ClientState& client, const Classifier& global_model,
                                std::size_t round, const FederationConfig& config,
                                const ClassGenerator& generator);

}  // namespace fbl
