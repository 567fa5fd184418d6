// Protocol configuration shared by every module.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbl {

enum class Method { FBL, FedAvg, FedProx };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct FederationConfig {
  std::size_t clients = 20;            // K
  std::size_t rounds = 200;            // T
  std::size_t local_iters = 10;        // E, counted in mini-batch steps
  std::size_t local_epochs = 0;        // alternative: full passes; 0 = use local_iters
  double selection_fraction = 0.5;
  double lr = 1e-3;
  double momentum = 1e-4;
  double weight_decay = 1e-5;
  std::size_t batch_size = 64;
  std::size_t drop_count = 2;          // zeta*B, absolute count per batch
  std::size_t replay_period = 50;      // m
  double replay_retain = 0.1;          // gamma
  double dirichlet_alpha = 0.1;
  double lambda = 0.0;                 // fraction of computation-unconstrained clients
  double incapable_fraction = 0.0;     // fraction of clients that cannot generate
  Method method = Method::FBL;
  double mu_prox = 0.1;
  std::uint64_t seed = 1;
  std::vector<std::size_t> hidden_dims = {32, 16};  // last entry is feature_dim
  std::size_t threads = 1;

  // <= 0 means derive from data: 0.1 (augment) / 0.75 (shift) of the mean
  // intra-class std.
  double augment_sigma = -1.0;
  double domain_shift = -1.0;

  // Variants and ablation toggles; defaults match the base protocol.
  bool no_alignment = false;
  bool no_drop = false;
  bool random_sampling = false;
  bool weight_by_samples = false;       // sample-count-weighted aggregation
  bool aggregate_all_clients = false;   // average stale models of unselected clients too
  bool rerank_every_round = false;      // refresh sampled sets every round, not every m
  bool regenerate_fill_every_m = false; // regenerate synthetic fill at replay rounds
  bool reset_embeddings_each_round = false;

  std::size_t selected_per_round() const;

  // Throws std::domain_error naming the violated constraint.
  void validate() const;
};

}  // namespace fbl
