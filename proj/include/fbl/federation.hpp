// The server/client protocol: compute-mode assignment, client selection,
// local training (FBL, FedAvg, FedProx), uniform aggregation, evaluation,
// and the full round loop. Selected clients may train on worker threads;
// results are independent of the parallelism degree because every random
// decision comes from a per-(client, round, purpose) derived stream.

#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "fbl/balance.hpp"
#include "fbl/config.hpp"
#include "fbl/data.hpp"
#include "fbl/model.hpp"

namespace fbl {

struct RoundMetrics {
  std::size_t round = 0;
  double accuracy = 0.0;
  double mean_loss = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  // (client id, working-set size) for the clients that trained this round.
  std::vector<std::pair<std::size_t, std::size_t>> working_sizes;
  // Mean distance between synthetic-plus-embedding centroids and real class
  // centroids in feature space; NaN when not applicable.
  double alignment_gap = std::numeric_limits<double>::quiet_NaN();
  // Mean L2 norm of the client embeddings; NaN for baselines.
  double embedding_norm = std::numeric_limits<double>::quiet_NaN();
};

struct FederationResult {
  std::vector<RoundMetrics> rounds;
  Classifier model;
  std::vector<ComputeMode> modes;
  FederationConfig effective;  // config with auto parameters resolved
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
};

// round(lambda*K) clients Unconstrained and round(incapable_fraction*K)
// GenerationIncapable, assigned uniformly at random; the rest Constrained.
std::vector<ComputeMode> assign_compute_modes(std::size_t num_clients, double lambda,
                                              double incapable_fraction, RandomStream& rng);

// round(fraction*K) distinct client ids, uniform, sorted ascending.
std::vector<std::size_t> select_clients(std::size_t num_clients, double fraction,
                                        RandomStream& rng);

// E steps of mini-batch SGD on `working`, starting from a copy of `global`.
// FBL-capable clients route through the aligned batch step; FedProx adds
// mu_prox*(w - w_global) to the gradient. The config must already have auto
// parameters resolved. mean_loss_out, if given, receives the mean of the
// per-iteration batch losses.
Classifier local_train(ClientState& client, const LabeledDataset& working,
                       const Classifier& global, const FederationConfig& config,
                       std::size_t round, double* mean_loss_out = nullptr);

// Unweighted elementwise mean.
Classifier aggregate(const std::vector<Classifier>& models);
Classifier aggregate_weighted(const std::vector<Classifier>& models,
                              const std::vector<double>& weights);

// Top-1 accuracy; ties resolve to the lowest class index.
double evaluate(const Classifier& model, const LabeledDataset& test);

// Returns a copy of `config` with augment_sigma / domain_shift resolved from
// the training data when they are set to auto (<= 0).
FederationConfig resolve_auto_params(const FederationConfig& config,
                                     const LabeledDataset& train);

// on_round, when set, is invoked after each round completes (metrics
// streaming); it runs on the caller's thread.
using RoundCallback = std::function<void(const RoundMetrics&)>;

FederationResult run_federation(const FederationConfig& config, const LabeledDataset& train,
                                const LabeledDataset& test,
                                const RoundCallback& on_round = {});

// Mean over (client, filled class) pairs of the feature-space distance
// between the synthetic centroid (plus embedding) and the real class
// centroid from `reference`, expressed in units of the mean inter-class
// real-centroid distance so values taken under different models are
// comparable. NaN when no client holds synthetic samples.
double alignment_gap(const Classifier& model, const std::vector<ClientState>& clients,
                     const LabeledDataset& reference, bool apply_embeddings);

// Serialization for the external interfaces. The metrics CSV carries
// round,accuracy,mean_loss,seconds; the deterministic view drops the
// measured seconds column and is what reproducibility checks compare.
// Header and row are exposed separately so runs can stream rows as rounds
// complete.
std::string metrics_csv_header();
std::string metrics_csv_row(const RoundMetrics& metrics);
std::string metrics_to_csv(const std::vector<RoundMetrics>& rounds);
std::string metrics_to_csv_deterministic(const std::vector<RoundMetrics>& rounds);

}  // namespace fbl
