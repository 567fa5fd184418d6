// Knowledge alignment embeddings for synthetic samples, and the knowledge
// drop regularizer. One learnable feature-space vector per special class
// (scarce or missing); it is added to F(x) for synthetic inputs before the
// head, and stays on the client.

#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "fbl/data.hpp"
#include "fbl/model.hpp"
#include "fbl/rng.hpp"

namespace fbl {

struct AlignmentEntry {
  std::vector<double> embedding;  // P_i, feature_dim
  std::vector<double> velocity;   // optimizer state
};

struct AlignmentTable {
  std::map<std::size_t, AlignmentEntry> entries;  // keyed by class id

  bool empty() const { return entries.empty(); }
  const std::vector<double>& embedding(std::size_t label) const;
};

// Zero-initialized embeddings for the given classes.
AlignmentTable make_alignment_table(const std::vector<std::size_t>& special_classes,
                                    std::size_t feature_dim);

// H(F(x) + P_label) for synthetic non-dropped samples; H(F(x)) otherwise.
Logits forward_aligned(const Classifier& model, const AlignmentTable& table,
                       const Sample& sample, bool dropped);

// mask[i] == true means sample i's embedding is skipped this batch. Exactly
// min(drop_count, #synthetic in batch) synthetic samples are chosen uniformly
// without replacement; real samples are never masked.
std::vector<bool> make_drop_mask(const std::vector<Sample>& batch, std::size_t drop_count,
                                 RandomStream& rng);

struct AlignedTrainOptions {
  double lr = 1e-3;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::size_t drop_count = 0;
  double augment_sigma = 0.0;
  bool use_alignment = true;
  bool use_drop = true;
};

// One SGD step on a batch: real samples are jittered by augment_real, the
// synthetic routing of forward_aligned is differentiated through, and both
// the model and the non-dropped embeddings take a step. Returns the mean
// batch loss. Augmentation and drop selection draw from separate streams so
// toggling one strategy cannot shift the other's draws.
double train_batch_aligned(Classifier& model, AlignmentTable& table,
                           const std::vector<Sample>& batch, const AlignedTrainOptions& opts,
                           GradientBuffer& buffer, RandomStream& drop_rng,
                           RandomStream& augment_rng);

}  // namespace fbl
