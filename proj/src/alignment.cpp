#include "fbl/alignment.hpp"

#include <stdexcept>
#include <string>

namespace fbl {

const std::vector<double>& AlignmentTable::embedding(std::size_t label) const {
  auto it = entries.find(label);
  if (it == entries.end()) {
    throw std::out_of_range("alignment table has no embedding for class " +
                            std::to_string(label));
  }
  return it->second.embedding;
}

AlignmentTable make_alignment_table(const std::vector<std::size_t>& special_classes,
                                    std::size_t feature_dim) {
  AlignmentTable table;
  for (std::size_t c : special_classes) {
    AlignmentEntry e;
    e.embedding.assign(feature_dim, 0.0);
    e.velocity.assign(feature_dim, 0.0);
    table.entries.emplace(c, std::move(e));
  }
  return table;
}

Logits forward_aligned(const Classifier& model, const AlignmentTable& table,
                       const Sample& sample, bool dropped) {
  std::vector<double> feat = forward_features(model, sample.features);
  if (sample.origin == Origin::Synthetic && !dropped) {
    const std::vector<double>& p = table.embedding(sample.label);
    for (std::size_t i = 0; i < feat.size(); ++i) feat[i] += p[i];
  }
  return forward_head(model, feat);
}

std::vector<bool> make_drop_mask(const std::vector<Sample>& batch, std::size_t drop_count,
                                 RandomStream& rng) {
  std::vector<bool> mask(batch.size(), false);
  if (drop_count == 0) return mask;
  std::vector<std::size_t> synthetic_pos;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].origin == Origin::Synthetic) synthetic_pos.push_back(i);
  }
  const std::vector<std::size_t> chosen =
      rng.sample_without_replacement(synthetic_pos.size(), drop_count);
  for (std::size_t k : chosen) mask[synthetic_pos[k]] = true;
  return mask;
}

double train_batch_aligned(Classifier& model, AlignmentTable& table,
                           const std::vector<Sample>& batch, const AlignedTrainOptions& opts,
                           GradientBuffer& buffer, RandomStream& drop_rng,
                           RandomStream& augment_rng) {
  if (batch.empty()) throw std::domain_error("train_batch_aligned: empty batch");

  // Real samples get fresh jitter each batch; synthetic samples never do.
  std::vector<std::vector<double>> inputs(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].origin == Origin::Real) {
      inputs[i] = augment_real(batch[i], opts.augment_sigma, augment_rng).features;
    } else {
      inputs[i] = batch[i].features;
    }
  }

  std::vector<bool> dropped(batch.size(), false);
  if (opts.use_alignment && opts.use_drop) {
    dropped = make_drop_mask(batch, opts.drop_count, drop_rng);
  }

  std::vector<BatchItem> items(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    items[i].x = &inputs[i];
    items[i].label = batch[i].label;
    if (opts.use_alignment && batch[i].origin == Origin::Synthetic && !dropped[i]) {
      items[i].offset = &table.embedding(batch[i].label);
    }
  }

  std::vector<std::vector<double>> offset_grads;
  const double loss = backward(model, items, buffer, &offset_grads);

  sgd_step(model, buffer, opts.lr, opts.momentum, opts.weight_decay);

  // Per-class embedding gradient is the sum of its samples' offset gradients
  // (each already carries the 1/N of the mean loss), i.e. exactly the
  // mean-batch-loss gradient of the shared embedding. Dropped samples
  // contributed no offset, hence exactly zero gradient.
  std::map<std::size_t, std::vector<double>> grads_by_class;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (offset_grads[i].empty()) continue;
    auto [it, fresh] =
        grads_by_class.try_emplace(batch[i].label, offset_grads[i].size(), 0.0);
    for (std::size_t d = 0; d < offset_grads[i].size(); ++d) {
      it->second[d] += offset_grads[i][d];
    }
    (void)fresh;
  }
  for (auto& [label, grad] : grads_by_class) {
    AlignmentEntry& entry = table.entries.at(label);
    sgd_step_vector(entry.embedding, entry.velocity, grad, opts.lr, opts.momentum,
                    opts.weight_decay);
  }
  return loss;
}

}  // namespace fbl
