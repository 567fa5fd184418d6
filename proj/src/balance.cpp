#include "fbl/balance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fbl/diagnostics.hpp"

namespace fbl {

std::vector<std::size_t> ClassPartition::special() const {
  std::vector<std::size_t> out = scarce;
  out.insert(out.end(), missing.begin(), missing.end());
  std::sort(out.begin(), out.end());
  return out;
}

BalancePoint compute_balance_point(const std::vector<std::size_t>& counts, BalanceMode mode) {
  if (counts.empty()) throw std::domain_error("compute_balance_point: no classes");
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (total == 0) throw std::domain_error("compute_balance_point: empty client");
  BalancePoint bp;
  bp.mode = mode;
  if (mode == BalanceMode::Constrained) {
    bp.value = std::max<std::size_t>(1, total / counts.size());
  } else {
    bp.value = *std::max_element(counts.begin(), counts.end());
  }
  return bp;
}

ClassPartition classify_classes(const std::vector<std::size_t>& counts,
                                std::size_t balance_point) {
  ClassPartition part;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      part.missing.push_back(c);
    } else if (counts[c] > balance_point) {
      part.excessive.push_back(c);
    } else {
      part.scarce.push_back(c);  // count == B_k lands here with zero deficit
    }
  }
  return part;
}

std::vector<std::size_t> knowledge_sample(const std::vector<double>& losses,
                                          std::size_t budget) {
  const std::size_t take = std::min(budget, losses.size());
  std::vector<std::size_t> order(losses.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&losses](std::size_t a, std::size_t b) {
    return losses[a] > losses[b];
  });
  order.resize(take);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::size_t> knowledge_sample_random(std::size_t pool_size, std::size_t budget,
                                                 RandomStream& rng) {
  return rng.sample_without_replacement(pool_size, budget);
}

std::vector<std::size_t> knowledge_replay(const std::vector<std::size_t>& active,
                                          const std::vector<double>& losses,
                                          double retain_ratio, std::size_t budget,
                                          RandomStream& rng, bool loss_ranked_new) {
  if (retain_ratio < 0.0 || retain_ratio > 1.0) {
    throw std::domain_error("knowledge_replay: gamma must be in [0, 1]");
  }
  const std::size_t pool_size = losses.size();
  const std::size_t target = std::min(budget, pool_size);

  const std::size_t quota =
      static_cast<std::size_t>(std::floor(retain_ratio * static_cast<double>(budget)));
  const std::size_t retain = std::min(quota, active.size());

  std::vector<std::size_t> result;
  result.reserve(target);
  std::vector<bool> taken(pool_size, false);
  for (std::size_t pos : rng.sample_without_replacement(active.size(), retain)) {
    result.push_back(active[pos]);
    taken[active[pos]] = true;
  }

  std::vector<bool> in_active(pool_size, false);
  for (std::size_t i : active) in_active[i] = true;
  std::vector<std::size_t> complement;
  for (std::size_t i = 0; i < pool_size; ++i) {
    if (!in_active[i]) complement.push_back(i);
  }

  const std::size_t want_new = target - result.size();
  const std::size_t pick = std::min(want_new, complement.size());
  std::vector<std::size_t> chosen;
  if (loss_ranked_new) {
    std::vector<double> sub(complement.size());
    for (std::size_t i = 0; i < complement.size(); ++i) sub[i] = losses[complement[i]];
    chosen = knowledge_sample(sub, pick);
  } else {
    chosen = knowledge_sample_random(complement.size(), pick, rng);
  }
  for (std::size_t k : chosen) {
    result.push_back(complement[k]);
    taken[complement[k]] = true;
  }

  if (result.size() < target) {
    // Complement exhausted: backfill from the unretained part of the old set.
    std::vector<std::size_t> rest;
    for (std::size_t i : active) {
      if (!taken[i]) rest.push_back(i);
    }
    std::size_t need = target - result.size();
    std::vector<std::size_t> fill;
    if (loss_ranked_new) {
      std::vector<double> sub(rest.size());
      for (std::size_t i = 0; i < rest.size(); ++i) sub[i] = losses[rest[i]];
      fill = knowledge_sample(sub, need);
    } else {
      fill = knowledge_sample_random(rest.size(), need, rng);
    }
    for (std::size_t k : fill) result.push_back(rest[k]);
  }

  std::sort(result.begin(), result.end());
  return result;
}

std::vector<Sample> knowledge_fill(const ClassGenerator& generator, std::size_t label,
                                   std::size_t deficit, RandomStream& rng) {
  std::vector<Sample> out = generator.generate(label, deficit, rng);
  diag::counters().generated_samples += out.size();
  return out;
}

void init_client_balance(ClientState& client) {
  if (client.mode == ComputeMode::GenerationIncapable) {
    client.balance_ready = true;
    return;
  }
  client.counts = class_counts(client.data, client.data.num_classes);
  client.by_class.assign(client.data.num_classes, {});
  for (std::size_t i = 0; i < client.data.samples.size(); ++i) {
    client.by_class[client.data.samples[i].label].push_back(i);
  }
  const BalanceMode mode = client.mode == ComputeMode::Unconstrained
                               ? BalanceMode::Unconstrained
                               : BalanceMode::Constrained;
  const BalancePoint bp = compute_balance_point(client.counts, mode);
  client.balance_point = bp.value;
  if (mode == BalanceMode::Constrained) {
    const std::size_t total =
        std::accumulate(client.counts.begin(), client.counts.end(), std::size_t{0});
    client.balance_clamped = total / client.counts.size() == 0;
  }
  client.partition = classify_classes(client.counts, client.balance_point);
  // The alignment table is created on first rebalance, once the model's
  // feature dimension is known.
  client.balance_ready = true;
}

std::vector<double> per_sample_losses(const Classifier& model, const LabeledDataset& data,
                                      const std::vector<std::size_t>& indices) {
  std::vector<double> losses(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Sample& s = data.samples[indices[i]];
    losses[i] = cross_entropy(forward_head(model, forward_features(model, s.features)),
                              s.label);
  }
  return losses;
}

LabeledDataset rebalance_client(ClientState& client, const Classifier& global_model,
                                std::size_t round, const FederationConfig& config,
                                const ClassGenerator& generator) {
  diag::counters().rebalance_calls += 1;
  if (client.data.empty()) throw std::domain_error("rebalance_client: client has no data");
  if (client.mode == ComputeMode::GenerationIncapable) return client.data;
  if (!client.balance_ready) init_client_balance(client);

  // One embedding per special class. Zero-deficit scarce classes keep a
  // zero embedding that never trains.
  if (client.table.empty() && !config.no_alignment) {
    client.table =
        make_alignment_table(client.partition.special(), global_model.feature_dim());
  }

  const std::size_t budget = client.balance_point;
  const bool refresh = config.rerank_every_round || (round % config.replay_period == 0);

  bool replayed = false;
  for (std::size_t c : client.partition.excessive) {
    const std::vector<std::size_t>& pool = client.by_class[c];
    auto it = client.replay.active.find(c);
    if (it == client.replay.active.end()) {
      // First participation: plain selection, loss-ranked or random.
      std::vector<std::size_t> sel;
      if (config.random_sampling) {
        RandomStream rng(config.seed, client.id, round, StreamPurpose::Sample);
        sel = knowledge_sample_random(pool.size(), budget, rng);
      } else {
        sel = knowledge_sample(per_sample_losses(global_model, client.data, pool), budget);
      }
      client.replay.active.emplace(c, std::move(sel));
    } else if (refresh) {
      RandomStream rng(config.seed, client.id, round, StreamPurpose::Replay);
      it->second = knowledge_replay(
          it->second, per_sample_losses(global_model, client.data, pool),
          config.replay_retain, budget, rng, !config.random_sampling);
      replayed = true;
    }
  }
  if (replayed) ++client.replay.cycle;

  const bool regenerate = config.regenerate_fill_every_m && refresh;
  {
    RandomStream fill_rng(config.seed, client.id, round, StreamPurpose::Fill);
    for (std::size_t c : client.partition.special()) {
      const std::size_t deficit = budget - client.counts[c];
      if (deficit == 0) continue;
      if (client.synth_cache.count(c) == 0 || regenerate) {
        client.synth_cache[c] = knowledge_fill(generator, c, deficit, fill_rng);
      }
    }
  }

  LabeledDataset working;
  working.num_classes = client.data.num_classes;
  for (std::size_t c = 0; c < client.data.num_classes; ++c) {
    if (std::binary_search(client.partition.excessive.begin(),
                           client.partition.excessive.end(), c)) {
      for (std::size_t pos : client.replay.active.at(c)) {
        working.samples.push_back(client.data.samples[client.by_class[c][pos]]);
      }
    } else {
      for (std::size_t idx : client.by_class[c]) {
        working.samples.push_back(client.data.samples[idx]);
      }
      auto it = client.synth_cache.find(c);
      if (it != client.synth_cache.end()) {
        working.samples.insert(working.samples.end(), it->second.begin(), it->second.end());
      }
    }
  }
  return working;
}

}  // namespace fbl
