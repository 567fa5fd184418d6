#include "fbl/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fbl/diagnostics.hpp"

namespace fbl {

namespace diag {
CallCounters& counters() {
  static CallCounters instance;
  return instance;
}
}  // namespace diag

std::vector<ComputeMode> assign_compute_modes(std::size_t num_clients, double lambda,
                                              double incapable_fraction, RandomStream& rng) {
  if (lambda < 0.0 || lambda > 1.0) {
    throw std::domain_error("assign_compute_modes: lambda must be in [0, 1]");
  }
  if (incapable_fraction < 0.0 || incapable_fraction >= 1.0) {
    throw std::domain_error("assign_compute_modes: incapable_fraction must be in [0, 1)");
  }
  const std::size_t n_unconstrained = static_cast<std::size_t>(
      std::lround(lambda * static_cast<double>(num_clients)));
  const std::size_t n_incapable = static_cast<std::size_t>(
      std::lround(incapable_fraction * static_cast<double>(num_clients)));
  if (n_unconstrained + n_incapable > num_clients) {
    throw std::domain_error("assign_compute_modes: fractions exceed the client count");
  }
  std::vector<std::size_t> perm(num_clients);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<ComputeMode> modes(num_clients, ComputeMode::Constrained);
  for (std::size_t i = 0; i < n_unconstrained; ++i) modes[perm[i]] = ComputeMode::Unconstrained;
  for (std::size_t i = 0; i < n_incapable; ++i) {
    modes[perm[n_unconstrained + i]] = ComputeMode::GenerationIncapable;
  }
  return modes;
}

std::vector<std::size_t> select_clients(std::size_t num_clients, double fraction,
                                        RandomStream& rng) {
  if (fraction <= 0.0 || fraction > 1.0) {
    throw std::domain_error("select_clients: fraction must be in (0, 1]");
  }
  const std::size_t n = static_cast<std::size_t>(
      std::lround(fraction * static_cast<double>(num_clients)));
  return rng.sample_without_replacement(num_clients, n);
}

namespace {

// Adds mu * (w - w0) to the accumulated gradient (FedProx proximal term).
void add_proximal(GradientBuffer& buffer, const Classifier& w, const Classifier& w0,
                  double mu) {
  const std::vector<double> wf = w.to_flat();
  const std::vector<double> w0f = w0.to_flat();
  std::vector<double> gf = buffer.grad.to_flat();
  for (std::size_t i = 0; i < gf.size(); ++i) gf[i] += mu * (wf[i] - w0f[i]);
  buffer.grad.from_flat(gf);
}

}  // namespace

Classifier local_train(ClientState& client, const LabeledDataset& working,
                       const Classifier& global, const FederationConfig& config,
                       std::size_t round, double* mean_loss_out) {
  if (working.empty()) throw std::domain_error("local_train: empty working set");

  Classifier model = global;
  const std::size_t total_iters =
      config.local_epochs > 0
          ? config.local_epochs *
                ((working.size() + config.batch_size - 1) / config.batch_size)
          : config.local_iters;
  if (total_iters == 0) {
    if (mean_loss_out) *mean_loss_out = std::numeric_limits<double>::quiet_NaN();
    return model;
  }

  const bool fbl_path =
      config.method == Method::FBL && client.mode != ComputeMode::GenerationIncapable;

  RandomStream shuffle_rng(config.seed, client.id, round, StreamPurpose::Shuffle);
  RandomStream drop_rng(config.seed, client.id, round, StreamPurpose::Drop);
  RandomStream augment_rng(config.seed, client.id, round, StreamPurpose::Augment);

  GradientBuffer buffer = make_gradient_buffer(model);
  AlignedTrainOptions opts;
  opts.lr = config.lr;
  opts.momentum = config.momentum;
  opts.weight_decay = config.weight_decay;
  opts.drop_count = config.drop_count;
  opts.augment_sigma = config.augment_sigma > 0.0 ? config.augment_sigma : 0.0;
  opts.use_alignment = !config.no_alignment;
  opts.use_drop = !config.no_drop;

  std::vector<std::size_t> order(working.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t pos = working.size();  // forces a shuffle before the first batch

  double loss_sum = 0.0;
  std::vector<Sample> batch;
  std::vector<BatchItem> items;
  for (std::size_t it = 0; it < total_iters; ++it) {
    if (pos >= working.size()) {
      shuffle_rng.shuffle(order);
      pos = 0;
    }
    const std::size_t end = std::min(pos + config.batch_size, working.size());
    batch.clear();
    for (std::size_t i = pos; i < end; ++i) batch.push_back(working.samples[order[i]]);
    pos = end;

    if (fbl_path) {
      diag::counters().aligned_batches += 1;
      loss_sum += train_batch_aligned(model, client.table, batch, opts, buffer, drop_rng,
                                      augment_rng);
    } else {
      items.clear();
      for (const Sample& s : batch) items.push_back({&s.features, s.label, nullptr});
      loss_sum += backward(model, items, buffer);
      if (config.method == Method::FedProx && config.mu_prox > 0.0) {
        add_proximal(buffer, model, global, config.mu_prox);
      }
      sgd_step(model, buffer, config.lr, config.momentum, config.weight_decay);
    }
  }
  if (mean_loss_out) *mean_loss_out = loss_sum / static_cast<double>(total_iters);
  return model;
}

Classifier aggregate(const std::vector<Classifier>& models) {
  return aggregate_weighted(models, std::vector<double>(models.size(), 1.0));
}

Classifier aggregate_weighted(const std::vector<Classifier>& models,
                              const std::vector<double>& weights) {
  if (models.empty()) throw std::domain_error("aggregate: no models");
  if (models.size() != weights.size()) {
    throw std::invalid_argument("aggregate: weights size mismatch");
  }
  std::vector<double> acc = models.front().to_flat();
  double wsum = weights.front();
  for (double& v : acc) v *= weights.front();
  for (std::size_t m = 1; m < models.size(); ++m) {
    const std::vector<double> flat = models[m].to_flat();
    if (flat.size() != acc.size()) throw std::invalid_argument("aggregate: shape mismatch");
    for (std::size_t i = 0; i < flat.size(); ++i) acc[i] += weights[m] * flat[i];
    wsum += weights[m];
  }
  if (wsum <= 0.0) throw std::domain_error("aggregate: weights sum to zero");
  for (double& v : acc) v /= wsum;
  Classifier out = models.front();
  out.from_flat(acc);
  return out;
}

double evaluate(const Classifier& model, const LabeledDataset& test) {
  if (test.empty()) throw std::domain_error("evaluate: empty test set");
  std::size_t correct = 0;
  for (const Sample& s : test.samples) {
    const Logits logits = forward_head(model, forward_features(model, s.features));
    const std::size_t pred =
        std::max_element(logits.begin(), logits.end()) - logits.begin();
    if (pred == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

FederationConfig resolve_auto_params(const FederationConfig& config,
                                     const LabeledDataset& train) {
  FederationConfig out = config;
  const double spread = mean_intra_class_std(train);
  if (out.augment_sigma <= 0.0) out.augment_sigma = 0.1 * spread;
  if (out.domain_shift <= 0.0) out.domain_shift = 0.75 * spread;
  return out;
}

double alignment_gap(const Classifier& model, const std::vector<ClientState>& clients,
                     const LabeledDataset& reference, bool apply_embeddings) {
  const std::size_t num_classes = reference.num_classes;
  const std::size_t fd = model.feature_dim();
  std::vector<std::vector<double>> real_centroid(num_classes, std::vector<double>(fd, 0.0));
  std::vector<std::size_t> counts(num_classes, 0);
  for (const Sample& s : reference.samples) {
    const std::vector<double> f = forward_features(model, s.features);
    for (std::size_t d = 0; d < fd; ++d) real_centroid[s.label][d] += f[d];
    ++counts[s.label];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) continue;
    for (double& v : real_centroid[c]) v /= static_cast<double>(counts[c]);
  }

  // The gap is reported in units of the feature space's own scale (the mean
  // distance between real class centroids). Absolute feature norms grow as
  // the model trains, so raw distances taken under different models are not
  // comparable across rounds; the ratio is.
  double scale = 0.0;
  std::size_t scale_pairs = 0;
  for (std::size_t a = 0; a < num_classes; ++a) {
    if (counts[a] == 0) continue;
    for (std::size_t b = a + 1; b < num_classes; ++b) {
      if (counts[b] == 0) continue;
      double sq = 0.0;
      for (std::size_t d = 0; d < fd; ++d) {
        const double diff = real_centroid[a][d] - real_centroid[b][d];
        sq += diff * diff;
      }
      scale += std::sqrt(sq);
      ++scale_pairs;
    }
  }
  if (scale_pairs == 0 || scale <= 0.0) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  scale /= static_cast<double>(scale_pairs);

  double total = 0.0;
  std::size_t pairs = 0;
  for (const ClientState& client : clients) {
    for (const auto& [label, samples] : client.synth_cache) {
      if (samples.empty() || counts[label] == 0) continue;
      std::vector<double> centroid(fd, 0.0);
      for (const Sample& s : samples) {
        const std::vector<double> f = forward_features(model, s.features);
        for (std::size_t d = 0; d < fd; ++d) centroid[d] += f[d];
      }
      for (double& v : centroid) v /= static_cast<double>(samples.size());
      if (apply_embeddings) {
        auto it = client.table.entries.find(label);
        if (it != client.table.entries.end()) {
          for (std::size_t d = 0; d < fd; ++d) centroid[d] += it->second.embedding[d];
        }
      }
      double sq = 0.0;
      for (std::size_t d = 0; d < fd; ++d) {
        const double diff = centroid[d] - real_centroid[label][d];
        sq += diff * diff;
      }
      total += std::sqrt(sq) / scale;
      ++pairs;
    }
  }
  return pairs == 0 ? std::numeric_limits<double>::quiet_NaN()
                    : total / static_cast<double>(pairs);
}

namespace {

double mean_embedding_norm(const std::vector<ClientState>& clients) {
  double total = 0.0;
  std::size_t n = 0;
  for (const ClientState& client : clients) {
    for (const auto& [label, entry] : client.table.entries) {
      double sq = 0.0;
      for (double v : entry.embedding) sq += v * v;
      total += std::sqrt(sq);
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN()
                : total / static_cast<double>(n);
}

}  // namespace

FederationResult run_federation(const FederationConfig& config, const LabeledDataset& train,
                                const LabeledDataset& test, const RoundCallback& on_round) {
  config.validate();
  if (train.empty()) throw std::domain_error("run_federation: empty training set");
  const std::size_t num_classes = train.num_classes;
  const std::size_t input_dim = train.dim();

  FederationResult result;
  result.effective = resolve_auto_params(config, train);
  const FederationConfig& cfg = result.effective;

  RandomStream partition_rng(cfg.seed, 0, 0, StreamPurpose::Partition);
  std::vector<LabeledDataset> parts =
      dirichlet_partition(train, cfg.clients, cfg.dirichlet_alpha, partition_rng);

  if (cfg.method == Method::FBL) {
    RandomStream mode_rng(cfg.seed, 0, 0, StreamPurpose::Modes);
    result.modes =
        assign_compute_modes(cfg.clients, cfg.lambda, cfg.incapable_fraction, mode_rng);
  } else {
    result.modes.assign(cfg.clients, ComputeMode::Constrained);
  }

  std::vector<ClientState> clients(cfg.clients);
  for (std::size_t k = 0; k < cfg.clients; ++k) {
    clients[k].id = k;
    clients[k].data = std::move(parts[k]);
    clients[k].mode = result.modes[k];
    if (clients[k].data.empty()) {
      std::fprintf(stderr, "[fbl] client %zu received no data and will be skipped\n", k);
      continue;
    }
    if (cfg.method == Method::FBL && clients[k].mode != ComputeMode::GenerationIncapable) {
      init_client_balance(clients[k]);
      if (clients[k].balance_clamped) {
        std::fprintf(stderr, "[fbl] client %zu: balance point clamped to 1\n", k);
      }
    }
  }

  std::optional<GaussianClassGenerator> generator;
  if (cfg.method == Method::FBL) {
    generator.emplace(fit_gaussian_generator(
        train, std::vector<double>(input_dim, cfg.domain_shift)));
  }

  RandomStream init_rng(cfg.seed, 0, 0, StreamPurpose::ModelInit);
  Classifier model = make_classifier(input_dim, cfg.hidden_dims, num_classes, init_rng);

  // Last known local model per client, only kept for the stale-aggregation
  // variant.
  std::vector<std::vector<double>> stale;
  if (cfg.aggregate_all_clients) {
    stale.assign(cfg.clients, model.to_flat());
  }

  struct Outcome {
    bool trained = false;
    std::vector<double> flat;
    double loss = 0.0;
    std::size_t working_size = 0;
  };

  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();

    RandomStream select_rng(cfg.seed, 0, r, StreamPurpose::Select);
    const std::vector<std::size_t> selected =
        select_clients(cfg.clients, cfg.selection_fraction, select_rng);

    std::vector<Outcome> outcomes(selected.size());
    auto run_one = [&](std::size_t slot) {
      ClientState& client = clients[selected[slot]];
      if (client.data.empty()) return;
      LabeledDataset working;
      const bool rebalanced =
          cfg.method == Method::FBL && client.mode != ComputeMode::GenerationIncapable;
      if (rebalanced) {
        if (cfg.reset_embeddings_each_round) client.table = AlignmentTable{};
        working = rebalance_client(client, model, r, cfg, *generator);
      } else {
        working = client.data;
      }
      Outcome& out = outcomes[slot];
      out.working_size = working.size();
      Classifier local = local_train(client, working, model, cfg, r, &out.loss);
      out.flat = local.to_flat();
      out.trained = true;
    };

    const std::size_t nthreads = std::min(cfg.threads, selected.size());
    if (nthreads <= 1) {
      for (std::size_t i = 0; i < selected.size(); ++i) run_one(i);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(nthreads);
      for (std::size_t t = 0; t < nthreads; ++t) {
        pool.emplace_back([&, t]() {
          for (std::size_t i = t; i < selected.size(); i += nthreads) run_one(i);
        });
      }
      for (auto& th : pool) th.join();
    }

    // Aggregate in ascending client order so the result is schedule-free.
    std::vector<double> mean;
    double wsum = 0.0;
    double loss_sum = 0.0;
    std::size_t trained = 0;
    RoundMetrics metrics;
    metrics.round = r;
    for (std::size_t i = 0; i < selected.size(); ++i) {
      const Outcome& out = outcomes[i];
      if (!out.trained) continue;
      metrics.working_sizes.emplace_back(selected[i], out.working_size);
      loss_sum += out.loss;
      ++trained;
      if (cfg.aggregate_all_clients) {
        stale[selected[i]] = out.flat;
        continue;
      }
      const double w =
          cfg.weight_by_samples ? static_cast<double>(out.working_size) : 1.0;
      if (mean.empty()) mean.assign(out.flat.size(), 0.0);
      for (std::size_t j = 0; j < out.flat.size(); ++j) mean[j] += w * out.flat[j];
      wsum += w;
    }
    if (cfg.aggregate_all_clients) {
      mean.assign(stale[0].size(), 0.0);
      for (const auto& flat : stale) {
        for (std::size_t j = 0; j < flat.size(); ++j) mean[j] += flat[j];
      }
      for (double& v : mean) v /= static_cast<double>(stale.size());
      model.from_flat(mean);
    } else if (wsum > 0.0) {
      for (double& v : mean) v /= wsum;
      model.from_flat(mean);
    }

    metrics.accuracy = evaluate(model, test);
    metrics.mean_loss = trained > 0 ? loss_sum / static_cast<double>(trained)
                                    : std::numeric_limits<double>::quiet_NaN();
    if (cfg.method == Method::FBL) {
      metrics.alignment_gap = alignment_gap(model, clients, train, !cfg.no_alignment);
      metrics.embedding_norm = mean_embedding_norm(clients);
    }
    metrics.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_round) on_round(metrics);
    result.rounds.push_back(std::move(metrics));
  }

  result.model = std::move(model);
  if (!result.rounds.empty()) {
    result.final_accuracy = result.rounds.back().accuracy;
    for (const RoundMetrics& m : result.rounds) {
      result.best_accuracy = std::max(result.best_accuracy, m.accuracy);
    }
  }
  return result;
}

std::string metrics_csv_header() { return "round,accuracy,mean_loss,seconds\n"; }

std::string metrics_csv_row(const RoundMetrics& m) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.3f\n", m.round, m.accuracy, m.mean_loss,
                m.seconds);
  return buf;
}

std::string metrics_to_csv(const std::vector<RoundMetrics>& rounds) {
  std::string out = metrics_csv_header();
  for (const RoundMetrics& m : rounds) out += metrics_csv_row(m);
  return out;
}

std::string metrics_to_csv_deterministic(const std::vector<RoundMetrics>& rounds) {
  std::ostringstream out;
  out << "round,accuracy,mean_loss\n";
  char buf[96];
  for (const RoundMetrics& m : rounds) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f\n", m.round, m.accuracy, m.mean_loss);
    out << buf;
  }
  return out.str();
}

}  // namespace fbl
