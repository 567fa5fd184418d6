#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "fbl/diagnostics.hpp"
#include "fbl/federation.hpp"

using namespace fbl;

namespace {

Benchmark tiny_benchmark(std::uint64_t seed = 1, std::size_t classes = 3,
                         std::size_t per_class = 30) {
  RandomStream rng(seed, 0, 0, StreamPurpose::DatasetGen);
  return make_synthetic_benchmark(classes, per_class, 4, 4.0, rng);
}

FederationConfig tiny_config() {
  FederationConfig cfg;
  cfg.clients = 4;
  cfg.rounds = 3;
  cfg.local_iters = 4;
  cfg.selection_fraction = 1.0;
  cfg.batch_size = 16;
  cfg.lr = 0.05;
  cfg.replay_period = 2;
  cfg.hidden_dims = {6, 4};
  cfg.seed = 11;
  cfg.dirichlet_alpha = 0.5;
  return cfg;
}

}  // namespace

TEST_CASE("assign_compute_modes hits exact rounded counts") {
  RandomStream rng(1);
  auto all = assign_compute_modes(20, 0.0, 0.0, rng);
  CHECK(std::count(all.begin(), all.end(), ComputeMode::Constrained) == 20);

  auto half = assign_compute_modes(20, 0.5, 0.0, rng);
  CHECK(std::count(half.begin(), half.end(), ComputeMode::Unconstrained) == 10);

  auto quarter = assign_compute_modes(20, 0.25, 0.0, rng);
  CHECK(std::count(quarter.begin(), quarter.end(), ComputeMode::Unconstrained) == 5);

  auto mixed = assign_compute_modes(10, 0.3, 0.3, rng);
  CHECK(std::count(mixed.begin(), mixed.end(), ComputeMode::Unconstrained) == 3);
  CHECK(std::count(mixed.begin(), mixed.end(), ComputeMode::GenerationIncapable) == 3);

  CHECK_THROWS_AS(assign_compute_modes(4, 0.9, 0.9, rng), std::domain_error);
}

TEST_CASE("select_clients: full selection, exact count, distinctness") {
  RandomStream rng(2);
  const auto all = select_clients(5, 1.0, rng);
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4});

  const auto half = select_clients(20, 0.5, rng);
  CHECK(half.size() == 10);
  CHECK(std::set<std::size_t>(half.begin(), half.end()).size() == 10);
  CHECK(std::is_sorted(half.begin(), half.end()));
}

TEST_CASE("select_clients is uniform (binomial check over 2000 rounds)") {
  RandomStream rng(3);
  std::vector<int> hits(4, 0);
  for (int round = 0; round < 2000; ++round) {
    for (std::size_t k : select_clients(4, 0.5, rng)) ++hits[k];
  }
  const double margin = 3.0 * std::sqrt(2000 * 0.25);
  for (int k = 0; k < 4; ++k) {
    CHECK(std::abs(hits[k] - 1000) < margin);
  }
}

TEST_CASE("local_train: zero iterations returns the global model bit for bit") {
  Benchmark b = tiny_benchmark();
  FederationConfig cfg = tiny_config();
  cfg.local_iters = 0;
  cfg.method = Method::FedAvg;
  RandomStream rng(4);
  Classifier global = make_classifier(4, {6, 4}, 3, rng);
  ClientState client;
  client.id = 0;
  client.data = b.train;
  client.mode = ComputeMode::Constrained;
  const Classifier local = local_train(client, client.data, global, cfg, 0);
  CHECK(local.to_flat() == global.to_flat());
}

TEST_CASE("FedProx with zero mu matches FedAvg exactly") {
  Benchmark b = tiny_benchmark();
  FederationConfig avg = tiny_config();
  avg.method = Method::FedAvg;
  FederationConfig prox = avg;
  prox.method = Method::FedProx;
  prox.mu_prox = 0.0;

  RandomStream rng(5);
  Classifier global = make_classifier(4, {6, 4}, 3, rng);
  ClientState c1, c2;
  c1.id = c2.id = 2;
  c1.data = c2.data = b.train;
  const Classifier m1 = local_train(c1, c1.data, global, avg, 1);
  const Classifier m2 = local_train(c2, c2.data, global, prox, 1);
  CHECK(m1.to_flat() == m2.to_flat());

  // and a positive mu changes the trajectory
  prox.mu_prox = 1.0;
  ClientState c3;
  c3.id = 2;
  c3.data = b.train;
  const Classifier m3 = local_train(c3, c3.data, global, prox, 1);
  CHECK(m3.to_flat() != m1.to_flat());
}

TEST_CASE("local_train: one step on a scalar model matches the closed form") {
  // 1 input -> 1 feature (single linear layer) -> 2 classes
  Classifier global;
  global.feature_layers.push_back({Matrix(1, 1), {0.1}});
  global.feature_layers[0].w.at(0, 0) = 0.8;
  global.head = {Matrix(2, 1), {0.0, 0.0}};
  global.head.w.at(0, 0) = 0.5;
  global.head.w.at(1, 0) = -0.4;

  const double x = 1.5;
  LabeledDataset ds;
  ds.num_classes = 2;
  Sample s;
  s.features = {x};
  s.label = 0;
  ds.samples.push_back(s);

  FederationConfig cfg = tiny_config();
  cfg.method = Method::FedAvg;
  cfg.local_iters = 1;
  cfg.batch_size = 8;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.lr = 0.2;

  ClientState client;
  client.id = 0;
  client.data = ds;
  const Classifier after = local_train(client, ds, global, cfg, 0);

  // hand computation
  const double feat = 0.8 * x + 0.1;
  const double z0 = 0.5 * feat, z1 = -0.4 * feat;
  const double e0 = std::exp(z0), e1 = std::exp(z1);
  const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
  const double d0 = p0 - 1.0, d1 = p1;
  const double dfeat = 0.5 * d0 + (-0.4) * d1;
  CHECK(after.head.w.at(0, 0) == doctest::Approx(0.5 - 0.2 * d0 * feat).epsilon(1e-12));
  CHECK(after.head.w.at(1, 0) == doctest::Approx(-0.4 - 0.2 * d1 * feat).epsilon(1e-12));
  CHECK(after.head.b[0] == doctest::Approx(-0.2 * d0).epsilon(1e-12));
  CHECK(after.head.b[1] == doctest::Approx(-0.2 * d1).epsilon(1e-12));
  CHECK(after.feature_layers[0].w.at(0, 0) ==
        doctest::Approx(0.8 - 0.2 * dfeat * x).epsilon(1e-12));
  CHECK(after.feature_layers[0].b[0] == doctest::Approx(0.1 - 0.2 * dfeat).epsilon(1e-12));
}

TEST_CASE("aggregate: identity, symmetry, and the summation oracle") {
  RandomStream rng(6);
  Classifier a = make_classifier(3, {4}, 2, rng);
  const auto one = aggregate({a});
  CHECK(one.to_flat() == a.to_flat());

  Classifier neg = a;
  auto flat = a.to_flat();
  for (double& v : flat) v = -v;
  neg.from_flat(flat);
  for (double v : aggregate({a, neg}).to_flat()) CHECK(v == 0.0);

  std::vector<Classifier> models;
  for (int i = 0; i < 5; ++i) {
    Classifier m = a;
    auto f = a.to_flat();
    for (double& v : f) v = rng.normal();
    m.from_flat(f);
    models.push_back(m);
  }
  const auto mean = aggregate(models).to_flat();
  for (std::size_t j = 0; j < mean.size(); ++j) {
    double s = 0.0;
    for (const auto& m : models) s += m.to_flat()[j];
    CHECK(mean[j] == doctest::Approx(s / 5.0).epsilon(1e-12));
  }

  // aggregate(k copies of w) == w
  const auto copies = aggregate({a, a, a}).to_flat();
  const auto base = a.to_flat();
  for (std::size_t j = 0; j < base.size(); ++j) {
    CHECK(copies[j] == doctest::Approx(base[j]).epsilon(1e-15));
  }

  CHECK_THROWS_AS(aggregate({}), std::domain_error);
}

TEST_CASE("evaluate: perfect model, argmax shift invariance, random chance") {
  Benchmark b = tiny_benchmark(7, 2, 40);
  RandomStream rng(8);

  // a linear model aligned with the class centroids scores 1.0 on sep=4 blobs
  // with near-certainty; build it from the train centroids directly
  Classifier m = make_classifier(4, {4}, 2, rng);
  // identity-ish feature layer
  std::fill(m.feature_layers[0].w.data.begin(), m.feature_layers[0].w.data.end(), 0.0);
  for (std::size_t i = 0; i < 4; ++i) m.feature_layers[0].w.at(i, i) = 1.0;
  std::fill(m.feature_layers[0].b.begin(), m.feature_layers[0].b.end(), 0.0);
  std::vector<std::vector<double>> centroid(2, std::vector<double>(4, 0.0));
  const auto counts = class_counts(b.train, 2);
  for (const Sample& s : b.train.samples) {
    for (std::size_t d = 0; d < 4; ++d) centroid[s.label][d] += s.features[d];
  }
  for (std::size_t c = 0; c < 2; ++c) {
    for (double& v : centroid[c]) v /= static_cast<double>(counts[c]);
  }
  for (std::size_t c = 0; c < 2; ++c) {
    double sq = 0.0;
    for (std::size_t d = 0; d < 4; ++d) {
      m.head.w.at(c, d) = centroid[c][d];
      sq += centroid[c][d] * centroid[c][d];
    }
    m.head.b[c] = -0.5 * sq;  // nearest-centroid as a linear scorer
  }
  const double acc = evaluate(m, b.test);
  CHECK(acc > 0.95);

  Classifier shifted = m;
  for (double& v : shifted.head.b) v += 17.0;
  CHECK(evaluate(shifted, b.test) == acc);

  // random-init models hover around chance on balanced 2-class data
  double mean_acc = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    RandomStream r(seed);
    mean_acc += evaluate(make_classifier(4, {4}, 2, r), b.test);
  }
  mean_acc /= 20.0;
  CHECK(mean_acc > 0.35);
  CHECK(mean_acc < 0.65);

  LabeledDataset empty;
  empty.num_classes = 2;
  CHECK_THROWS_AS(evaluate(m, empty), std::domain_error);
}

TEST_CASE("run_federation: zero rounds returns the initial model") {
  Benchmark b = tiny_benchmark();
  FederationConfig cfg = tiny_config();
  cfg.rounds = 0;
  const FederationResult res = run_federation(cfg, b.train, b.test);
  CHECK(res.rounds.empty());

  RandomStream init(cfg.seed, 0, 0, StreamPurpose::ModelInit);
  const Classifier w0 = make_classifier(4, cfg.hidden_dims, 3, init);
  CHECK(res.model.to_flat() == w0.to_flat());
}

TEST_CASE("run_federation is deterministic and schedule-free") {
  Benchmark b = tiny_benchmark();
  FederationConfig cfg = tiny_config();
  cfg.method = Method::FBL;
  cfg.lambda = 0.25;
  cfg.incapable_fraction = 0.25;
  cfg.rounds = 4;

  const FederationResult r1 = run_federation(cfg, b.train, b.test);
  const FederationResult r2 = run_federation(cfg, b.train, b.test);
  CHECK(metrics_to_csv_deterministic(r1.rounds) == metrics_to_csv_deterministic(r2.rounds));
  CHECK(r1.model.to_flat() == r2.model.to_flat());

  FederationConfig parallel = cfg;
  parallel.threads = 4;
  const FederationResult r3 = run_federation(parallel, b.train, b.test);
  CHECK(metrics_to_csv_deterministic(r1.rounds) == metrics_to_csv_deterministic(r3.rounds));
  CHECK(r1.model.to_flat() == r3.model.to_flat());

  // a different seed must actually change the trajectory
  FederationConfig other = cfg;
  other.seed = 999;
  const FederationResult r4 = run_federation(other, b.train, b.test);
  CHECK(r1.model.to_flat() != r4.model.to_flat());
}

TEST_CASE("baseline neutrality: FedAvg touches no FBL machinery") {
  Benchmark b = tiny_benchmark();
  FederationConfig cfg = tiny_config();
  cfg.method = Method::FedAvg;
  diag::counters().reset();
  run_federation(cfg, b.train, b.test);
  CHECK(diag::counters().rebalance_calls == 0);
  CHECK(diag::counters().aligned_batches == 0);
  CHECK(diag::counters().generated_samples == 0);

  cfg.method = Method::FBL;
  diag::counters().reset();
  run_federation(cfg, b.train, b.test);
  CHECK(diag::counters().rebalance_calls > 0);
  CHECK(diag::counters().aligned_batches > 0);
}

TEST_CASE("unconstrained clients build C * max-count working sets") {
  Benchmark b = tiny_benchmark(9, 3, 40);
  FederationConfig cfg = tiny_config();
  cfg.method = Method::FBL;
  cfg.lambda = 0.5;
  cfg.rounds = 1;
  const FederationResult res = run_federation(cfg, b.train, b.test);

  RandomStream part_rng(cfg.seed, 0, 0, StreamPurpose::Partition);
  const auto parts = dirichlet_partition(b.train, cfg.clients, cfg.dirichlet_alpha, part_rng);

  REQUIRE(!res.rounds.empty());
  for (const auto& [client, ws] : res.rounds[0].working_sizes) {
    const auto counts = class_counts(parts[client], 3);
    const std::size_t mx = *std::max_element(counts.begin(), counts.end());
    if (res.modes[client] == ComputeMode::Unconstrained) {
      CHECK(ws == 3 * mx);
    } else if (res.modes[client] == ComputeMode::Constrained) {
      CHECK(ws <= 3 * mx);
    }
  }
}

TEST_CASE("incapable clients run bare and keep no synthetic state") {
  Benchmark b = tiny_benchmark(10, 3, 40);
  FederationConfig cfg = tiny_config();
  cfg.method = Method::FBL;
  cfg.incapable_fraction = 0.5;
  cfg.rounds = 2;
  const FederationResult res = run_federation(cfg, b.train, b.test);

  RandomStream part_rng(cfg.seed, 0, 0, StreamPurpose::Partition);
  const auto parts = dirichlet_partition(b.train, cfg.clients, cfg.dirichlet_alpha, part_rng);
  for (const auto& round : res.rounds) {
    for (const auto& [client, ws] : round.working_sizes) {
      if (res.modes[client] == ComputeMode::GenerationIncapable) {
        CHECK(ws == parts[client].size());  // raw data, no fill
      }
    }
  }
}

TEST_CASE("weighted aggregation flag changes the mean") {
  Benchmark b = tiny_benchmark(12, 3, 40);
  FederationConfig cfg = tiny_config();
  cfg.method = Method::FedAvg;
  cfg.rounds = 2;
  const FederationResult plain = run_federation(cfg, b.train, b.test);
  cfg.weight_by_samples = true;
  const FederationResult weighted = run_federation(cfg, b.train, b.test);
  CHECK(plain.model.to_flat() != weighted.model.to_flat());
}

TEST_CASE("stale aggregation averages unselected clients at w0") {
  Benchmark b = tiny_benchmark(14, 2, 30);
  FederationConfig cfg = tiny_config();
  cfg.clients = 2;
  cfg.selection_fraction = 0.5;  // exactly one client per round
  cfg.rounds = 1;
  cfg.method = Method::FedAvg;
  cfg.aggregate_all_clients = true;
  const FederationResult res = run_federation(cfg, b.train, b.test);

  RandomStream init(cfg.seed, 0, 0, StreamPurpose::ModelInit);
  const Classifier w0 = make_classifier(4, cfg.hidden_dims, 2, init);

  // reconstruct the selected client's local model
  RandomStream sel(cfg.seed, 0, 0, StreamPurpose::Select);
  const auto selected = select_clients(2, 0.5, sel);
  REQUIRE(selected.size() == 1);
  RandomStream part(cfg.seed, 0, 0, StreamPurpose::Partition);
  auto parts = dirichlet_partition(b.train, 2, cfg.dirichlet_alpha, part);
  ClientState client;
  client.id = selected[0];
  client.data = parts[selected[0]];
  const Classifier local = local_train(client, client.data, w0, cfg, 0);

  const auto w0f = w0.to_flat();
  const auto lf = local.to_flat();
  const auto got = res.model.to_flat();
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i] == doctest::Approx(0.5 * (w0f[i] + lf[i])).epsilon(1e-12));
  }
}

TEST_CASE("rerank_every_round refreshes the sampled sets each round") {
  Benchmark b = tiny_benchmark(15, 3, 60);
  FederationConfig cfg = tiny_config();
  cfg.method = Method::FBL;
  cfg.rounds = 3;
  cfg.replay_period = 50;  // would never refresh without the flag
  cfg.rerank_every_round = true;
  cfg.dirichlet_alpha = 0.1;

  // distinguishable from the cached variant via the trained model
  const FederationResult reranked = run_federation(cfg, b.train, b.test);
  cfg.rerank_every_round = false;
  const FederationResult cached = run_federation(cfg, b.train, b.test);
  CHECK(reranked.model.to_flat() != cached.model.to_flat());
}

TEST_CASE("local_epochs matches the equivalent iteration count bit for bit") {
  Benchmark b = tiny_benchmark(16, 2, 20);
  FederationConfig by_epochs = tiny_config();
  by_epochs.method = Method::FedAvg;
  by_epochs.batch_size = 16;
  by_epochs.local_epochs = 2;

  RandomStream rng(17);
  Classifier global = make_classifier(4, {6, 4}, 2, rng);
  ClientState c1;
  c1.id = 1;
  c1.data = b.train;

  const std::size_t per_epoch = (b.train.size() + 15) / 16;
  FederationConfig by_iters = by_epochs;
  by_iters.local_epochs = 0;
  by_iters.local_iters = 2 * per_epoch;

  ClientState c2 = c1;
  const Classifier m1 = local_train(c1, c1.data, global, by_epochs, 3);
  const Classifier m2 = local_train(c2, c2.data, global, by_iters, 3);
  CHECK(m1.to_flat() == m2.to_flat());
}

TEST_CASE("round callback streams every round in order") {
  Benchmark b = tiny_benchmark(18, 2, 20);
  FederationConfig cfg = tiny_config();
  cfg.method = Method::FedAvg;
  cfg.rounds = 5;
  std::vector<std::size_t> seen;
  const FederationResult res = run_federation(
      cfg, b.train, b.test, [&seen](const RoundMetrics& m) { seen.push_back(m.round); });
  CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(res.rounds.size() == 5);
}

TEST_CASE("alignment diagnostics present for FBL, absent for baselines") {
  Benchmark b = tiny_benchmark(19, 3, 40);
  FederationConfig cfg = tiny_config();
  cfg.rounds = 2;
  cfg.method = Method::FBL;
  const FederationResult fbl = run_federation(cfg, b.train, b.test);
  CHECK(std::isfinite(fbl.rounds.back().alignment_gap));
  CHECK(std::isfinite(fbl.rounds.back().embedding_norm));

  cfg.method = Method::FedAvg;
  const FederationResult avg = run_federation(cfg, b.train, b.test);
  CHECK(!std::isfinite(avg.rounds.back().alignment_gap));
  CHECK(!std::isfinite(avg.rounds.back().embedding_norm));
}

TEST_CASE("metrics csv formats are stable") {
  RoundMetrics m;
  m.round = 2;
  m.accuracy = 0.5;
  m.mean_loss = 1.25;
  m.seconds = 0.125;
  const std::string full = metrics_to_csv({m});
  CHECK(full == "round,accuracy,mean_loss,seconds\n2,0.500000,1.250000,0.125\n");
  const std::string det = metrics_to_csv_deterministic({m});
  CHECK(det == "round,accuracy,mean_loss\n2,0.500000,1.250000\n");
}
