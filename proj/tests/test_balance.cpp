#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <set>

#include "fbl/balance.hpp"
#include "fbl/federation.hpp"

using namespace fbl;

namespace {

LabeledDataset dataset_with_counts(const std::vector<std::size_t>& counts,
                                   std::uint64_t seed = 5) {
  RandomStream rng(seed);
  LabeledDataset ds;
  ds.num_classes = counts.size();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) {
      Sample s;
      s.label = c;
      s.features = {rng.normal(), rng.normal()};
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

GaussianClassGenerator uniform_generator(std::size_t num_classes, std::size_t dim) {
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim, 0.0));
  std::vector<std::vector<double>> vars(num_classes, std::vector<double>(dim, 1.0));
  return GaussianClassGenerator(means, vars, std::vector<double>(dim, 0.0));
}

ClientState make_client(const std::vector<std::size_t>& counts, ComputeMode mode,
                        std::uint64_t seed = 5) {
  ClientState client;
  client.id = 0;
  client.data = dataset_with_counts(counts, seed);
  client.mode = mode;
  return client;
}

FederationConfig small_config() {
  FederationConfig cfg;
  cfg.clients = 1;
  cfg.rounds = 1;
  cfg.replay_period = 5;
  cfg.replay_retain = 0.1;
  cfg.seed = 9;
  cfg.augment_sigma = 0.0;
  cfg.domain_shift = 0.0;
  return cfg;
}

Classifier tiny_model(std::size_t dim, std::size_t classes, std::uint64_t seed = 7) {
  RandomStream rng(seed);
  return make_classifier(dim, {4, 3}, classes, rng);
}

}  // namespace

TEST_CASE("compute_balance_point: floor mean, max, and the clamp") {
  const std::vector<std::size_t> counts = {10, 5, 0, 1};
  CHECK(compute_balance_point(counts, BalanceMode::Constrained).value == 4);
  CHECK(compute_balance_point(counts, BalanceMode::Unconstrained).value == 10);

  std::vector<std::size_t> tiny(10, 0);
  tiny[0] = 1;
  CHECK(compute_balance_point(tiny, BalanceMode::Constrained).value == 1);

  CHECK_THROWS_AS(compute_balance_point({0, 0}, BalanceMode::Constrained),
                  std::domain_error);
}

TEST_CASE("classify_classes: examples and the exact-balance rule") {
  ClassPartition p = classify_classes({10, 5, 0, 1}, 4);
  CHECK(p.excessive == std::vector<std::size_t>{0, 1});
  CHECK(p.scarce == std::vector<std::size_t>{3});
  CHECK(p.missing == std::vector<std::size_t>{2});

  ClassPartition eq = classify_classes({4, 4, 4}, 4);
  CHECK(eq.excessive.empty());
  CHECK(eq.scarce == std::vector<std::size_t>{0, 1, 2});
  CHECK(eq.missing.empty());
}

TEST_CASE("classify_classes always partitions the label space") {
  // exhaustive over C <= 4, counts <= 5
  for (std::size_t C = 1; C <= 4; ++C) {
    std::vector<std::size_t> counts(C, 0);
    for (;;) {
      const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
      if (total > 0) {
        for (BalanceMode mode : {BalanceMode::Constrained, BalanceMode::Unconstrained}) {
          const std::size_t b = compute_balance_point(counts, mode).value;
          const ClassPartition part = classify_classes(counts, b);
          std::vector<bool> seen(C, false);
          for (std::size_t c : part.excessive) {
            CHECK(counts[c] > b);
            CHECK(!seen[c]);
            seen[c] = true;
          }
          for (std::size_t c : part.scarce) {
            CHECK(counts[c] > 0);
            CHECK(counts[c] <= b);
            CHECK(!seen[c]);
            seen[c] = true;
          }
          for (std::size_t c : part.missing) {
            CHECK(counts[c] == 0);
            CHECK(!seen[c]);
            seen[c] = true;
          }
          CHECK(std::all_of(seen.begin(), seen.end(), [](bool v) { return v; }));
        }
      }
      // next vector in [0,5]^C
      std::size_t i = 0;
      while (i < C && counts[i] == 5) counts[i++] = 0;
      if (i == C) break;
      ++counts[i];
    }
  }
}

TEST_CASE("knowledge_sample: top-B by loss with stable ties") {
  CHECK(knowledge_sample({0.1, 0.9, 0.5}, 2) == std::vector<std::size_t>{1, 2});
  CHECK(knowledge_sample({0.1, 0.9}, 10) == std::vector<std::size_t>{0, 1});
  CHECK(knowledge_sample({0.5, 0.5, 0.5}, 2) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("knowledge_sample maximizes the selected-loss sum (brute force)") {
  RandomStream rng(11);
  for (int rep = 0; rep < 60; ++rep) {
    const std::size_t n = 1 + rng.uniform_index(8);
    std::vector<double> losses(n);
    for (double& v : losses) v = rng.uniform();
    const std::size_t budget = rng.uniform_index(n + 1);
    const auto chosen = knowledge_sample(losses, budget);

    double chosen_sum = 0.0;
    for (std::size_t i : chosen) chosen_sum += losses[i];
    double best = -1.0;
    for (std::size_t mask = 0; mask < (1u << n); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) != std::min(budget, n)) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask & (1u << i)) s += losses[i];
      }
      best = std::max(best, s);
    }
    CHECK(chosen_sum == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("knowledge_sample is invariant under monotone loss transforms") {
  RandomStream rng(13);
  for (int rep = 0; rep < 40; ++rep) {
    const std::size_t n = 2 + rng.uniform_index(10);
    std::vector<double> losses(n);
    for (double& v : losses) v = 4.0 * rng.uniform() - 2.0;
    const std::size_t budget = 1 + rng.uniform_index(n);
    std::vector<double> warped(n);
    for (std::size_t i = 0; i < n; ++i) warped[i] = std::exp(3.0 * losses[i]) + 1.0;
    CHECK(knowledge_sample(losses, budget) == knowledge_sample(warped, budget));
  }
}

TEST_CASE("knowledge_replay: gamma endpoints and the 1-in-9-out split") {
  const std::vector<double> losses = {0.9,  0.1,  0.8,  0.2,  0.7,  0.3, 0.6,
                                      0.4,  0.5,  0.95, 0.15, 0.85, 0.25, 0.75,
                                      0.35, 0.65, 0.45, 0.55, 0.05, 1.0};
  const std::vector<std::size_t> active = {0, 2, 4, 6, 8, 10, 12, 14, 16, 18};

  RandomStream r1(3);
  const auto gamma0 = knowledge_replay(active, losses, 0.0, 10, r1);
  CHECK(gamma0.size() == 10);
  for (std::size_t i : gamma0) {
    CHECK(!std::binary_search(active.begin(), active.end(), i));
  }

  RandomStream r2(3);
  const auto gamma1 = knowledge_replay(active, losses, 1.0, 10, r2);
  CHECK(gamma1 == active);

  RandomStream r3(3);
  const auto mixed = knowledge_replay(active, losses, 0.1, 10, r3);
  CHECK(mixed.size() == 10);
  std::size_t retained = 0;
  for (std::size_t i : mixed) {
    if (std::binary_search(active.begin(), active.end(), i)) ++retained;
  }
  CHECK(retained == 1);  // floor(0.1 * 10)

  RandomStream r4(3);
  CHECK_THROWS_AS(knowledge_replay(active, losses, 1.5, 10, r4), std::domain_error);
}

TEST_CASE("knowledge_replay backfills when the complement is small") {
  // pool of 12, active 10, budget 10, gamma 0.1: 1 retained + 2 complement
  // + 7 backfilled from the unretained old set
  std::vector<double> losses(12);
  RandomStream lr(17);
  for (double& v : losses) v = lr.uniform();
  std::vector<std::size_t> active = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  RandomStream rng(23);
  const auto next = knowledge_replay(active, losses, 0.1, 10, rng);
  CHECK(next.size() == 10);
  std::set<std::size_t> uniq(next.begin(), next.end());
  CHECK(uniq.size() == 10);
  for (std::size_t i : next) CHECK(i < 12);
}

TEST_CASE("knowledge_replay output is always a valid distinct subset") {
  RandomStream rng(29);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t pool = 1 + rng.uniform_index(15);
    const std::size_t budget = 1 + rng.uniform_index(15);
    std::vector<double> losses(pool);
    for (double& v : losses) v = rng.normal();
    const auto active = knowledge_sample(losses, budget);
    const double gamma = rng.uniform();
    const auto next = knowledge_replay(active, losses, gamma, budget, rng,
                                       rep % 2 == 0 /* alternate ranked/random */);
    CHECK(next.size() == std::min(budget, pool));
    CHECK(std::is_sorted(next.begin(), next.end()));
    CHECK(std::adjacent_find(next.begin(), next.end()) == next.end());  // distinct
    for (std::size_t i : next) CHECK(i < pool);
  }
}

TEST_CASE("knowledge_fill produces exactly the deficit, synthetic, labeled") {
  GaussianClassGenerator gen = uniform_generator(3, 2);
  RandomStream rng(31);
  CHECK(knowledge_fill(gen, 1, 0, rng).empty());
  const auto four = knowledge_fill(gen, 2, 4, rng);
  REQUIRE(four.size() == 4);
  for (const Sample& s : four) {
    CHECK(s.label == 2);
    CHECK(s.origin == Origin::Synthetic);
  }
}

TEST_CASE("rebalance_client: counts [10,5,0,1] gives 4 per class") {
  ClientState client = make_client({10, 5, 0, 1}, ComputeMode::Constrained);
  FederationConfig cfg = small_config();
  Classifier model = tiny_model(2, 4);
  GaussianClassGenerator gen = uniform_generator(4, 2);

  const LabeledDataset ws = rebalance_client(client, model, 0, cfg, gen);
  CHECK(ws.size() == 16);
  CHECK(class_counts(ws, 4) == std::vector<std::size_t>(4, 4));
  CHECK(client.balance_point == 4);

  // synthetic only where the class was short
  std::vector<std::size_t> synth(4, 0);
  for (const Sample& s : ws.samples) {
    if (s.origin == Origin::Synthetic) ++synth[s.label];
  }
  CHECK(synth == std::vector<std::size_t>{0, 0, 4, 3});
}

TEST_CASE("rebalance_client reuses the sampled set between replay rounds") {
  ClientState client = make_client({12, 2, 2}, ComputeMode::Constrained);
  FederationConfig cfg = small_config();  // replay_period = 5
  Classifier model = tiny_model(2, 3);
  GaussianClassGenerator gen = uniform_generator(3, 2);

  rebalance_client(client, model, 0, cfg, gen);
  const auto first = client.replay.active.at(0);
  rebalance_client(client, model, 1, cfg, gen);
  CHECK(client.replay.active.at(0) == first);  // 1 % 5 != 0: cached
  rebalance_client(client, model, 5, cfg, gen);
  CHECK(client.replay.active.at(0).size() == first.size());
  CHECK(client.replay.cycle == 1);
}

TEST_CASE("rebalance_client: constrained working set never exceeds the data") {
  RandomStream rng(41);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t C = 2 + rng.uniform_index(5);
    std::vector<std::size_t> counts(C);
    std::size_t total = 0;
    for (auto& c : counts) {
      c = rng.uniform_index(9);
      total += c;
    }
    if (total == 0) {
      counts[0] = 1;
      total = 1;
    }

    ClientState client = make_client(counts, ComputeMode::Constrained, 100 + rep);
    FederationConfig cfg = small_config();
    Classifier model = tiny_model(2, C, 50 + rep);
    GaussianClassGenerator gen = uniform_generator(C, 2);
    const LabeledDataset ws = rebalance_client(client, model, 0, cfg, gen);

    CHECK(class_counts(ws, C) == std::vector<std::size_t>(C, client.balance_point));
    if (total / C >= 1) {
      CHECK(ws.size() <= total);  // C*floor(mean) <= sum
    }
  }
}

TEST_CASE("rebalance_client: unconstrained fills every class to the max") {
  ClientState client = make_client({7, 3, 0}, ComputeMode::Unconstrained);
  FederationConfig cfg = small_config();
  Classifier model = tiny_model(2, 3);
  GaussianClassGenerator gen = uniform_generator(3, 2);
  const LabeledDataset ws = rebalance_client(client, model, 0, cfg, gen);
  CHECK(client.balance_point == 7);
  CHECK(ws.size() == 21);  // C * max count
  CHECK(class_counts(ws, 3) == std::vector<std::size_t>(3, 7));
}

TEST_CASE("rebalance_client: incapable clients keep their raw data") {
  ClientState client = make_client({9, 1, 0}, ComputeMode::GenerationIncapable);
  FederationConfig cfg = small_config();
  Classifier model = tiny_model(2, 3);
  GaussianClassGenerator gen = uniform_generator(3, 2);
  const LabeledDataset ws = rebalance_client(client, model, 0, cfg, gen);
  CHECK(ws.size() == 10);
  CHECK(client.synth_cache.empty());
  CHECK(client.table.empty());
}

TEST_CASE("synthetic fill is cached, not regenerated") {
  ClientState client = make_client({6, 1}, ComputeMode::Constrained);
  FederationConfig cfg = small_config();
  Classifier model = tiny_model(2, 2);
  GaussianClassGenerator gen = uniform_generator(2, 2);
  rebalance_client(client, model, 0, cfg, gen);
  const auto cache = client.synth_cache.at(1);
  rebalance_client(client, model, 1, cfg, gen);
  rebalance_client(client, model, 5, cfg, gen);  // replay round, fill untouched
  const auto& after = client.synth_cache.at(1);
  REQUIRE(after.size() == cache.size());
  for (std::size_t i = 0; i < cache.size(); ++i) {
    CHECK(after[i].features == cache[i].features);
  }
}
