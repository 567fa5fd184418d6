// Cheap call accounting so tests can assert which code paths a method used.

#pragma once

#include <atomic>
#include <cstdint>

namespace fbl::diag {

struct CallCounters {
  std::atomic<std::uint64_t> rebalance_calls{0};
  std::atomic<std::uint64_t> aligned_batches{0};
  std::atomic<std::uint64_t> generated_samples{0};

  void reset() {
    rebalance_calls = 0;
    aligned_batches = 0;
    generated_samples = 0;
  }
};

CallCounters& counters();

}  // namespace fbl::diag
