#include "fbl/config.hpp"

#include <cmath>

namespace fbl {

std::string to_string(Method m) {
  switch (m) {
    case Method::FBL: return "fbl";
    case Method::FedAvg: return "fedavg";
    case Method::FedProx: return "fedprox";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "fbl") return Method::FBL;
  if (s == "fedavg") return Method::FedAvg;
  if (s == "fedprox") return Method::FedProx;
  throw std::domain_error("unknown method '" + s + "' (expected fbl|fedavg|fedprox)");
}

std::size_t FederationConfig::selected_per_round() const {
  return static_cast<std::size_t>(
      std::lround(selection_fraction * static_cast<double>(clients)));
}

void FederationConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::domain_error(msg); };
  if (clients == 0) fail("clients must be >= 1");
  if (local_iters == 0 && local_epochs == 0 && rounds > 0) {
    // E = 0 is allowed; it means local training is a no-op.
  }
  if (selection_fraction <= 0.0 || selection_fraction > 1.0) {
    fail("selection_fraction must be in (0, 1]");
  }
  if (selected_per_round() < 1) fail("selection_fraction * clients rounds to zero clients");
  if (lr <= 0.0) fail("lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) fail("momentum must be in [0, 1)");
  if (weight_decay < 0.0) fail("weight_decay must be nonnegative");
  if (batch_size == 0) fail("batch must be >= 1");
  if (replay_period == 0) fail("replay_period must be >= 1");
  if (replay_retain < 0.0 || replay_retain > 1.0) fail("gamma must be in [0, 1]");
  if (dirichlet_alpha <= 0.0) fail("alpha must be positive");
  if (lambda < 0.0 || lambda > 1.0) fail("lambda must be in [0, 1]");
  if (incapable_fraction < 0.0 || incapable_fraction >= 1.0) {
    fail("incapable_frac must be in [0, 1)");
  }
  if (lambda + incapable_fraction > 1.0) fail("lambda + incapable_frac must be <= 1");
  if (mu_prox < 0.0) fail("mu_prox must be nonnegative");
  if (hidden_dims.empty()) fail("hidden must list at least the feature dimension");
  for (std::size_t d : hidden_dims) {
    if (d == 0) fail("hidden dims must be positive");
  }
  if (threads == 0) fail("threads must be >= 1");
}

}  // namespace fbl
