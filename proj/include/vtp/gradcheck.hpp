#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vtp/rng.hpp"
#include "vtp/tensor.hpp"

namespace vtp {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;  // "<leaf>/<flat index>" of the worst probe
};

// Central finite-difference check of reverse-mode gradients.
//
// `loss_fn` must rebuild a scalar loss from the current leaf values each time
// it is called. `n_probes` random coordinates are drawn across the leaves;
// each is perturbed by +/-h and the two-sided difference quotient is compared
// against the autodiff gradient. The error metric is
//   |fd - ad| / max(1, |fd|, |ad|)
// which is relative for O(1) gradients and absolute near zero.
GradCheckReport finite_difference_check(
    const std::function<Tensor()>& loss_fn,
    const std::vector<std::pair<std::string, Tensor>>& leaves, int n_probes,
    Rng& rng, double h = 1e-5);

// Named check in the op-by-op suite run by the `gradcheck` CLI subcommand.
struct SuiteEntry {
  std::string name;
  double tolerance;
  GradCheckReport report;
  bool ok;
};

// Runs the finite-difference suite over every registered tensor operation
// and the full fused encoder layer (including the gate parameter).
std::vector<SuiteEntry> run_gradcheck_suite(std::uint64_t seed);

}  // namespace vtp
