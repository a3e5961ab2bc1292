#pragma once

#include <string>
#include <vector>

namespace gradattn {

struct GradcheckResult {
  std::string name;  // registry op name, or a composite label (mha, encoder, ...)
  double max_rel_err = 0.0;
  double threshold = 1e-5;
  bool pass = false;
};

struct GradcheckSummary {
  std::vector<GradcheckResult> results;
  bool all_pass() const;
  // Registered differentiable ops with no same-named suite entry. Must be
  // empty for a run to count as a pass.
  std::vector<std::string> uncovered_ops() const;
};

// Finite-difference verification of every registered op plus composite checks
// (multi-head attention, learnable PE, a 1-layer encoder, and a tiny
// end-to-end model). Runs in 64-bit numeric mode regardless of the global
// setting.
GradcheckSummary run_gradcheck_suite();

// Fixed-width report, one line per entry plus a verdict line.
std::string gradcheck_table(const GradcheckSummary& summary);

// Proves the oracle has teeth: enables the corrupted conv2d backward hook and
// returns true when the conv2d entry then fails.
bool gradcheck_flags_corrupted_conv();

}  // namespace gradattn
