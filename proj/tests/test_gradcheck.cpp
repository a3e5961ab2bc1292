#include "doctest.h"

#include <algorithm>
#include <set>

#include "gradattn/gradcheck.hpp"
#include "gradattn/ops.hpp"

using namespace gradattn;

namespace {
// The full suite is the expensive part; run it once for all cases here.
const GradcheckSummary& suite() {
  static GradcheckSummary s = run_gradcheck_suite();
  return s;
}
}  // namespace

TEST_CASE("gradcheck suite passes and covers the whole registry") {
  const GradcheckSummary& s = suite();
  CHECK(s.all_pass());
  CHECK(s.uncovered_ops().empty());

  std::set<std::string> names;
  for (const auto& r : s.results) {
    CAPTURE(r.name);
    CHECK(r.pass);
    CHECK(r.max_rel_err < r.threshold);
    CHECK(r.max_rel_err >= 0.0);
    names.insert(r.name);
  }
  // Every registered differentiable op appears under its own name...
  for (const auto& op : differentiable_op_names()) CHECK(names.count(op) == 1);
  // ...plus the composite checks.
  for (const char* comp : {"mha", "learnable_pe", "encoder", "gradattn_e2e"})
    CHECK(names.count(comp) == 1);

  // Registry ops use the strict 1e-5 threshold.
  for (const auto& r : s.results)
    if (is_registered_op(r.name)) CHECK(r.threshold == 1e-5);
}

TEST_CASE("gradcheck table lists every entry with a verdict") {
  std::string table = gradcheck_table(suite());
  for (const auto& r : suite().results) CHECK(table.find(r.name) != std::string::npos);
  CHECK(table.find("coverage: 21/21 registered ops") != std::string::npos);
  CHECK(table.find("verdict: PASS") != std::string::npos);

  // An uncovered op or a failure flips the verdict.
  GradcheckSummary broken = suite();
  broken.results[0].pass = false;
  CHECK_FALSE(broken.all_pass());
  CHECK(gradcheck_table(broken).find("verdict: FAIL") != std::string::npos);

  GradcheckSummary missing = suite();
  missing.results.erase(std::remove_if(missing.results.begin(), missing.results.end(),
                                       [](const GradcheckResult& r) { return r.name == "relu"; }),
                        missing.results.end());
  CHECK(missing.uncovered_ops() == std::vector<std::string>{"relu"});
  CHECK_FALSE(missing.all_pass());
}

TEST_CASE("gradcheck catches a deliberately corrupted backward") {
  CHECK(gradcheck_flags_corrupted_conv());
  // The corruption hook is scoped: the clean suite's conv2d entry passes.
  auto it = std::find_if(suite().results.begin(), suite().results.end(),
                         [](const GradcheckResult& r) { return r.name == "conv2d"; });
  REQUIRE(it != suite().results.end());
  CHECK(it->pass);
}
