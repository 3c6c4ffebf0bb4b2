#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "rswin/params.hpp"
#include "rswin/tensor.hpp"

namespace rswin {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "name[flat index]"
  std::size_t checked = 0;
};

// Central differences with step h on every entry of every tensor, compared
// against one backward pass of `loss`. Relative error is
// |a - n| / max(|a|, |n|, floor).
GradCheckResult gradient_check(const std::function<Tensor()>& loss,
                               const std::vector<NamedTensor>& params, double h = 1e-6,
                               double floor = 1e-8);

struct CheckOutcome {
  bool passed = false;
  std::string detail;
};

struct SelfTestCheck {
  std::string name;
  std::function<CheckOutcome()> run;
};

struct SelfTestResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

std::vector<SelfTestCheck> builtin_checks();
// Exceptions thrown by a check count as failures.
std::vector<SelfTestResult> run_selftest(const std::vector<SelfTestCheck>& checks);
std::string format_selftest_table(const std::vector<SelfTestResult>& results);
bool all_passed(const std::vector<SelfTestResult>& results);

}  // namespace rswin
