#pragma once

// Finite-difference verification of the autodiff engine. Each check draws
// randomized small inputs per seed and compares the analytic gradient with
// central differences.

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

namespace muvfs::gradcheck {

enum class CheckKind { Op, Composite, DoubleBackprop };
std::string to_string(CheckKind kind);

struct GradcheckOptions {
  std::size_t seeds = 100;
  std::uint64_t base_seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  double double_tolerance = 1e-3;
  // Empty selects every registered check.
  std::vector<std::string> only;
  // Test hook: corrupts the analytic gradient of the named check.
  std::string inject_fault;
};

struct CheckResult {
  std::string name;
  CheckKind kind = CheckKind::Op;
  double max_rel_error = 0;
  double tolerance = 0;
  std::size_t trials = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<CheckResult> checks;
  bool passed() const;
  std::vector<std::string> failing() const;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

std::vector<std::string> check_names();

// ||a - n|| / max(||a||, ||n||, 1e-12)
double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric);

// Throws std::invalid_argument for unknown names in `only` or `inject_fault`.
GradcheckReport run(const GradcheckOptions& options);

}  // namespace muvfs::gradcheck
