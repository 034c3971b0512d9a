#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "quiver/mlp.hpp"

namespace quiver {

struct CheckResult {
  std::string name;
  std::size_t trials = 0;
  std::size_t violations = 0;
  double max_violation = 0.0;  // largest observed error, in the check's own units
  double tolerance = 0.0;
  double seconds = 0.0;

  bool passed() const noexcept { return violations == 0; }
  nlohmann::json to_json() const;
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool passed() const noexcept;
  nlohmann::json to_json() const;
  std::string text() const;
};

/// Trial counts for the battery. Defaults are the full-size runs.
struct VerifyOptions {
  std::uint64_t seed = 0;
  std::size_t factorization_trials = 1000;
  std::size_t isomorphism_trials = 200;
  std::size_t convexity_pairs = 10000;
  std::size_t convexity_lambdas = 100;
  std::size_t norm_trials = 1000;
  std::size_t m0_random = 1000000;
  std::size_t m0_tied = 100;
  double factorization_tolerance = 1e-5;

  /// Every count divided by `factor` (at least 1 trial each).
  VerifyOptions scaled(std::size_t factor) const;
};

/// Random chain MLP with up to `max_hidden` hidden layers of small width.
MlpSpec random_spec(std::uint64_t seed, std::size_t max_hidden = 3, std::size_t max_width = 16,
                    std::size_t max_input = 12, std::size_t max_output = 6);
Eigen::VectorXd random_input(std::size_t d, std::uint64_t seed);

// Individual checks. Each reports its worst observed deviation.
CheckResult check_factorization(std::size_t trials, std::uint64_t seed, double tol = 1e-5);
CheckResult check_subnetwork(std::size_t trials, std::uint64_t seed, double tol = 1e-5);
CheckResult check_isomorphism(std::size_t trials, std::uint64_t seed, double tol = 1e-5, double act_tol = 1e-9);
CheckResult check_convexity_battery(std::size_t pairs, std::size_t lambdas, std::uint64_t seed);
CheckResult check_norm_inequalities(std::size_t trials, std::uint64_t seed, double slack = 1e-9);
CheckResult check_m0(std::size_t random, std::size_t tied, std::uint64_t seed);

struct GradientCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t failures = 0;
};

/// Central differences on every parameter and input coordinate.
GradientCheck gradient_check(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, double h = 1e-4,
                             double tol = 1e-4);
CheckResult check_gradients(std::uint64_t seed, double tol = 1e-4);

VerifyReport run_verification(const VerifyOptions& options);

}  // namespace quiver
