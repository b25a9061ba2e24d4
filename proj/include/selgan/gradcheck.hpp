#pragma once

// Finite-difference and invariant self-checks run by `selgan gradcheck`.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "selgan/nn.hpp"

namespace selgan {

struct CheckResult {
  std::string suite;
  bool passed = false;
  double max_error = 0.0;  ///< max relative error for gradient suites, max abs deviation otherwise
  double tolerance = 0.0;
  std::int64_t checked = 0;  ///< entries or cases examined
  std::string detail;        ///< location of the worst entry
};

struct GradcheckOptions {
  double step = 1e-6;
  double tolerance = 1e-4;
  /// Relative errors use max(|analytic|, |numeric|, floor,
  /// relative_floor * largest |analytic| in the suite) as denominator, so
  /// entries far below the suite's gradient scale are judged against that
  /// scale instead of against finite-difference round-off.
  double floor = 1e-7;
  double relative_floor = 1e-3;
  /// Entries probed per parameter tensor; 0 probes every entry.
  std::int64_t max_entries = 0;
  std::uint64_t seed = 0;
};

/// Compares backprop gradients of the scalar `loss` against central
/// differences for every tensor in `inputs`.
CheckResult gradient_check(const std::string& suite, const std::function<Var<double>()>& loss,
                           const ParameterList<double>& inputs, const GradcheckOptions& options);

CheckResult check_channel_selection_gradients(const GradcheckOptions& options);
CheckResult check_selection_gradients(const GradcheckOptions& options);
CheckResult check_uncertainty_loss_gradients(const GradcheckOptions& options);
/// Two-level toy model at 16x16 with widths <= 4: generator objective and
/// discriminator objective against all parameters.
CheckResult check_toy_generator_gradients(const GradcheckOptions& options);
CheckResult check_toy_discriminator_gradients(const GradcheckOptions& options);

CheckResult check_attention_normalization(std::uint64_t seed, int cases);
CheckResult check_selection_convexity(std::uint64_t seed, int cases);
CheckResult check_uncertainty_minimizer();

/// Every gradient and invariant suite with default settings.
std::vector<CheckResult> run_all_checks(std::uint64_t seed = 0);

}  // namespace selgan
