#pragma once

#include "snagg/model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace snagg {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Entries checked per parameter block; 0 checks every entry.
  int max_entries = 0;
  std::uint64_t seed = 7;
  /// Test hook: scales the analytic gradient of this parameter.
  std::string corrupt;
  double corrupt_factor = 1.5;
};

struct BlockResult {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::string architecture;
  std::vector<BlockResult> blocks;

  bool pass() const;
};

/// Small network of `kind` on 1x8x8 frames used for finite-difference checks.
ArchitectureSpec micro_spec(ArchKind kind);

/// Compares analytic parameter gradients of the training loss on a random
/// clip against central differences, with relative error
/// |g - g_fd| / max(1, |g|, |g_fd|). Dropout masks are held fixed across
/// evaluations.
GradCheckReport grad_check(const ArchitectureSpec& spec, const GradCheckOptions& opts);

void print_report(std::ostream& out, const GradCheckReport& report, double tolerance);

}  // namespace snagg
