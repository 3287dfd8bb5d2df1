#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dtpn {

enum class Fault { None, ConvBackwardSign };

struct GradcheckOptions {
  double eps = 1e-3;
  double tolerance = 1e-3;
  std::uint64_t seed = 7;
  Fault fault = Fault::None;  // deliberately broken backward, for testing the checker
};

struct GradcheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool all_passed() const;
};

/// Central-difference checks of every kernel and of the end-to-end loss on a
/// tiny model (S=3, K_1=4, d=6, M=2), all in double precision.
GradcheckReport run_gradcheck_suite(const GradcheckOptions& opts = {});

}  // namespace dtpn
