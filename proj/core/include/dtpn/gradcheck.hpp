#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace dtpn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Central-difference check of `analytic` against f over theta. Relative
/// error per coordinate is |a - n| / max(1, |a| + |n|). `stride` > 1 checks
/// every stride-th coordinate only.
inline GradCheckResult grad_check(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> theta, std::span<const double> analytic,
                                  double eps = 1e-3, std::size_t stride = 1) {
  GradCheckResult res;
  std::vector<double> probe(theta.begin(), theta.end());
  for (std::size_t j = 0; j < probe.size(); j += std::max<std::size_t>(1, stride)) {
    const double saved = probe[j];
    probe[j] = saved + eps;
    const double up = f(probe);
    probe[j] = saved - eps;
    const double down = f(probe);
    probe[j] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[j] - numeric) / std::max(1.0, std::abs(analytic[j]) + std::abs(numeric));
    if (err > res.max_relative_error) {
      res.max_relative_error = err;
      res.worst_index = j;
    }
    ++res.checked;
  }
  return res;
}

}  // namespace dtpn
