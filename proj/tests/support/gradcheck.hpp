#ifndef ADVPROBE_TESTS_GRADCHECK_HPP
#define ADVPROBE_TESTS_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "advprobe/network.hpp"
#include "support/naive.hpp"

namespace advprobe::testing {

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // coordinates whose +-h probe crossed a relu/pool kink
  std::size_t failures = 0;
  double worst_abs = 0.0;
};

/// Compares the analytic input gradient with central differences of the
/// double-precision naive forward pass, |a - n| <= max(abs_tol, rel_tol * max(|a|, |n|)).
inline GradCheckReport check_input_gradient(const ArchDescriptor& arch, const ModelWeights& weights, const Tensor& x,
                                            std::size_t label, const std::vector<std::size_t>& coordinates,
                                            double h = 1e-3, double rel_tol = 1e-3, double abs_tol = 1e-5) {
  const Tensor analytic = Network(arch, weights).input_gradient(x, label);
  const Volume base = to_volume(x);
  const auto base_branches = naive_forward(arch, weights, base, label).branches;
  GradCheckReport report;
  for (std::size_t i : coordinates) {
    Volume plus = base, minus = base;
    plus.v[i] += h;
    minus.v[i] -= h;
    const NaivePass up = naive_forward(arch, weights, plus, label);
    const NaivePass down = naive_forward(arch, weights, minus, label);
    if (up.branches != base_branches || down.branches != base_branches) {
      ++report.skipped_kinks;
      continue;
    }
    const double numeric = (up.loss - down.loss) / (2 * h);
    const double a = analytic[i];
    const double err = std::abs(a - numeric);
    report.worst_abs = std::max(report.worst_abs, err);
    ++report.checked;
    if (err > std::max(abs_tol, rel_tol * std::max(std::abs(a), std::abs(numeric)))) ++report.failures;
  }
  return report;
}

}  // namespace advprobe::testing

#endif  // ADVPROBE_TESTS_GRADCHECK_HPP
