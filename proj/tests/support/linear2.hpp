#ifndef ADVPROBE_TESTS_LINEAR2_HPP
#define ADVPROBE_TESTS_LINEAR2_HPP

// A 2-pixel, 2-class linear softmax model and an exhaustive replay checker
// for query attacks run against it.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "advprobe/attacks.hpp"

namespace advprobe::testing {

struct Linear2 {
  // W[i][j]: pixel i to class j.
  std::array<std::array<double, 2>, 2> w{{{1.5, -0.5}, {-2.0, 1.0}}};
  std::array<double, 2> b{0.1, -0.2};

  ArchDescriptor arch() const { return {"lin2", 1, 2, 2, {layer::Dense{2}}}; }
  ModelWeights weights() const {
    return {"lin2",
            {Tensor({2, 2}, std::vector<float>{float(w[0][0]), float(w[0][1]), float(w[1][0]), float(w[1][1])}),
             Tensor({2}, std::vector<float>{float(b[0]), float(b[1])})}};
  }

  /// Closed-form P(k | x) = sigmoid(z_k - z_other).
  double prob(const std::array<float, 2>& x, ClassIndex k) const {
    double z[2];
    for (int j = 0; j < 2; ++j) z[j] = b[j] + w[0][j] * x[0] + w[1][j] * x[1];
    return 1.0 / (1.0 + std::exp(-(z[k] - z[1 - k])));
  }
};

struct ReplayReport {
  std::size_t steps_checked = 0;
  std::size_t accepted = 0;
  std::vector<std::string> mismatches;
};

/// Replays a SimBA or M-SimBA trace on the 2-pixel model. At every step all
/// four candidate moves (pixel 0/1, sign +/-) are evaluated in closed form;
/// the attack must accept exactly the first improving move of the direction
/// it drew (+ before -), and nothing when neither improves.
inline ReplayReport replay_linear2(const Linear2& model, const AttackResult& r, const std::array<float, 2>& x0,
                                   double epsilon) {
  ReplayReport rep;
  const bool lowering = r.method == AttackMethod::simba;
  const ClassIndex tracked = r.tracked_class;
  std::array<float, 2> x = x0;
  auto improves = [&](double cand, double cur) { return lowering ? cand < cur : cand > cur; };
  auto moved = [&](std::size_t coord, int sign) {
    std::array<float, 2> c = x;
    c[coord] = std::clamp(c[coord] + static_cast<float>(sign * epsilon), 0.0f, 1.0f);
    return c;
  };
  auto fail = [&](std::size_t i, const std::string& what) {
    rep.mismatches.push_back("record " + std::to_string(i) + ": " + what);
  };

  for (std::size_t i = 1; i < r.trace.size(); ++i) {
    const TraceRecord& t = r.trace[i];
    if (t.coordinate < 0 || t.coordinate > 1) {
      fail(i, "bad coordinate");
      continue;
    }
    const auto d = static_cast<std::size_t>(t.coordinate);
    const double cur = model.prob(x, tracked);
    std::array<std::array<double, 2>, 2> cand{};  // [coord][sign index]
    for (std::size_t q = 0; q < 2; ++q) {
      cand[q][0] = model.prob(moved(q, +1), tracked);
      cand[q][1] = model.prob(moved(q, -1), tracked);
    }
    const bool plus_ok = improves(cand[d][0], cur);
    const bool minus_ok = improves(cand[d][1], cur);
    const double expected_prob = t.sign > 0 ? cand[d][0] : cand[d][1];
    if (std::abs(t.prob - expected_prob) > 1e-6) fail(i, "probability differs from closed form");

    if (t.sign == +1) {
      if (t.accepted != plus_ok) fail(i, "+ decision differs from exhaustive evaluation");
    } else if (t.sign == -1) {
      // A - probe only happens after the + probe of the same direction failed.
      const bool follows_plus = r.trace[i - 1].sign == +1 && r.trace[i - 1].iter == t.iter && !r.trace[i - 1].accepted;
      if (!follows_plus) fail(i, "- probe without a rejected + probe");
      if (t.accepted != minus_ok) fail(i, "- decision differs from exhaustive evaluation");
    } else {
      fail(i, "zero sign in a query record");
    }
    if (t.sign == +1 && !t.accepted && i + 1 < r.trace.size() && r.trace[i + 1].iter != t.iter) {
      fail(i, "rejected + probe not followed by its - probe");
    }
    ++rep.steps_checked;
    if (t.accepted) {
      const bool any_improving = improves(cand[0][0], cur) || improves(cand[0][1], cur) ||
                                 improves(cand[1][0], cur) || improves(cand[1][1], cur);
      if (!any_improving) fail(i, "accepted a move no candidate supports");
      x = moved(d, t.sign);
      ++rep.accepted;
    }
  }
  if (r.adversarial[0] != x[0] || r.adversarial[1] != x[1]) {
    rep.mismatches.push_back("final adversarial differs from replayed iterate");
  }
  return rep;
}

}  // namespace advprobe::testing

#endif  // ADVPROBE_TESTS_LINEAR2_HPP
