#ifndef ADVPROBE_ATTACKS_HPP
#define ADVPROBE_ATTACKS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "advprobe/dataset.hpp"
#include "advprobe/error.hpp"
#include "advprobe/models.hpp"
#include "advprobe/rng.hpp"
#include "advprobe/tensor.hpp"
#include "json.hpp"

namespace advprobe {

enum class AttackMethod { tpgd, simba, msimba };

/// How query attacks draw their search directions.
///  - pixel_basis: one pixel-channel coordinate at a time, a shuffled sweep
///    over all coordinates without replacement, reshuffled when exhausted.
///  - dense_sign: an i.i.d. uniform +-1 pattern over every coordinate.
enum class DirectionPolicy { pixel_basis, dense_sign };

inline std::string_view to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::tpgd: return "tpgd";
    case AttackMethod::simba: return "simba";
    case AttackMethod::msimba: return "msimba";
  }
  return "?";
}

inline AttackMethod parse_attack_method(std::string_view s) {
  if (s == "tpgd") return AttackMethod::tpgd;
  if (s == "simba") return AttackMethod::simba;
  if (s == "msimba") return AttackMethod::msimba;
  throw DomainError("unknown attack '" + std::string(s) + "'");
}

inline std::string_view to_string(DirectionPolicy p) {
  return p == DirectionPolicy::pixel_basis ? "pixel_basis" : "dense_sign";
}

inline DirectionPolicy parse_direction_policy(std::string_view s) {
  if (s == "pixel_basis") return DirectionPolicy::pixel_basis;
  if (s == "dense_sign") return DirectionPolicy::dense_sign;
  throw DomainError("unknown direction policy '" + std::string(s) + "'");
}

/// The policy each query attack uses unless told otherwise.
inline DirectionPolicy default_policy(AttackMethod m) {
  return m == AttackMethod::msimba ? DirectionPolicy::dense_sign : DirectionPolicy::pixel_basis;
}

struct AttackConfig {
  double epsilon = 0.05;        // step size in [0,1] pixel units
  std::size_t max_iters = 1000;  // directions tried (query attacks) or gradient steps
  std::size_t max_queries = 1000;
  std::uint64_t seed = 0;
  DirectionPolicy direction_policy = DirectionPolicy::pixel_basis;
  std::size_t tpgd_steps = 10;

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw DomainError("attack config: epsilon must be finite and >= 0");
    if (max_iters == 0) throw DomainError("attack config: max_iters must be positive");
    if (max_queries == 0) throw DomainError("attack config: max_queries must be positive");
    if (tpgd_steps == 0) throw DomainError("attack config: tpgd_steps must be positive");
  }
};

/// One oracle query.
struct TraceRecord {
  std::size_t iter = 0;  // 0 for the clean baseline query
  ClassIndex tracked_class = 0;
  double prob = 0.0;  // tracked-class probability of the queried input
  bool accepted = false;
  int sign = 0;  // candidate sign, 0 for evaluation queries
  std::int64_t coordinate = -1;  // pixel_basis coordinate, -1 otherwise
};

/// Probabilities of the current iterate, valid from the `query`-th query on.
struct IterateState {
  std::size_t query = 0;
  ProbVector probs;
};

struct AttackResult {
  AttackMethod method = AttackMethod::simba;
  ImageTensor adversarial;
  ClassIndex true_label = 0;
  ClassIndex tracked_class = 0;  // y for T-PGD/SimBA, the most confused class for M-SimBA
  bool success = false;
  bool clean_correct = true;  // false: misclassified before any perturbation
  std::size_t queries_used = 0;
  std::size_t iterations_used = 0;
  std::size_t accepted_steps = 0;
  std::vector<TraceRecord> trace;
  std::vector<IterateState> states;  // clean state, then one entry per accepted step
  ProbVector clean_probs;
  ProbVector final_probs;
  double perturbation_linf = 0.0;

  /// Probabilities of the iterate after `budget` queries (or gradient steps for T-PGD).
  const ProbVector& probs_within(std::size_t budget) const {
    if (method == AttackMethod::tpgd) return budget >= iterations_used ? final_probs : clean_probs;
    const IterateState* best = &states.front();
    for (const auto& s : states) {
      if (s.query <= budget) best = &s;
    }
    return best->probs;
  }

  /// Whether the run had succeeded once `budget` units had been spent.
  bool success_within(std::size_t budget) const {
    if (!success) return false;
    return (method == AttackMethod::tpgd ? iterations_used : queries_used) <= budget;
  }
};

inline ImageTensor clip01(ImageTensor x) {
  for (float& v : x.values()) v = std::clamp(v, 0.0f, 1.0f);
  return x;
}

/// A search direction: a single basis coordinate or a dense +-1 pattern.
struct Direction {
  std::int64_t coordinate = -1;
  std::vector<float> pattern;

  /// clip01(x + sign * epsilon * q)
  ImageTensor step(const ImageTensor& x, int sign, double epsilon) const {
    ImageTensor out = x;
    const auto delta = static_cast<float>(sign * epsilon);
    if (coordinate >= 0) {
      float& v = out[static_cast<std::size_t>(coordinate)];
      v = std::clamp(v + delta, 0.0f, 1.0f);
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i] + delta * pattern[i], 0.0f, 1.0f);
    }
    return out;
  }
};

class DirectionSampler {
 public:
  DirectionSampler(DirectionPolicy policy, std::size_t dims, std::uint64_t seed)
      : policy_(policy), dims_(dims), rng_(seed) {}

  Direction next() {
    Direction d;
    if (policy_ == DirectionPolicy::pixel_basis) {
      if (pos_ == order_.size()) {
        order_.resize(dims_);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        rng_.shuffle(order_.begin(), order_.end());
        pos_ = 0;
      }
      d.coordinate = static_cast<std::int64_t>(order_[pos_++]);
    } else {
      d.pattern.resize(dims_);
      for (float& v : d.pattern) v = rng_.coin() ? 1.0f : -1.0f;
    }
    return d;
  }

 private:
  DirectionPolicy policy_;
  std::size_t dims_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

namespace detail {

inline void check_sample(const BlackBoxOracle& oracle, const LabeledSample& sample) {
  if (sample.label >= oracle.num_classes()) {
    throw IndexError("attack: label " + std::to_string(sample.label) + " out of range for " +
                     std::to_string(oracle.num_classes()) + " classes");
  }
}

inline void finish(AttackResult& r, const ImageTensor& original) {
  r.queries_used = r.trace.size();
  r.success = argmax(r.final_probs) != r.true_label;
  r.perturbation_linf = linf_distance(r.adversarial, original);
}

/// Shared probe-and-accept loop. `improves(candidate, current)` decides acceptance.
template <typename Improves>
AttackResult query_attack(AttackMethod method, BlackBoxOracle& oracle, const LabeledSample& sample,
                          const AttackConfig& cfg, Improves improves, bool track_most_confused) {
  cfg.validate();
  check_sample(oracle, sample);
  const ClassIndex y = sample.label;

  AttackResult r;
  r.method = method;
  r.true_label = y;
  r.clean_probs = oracle.predict_probs(sample.image);
  r.tracked_class = track_most_confused ? most_confused_class(r.clean_probs, y) : y;
  const ClassIndex tracked = r.tracked_class;
  r.trace.push_back({0, tracked, r.clean_probs[tracked], false, 0, -1});
  r.states.push_back({1, r.clean_probs});
  r.adversarial = sample.image;
  r.final_probs = r.clean_probs;
  r.clean_correct = argmax(r.clean_probs) == y;

  bool fooled = !r.clean_correct;
  DirectionSampler sampler(cfg.direction_policy, sample.image.size(), cfg.seed);
  while (!fooled && r.iterations_used < cfg.max_iters && r.trace.size() < cfg.max_queries) {
    ++r.iterations_used;
    const Direction q = sampler.next();
    for (const int sign : {+1, -1}) {
      if (r.trace.size() >= cfg.max_queries) break;
      ImageTensor candidate = q.step(r.adversarial, sign, cfg.epsilon);
      ProbVector probs = oracle.predict_probs(candidate);
      const bool accept = improves(probs[tracked], r.final_probs[tracked]);
      r.trace.push_back({r.iterations_used, tracked, probs[tracked], accept, sign, q.coordinate});
      if (accept) {
        r.adversarial = std::move(candidate);
        r.final_probs = std::move(probs);
        ++r.accepted_steps;
        r.states.push_back({r.trace.size(), r.final_probs});
        fooled = argmax(r.final_probs) != y;
        break;
      }
    }
  }
  finish(r, sample.image);
  return r;
}

}  // namespace detail

/// Transfer attack: iterated sign-gradient ascent on the surrogate's loss,
/// x <- clip01(x + eps * sign(grad_x J(surrogate, x, y))), for cfg.tpgd_steps
/// steps. The target is queried twice: clean baseline and final evaluation.
inline AttackResult tpgd(const WhiteBoxModel& surrogate, BlackBoxOracle& target, const LabeledSample& sample,
                         const AttackConfig& cfg) {
  cfg.validate();
  if (surrogate.num_classes() != target.num_classes()) {
    throw ConsistencyError("tpgd: surrogate has " + std::to_string(surrogate.num_classes()) +
                           " classes, target has " + std::to_string(target.num_classes()));
  }
  if (surrogate.input_shape() != target.input_shape()) {
    throw ConsistencyError("tpgd: surrogate and target input shapes differ");
  }
  detail::check_sample(target, sample);
  const ClassIndex y = sample.label;

  AttackResult r;
  r.method = AttackMethod::tpgd;
  r.true_label = y;
  r.tracked_class = y;
  r.clean_probs = target.predict_probs(sample.image);
  r.trace.push_back({0, y, r.clean_probs[y], false, 0, -1});
  r.states.push_back({1, r.clean_probs});
  r.clean_correct = argmax(r.clean_probs) == y;
  r.adversarial = sample.image;
  r.final_probs = r.clean_probs;

  if (r.clean_correct) {
    const auto eps = static_cast<float>(cfg.epsilon);
    for (std::size_t step = 0; step < cfg.tpgd_steps; ++step) {
      const Tensor grad = surrogate.gradient(r.adversarial, y);
      for (std::size_t i = 0; i < grad.size(); ++i) {
        const float s = grad[i] > 0.0f ? 1.0f : grad[i] < 0.0f ? -1.0f : 0.0f;
        r.adversarial[i] = std::clamp(r.adversarial[i] + eps * s, 0.0f, 1.0f);
      }
    }
    r.iterations_used = cfg.tpgd_steps;
    r.accepted_steps = cfg.tpgd_steps;
    r.final_probs = target.predict_probs(r.adversarial);
    r.trace.push_back({cfg.tpgd_steps, y, r.final_probs[y], true, 0, -1});
    r.states.push_back({2, r.final_probs});
  }
  detail::finish(r, sample.image);
  return r;
}

/// Query attack that accepts a +-eps step along a fresh direction whenever it
/// strictly lowers the true-class probability (the + side is probed first).
inline AttackResult simba(BlackBoxOracle& target, const LabeledSample& sample, const AttackConfig& cfg) {
  return detail::query_attack(
      AttackMethod::simba, target, sample, cfg, [](double cand, double cur) { return cand < cur; }, false);
}

/// Query attack that fixes the most confused class c of the clean input and
/// accepts a +-eps step whenever it strictly raises P(c | x).
inline AttackResult msimba(BlackBoxOracle& target, const LabeledSample& sample, const AttackConfig& cfg) {
  return detail::query_attack(
      AttackMethod::msimba, target, sample, cfg, [](double cand, double cur) { return cand > cur; }, true);
}

/// Runs `method`; `surrogate` is required for T-PGD and ignored otherwise.
inline AttackResult run_attack(AttackMethod method, const WhiteBoxModel* surrogate, BlackBoxOracle& target,
                               const LabeledSample& sample, const AttackConfig& cfg) {
  switch (method) {
    case AttackMethod::tpgd:
      if (!surrogate) throw ConsistencyError("tpgd needs a surrogate model");
      return tpgd(*surrogate, target, sample, cfg);
    case AttackMethod::simba: return simba(target, sample, cfg);
    case AttackMethod::msimba: return msimba(target, sample, cfg);
  }
  throw DomainError("unknown attack method");
}

inline nlohmann::json trace_record_json(const TraceRecord& t) {
  return {{"iter", t.iter}, {"tracked_class", t.tracked_class}, {"prob", t.prob}, {"accepted", t.accepted},
          {"sign", t.sign}};
}

/// One JSON object per line, one line per oracle query.
inline void write_trace_jsonl(std::ostream& out, const AttackResult& r) {
  for (const auto& t : r.trace) out << trace_record_json(t).dump() << '\n';
}

inline nlohmann::json attack_result_json(const AttackResult& r) {
  return {{"method", to_string(r.method)},
          {"true_label", r.true_label},
          {"tracked_class", r.tracked_class},
          {"success", r.success},
          {"clean_correct", r.clean_correct},
          {"queries_used", r.queries_used},
          {"iterations_used", r.iterations_used},
          {"accepted_steps", r.accepted_steps},
          {"predicted", argmax(r.final_probs)},
          {"clean_probs", r.clean_probs},
          {"final_probs", r.final_probs},
          {"perturbation_linf", r.perturbation_linf}};
}

}  // namespace advprobe

#endif  // ADVPROBE_ATTACKS_HPP
