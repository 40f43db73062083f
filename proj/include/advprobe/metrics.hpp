#ifndef ADVPROBE_METRICS_HPP
#define ADVPROBE_METRICS_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "advprobe/attacks.hpp"
#include "advprobe/dataset.hpp"
#include "advprobe/error.hpp"
#include "advprobe/models.hpp"
#include "advprobe/rng.hpp"
#include "json.hpp"

namespace advprobe {

/// Fraction of runs that ended misclassified.
inline double success_rate(std::span<const AttackResult> results) {
  if (results.empty()) throw DomainError("success_rate: no results");
  const auto hits = std::count_if(results.begin(), results.end(), [](const AttackResult& r) { return r.success; });
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

inline double true_class_confidence(std::span<const double> probs, ClassIndex true_label) {
  if (true_label >= probs.size()) throw IndexError("true_class_confidence: label out of range");
  return probs[true_label];
}

/// Normalised Shannon entropy of the non-true-class mass, renormalised to sum
/// to one: 1 for uniform confusion, 0 when one wrong class takes all of it.
inline double flatness(std::span<const double> probs, ClassIndex true_label) {
  if (probs.size() < 3) throw DomainError("flatness: need at least 3 classes");
  if (true_label >= probs.size()) throw IndexError("flatness: label out of range");
  double rest = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (k != true_label) rest += probs[k];
  }
  if (rest <= 0.0) return 0.0;
  double entropy = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (k == true_label || probs[k] <= 0.0) continue;
    const double p = probs[k] / rest;
    entropy -= p * std::log(p);
  }
  return std::clamp(entropy / std::log(static_cast<double>(probs.size() - 1)), 0.0, 1.0);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw DomainError("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

enum class SweepVariable { iterations, epsilon, samples };

inline std::string_view to_string(SweepVariable v) {
  switch (v) {
    case SweepVariable::iterations: return "iterations";
    case SweepVariable::epsilon: return "epsilon";
    case SweepVariable::samples: return "samples";
  }
  return "?";
}

inline SweepVariable parse_sweep_variable(std::string_view s) {
  if (s == "iterations") return SweepVariable::iterations;
  if (s == "epsilon") return SweepVariable::epsilon;
  if (s == "samples") return SweepVariable::samples;
  throw DomainError("unknown sweep variable '" + std::string(s) + "'");
}

inline std::vector<double> default_grid(SweepVariable v) {
  switch (v) {
    case SweepVariable::iterations: return {50, 100, 200, 400, 800};
    case SweepVariable::epsilon: return {0.02, 0.05, 0.1, 0.2, 0.4};
    case SweepVariable::samples: return {10, 20, 50, 100};
  }
  return {};
}

struct SweepSpec {
  SweepVariable variable = SweepVariable::iterations;
  std::vector<double> grid;
  AttackConfig fixed_cfg;
  std::vector<AttackMethod> attacks{AttackMethod::tpgd, AttackMethod::simba, AttackMethod::msimba};
  const LabeledSet* samples = nullptr;
  /// Unset: each query attack uses default_policy().
  std::optional<DirectionPolicy> policy;
  /// Drop samples the target already misclassifies before aggregating.
  bool exclude_clean_misclassified = true;
  std::size_t jobs = 1;

  void validate() const {
    if (grid.empty()) throw DomainError("sweep: empty grid");
    for (std::size_t i = 1; i < grid.size(); ++i) {
      if (!(grid[i] > grid[i - 1])) throw DomainError("sweep: grid must be strictly increasing");
    }
    if (variable != SweepVariable::epsilon) {
      for (double g : grid) {
        if (!(g >= 1.0) || g != std::floor(g)) throw DomainError("sweep: grid values must be positive integers");
      }
    }
    if (attacks.empty()) throw DomainError("sweep: no attacks selected");
    if (!samples || samples->empty()) throw DomainError("sweep: empty sample set");
    if (jobs == 0) throw DomainError("sweep: jobs must be positive");
    fixed_cfg.validate();
  }
};

struct SweepRow {
  AttackMethod attack = AttackMethod::simba;
  double value = 0.0;
  double success_rate = 0.0;
  double mean_queries = 0.0;
  double mean_true_conf = 0.0;
  double mean_flatness = 0.0;  // NaN below 3 classes
};

/// Attack runs over a sample set at one configuration.
struct RunSet {
  AttackMethod attack = AttackMethod::simba;
  double value = 0.0;
  std::vector<AttackResult> results;
};

struct SweepResult {
  SweepVariable variable = SweepVariable::iterations;
  std::vector<SweepRow> rows;
  std::vector<RunSet> runs;
};

inline AttackConfig config_for(AttackMethod method, const AttackConfig& base, std::optional<DirectionPolicy> policy) {
  AttackConfig cfg = base;
  cfg.direction_policy = policy.value_or(default_policy(method));
  return cfg;
}

/// Attacks every sample, each with seed mix_seed(cfg.seed, index) and its own
/// oracle, so results do not depend on how work is spread over `jobs` threads.
inline std::vector<AttackResult> attack_all(AttackMethod method, const WhiteBoxModel* surrogate,
                                            const std::shared_ptr<const ProbabilityModel>& target,
                                            const LabeledSet& samples, const AttackConfig& cfg, std::size_t jobs = 1) {
  std::vector<AttackResult> results(samples.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&]() {
    for (std::size_t i = next++; i < samples.size() && !failed; i = next++) {
      try {
        AttackConfig run_cfg = cfg;
        run_cfg.seed = mix_seed(cfg.seed, i);
        BlackBoxOracle oracle(target);
        results[i] = run_attack(method, surrogate, oracle, samples.samples[i], run_cfg);
        if (oracle.query_count() != results[i].queries_used) {
          throw ConsistencyError("query accounting mismatch on sample " + std::to_string(i));
        }
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

namespace detail {

inline SweepRow aggregate(AttackMethod attack, double value, const std::vector<const AttackResult*>& runs,
                          std::size_t budget) {
  if (runs.empty()) throw DomainError("sweep: no eligible samples to aggregate");
  SweepRow row{attack, value, 0, 0, 0, 0};
  const double n = static_cast<double>(runs.size());
  bool flat_defined = true;
  for (const AttackResult* r : runs) {
    const ProbVector& probs = r->probs_within(budget);
    row.success_rate += r->success_within(budget) ? 1.0 : 0.0;
    row.mean_queries += static_cast<double>(std::min(r->queries_used, budget));
    row.mean_true_conf += true_class_confidence(probs, r->true_label);
    if (probs.size() >= 3) {
      row.mean_flatness += flatness(probs, r->true_label);
    } else {
      flat_defined = false;
    }
  }
  row.success_rate /= n;
  row.mean_queries /= n;
  row.mean_true_conf /= n;
  row.mean_flatness = flat_defined ? row.mean_flatness / n : std::numeric_limits<double>::quiet_NaN();
  return row;
}

inline std::vector<const AttackResult*> eligible(const std::vector<AttackResult>& results, std::size_t count,
                                                 bool exclude_clean_misclassified) {
  std::vector<const AttackResult*> out;
  for (std::size_t i = 0; i < count; ++i) {
    if (!exclude_clean_misclassified || results[i].clean_correct) out.push_back(&results[i]);
  }
  return out;
}

}  // namespace detail

/// Success-rate sweep over iteration budget, step size or sample count.
///  - iterations: one run per sample at the largest budget; each grid budget b
///    is read back from the run (success within b queries, or b gradient steps
///    for T-PGD).
///  - epsilon: independent runs per grid value.
///  - samples: one run set; the first n samples for each grid n.
inline SweepResult run_sweep(const SweepSpec& spec, const WhiteBoxModel* surrogate,
                             const std::shared_ptr<const ProbabilityModel>& target) {
  spec.validate();
  if (!target) throw ConsistencyError("sweep: no target model");
  const bool needs_surrogate = std::find(spec.attacks.begin(), spec.attacks.end(), AttackMethod::tpgd) != spec.attacks.end();
  if (needs_surrogate && !surrogate) throw ConsistencyError("sweep: tpgd selected but no surrogate model");
  if (target->num_classes() != spec.samples->num_classes) {
    throw ConsistencyError("sweep: target has " + std::to_string(target->num_classes()) + " classes, samples have " +
                           std::to_string(spec.samples->num_classes));
  }
  const LabeledSet& samples = *spec.samples;
  SweepResult out;
  out.variable = spec.variable;
  const auto max_value = static_cast<std::size_t>(spec.grid.back());

  for (const AttackMethod method : spec.attacks) {
    AttackConfig cfg = config_for(method, spec.fixed_cfg, spec.policy);
    switch (spec.variable) {
      case SweepVariable::iterations: {
        cfg.max_iters = max_value;
        cfg.max_queries = max_value;
        RunSet set{method, spec.grid.back(), attack_all(method, surrogate, target, samples, cfg, spec.jobs)};
        const auto runs = detail::eligible(set.results, samples.size(), spec.exclude_clean_misclassified);
        for (double b : spec.grid) {
          out.rows.push_back(detail::aggregate(method, b, runs, static_cast<std::size_t>(b)));
        }
        out.runs.push_back(std::move(set));
        break;
      }
      case SweepVariable::epsilon: {
        for (double eps : spec.grid) {
          cfg.epsilon = eps;
          RunSet set{method, eps, attack_all(method, surrogate, target, samples, cfg, spec.jobs)};
          const auto runs = detail::eligible(set.results, samples.size(), spec.exclude_clean_misclassified);
          out.rows.push_back(detail::aggregate(method, eps, runs, std::numeric_limits<std::size_t>::max()));
          out.runs.push_back(std::move(set));
        }
        break;
      }
      case SweepVariable::samples: {
        if (max_value > samples.size()) {
          throw DomainError("sweep: grid asks for " + std::to_string(max_value) + " samples, set has " +
                            std::to_string(samples.size()));
        }
        RunSet set{method, spec.grid.back(),
                   attack_all(method, surrogate, target, samples.head(max_value), cfg, spec.jobs)};
        for (double n : spec.grid) {
          const auto runs = detail::eligible(set.results, static_cast<std::size_t>(n), spec.exclude_clean_misclassified);
          out.rows.push_back(detail::aggregate(method, n, runs, std::numeric_limits<std::size_t>::max()));
        }
        out.runs.push_back(std::move(set));
        break;
      }
    }
  }
  return out;
}

namespace detail {

inline std::string format_number(double v, const char* fmt) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace detail

inline constexpr const char* kSweepCsvHeader = "attack,variable,value,success_rate,mean_queries,mean_true_conf,mean_flatness";

inline void write_sweep_csv(std::ostream& out, const SweepResult& result) {
  out << kSweepCsvHeader << '\n';
  for (const auto& row : result.rows) {
    out << to_string(row.attack) << ',' << to_string(result.variable) << ','
        << detail::format_number(row.value, "%.10g") << ',' << detail::format_number(row.success_rate, "%.6f") << ','
        << detail::format_number(row.mean_queries, "%.3f") << ',' << detail::format_number(row.mean_true_conf, "%.6f")
        << ',' << detail::format_number(row.mean_flatness, "%.6f") << '\n';
  }
}

/// Clean and final probability vectors of every run, for bar-plot style inspection.
inline nlohmann::json probability_dump(const SweepResult& result) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& set : result.runs) {
    for (std::size_t i = 0; i < set.results.size(); ++i) {
      const auto& r = set.results[i];
      out.push_back({{"attack", to_string(set.attack)},
                     {"value", set.value},
                     {"sample", i},
                     {"label", r.true_label},
                     {"clean_correct", r.clean_correct},
                     {"success", r.success},
                     {"queries_used", r.queries_used},
                     {"clean_probs", r.clean_probs},
                     {"final_probs", r.final_probs}});
    }
  }
  return out;
}

/// Per-attack medians over successful, initially correct runs.
struct QualitativeSummary {
  AttackMethod attack = AttackMethod::simba;
  std::size_t attacked = 0;
  std::size_t successes = 0;
  double median_true_conf = std::numeric_limits<double>::quiet_NaN();
  double median_flatness = std::numeric_limits<double>::quiet_NaN();
};

inline QualitativeSummary summarize(AttackMethod attack, const std::vector<AttackResult>& results) {
  QualitativeSummary s;
  s.attack = attack;
  std::vector<double> conf, flat;
  for (const auto& r : results) {
    if (!r.clean_correct) continue;
    ++s.attacked;
    if (!r.success) continue;
    ++s.successes;
    conf.push_back(true_class_confidence(r.final_probs, r.true_label));
    if (r.final_probs.size() >= 3) flat.push_back(flatness(r.final_probs, r.true_label));
  }
  if (!conf.empty()) s.median_true_conf = median(conf);
  if (!flat.empty()) s.median_flatness = median(flat);
  return s;
}

}  // namespace advprobe

#endif  // ADVPROBE_METRICS_HPP
