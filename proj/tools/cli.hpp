#ifndef ADVPROBE_TOOLS_CLI_HPP
#define ADVPROBE_TOOLS_CLI_HPP

// Command-line front end. Exit codes: 0 success, 1 runtime error, 2 usage error.
//
// Option values are resolved as: command-line flag, then the JSON file given
// by --config, then ADVPROBE_SEED (seed only), then built-in defaults.

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "advprobe/advprobe.hpp"

namespace advprobe::cli {

namespace fs = std::filesystem;

/// Bad invocation: maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline const std::vector<std::string> kCommands{"synth", "train", "attack", "sweep", "report"};

struct AttackFlags {
  double epsilon = 0.05;
  std::size_t max_iters = 1000;
  std::size_t max_queries = 1000;
  std::size_t steps = 10;
  std::string policy;  // empty: per-attack default
  std::uint64_t seed = 0;
};

struct Options {
  std::string config;

  // synth
  fs::path out;
  std::size_t classes = 0;
  std::size_t per_class = 25;
  std::size_t side = kReferenceInputSide;

  // train
  fs::path data;
  fs::path test_data;
  std::string arch = "blackbox";
  std::size_t epochs = 10;
  double lr = 0.01;
  std::size_t batch = 8;

  // attack / sweep
  fs::path target;
  fs::path surrogate;
  std::string method;
  fs::path image;
  long long label = -1;
  fs::path out_image;
  fs::path trace;
  AttackFlags attack;
  std::string variable = "iterations";
  std::string grid;
  std::string attacks = "tpgd,simba,msimba";
  std::size_t jobs = 1;
  std::size_t limit = 0;
  bool include_misclassified = false;

  // report
  fs::path probs;
};

namespace detail {

inline std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) throw UsageError(what + ": not an unsigned integer: '" + text + "'");
  return v;
}

/// Runs `f`, reporting domain errors as usage errors (bad names or values in flags).
template <typename F>
auto as_usage(F&& f) {
  try {
    return f();
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text + ",") {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  return out;
}

inline std::string config_value(const nlohmann::json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned() || v.is_number_float()) return v.dump();
  if (v.is_array()) {
    std::string joined;
    for (const auto& item : v) {
      if (!joined.empty()) joined += ',';
      joined += config_value(item, key);
    }
    return joined;
  }
  throw UsageError("config: unsupported value for '" + key + "'");
}

/// Locates the command word and the --config path in raw arguments.
inline std::pair<std::string, std::string> prescan(const std::vector<std::string>& args) {
  std::string command, config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (command.empty() && std::find(kCommands.begin(), kCommands.end(), args[i]) != kCommands.end()) command = args[i];
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  return {command, config};
}

/// Turns a JSON config object into arguments placed before the user's own.
inline std::vector<std::string> config_args(const fs::path& path, CLI::App& sub, const std::set<std::string>& flags) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config: " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config: top level must be an object");
  std::vector<std::string> out;
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    if (name == "config" || !sub.get_option_no_throw("--" + name)) {
      throw UsageError("config: unknown key '" + key + "' for command '" + sub.get_name() + "'");
    }
    if (flags.count(name)) {
      if (!value.is_boolean()) throw UsageError("config: '" + key + "' must be true or false");
      if (value.get<bool>()) out.push_back("--" + name);
      continue;
    }
    out.push_back("--" + name);
    out.push_back(config_value(value, key));
  }
  return out;
}

inline std::size_t corpus_classes(const fs::path& dir, std::size_t flag) {
  if (flag > 0) return flag;
  const fs::path meta = dir / "corpus.json";
  if (fs::exists(meta)) {
    std::ifstream in(meta);
    return nlohmann::json::parse(in).at("num_classes").get<std::size_t>();
  }
  std::size_t k = 0;
  for (const auto& row : read_index(dir / "index.csv")) k = std::max(k, row.label + 1);
  return std::max<std::size_t>(k, 2);
}

inline void require_dir_with_index(const fs::path& dir, const char* flag) {
  if (dir.empty()) throw UsageError(std::string(flag) + " is required");
  if (!fs::is_regular_file(dir / "index.csv")) {
    throw UsageError(std::string(flag) + ": no index.csv in " + dir.string());
  }
}

inline AttackConfig attack_config(const AttackFlags& f, AttackMethod method) {
  AttackConfig cfg;
  cfg.epsilon = f.epsilon;
  cfg.max_iters = f.max_iters;
  cfg.max_queries = f.max_queries;
  cfg.tpgd_steps = f.steps;
  cfg.seed = f.seed;
  cfg.direction_policy = f.policy.empty() ? default_policy(method) : as_usage([&] { return parse_direction_policy(f.policy); });
  as_usage([&] { cfg.validate(); });
  return cfg;
}

inline void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

// -- commands ---------------------------------------------------------------

inline int cmd_synth(const Options& o, std::ostream& out) {
  const std::size_t k = o.classes == 0 ? 4 : o.classes;
  if (k < 2 || k > advprobe::detail::kSignTemplates.size()) {
    throw UsageError("--classes must be in [2, " + std::to_string(advprobe::detail::kSignTemplates.size()) + "]");
  }
  if (o.per_class == 0) throw UsageError("--per-class must be positive");
  if (o.side == 0) throw UsageError("--side must be positive");
  const LabeledSet set = synth_signs(k, o.per_class, o.attack.seed, o.side);
  export_corpus(set, o.out);
  const nlohmann::json meta{{"num_classes", k}, {"per_class", o.per_class}, {"seed", o.attack.seed}, {"side", o.side}};
  std::ofstream(o.out / "corpus.json") << meta.dump(2) << '\n';
  out << nlohmann::json{{"out", o.out.string()}, {"images", set.size()}, {"num_classes", k}}.dump() << '\n';
  return kExitOk;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  require_dir_with_index(o.data, "--data");
  if (!o.test_data.empty()) require_dir_with_index(o.test_data, "--test-data");
  if (o.arch != "whitebox" && o.arch != "blackbox") throw UsageError("--arch must be whitebox or blackbox");
  if (o.batch == 0) throw UsageError("--batch must be positive");
  if (!(o.lr >= 0.0)) throw UsageError("--lr must be non-negative");

  const std::size_t k = corpus_classes(o.data, o.classes);
  const ArchDescriptor arch = o.arch == "whitebox" ? whitebox_arch(k) : blackbox_arch(k);
  const LabeledSet train = load_corpus(o.data, k, arch.input_side, Split::train);
  std::optional<LabeledSet> test;
  if (!o.test_data.empty()) test = load_corpus(o.test_data, k, arch.input_side, Split::test);

  ModelWeights weights = init_weights(arch, mix_seed(o.attack.seed, 0));
  nlohmann::json report{{"arch", arch.name}, {"num_classes", k}, {"epochs", o.epochs}, {"train_samples", train.size()}};
  if (o.epochs > 0) {
    TrainOptions opts;
    opts.epochs = o.epochs;
    opts.learning_rate = o.lr;
    opts.batch_size = o.batch;
    opts.seed = mix_seed(o.attack.seed, 1);
    TrainResult result = sgd_train(arch, std::move(weights), train, opts);
    weights = std::move(result.weights);
    report["epoch_loss"] = result.mean_loss;
  }
  const Network net(arch, std::move(weights));
  ensure_parent(o.out);
  save_model(o.out, net);
  report["weights"] = o.out.string();
  report["train_accuracy"] = accuracy(net, train);
  if (test) {
    report["test_samples"] = test->size();
    report["test_accuracy"] = accuracy(net, *test);
  }
  out << report.dump() << '\n';
  return kExitOk;
}

inline ImageTensor load_input_image(const fs::path& path, const Shape& shape) {
  ImageTensor img = read_image(path);
  if (img.dim(2) != shape[2]) {
    throw ConsistencyError(path.string() + ": image has " + std::to_string(img.dim(2)) + " channels, model expects " +
                           std::to_string(shape[2]));
  }
  if (img.shape() != shape) img = resize_bilinear(img, shape[0]);
  return img;
}

inline int cmd_attack(const Options& o, std::ostream& out) {
  if (o.method.empty()) throw UsageError("--method is required");
  const AttackMethod method = as_usage([&] { return parse_attack_method(o.method); });
  if (method == AttackMethod::tpgd && o.surrogate.empty()) throw UsageError("tpgd needs --surrogate");
  if (method != AttackMethod::tpgd && !o.surrogate.empty()) {
    throw UsageError("--surrogate is only valid with --method tpgd");
  }
  if (o.target.empty()) throw UsageError("--target is required");
  if (o.image.empty()) throw UsageError("--image is required");
  if (o.label < 0) throw UsageError("--label is required");
  if (!fs::is_regular_file(o.image)) throw UsageError("--image: no such file " + o.image.string());
  const AttackConfig cfg = attack_config(o.attack, method);

  BlackBoxOracle oracle = make_oracle(load_model(o.target));
  std::optional<WhiteBoxModel> surrogate;
  if (!o.surrogate.empty()) surrogate.emplace(load_model(o.surrogate));
  if (static_cast<std::size_t>(o.label) >= oracle.num_classes()) {
    throw UsageError("--label " + std::to_string(o.label) + " out of range for " + std::to_string(oracle.num_classes()) +
                     " classes");
  }
  const LabeledSample sample{load_input_image(o.image, oracle.input_shape()), static_cast<ClassIndex>(o.label)};
  const AttackResult r = run_attack(method, surrogate ? &*surrogate : nullptr, oracle, sample, cfg);

  if (!o.out_image.empty()) {
    ensure_parent(o.out_image);
    write_png(o.out_image, r.adversarial);
  }
  if (!o.trace.empty()) {
    ensure_parent(o.trace);
    std::ofstream trace(o.trace, std::ios::binary | std::ios::trunc);
    if (!trace) throw IoError("cannot write " + o.trace.string());
    write_trace_jsonl(trace, r);
  }
  out << attack_result_json(r).dump() << '\n';
  return kExitOk;
}

inline int cmd_sweep(const Options& o, std::ostream& out) {
  SweepSpec spec;
  spec.variable = as_usage([&] { return parse_sweep_variable(o.variable); });
  spec.grid = default_grid(spec.variable);
  if (!o.grid.empty()) {
    spec.grid.clear();
    for (const auto& v : split_list(o.grid)) {
      try {
        std::size_t used = 0;
        spec.grid.push_back(std::stod(v, &used));
        if (used != v.size()) throw std::invalid_argument(v);
      } catch (const std::logic_error&) {
        throw UsageError("--grid: bad number '" + v + "'");
      }
    }
  }
  spec.attacks.clear();
  for (const auto& a : split_list(o.attacks)) spec.attacks.push_back(as_usage([&] { return parse_attack_method(a); }));
  if (spec.attacks.empty()) throw UsageError("--attacks is empty");
  const bool wants_tpgd = std::count(spec.attacks.begin(), spec.attacks.end(), AttackMethod::tpgd) > 0;
  if (wants_tpgd && o.surrogate.empty()) throw UsageError("tpgd in --attacks needs --surrogate");
  if (o.target.empty()) throw UsageError("--target is required");
  if (o.out.empty()) throw UsageError("--out is required");
  require_dir_with_index(o.data, "--data");
  if (!o.attack.policy.empty()) spec.policy = as_usage([&] { return parse_direction_policy(o.attack.policy); });
  spec.fixed_cfg = attack_config(o.attack, AttackMethod::simba);
  spec.exclude_clean_misclassified = !o.include_misclassified;
  spec.jobs = o.jobs;

  const auto target = std::make_shared<NetworkProbabilities>(load_model(o.target));
  std::optional<WhiteBoxModel> surrogate;
  if (wants_tpgd) surrogate.emplace(load_model(o.surrogate));
  const LabeledSet all = load_corpus(o.data, target->num_classes(), target->input_shape()[0], Split::test);
  const LabeledSet samples = o.limit > 0 ? all.head(o.limit) : all;
  spec.samples = &samples;
  as_usage([&] { spec.validate(); });

  const SweepResult result = run_sweep(spec, surrogate ? &*surrogate : nullptr, target);
  fs::create_directories(o.out);
  {
    std::ofstream csv(o.out / "sweep.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError("cannot write " + (o.out / "sweep.csv").string());
    write_sweep_csv(csv, result);
  }
  std::ofstream(o.out / "probs.json", std::ios::binary | std::ios::trunc) << probability_dump(result).dump() << '\n';
  write_sweep_csv(out, result);
  return kExitOk;
}

inline int cmd_report(const Options& o, std::ostream& out) {
  fs::path path = o.probs;
  if (path.empty() && !o.data.empty()) path = o.data / "probs.json";
  if (path.empty()) throw UsageError("--probs or --sweep-dir is required");
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  nlohmann::json dump;
  try {
    dump = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConsistencyError(path.string() + ": " + e.what());
  }

  // Group runs by (attack, value), keeping first-seen order.
  std::vector<std::pair<std::string, double>> keys;
  std::map<std::pair<std::string, double>, std::vector<AttackResult>> groups;
  try {
    for (const auto& rec : dump) {
      const std::pair<std::string, double> key{rec.at("attack").get<std::string>(), rec.at("value").get<double>()};
      if (!groups.count(key)) keys.push_back(key);
      AttackResult r;
      r.method = parse_attack_method(key.first);
      r.true_label = rec.at("label").get<ClassIndex>();
      r.success = rec.at("success").get<bool>();
      r.clean_correct = rec.at("clean_correct").get<bool>();
      r.final_probs = rec.at("final_probs").get<ProbVector>();
      if (r.true_label >= r.final_probs.size()) throw ConsistencyError("label out of range in " + path.string());
      groups[key].push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConsistencyError(path.string() + ": " + e.what());
  }

  auto num = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  out << "attack,value,attacked,successes,success_rate,median_true_conf,median_flatness\n";
  for (const auto& key : keys) {
    const QualitativeSummary s = summarize(parse_attack_method(key.first), groups[key]);
    char value[32];
    std::snprintf(value, sizeof value, "%.10g", key.second);
    const double rate = s.attacked ? static_cast<double>(s.successes) / static_cast<double>(s.attacked) : NAN;
    out << key.first << ',' << value << ',' << s.attacked << ',' << s.successes << ',' << num(rate) << ','
        << num(s.median_true_conf) << ',' << num(s.median_flatness) << '\n';
  }
  return kExitOk;
}

}  // namespace detail

/// Runs one invocation. `args` excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Black-box adversarial attack toolkit: synth, train, attack, sweep, report", "advprobe"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  std::map<std::string, CLI::App*> subs;
  const std::set<std::string> flags{"include-misclassified"};

  auto add_config = [&](CLI::App* s) { s->add_option("--config", o.config, "JSON file with option values"); };
  auto add_seed = [&](CLI::App* s) { s->add_option("--seed", o.attack.seed, "RNG seed (default: $ADVPROBE_SEED or 0)"); };
  auto add_attack_cfg = [&](CLI::App* s) {
    s->add_option("--epsilon", o.attack.epsilon, "Step size in [0,1] pixel units")->capture_default_str();
    s->add_option("--max-iters", o.attack.max_iters, "Iteration budget")->capture_default_str();
    s->add_option("--max-queries", o.attack.max_queries, "Oracle query budget")->capture_default_str();
    s->add_option("--steps", o.attack.steps, "T-PGD gradient steps")->capture_default_str();
    s->add_option("--policy", o.attack.policy, "Direction policy: pixel_basis or dense_sign");
  };

  auto* synth = subs["synth"] = app.add_subcommand("synth", "Render a synthetic traffic-sign corpus");
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--classes", o.classes, "Number of classes, 2-10 (default 4)");
  synth->add_option("--per-class", o.per_class, "Images per class")->capture_default_str();
  synth->add_option("--side", o.side, "Image side in pixels")->capture_default_str();
  add_seed(synth);
  add_config(synth);

  auto* train = subs["train"] = app.add_subcommand("train", "Train a reference model on a corpus");
  train->add_option("--data", o.data, "Training corpus directory (with index.csv)");
  train->add_option("--test-data", o.test_data, "Held-out corpus directory");
  train->add_option("--arch", o.arch, "whitebox or blackbox")->capture_default_str();
  train->add_option("--classes", o.classes, "Number of classes (default: from the corpus)");
  train->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
  train->add_option("--lr", o.lr, "Learning rate")->capture_default_str();
  train->add_option("--batch", o.batch, "Mini-batch size")->capture_default_str();
  train->add_option("--out", o.out, "Weight file to write")->required();
  add_seed(train);
  add_config(train);

  auto* attack = subs["attack"] = app.add_subcommand("attack", "Attack one image and print the result as JSON");
  attack->add_option("--target", o.target, "Black-box target weights");
  attack->add_option("--surrogate", o.surrogate, "White-box surrogate weights (tpgd only)");
  attack->add_option("--method", o.method, "tpgd, simba or msimba");
  attack->add_option("--image", o.image, "Input image (PNG or PPM)");
  attack->add_option("--label", o.label, "True class of the image");
  attack->add_option("--out-image", o.out_image, "Write the adversarial image as PNG");
  attack->add_option("--trace", o.trace, "Write the per-query trace as JSON lines");
  add_attack_cfg(attack);
  add_seed(attack);
  add_config(attack);

  auto* sweep = subs["sweep"] = app.add_subcommand("sweep", "Success-rate sweep over iterations, epsilon or samples");
  sweep->add_option("--target", o.target, "Black-box target weights");
  sweep->add_option("--surrogate", o.surrogate, "White-box surrogate weights (needed for tpgd)");
  sweep->add_option("--data", o.data, "Evaluation corpus directory (with index.csv)");
  sweep->add_option("--variable", o.variable, "iterations, epsilon or samples")->capture_default_str();
  sweep->add_option("--grid", o.grid, "Comma-separated grid (default depends on the variable)");
  sweep->add_option("--attacks", o.attacks, "Comma-separated subset of tpgd,simba,msimba")->capture_default_str();
  sweep->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str();
  sweep->add_option("--limit", o.limit, "Use only the first N samples");
  sweep->add_flag("--include-misclassified", o.include_misclassified,
                  "Keep samples the target misclassifies before any attack");
  sweep->add_option("--out", o.out, "Output directory for sweep.csv and probs.json");
  add_attack_cfg(sweep);
  add_seed(sweep);
  add_config(sweep);

  auto* report = subs["report"] = app.add_subcommand("report", "Summarize a sweep's probability dump");
  report->add_option("--sweep-dir", o.data, "Directory written by sweep");
  report->add_option("--probs", o.probs, "Path to probs.json");
  add_config(report);

  try {
    const auto [command, config] = detail::prescan(args);
    std::vector<std::string> full{"advprobe"};
    if (!command.empty()) {
      full.push_back(command);
      if (!config.empty()) {
        for (auto& a : detail::config_args(config, *subs[command], flags)) full.push_back(std::move(a));
      }
      bool skipped = false;
      for (const auto& a : args) {
        if (!skipped && a == command) {
          skipped = true;
          continue;
        }
        full.push_back(a);
      }
    } else {
      full.insert(full.end(), args.begin(), args.end());
    }

    // Seed fallback sits below both flags and config.
    if (const char* env = std::getenv("ADVPROBE_SEED"); env && *env) {
      o.attack.seed = detail::parse_u64(env, "ADVPROBE_SEED");
    }

    std::vector<const char*> argv;
    for (const auto& a : full) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "advprobe: " << e.what() << '\n';
      if (app.get_subcommands().empty()) err << "run 'advprobe --help' for usage\n";
      return kExitUsage;
    }

    if (*synth) return detail::cmd_synth(o, out);
    if (*train) return detail::cmd_train(o, out);
    if (*attack) return detail::cmd_attack(o, out);
    if (*sweep) return detail::cmd_sweep(o, out);
    return detail::cmd_report(o, out);
  } catch (const UsageError& e) {
    err << "advprobe: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "advprobe: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace advprobe::cli

#endif  // ADVPROBE_TOOLS_CLI_HPP
