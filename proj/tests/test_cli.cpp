#include <gtest/gtest.h>

#include <cstdlib>
#include <numeric>
#include <sstream>

#include "cli.hpp"
#include "support/tempdir.hpp"

namespace advprobe {
namespace {

using testing::slurp;
using testing::TempDir;
using testing::write_text;

struct CliRun {
  int code = -1;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = cli::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override { ::unsetenv("ADVPROBE_SEED"); }
  void TearDown() override { ::unsetenv("ADVPROBE_SEED"); }

  // Tiny corpus and untrained models, cheap enough for every test.
  void make_models() {
    ASSERT_EQ(cli({"synth", "--out", (dir / "data").string(), "--classes", "3", "--per-class", "2", "--seed", "1"}).code, 0);
    ASSERT_EQ(cli({"train", "--data", (dir / "data").string(), "--arch", "blackbox", "--epochs", "0", "--out",
                   (dir / "bb.advw").string()})
                  .code,
              0);
    ASSERT_EQ(cli({"train", "--data", (dir / "data").string(), "--arch", "whitebox", "--epochs", "0", "--seed", "5",
                   "--out", (dir / "wb.advw").string()})
                  .code,
              0);
  }

  // An image from the corpus with the label the target actually predicts.
  std::pair<std::string, std::string> correct_input() const {
    const Network net = load_model(dir / "bb.advw");
    const auto path = dir / "data" / "images" / "00000.png";
    return {path.string(), std::to_string(net.predict(read_png(path)))};
  }

  TempDir dir{"cli"};
};

TEST_F(Cli, SynthWritesIndexedCorpusDeterministically) {
  const CliRun r = cli({"synth", "--out", (dir / "a").string(), "--classes", "4", "--per-class", "25", "--seed", "9",
                     "--side", "24"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t pngs = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "a" / "images")) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, 100u);
  const std::string index = slurp(dir / "a" / "index.csv");
  EXPECT_EQ(std::count(index.begin(), index.end(), '\n'), 101);

  ASSERT_EQ(cli({"synth", "--out", (dir / "b").string(), "--classes", "4", "--per-class", "25", "--seed", "9", "--side",
                 "24"})
                .code,
            0);
  EXPECT_EQ(slurp(dir / "a" / "index.csv"), slurp(dir / "b" / "index.csv"));
  for (const char* f : {"images/00000.png", "images/00057.png", "images/00099.png"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
}

TEST_F(Cli, SynthRejectsSingleClassAndUnwritableOutput) {
  EXPECT_EQ(cli({"synth", "--out", (dir / "x").string(), "--classes", "1"}).code, 2);
  write_text(dir / "file", "occupied");
  const CliRun r = cli({"synth", "--out", (dir / "file" / "sub").string(), "--per-class", "1", "--side", "8"});
  EXPECT_EQ(r.code, 1) << r.err;
}

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"synth"}).code, 2);  // --out is required
  EXPECT_EQ(cli({"synth", "--out", "x", "--per-class", "abc"}).code, 2);
  EXPECT_EQ(cli({"sweep", "--target", "t", "--data", "d", "--out", "o", "--variable", "speed"}).code, 2);
  const CliRun help = cli({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("sweep"), std::string::npos);
  EXPECT_EQ(cli({"attack", "--help"}).code, 0);
}

TEST_F(Cli, TrainWithZeroEpochsKeepsInitialWeights) {
  make_models();
  const ModelWeights saved = load_weights(dir / "bb.advw");
  EXPECT_EQ(encode_weights(saved), encode_weights(init_weights(blackbox_arch(3), mix_seed(0, 0))));
  const CliRun r = cli({"train", "--data", (dir / "data").string(), "--epochs", "0", "--out", (dir / "z.advw").string()});
  const auto report = nlohmann::json::parse(r.out);
  EXPECT_LE(report["train_accuracy"].get<double>(), 2.0 / 3.0);
  EXPECT_EQ(report["arch"], "blackbox-v1");
  EXPECT_TRUE(std::filesystem::exists(dir / "z.advw.arch.json"));
}

TEST_F(Cli, TrainIsDeterministicPerSeed) {
  ASSERT_EQ(cli({"synth", "--out", (dir / "data").string(), "--classes", "2", "--per-class", "3"}).code, 0);
  for (const char* name : {"a.advw", "b.advw"}) {
    const CliRun r = cli({"train", "--data", (dir / "data").string(), "--arch", "whitebox", "--epochs", "1", "--seed", "4",
                       "--out", (dir / name).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(dir / "a.advw"), slurp(dir / "b.advw"));
}

TEST_F(Cli, TrainReportsCorpusRowOnBadIndex) {
  ASSERT_EQ(cli({"synth", "--out", (dir / "data").string(), "--classes", "2", "--per-class", "2", "--side", "8"}).code, 0);
  write_text(dir / "data" / "index.csv", "path,label\nimages/00000.png,0\nimages/missing.png,1\n");
  const CliRun r = cli({"train", "--data", (dir / "data").string(), "--classes", "2", "--out", (dir / "w").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("row 2"), std::string::npos) << r.err;
  EXPECT_EQ(cli({"train", "--data", (dir / "nowhere").string(), "--out", (dir / "w").string()}).code, 2);
}

TEST_F(Cli, AttackContracts) {
  make_models();
  const auto [image, label] = correct_input();
  const std::string target = (dir / "bb.advw").string(), surrogate = (dir / "wb.advw").string();

  CliRun r = cli({"attack", "--target", target, "--method", "simba", "--image", image, "--label", label, "--max-queries", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_FALSE(j["success"].get<bool>());
  EXPECT_EQ(j["queries_used"], 1);

  r = cli({"attack", "--target", target, "--method", "msimba", "--image", image, "--label", label, "--max-queries", "30",
           "--trace", (dir / "trace.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  j = nlohmann::json::parse(r.out);
  const auto probs = j["final_probs"].get<std::vector<double>>();
  EXPECT_NEAR(std::accumulate(probs.begin(), probs.end(), 0.0), 1.0, 1e-6);
  const std::string trace = slurp(dir / "trace.jsonl");
  EXPECT_EQ(static_cast<std::size_t>(std::count(trace.begin(), trace.end(), '\n')), j["queries_used"].get<std::size_t>());

  r = cli({"attack", "--target", target, "--surrogate", surrogate, "--method", "tpgd", "--image", image, "--label", label,
           "--epsilon", "0", "--out-image", (dir / "adv.png").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_png(dir / "adv.png"), read_png(image));
  EXPECT_EQ(nlohmann::json::parse(r.out)["perturbation_linf"], 0.0);
}

TEST_F(Cli, AttackFlagMisuse) {
  make_models();
  const auto [image, label] = correct_input();
  const std::string target = (dir / "bb.advw").string(), surrogate = (dir / "wb.advw").string();
  EXPECT_EQ(cli({"attack", "--target", target, "--method", "tpgd", "--image", image, "--label", label}).code, 2);
  EXPECT_EQ(cli({"attack", "--target", target, "--surrogate", surrogate, "--method", "simba", "--image", image, "--label",
                 label})
                .code,
            2);
  EXPECT_EQ(cli({"attack", "--target", target, "--method", "nope", "--image", image, "--label", label}).code, 2);
  EXPECT_EQ(cli({"attack", "--target", target, "--method", "simba", "--image", image, "--label", "7"}).code, 2);
  EXPECT_EQ(cli({"attack", "--target", target, "--method", "simba", "--image", image, "--label", label, "--epsilon", "-1"})
                .code,
            2);
  EXPECT_EQ(cli({"attack", "--target", (dir / "gone.advw").string(), "--method", "simba", "--image", image, "--label",
                 label})
                .code,
            1);
}

TEST_F(Cli, SweepWritesArtifactsAndIsReproducible) {
  make_models();
  auto sweep = [&](const std::string& out) {
    return cli({"sweep", "--target", (dir / "bb.advw").string(), "--surrogate", (dir / "wb.advw").string(), "--data",
                (dir / "data").string(), "--variable", "iterations", "--grid", "5,10,20", "--include-misclassified",
                "--seed", "3", "--out", (dir / out).string()});
  };
  const CliRun a = sweep("s1");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(sweep("s2").code, 0);
  const std::string csv = slurp(dir / "s1" / "sweep.csv");
  EXPECT_EQ(csv, slurp(dir / "s2" / "sweep.csv"));
  EXPECT_EQ(csv, a.out);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 3);
  const auto dump = nlohmann::json::parse(slurp(dir / "s1" / "probs.json"));
  EXPECT_EQ(dump.size(), 3u * 6u);

  const CliRun rep = cli({"report", "--sweep-dir", (dir / "s1").string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_EQ(rep.out.rfind("attack,value,attacked,successes,success_rate,median_true_conf,median_flatness\n", 0), 0u);
  EXPECT_EQ(std::count(rep.out.begin(), rep.out.end(), '\n'), 4);
  EXPECT_EQ(cli({"report", "--probs", (dir / "none.json").string()}).code, 2);
}

TEST_F(Cli, SweepFailsOnMissingWeights) {
  make_models();
  const CliRun r = cli({"sweep", "--target", (dir / "missing.advw").string(), "--data", (dir / "data").string(), "--attacks",
                     "simba", "--out", (dir / "s").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(std::filesystem::exists(dir / "s" / "sweep.csv"));
}

TEST_F(Cli, ConfigFileAndSeedPrecedence) {
  auto corpus = [&](const std::string& out, std::vector<std::string> extra) {
    std::vector<std::string> args{"synth", "--out", (dir / out).string(), "--classes", "2", "--per-class", "1", "--side", "12"};
    args.insert(args.end(), extra.begin(), extra.end());
    const CliRun r = cli(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return slurp(dir / out / "images" / "00000.png");
  };
  const std::string s5 = corpus("s5", {"--seed", "5"});
  const std::string s6 = corpus("s6", {"--seed", "6"});
  const std::string s7 = corpus("s7", {"--seed", "7"});
  ASSERT_NE(s5, s6);
  write_text(dir / "cfg.json", R"({"seed": 6, "per_class": 1})");

  ::setenv("ADVPROBE_SEED", "5", 1);
  EXPECT_EQ(corpus("env", {}), s5);
  EXPECT_EQ(corpus("cfg", {"--config", (dir / "cfg.json").string()}), s6);
  EXPECT_EQ(corpus("flag", {"--config", (dir / "cfg.json").string(), "--seed", "7"}), s7);
  ::unsetenv("ADVPROBE_SEED");
  EXPECT_EQ(corpus("default", {}), corpus("zero", {"--seed", "0"}));

  write_text(dir / "bad.json", R"({"seed": 1, "colour": "red"})");
  EXPECT_EQ(cli({"synth", "--out", (dir / "x").string(), "--config", (dir / "bad.json").string()}).code, 2);
  write_text(dir / "list.json", "[1, 2]");
  EXPECT_EQ(cli({"synth", "--out", (dir / "x").string(), "--config", (dir / "list.json").string()}).code, 2);
  EXPECT_EQ(cli({"synth", "--out", (dir / "x").string(), "--config", (dir / "absent.json").string()}).code, 2);
  ::setenv("ADVPROBE_SEED", "-3", 1);
  EXPECT_EQ(cli({"synth", "--out", (dir / "x").string()}).code, 2);
}

}  // namespace
}  // namespace advprobe
