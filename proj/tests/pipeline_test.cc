//
// Copyright 2026 The dpfim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include "dpfim/pipeline.h"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include "dpfim/config.h"
#include "dpfim/error.h"
#include "dpfim/synth.h"
#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "oracles.h"

namespace dpfim {
namespace {

namespace fs = std::filesystem;
using ::testing::HasSubstr;

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

int RunCli(const std::string& args) {
  const std::string cmd = std::string(DPFIM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    corpus_ = dir_ / "corpus";
    WriteSyntheticCorpus(corpus_, 60, 3);
  }

  // Small enough that every command finishes in seconds.
  std::string ConfigText(const std::string& out, const std::string& extra = "") const {
    return "[run]\nseed = 11\nout = " + (dir_ / out).string() +
           "\n[corpus]\nroot = " + corpus_.string() +
           "\nmax_bytes = 600\ncanary_copies = 2\n"
           "[model]\nd_model = 16\nn_layers = 1\nn_heads = 2\ncontext_len = 64\n"
           "[lora]\nrank = 2\nalpha = 4\n"
           "[pretrain]\nepochs = 1\n"
           "[baseline]\nepochs = 1\nbatch_size = 8\n"
           "[dp]\nepochs = 1\nlot_size = 8\nmax_steps = 6\n"
           "[metrics]\nmax_new = 8\nval_examples = 5\n" +
           extra;
  }

  ExperimentConfig Config(const std::string& out, const std::string& extra = "") const {
    return ParseConfig(ConfigText(out, extra));
  }

  fs::path WriteConfig(const std::string& name, const std::string& text) const {
    const fs::path p = dir_ / name;
    WriteFile(p, text);
    return p;
  }

  testing::TempDir dir_;
  fs::path corpus_;
};

TEST_F(PipelineTest, PrepareIsDeterministic) {
  CmdPrepare(Config("a"));
  CmdPrepare(Config("b"));
  for (const char* split : {"members", "nonmembers", "eval", "public"}) {
    const std::string a = Slurp(RunLayout(dir_ / "a").split(split));
    EXPECT_FALSE(a.empty()) << split;
    EXPECT_EQ(a, Slurp(RunLayout(dir_ / "b").split(split))) << split;
  }
  nlohmann::json ma = ReadManifest(dir_ / "a" / "manifest.json");
  nlohmann::json mb = ReadManifest(dir_ / "b" / "manifest.json");
  EXPECT_EQ(ma["corpus"], mb["corpus"]);
  EXPECT_EQ(ma["seeds"], mb["seeds"]);

  CmdPrepare(Config("c", "[run]\nseed = 12\n"));
  EXPECT_NE(Slurp(RunLayout(dir_ / "a").split("members")),
            Slurp(RunLayout(dir_ / "c").split("members")));
}

TEST_F(PipelineTest, TrainingIsDeterministic) {
  for (const char* out : {"a", "b"}) {
    const ExperimentConfig cfg = Config(out);
    CmdPrepare(cfg);
    CmdTrain(cfg, TrainMode::kDp);
  }
  const Checkpoint a = LoadCheckpoint(RunLayout(dir_ / "a").checkpoint(TrainMode::kDp));
  const Checkpoint b = LoadCheckpoint(RunLayout(dir_ / "b").checkpoint(TrainMode::kDp));
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.state, b.state) << a.state.dump() << "\n" << b.state.dump();
  EXPECT_EQ(a.blobs, b.blobs);
  EXPECT_EQ(Slurp(RunLayout(dir_ / "a").checkpoint(TrainMode::kDp)),
            Slurp(RunLayout(dir_ / "b").checkpoint(TrainMode::kDp)));
  EXPECT_EQ(Slurp(RunLayout(dir_ / "a").step_log(TrainMode::kDp)),
            Slurp(RunLayout(dir_ / "b").step_log(TrainMode::kDp)));
}

TEST_F(PipelineTest, ResumeMatchesUninterruptedRun) {
  const ExperimentConfig full = Config("full");
  CmdPrepare(full);
  CmdTrain(full, TrainMode::kDp);

  const ExperimentConfig split = Config("split");
  CmdPrepare(split);
  const TrainOutcome first = CmdTrain(split, TrainMode::kDp, TrainOptions{3, false});
  EXPECT_FALSE(first.complete);
  EXPECT_EQ(first.steps, 3u);
  const TrainOutcome second = CmdTrain(split, TrainMode::kDp, TrainOptions{0, true});
  EXPECT_TRUE(second.complete);
  EXPECT_EQ(second.steps, 6u);

  const Checkpoint a = LoadCheckpoint(RunLayout(dir_ / "full").checkpoint(TrainMode::kDp));
  const Checkpoint b = LoadCheckpoint(RunLayout(dir_ / "split").checkpoint(TrainMode::kDp));
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(Slurp(RunLayout(dir_ / "full").step_log(TrainMode::kDp)),
            Slurp(RunLayout(dir_ / "split").step_log(TrainMode::kDp)));
}

TEST_F(PipelineTest, BaselineLeavesBaseUntouched) {
  const ExperimentConfig cfg = Config("run");
  CmdPrepare(cfg);
  const ParameterSet base = EnsureBaseModel(cfg);
  CmdTrain(cfg, TrainMode::kBaseline);
  const Checkpoint c = LoadCheckpoint(RunLayout(dir_ / "run").checkpoint(TrainMode::kBaseline));
  EXPECT_EQ(HashBase(c.params), HashBase(base));
  EXPECT_NE(c.params.adapters, std::vector<double>(c.params.adapters.size(), 0.0));
}

TEST_F(PipelineTest, NoiselessFullBatchDpEqualsBaseline) {
  // q = 1 needs the lot to cover every training record.
  const ExperimentConfig probe = Config("probe");
  CmdPrepare(probe);
  const size_t n = ReadManifest(dir_ / "probe" / "manifest.json")["corpus"]["splits"]["members"]["training_records"];
  const std::string extra = "[dp]\nnoise_multiplier = 0\nclip_norm = 1e9\nmax_steps = 0\nepochs = 4\n"
                            "lot_size = " + std::to_string(n) +
                            "\n[baseline]\nepochs = 4\nbatch_size = " + std::to_string(n) + "\n";
  const ExperimentConfig cfg = Config("eq", extra);
  CmdPrepare(cfg);
  CmdTrain(cfg, TrainMode::kBaseline);
  CmdTrain(cfg, TrainMode::kDp);
  const RunLayout layout(dir_ / "eq");
  const Checkpoint a = LoadCheckpoint(layout.checkpoint(TrainMode::kBaseline));
  const Checkpoint b = LoadCheckpoint(layout.checkpoint(TrainMode::kDp));
  EXPECT_EQ(a.params, b.params);
}

TEST_F(PipelineTest, FullRunReportIsReproducibleAndBackedByManifest) {
  const fs::path cfg_path = WriteConfig("run.cfg", ConfigText("run"));
  const std::string c = "--config " + cfg_path.string();
  ASSERT_EQ(RunCli("prepare " + c), 0);
  ASSERT_EQ(RunCli("train --mode baseline " + c), 0);
  ASSERT_EQ(RunCli("train --mode dp " + c), 0);
  ASSERT_EQ(RunCli("attack --mode baseline " + c), 0);
  ASSERT_EQ(RunCli("attack --mode dp " + c), 0);
  ASSERT_EQ(RunCli("evaluate --label baseline " + c), 0);
  ASSERT_EQ(RunCli("evaluate --label dp " + c), 0);
  ASSERT_EQ(RunCli("report " + c), 0);

  const RunLayout layout(dir_ / "run");
  const std::string summary = Slurp(layout.report_dir() / "summary.txt");
  const std::string roc = Slurp(layout.report_dir() / "roc.svg");
  const std::string loss = Slurp(layout.report_dir() / "loss_epsilon.svg");
  ASSERT_EQ(RunCli("report --run " + layout.root().string()), 0);
  EXPECT_EQ(Slurp(layout.report_dir() / "summary.txt"), summary);
  EXPECT_EQ(Slurp(layout.report_dir() / "roc.svg"), roc);
  EXPECT_EQ(Slurp(layout.report_dir() / "loss_epsilon.svg"), loss);

  EXPECT_THAT(summary, HasSubstr("missing inputs\n  none"));
  // Every decimal number in the summary is copied from the manifest.
  const std::string manifest = Slurp(layout.manifest());
  const std::regex number(R"([0-9]+\.[0-9]+(e-?[0-9]+)?)");
  int checked = 0;
  for (auto it = std::sregex_iterator(summary.begin(), summary.end(), number);
       it != std::sregex_iterator(); ++it) {
    EXPECT_THAT(manifest, HasSubstr(it->str()));
    ++checked;
  }
  EXPECT_GT(checked, 10);

  const nlohmann::json m = nlohmann::json::parse(manifest);
  for (const char* key : {"tool_version", "config", "seeds", "corpus", "pretrain", "train",
                          "attack", "metrics", "accountant", "timestamps"}) {
    EXPECT_TRUE(m.contains(key)) << key;
  }
  EXPECT_LE(m["train"]["dp"]["epsilon"].get<double>(), 1e300);
  EXPECT_TRUE(m["accountant"].contains("reference_setting"));
}

TEST_F(PipelineTest, BaselineOnlyReportNamesWhatIsMissing) {
  const ExperimentConfig cfg = Config("run");
  CmdPrepare(cfg);
  CmdTrain(cfg, TrainMode::kBaseline);
  const std::vector<std::string> missing = CmdReport(dir_ / "run");
  const std::string svg = Slurp(RunLayout(dir_ / "run").report_dir() / "loss_epsilon.svg");
  EXPECT_THAT(svg, HasSubstr("epsilon axis omitted"));
  EXPECT_THAT(missing, ::testing::Contains("train/dp/steps.csv"));
  EXPECT_THAT(Slurp(RunLayout(dir_ / "run").report_dir() / "summary.txt"),
              HasSubstr("train/dp/steps.csv"));
}

TEST_F(PipelineTest, BudgetExhaustedAtFirstStep) {
  const fs::path cfg_path = WriteConfig(
      "tight.cfg", ConfigText("run", "[accountant]\nepsilon_max = 0.001\n"));
  const std::string c = "--config " + cfg_path.string();
  ASSERT_EQ(RunCli("prepare " + c), 0);
  EXPECT_EQ(RunCli("train --mode dp " + c), 4);
  EXPECT_FALSE(fs::exists(RunLayout(dir_ / "run").checkpoint(TrainMode::kDp)));
}

TEST_F(PipelineTest, BudgetStopsMidEpoch) {
  const ExperimentConfig cfg =
      Config("run", "[dp]\nmax_steps = 0\nepochs = 10\nnoise_multiplier = 1.0\n[accountant]\nepsilon_max = 4\n");
  CmdPrepare(cfg);
  const TrainOutcome out = CmdTrain(cfg, TrainMode::kDp);
  EXPECT_TRUE(out.budget_exhausted);
  EXPECT_LT(out.steps, out.planned_steps);
  EXPECT_GT(out.steps, 0u);
  EXPECT_LE(out.epsilon, 4.0);
  const std::vector<StepRecord> log = ReadStepLog(RunLayout(dir_ / "run").step_log(TrainMode::kDp));
  ASSERT_EQ(log.size(), out.steps);
  EXPECT_LE(log.back().epsilon, 4.0);
}

TEST_F(PipelineTest, ExitCodes) {
  const std::string missing = (dir_ / "none.cfg").string();
  EXPECT_EQ(RunCli("prepare --config " + missing), 3);
  EXPECT_EQ(RunCli("no-such-command"), 2);
  EXPECT_EQ(RunCli("train"), 2);

  const fs::path bad = WriteConfig("bad.cfg", ConfigText("bad", "[dp]\nclip_norm = -2\n"));
  EXPECT_EQ(RunCli("prepare --config " + bad.string()), 2);
  EXPECT_FALSE(fs::exists(dir_ / "bad"));

  const fs::path good = WriteConfig("good.cfg", ConfigText("fresh"));
  EXPECT_EQ(RunCli("train --mode dp --config " + good.string()), 3);
  EXPECT_EQ(RunCli("attack --mode dp --config " + good.string()), 3);
  EXPECT_EQ(RunCli("report --config " + good.string()), 3);
  ASSERT_EQ(RunCli("prepare --config " + good.string()), 0);
  EXPECT_EQ(RunCli("attack --mode baseline --config " + good.string()), 3);
  EXPECT_EQ(RunCli("evaluate --label dp --config " + good.string()), 3);

  const fs::path empty = dir_ / "empty";
  fs::create_directories(empty);
  const fs::path no_docs = WriteConfig(
      "nodocs.cfg", ConfigText("nodocs") + "[corpus]\nroot = " + empty.string() + "\n");
  EXPECT_EQ(RunCli("prepare --config " + no_docs.string()), 3);
}

TEST_F(PipelineTest, PrintConfigRoundTrips) {
  const fs::path cfg_path = WriteConfig("run.cfg", ConfigText("run"));
  const fs::path printed = dir_ / "printed.cfg";
  const std::string cmd = std::string(DPFIM_CLI_PATH) + " print-config --config " +
                          cfg_path.string() + " > " + printed.string();
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_EQ(FormatConfig(LoadConfig(printed)), FormatConfig(LoadConfig(cfg_path)));
}

TEST_F(PipelineTest, ReferenceInterpretations) {
  const std::vector<ReferenceInterpretation> all = ReferenceEpsilons();
  ASSERT_EQ(all.size(), 4u);
  for (const ReferenceInterpretation& r : all) {
    EXPECT_EQ(r.steps, 156u);
    const double oracle = Epsilon(Accumulate(MakeAccountant(r.q, kReferenceSigma), r.steps),
                                  r.delta)
                              .epsilon;
    EXPECT_DOUBLE_EQ(r.epsilon.epsilon, oracle) << r.name;
  }
  const size_t best = ClosestReferenceInterpretation(all);
  for (const ReferenceInterpretation& r : all) {
    EXPECT_LE(std::abs(all[best].epsilon.epsilon - 30), std::abs(r.epsilon.epsilon - 30));
  }
}

TEST_F(PipelineTest, SweepWritesOneRowPerCell) {
  const ExperimentConfig cfg =
      Config("run", "[sweep]\nranks = 1, 2\nepsilons = 50\n[dp]\nmax_steps = 2\n");
  CmdPrepare(cfg);
  CmdSweep(cfg);
  const std::string csv = Slurp(dir_ / "run" / "sweep" / "sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_TRUE(fs::exists(dir_ / "run" / "sweep" / "r1_eps50" / "report" / "summary.txt"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "sweep" / "r2_eps50" / "report" / "summary.txt"));
}

}  // namespace
}  // namespace dpfim
