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

// Command-line entry point. Exit codes: 0 success, 1 unexpected failure,
// 2 configuration error, 3 missing input, 4 privacy budget exhausted,
// 5 numeric failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dpfim/accountant.h"
#include "dpfim/config.h"
#include "dpfim/error.h"
#include "dpfim/pipeline.h"
#include "dpfim/synth.h"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
};

void AddCommon(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "experiment config file (defaults if omitted)");
  cmd->add_option("--seed", flags.seed, "override run.seed");
  cmd->add_option("--out", flags.out, "override run.out (the run directory)");
}

dpfim::ExperimentConfig Resolve(const CommonFlags& flags) {
  dpfim::ExperimentConfig cfg =
      flags.config.empty() ? dpfim::ExperimentConfig{} : dpfim::LoadConfig(flags.config);
  if (flags.seed) cfg.seed = *flags.seed;
  if (!flags.out.empty()) cfg.out_dir = flags.out;
  cfg.ValidateOrThrow();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private fill-in-the-middle fine-tuning experiments"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* prepare = app.add_subcommand("prepare", "ingest the corpus and write the splits");
  AddCommon(prepare, flags);

  std::string mode;
  dpfim::TrainOptions train_options;
  auto* train = app.add_subcommand("train", "fine-tune adapters on the members");
  AddCommon(train, flags);
  train->add_option("--mode", mode, "baseline or dp")
      ->required()
      ->check(CLI::IsMember({"baseline", "dp"}));
  train->add_option("--stop-after", train_options.stop_after,
                    "stop once this many steps are done (for later --resume)");
  train->add_flag("--resume", train_options.resume, "continue from the saved checkpoint");

  auto* attack = app.add_subcommand("attack", "membership inference against a trained model");
  AddCommon(attack, flags);
  attack->add_option("--mode", mode, "which trained model to attack")
      ->required()
      ->check(CLI::IsMember({"baseline", "dp"}));

  std::string label;
  std::string checkpoint;
  auto* evaluate = app.add_subcommand("evaluate", "score greedy completions on the eval split");
  AddCommon(evaluate, flags);
  evaluate->add_option("--label", label, "base, baseline, dp, or any name with --checkpoint")
      ->required();
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint to evaluate instead of the default");

  std::string run_dir;
  auto* report = app.add_subcommand("report", "plots and summary for a run directory");
  AddCommon(report, flags);
  report->add_option("--run", run_dir, "run directory (default: the configured run.out)");

  auto* print_config = app.add_subcommand("print-config", "print every setting with its value");
  AddCommon(print_config, flags);

  auto* sweep = app.add_subcommand("sweep", "DP runs over sweep.ranks x sweep.epsilons");
  AddCommon(sweep, flags);

  std::string synth_dir;
  size_t synth_files = 2000;
  uint64_t synth_seed = 7;
  auto* synth = app.add_subcommand("synth-corpus", "write a synthetic Kotlin-like corpus");
  synth->add_option("--dir", synth_dir, "output directory")->required();
  synth->add_option("--files", synth_files, "number of files");
  synth->add_option("--seed", synth_seed, "generator seed");

  double q = 0.0, sigma = 0.0, delta = 1e-5;
  uint64_t steps = 0;
  auto* eps_report = app.add_subcommand("epsilon-report", "RDP table for (q, sigma, steps)");
  eps_report->add_option("--q", q, "sampling rate")->required()->check(CLI::Range(0.0, 1.0));
  eps_report->add_option("--sigma", sigma, "noise multiplier")->required();
  eps_report->add_option("--steps", steps, "number of steps")->required();
  eps_report->add_option("--delta", delta, "target delta")->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return dpfim::ExitCodeFor(dpfim::ErrorKind::kConfig);
  }

  try {
    if (*synth) {
      dpfim::WriteSyntheticCorpus(synth_dir, synth_files, synth_seed);
      return 0;
    }
    if (*eps_report) {
      const dpfim::AccountantState state =
          dpfim::Accumulate(dpfim::MakeAccountant(q, sigma), steps);
      std::cout << dpfim::EpsilonReport(state, delta);
      return 0;
    }
    const dpfim::ExperimentConfig cfg = Resolve(flags);
    if (*print_config) {
      std::cout << dpfim::FormatConfig(cfg);
    } else if (*prepare) {
      dpfim::CmdPrepare(cfg);
    } else if (*train) {
      dpfim::CmdTrain(cfg, dpfim::ParseMode(mode), train_options);
    } else if (*attack) {
      dpfim::CmdAttack(cfg, dpfim::ParseMode(mode));
    } else if (*evaluate) {
      dpfim::CmdEvaluate(cfg, label, checkpoint);
    } else if (*report) {
      const auto missing = dpfim::CmdReport(run_dir.empty() ? cfg.out_dir : run_dir);
      for (const std::string& m : missing) std::cerr << "[report] missing: " << m << "\n";
    } else if (*sweep) {
      dpfim::CmdSweep(cfg);
    }
  } catch (const dpfim::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return dpfim::ExitCodeFor(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
