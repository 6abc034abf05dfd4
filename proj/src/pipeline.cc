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

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dpfim/dp_optimizer.h"
#include "dpfim/error.h"
#include "dpfim/metrics.h"
#include "dpfim/report.h"
#include "dpfim/rng.h"

namespace dpfim {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr TrainMode kModes[] = {TrainMode::kBaseline, TrainMode::kDp};
constexpr AttackStrategy kStrategies[] = {AttackStrategy::kRawLoss,
                                          AttackStrategy::kCalibrated};

std::string Num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string Hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string UtcNow() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void WriteText(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("failed writing " + path.string());
}

void Log(const std::string& stage, const std::string& message) {
  std::cerr << "[" << stage << "] " << message << "\n";
}

json Stamp(json manifest, const std::string& command) {
  manifest["timestamps"][command] = UtcNow();
  return manifest;
}

std::string Relative(const fs::path& path, const RunLayout& layout) {
  return fs::relative(path, layout.root()).generic_string();
}

json CheckpointRef(const fs::path& path, const RunLayout& layout) {
  return {{"path", Relative(path, layout)}, {"fingerprint", FileFingerprint(path)}};
}

json ReportJson(const MetricReport& r) {
  return {{"mean", r.mean}, {"stderr", r.stderr_}, {"n", r.n},
          {"single_sample", r.single_sample}};
}

struct ValRow {
  uint64_t step = 0;
  uint64_t examples_seen = 0;
  double val_loss = 0.0;
  double epsilon = 0.0;
};

void WriteValLog(const fs::path& path, const std::vector<ValRow>& rows) {
  std::string text = "step,examples_seen,val_loss,epsilon\n";
  for (const ValRow& r : rows) {
    text += std::to_string(r.step) + "," + std::to_string(r.examples_seen) + "," +
            Num(r.val_loss) + "," + Num(r.epsilon) + "\n";
  }
  WriteText(path, text);
}

std::vector<ValRow> ReadValLog(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("missing validation log: " + path.string());
  std::vector<ValRow> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c, d;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    std::getline(ss, d, ',');
    try {
      rows.push_back({std::stoull(a), std::stoull(b), std::stod(c), std::stod(d)});
    } catch (const std::exception&) {
      throw ConfigError("malformed row in " + path.string() + ": " + line);
    }
  }
  return rows;
}

double ValidationLoss(const ParameterSet& params, const std::vector<FimExample>& eval,
                      size_t limit) {
  double sum = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < eval.size() && i < limit; ++i) {
    const double loss = ExampleLoss(params, eval[i]);
    if (std::isnan(loss)) continue;
    sum += loss;
    ++n;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

double ResolveDelta(const ExperimentConfig& cfg, size_t n_members) {
  return cfg.accountant.delta > 0 ? cfg.accountant.delta
                                  : 1.0 / static_cast<double>(n_members);
}

json SeedsJson(uint64_t seed) {
  json j;
  j["master"] = seed;
  // Names of the substreams each stage draws from; all derive from master.
  j["substreams"] = {
      {"fim", "Substream(master, \"fim\", document index)"},
      {"splits", "Substream(master, \"splits\")"},
      {"canaries", "Substream(master, \"canaries\")"},
      {"init", "Substream(master, \"init\")"},
      {"init-adapters", "Substream(master, \"init-adapters\")"},
      {"pretrain", "shuffle substreams of DeriveSeed(master, \"pretrain\")"},
      {"train", "sampling/noise/shuffle substreams of DeriveSeed(master, \"train\")"},
      {"attack", "attack-balance/attack-canary substreams of DeriveSeed(master, \"attack\")"},
  };
  j["derived"] = {{"pretrain", DeriveSeed(seed, "pretrain")},
                  {"train", DeriveSeed(seed, "train")},
                  {"attack", DeriveSeed(seed, "attack")}};
  return j;
}

json ReferenceJson() {
  const std::vector<ReferenceInterpretation> all = ReferenceEpsilons();
  json rows = json::array();
  for (const ReferenceInterpretation& r : all) {
    rows.push_back({{"interpretation", r.name},
                    {"q", r.q},
                    {"delta", r.delta},
                    {"steps", r.steps},
                    {"epsilon", r.epsilon.epsilon},
                    {"order", r.epsilon.order}});
  }
  return {{"noise_multiplier", kReferenceSigma},
          {"clip_norm", 0.5},
          {"lot_size", kReferenceLot},
          {"train_size", kReferenceTrainSize},
          {"pool_size", kReferencePoolSize},
          {"target_epsilon", kReferenceEpsilon},
          {"interpretations", rows},
          {"closest", all[ClosestReferenceInterpretation(all)].name}};
}

}  // namespace

const char* ModeName(TrainMode mode) {
  return mode == TrainMode::kBaseline ? "baseline" : "dp";
}

TrainMode ParseMode(const std::string& name) {
  if (name == "baseline") return TrainMode::kBaseline;
  if (name == "dp") return TrainMode::kDp;
  throw ConfigError("unknown training mode '" + name + "' (expected baseline or dp)");
}

json ReadManifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("missing manifest: " + path.string() + " (run prepare first)");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("unreadable manifest " + path.string() + ": " + e.what());
  }
}

void WriteManifest(const fs::path& path, const json& manifest) {
  WriteText(path, manifest.dump(2) + "\n");
}

std::string CorpusFingerprint(const std::vector<Document>& docs) {
  uint64_t h = Fnv1a64("");
  for (const Document& d : docs) {
    h = Fnv1a64(d.id, h);
    h = Fnv1a64(std::string_view("\0", 1), h);
    h = Fnv1a64(d.text, h);
    h = Fnv1a64(std::string_view("\0", 1), h);
  }
  return Hex(h);
}

std::string FileFingerprint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("missing file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return Hex(Fnv1a64(ss.str()));
}

std::vector<ReferenceInterpretation> ReferenceEpsilons() {
  const uint64_t steps = static_cast<uint64_t>(kReferenceTrainSize / kReferenceLot);
  struct Reading {
    const char* name;
    double n;
    double delta;
  };
  const Reading readings[] = {
      {"q = B/80K, delta = 1/80K", kReferenceTrainSize, 1.0 / kReferenceTrainSize},
      {"q = B/80K, delta = 1e-5", kReferenceTrainSize, 1e-5},
      {"q = B/8M, delta = 1/8M", kReferencePoolSize, 1.0 / kReferencePoolSize},
      {"q = B/8M, delta = 1e-5", kReferencePoolSize, 1e-5},
  };
  std::vector<ReferenceInterpretation> out;
  for (const Reading& r : readings) {
    ReferenceInterpretation x;
    x.name = r.name;
    x.q = kReferenceLot / r.n;
    x.delta = r.delta;
    x.steps = steps;
    x.epsilon = Epsilon(Accumulate(MakeAccountant(x.q, kReferenceSigma), steps), x.delta);
    out.push_back(x);
  }
  return out;
}

size_t ClosestReferenceInterpretation(const std::vector<ReferenceInterpretation>& all) {
  size_t best = 0;
  for (size_t i = 1; i < all.size(); ++i) {
    if (std::fabs(all[i].epsilon.epsilon - kReferenceEpsilon) <
        std::fabs(all[best].epsilon.epsilon - kReferenceEpsilon)) {
      best = i;
    }
  }
  return best;
}

void CmdPrepare(const ExperimentConfig& cfg) {
  cfg.ValidateOrThrow();
  const RunLayout layout(cfg.out_dir);
  const std::set<std::string> extensions(cfg.corpus.extensions.begin(),
                                         cfg.corpus.extensions.end());
  const std::vector<Document> docs =
      IngestCorpus(cfg.corpus.root, extensions, cfg.corpus.max_bytes);
  if (docs.empty()) {
    throw MissingInputError("no usable documents under " + cfg.corpus.root);
  }
  const FimOptions fim = cfg.fim_options();
  std::vector<FimExample> examples;
  size_t rejected = 0;
  for (size_t i = 0; i < docs.size(); ++i) {
    Rng rng = Substream(cfg.seed, "fim", i);
    std::optional<FimExample> ex = MakeFimExample(docs[i], rng, fim);
    if (ex) {
      examples.push_back(std::move(*ex));
    } else {
      ++rejected;
    }
  }
  CorpusSplit split = BuildSplits(std::move(examples), cfg.seed, cfg.corpus.fractions);
  Rng canary_rng = Substream(cfg.seed, "canaries");
  const std::vector<FimExample> members = InjectDuplicates(
      split.members, cfg.corpus.canary_copies, cfg.corpus.canary_fraction, canary_rng);

  WriteExamplesJsonl(layout.split("members"), members);
  WriteExamplesJsonl(layout.split("nonmembers"), split.nonmembers);
  WriteExamplesJsonl(layout.split("eval"), split.eval);
  WriteExamplesJsonl(layout.split("public"), split.public_pool);

  std::vector<std::string> canary_ids;
  for (const FimExample& ex : split.members) {
    for (const FimExample& m : members) {
      if (m.is_canary && m.id == ex.id) {
        canary_ids.push_back(ex.id);
        break;
      }
    }
  }
  json manifest;
  manifest["tool_version"] = kToolVersion;
  manifest["config"] = ToJson(cfg);
  manifest["seeds"] = SeedsJson(cfg.seed);
  json& corpus = manifest["corpus"];
  corpus["root"] = cfg.corpus.root;
  corpus["documents"] = docs.size();
  corpus["fim_rejected"] = rejected;
  corpus["fingerprint"] = CorpusFingerprint(docs);
  corpus["splits"] = {
      {"members", {{"unique", split.members.size()}, {"training_records", members.size()}}},
      {"nonmembers", split.nonmembers.size()},
      {"eval", split.eval.size()},
      {"public", split.public_pool.size()}};
  json files;
  for (const char* name : {"members", "nonmembers", "eval", "public"}) {
    files[name] = {{"path", Relative(layout.split(name), layout)},
                   {"fingerprint", FileFingerprint(layout.split(name))}};
  }
  corpus["split_files"] = files;
  corpus["canary_ids"] = canary_ids;
  corpus["canary_copies"] = cfg.corpus.canary_copies;
  manifest["accountant"] = {{"orders", DefaultRdpOrders()}, {"reference_setting", ReferenceJson()}};
  WriteManifest(layout.manifest(), Stamp(manifest, "prepare"));
  Log("prepare", std::to_string(docs.size()) + " documents, " +
                     std::to_string(split.members.size()) + " members (" +
                     std::to_string(members.size()) + " training records, " +
                     std::to_string(canary_ids.size()) + " canaries), " +
                     std::to_string(split.nonmembers.size()) + " non-members, " +
                     std::to_string(split.eval.size()) + " eval, " +
                     std::to_string(split.public_pool.size()) + " public");
}

ParameterSet EnsureBaseModel(const ExperimentConfig& cfg) {
  const RunLayout layout(cfg.out_dir);
  const fs::path path = layout.base_checkpoint();
  if (fs::exists(path)) {
    Checkpoint ckpt = LoadCheckpoint(path);
    if (!(ckpt.params.model == cfg.model)) {
      throw ConfigError("base checkpoint " + path.string() +
                        " was built for a different [model] section");
    }
    return std::move(ckpt.params);
  }
  ParameterSet params = InitModel(cfg.model, cfg.lora, cfg.seed);
  const std::vector<FimExample> pool = ReadExamplesJsonl(layout.split("public"));
  std::vector<StepRecord> log;
  uint64_t total = 0;
  if (pool.empty()) {
    Log("pretrain", "public pool is empty; base model stays at its initialization");
  } else {
    const size_t batch = std::min(cfg.pretrain.batch_size, pool.size());
    total = static_cast<uint64_t>(cfg.pretrain.epochs) * NonPrivateStepsPerEpoch(pool.size(), batch);
    OptimizerState opt = MakeOptimizerState(params.base.size());
    const uint64_t seed = DeriveSeed(cfg.seed, "pretrain");
    const uint64_t every = std::max<uint64_t>(1, total / 20);
    while (opt.step < total) {
      log.push_back(NonPrivateStep(params, opt, pool, batch, cfg.pretrain.adamw,
                                   TrainTarget::kBase, seed));
      if (opt.step % every == 0 || opt.step == total) {
        Log("pretrain", "step " + std::to_string(opt.step) + "/" + std::to_string(total) +
                            " loss " + Num(log.back().loss));
      }
    }
  }
  Checkpoint ckpt;
  ckpt.params = params;
  ckpt.state = {{"kind", "base"}, {"pretrain_steps", total}, {"public_examples", pool.size()}};
  SaveCheckpoint(path, ckpt);
  WriteStepLog(layout.pretrain_log(), log);

  json manifest = ReadManifest(layout.manifest());
  manifest["pretrain"] = {{"steps", total},
                          {"final_loss", log.empty() ? json(nullptr) : json(log.back().loss)},
                          {"base_hash", Hex(HashBase(params))},
                          {"checkpoint", CheckpointRef(path, layout)}};
  WriteManifest(layout.manifest(), Stamp(manifest, "pretrain"));
  return params;
}

TrainOutcome CmdTrain(const ExperimentConfig& cfg, TrainMode mode, const TrainOptions& options) {
  cfg.ValidateOrThrow();
  const RunLayout layout(cfg.out_dir);
  ReadManifest(layout.manifest());
  const std::vector<FimExample> members = ReadExamplesJsonl(layout.split("members"));
  const std::vector<FimExample> eval = ReadExamplesJsonl(layout.split("eval"));
  if (members.empty()) throw ConfigError("member split is empty");
  const ParameterSet base = EnsureBaseModel(cfg);
  const std::string stage = std::string("train ") + ModeName(mode);
  const bool dp_mode = mode == TrainMode::kDp;

  ParameterSet params = base;
  params.lora = cfg.lora;
  params.adapters = InitAdapters(cfg.model, cfg.lora, cfg.seed);
  OptimizerState opt = MakeOptimizerState(params.trainable_dim());
  const uint64_t seed = DeriveSeed(cfg.seed, "train");

  const size_t n = members.size();
  DpConfig dp = cfg.dp.dp;
  const double delta = ResolveDelta(cfg, n);
  double q = 1.0;
  uint64_t per_epoch = 0;
  uint64_t planned = 0;
  size_t batch = 0;
  if (dp_mode) {
    q = dp.sampling_rate(n);
    if (q > 1.0) {
      throw ConfigError("dp.lot_size " + Num(dp.lot_size) + " exceeds the " + std::to_string(n) +
                        " training records");
    }
    per_epoch = DpStepsPerEpoch(n, dp);
    planned = cfg.dp.max_steps > 0 ? cfg.dp.max_steps
                                   : static_cast<uint64_t>(cfg.dp.epochs) * per_epoch;
    if (cfg.dp.target_epsilon > 0) {
      dp.noise_multiplier = CalibrateNoiseMultiplier(q, planned, delta, cfg.dp.target_epsilon);
      Log(stage, "noise multiplier " + Num(dp.noise_multiplier) + " reaches epsilon " +
                     Num(cfg.dp.target_epsilon) + " after " + std::to_string(planned) +
                     " steps");
    }
  } else {
    batch = std::min(cfg.baseline.batch_size, n);
    per_epoch = NonPrivateStepsPerEpoch(n, batch);
    planned = cfg.baseline.max_steps > 0
                  ? cfg.baseline.max_steps
                  : static_cast<uint64_t>(cfg.baseline.epochs) * per_epoch;
  }
  const uint64_t val_every = cfg.metrics.val_every > 0 ? cfg.metrics.val_every : per_epoch;

  std::vector<StepRecord> log;
  std::vector<ValRow> val;
  const fs::path ckpt_path = layout.checkpoint(mode);
  bool resumed_complete = false;
  if (options.resume && fs::exists(ckpt_path)) {
    Checkpoint ckpt = LoadCheckpoint(ckpt_path);
    if (ckpt.state.value("mode", "") != ModeName(mode)) {
      throw ConfigError(ckpt_path.string() + " is not a " + ModeName(mode) + " checkpoint");
    }
    if (!(ckpt.params.model == cfg.model) || !(ckpt.params.lora == cfg.lora)) {
      throw ConfigError("cannot resume " + ckpt_path.string() +
                        ": model or lora section changed");
    }
    params = std::move(ckpt.params);
    opt.step = ckpt.state.at("step").get<uint64_t>();
    opt.m = ckpt.blobs.at("adam_m");
    opt.v = ckpt.blobs.at("adam_v");
    if (dp_mode) dp.noise_multiplier = ckpt.state.at("noise_multiplier").get<double>();
    log = ReadStepLog(layout.step_log(mode));
    if (log.size() < opt.step) {
      throw ConfigError("step log " + layout.step_log(mode).string() + " is shorter than the checkpoint");
    }
    log.resize(opt.step);
    for (const ValRow& r : ReadValLog(layout.val_log(mode))) {
      if (r.step <= opt.step) val.push_back(r);
    }
    resumed_complete = ckpt.state.value("complete", false);
    Log(stage, "resuming at step " + std::to_string(opt.step));
  }

  AccountantState accountant = MakeAccountant(q, dp_mode ? dp.noise_multiplier : 0.0);
  accountant = Accumulate(std::move(accountant), opt.step);
  uint64_t seen = 0;
  for (const StepRecord& r : log) seen += r.realized_batch;
  auto current_epsilon = [&] {
    return dp_mode ? Epsilon(accountant, delta).epsilon : std::numeric_limits<double>::infinity();
  };
  auto log_val = [&] {
    val.push_back({opt.step, seen, ValidationLoss(params, eval, cfg.metrics.val_examples),
                   opt.step == 0 ? 0.0 : current_epsilon()});
  };
  if (val.empty()) log_val();

  bool exhausted = false;
  const uint64_t end = options.stop_after > 0 ? std::min(planned, options.stop_after) : planned;
  const uint64_t every = std::max<uint64_t>(1, planned / 20);
  while (!resumed_complete && opt.step < end) {
    if (dp_mode) {
      const EpsilonResult next = Epsilon(Accumulate(accountant, 1), delta);
      if (!(next.epsilon <= cfg.accountant.epsilon_max)) {
        exhausted = true;
        break;
      }
      log.push_back(DpStep(params, opt, accountant, members, dp, delta, seed));
    } else {
      log.push_back(NonPrivateStep(params, opt, members, batch, cfg.baseline.adamw,
                                   TrainTarget::kAdapters, seed));
    }
    seen += log.back().realized_batch;
    if (opt.step % val_every == 0 || opt.step == planned) log_val();
    if (opt.step % every == 0 || opt.step == planned) {
      std::string msg = "step " + std::to_string(opt.step) + "/" + std::to_string(planned) +
                        " loss " + Num(log.back().loss);
      if (dp_mode) msg += " epsilon " + Num(log.back().epsilon);
      Log(stage, msg);
    }
  }
  if (exhausted && opt.step == 0) {
    throw Error(ErrorKind::kBudgetExhausted,
                "privacy budget exhausted before the first step: one step costs epsilon " +
                    Num(Epsilon(Accumulate(accountant, 1), delta).epsilon) +
                    " > accountant.epsilon_max " + Num(cfg.accountant.epsilon_max));
  }
  if (exhausted) {
    Log(stage, "privacy budget reached after " + std::to_string(opt.step) + " steps");
    if (val.back().step != opt.step) log_val();
  }
  const bool complete = resumed_complete || exhausted || opt.step >= planned;

  TrainOutcome outcome;
  outcome.steps = opt.step;
  outcome.planned_steps = planned;
  outcome.complete = complete;
  outcome.budget_exhausted =
      exhausted || (resumed_complete && opt.step < planned);
  outcome.noise_multiplier = dp_mode ? dp.noise_multiplier : 0.0;
  outcome.epsilon = current_epsilon();

  Checkpoint ckpt;
  ckpt.params = params;
  ckpt.state = {{"mode", ModeName(mode)},
                {"step", opt.step},
                {"planned_steps", planned},
                {"complete", complete},
                {"budget_exhausted", outcome.budget_exhausted}};
  if (dp_mode) {
    ckpt.state["noise_multiplier"] = dp.noise_multiplier;
    ckpt.state["q"] = q;
    ckpt.state["delta"] = delta;
  }
  ckpt.blobs["adam_m"] = opt.m;
  ckpt.blobs["adam_v"] = opt.v;
  if (!resumed_complete) {
    SaveCheckpoint(ckpt_path, ckpt);
    WriteStepLog(layout.step_log(mode), log);
    WriteValLog(layout.val_log(mode), val);
  }

  json entry;
  entry["steps"] = opt.step;
  entry["planned_steps"] = planned;
  entry["steps_per_epoch"] = per_epoch;
  entry["complete"] = complete;
  entry["budget_exhausted"] = outcome.budget_exhausted;
  entry["examples_seen"] = seen;
  entry["training_records"] = n;
  entry["lora_rank"] = cfg.lora.rank;
  entry["final_train_loss"] = log.empty() ? json(nullptr) : json(log.back().loss);
  entry["final_val_loss"] = val.back().val_loss;
  entry["base_hash"] = Hex(HashBase(params));
  entry["checkpoint"] = CheckpointRef(ckpt_path, layout);
  if (dp_mode) {
    const EpsilonResult eps = Epsilon(accountant, delta);
    entry["noise_multiplier"] = dp.noise_multiplier;
    entry["clip_norm"] = dp.clip_norm;
    entry["lot_size"] = dp.lot_size;
    entry["q"] = q;
    entry["delta"] = delta;
    entry["epsilon"] = eps.epsilon;
    entry["epsilon_order"] = eps.order;
    entry["epsilon_at_delta_1e-5"] = Epsilon(accountant, 1e-5).epsilon;
    entry["accountant"] = ToJson(accountant, delta);
    if (std::isfinite(cfg.accountant.epsilon_max)) {
      entry["epsilon_max"] = cfg.accountant.epsilon_max;
    }
  }
  json manifest = ReadManifest(layout.manifest());
  manifest["train"][ModeName(mode)] = entry;
  WriteManifest(layout.manifest(), Stamp(manifest, std::string("train_") + ModeName(mode)));
  return outcome;
}

json CmdAttack(const ExperimentConfig& cfg, TrainMode mode) {
  cfg.ValidateOrThrow();
  const RunLayout layout(cfg.out_dir);
  ReadManifest(layout.manifest());
  const Checkpoint target = LoadCheckpoint(layout.checkpoint(mode));
  const Checkpoint reference = LoadCheckpoint(layout.base_checkpoint());
  const std::vector<FimExample> members = ReadExamplesJsonl(layout.split("members"));
  const std::vector<FimExample> nonmembers = ReadExamplesJsonl(layout.split("nonmembers"));
  const std::string stage = std::string("attack ") + ModeName(mode);
  if (!target.state.value("complete", false)) {
    Log(stage, "warning: target checkpoint is from an unfinished run");
  }
  const LossTable losses = ComputeLosses(target.params, reference.params, members, nonmembers);
  if (losses.dropped > 0) {
    Log(stage, std::to_string(losses.dropped) + " examples dropped (loss not finite)");
  }
  const uint64_t seed = DeriveSeed(cfg.seed, "attack");
  json entry;
  entry["dropped"] = losses.dropped;
  std::string best;
  double best_auc = -1.0;
  for (AttackStrategy strategy : kStrategies) {
    const AttackResult result = ScoreAttack(losses, strategy, seed);
    const fs::path dir = layout.attack_dir(mode, strategy);
    fs::create_directories(dir);
    WriteAttackRecordsCsv(dir / "attack_records.csv", result.records);
    WriteRocCsv(dir / "roc.csv", result.curve);
    size_t n_members = 0, n_canaries = 0;
    for (const AttackRecord& r : result.records) {
      n_members += r.is_member;
      n_canaries += r.is_canary;
    }
    json s;
    s["auc"] = result.curve.auc;
    s["members"] = n_members;
    s["nonmembers"] = result.records.size() - n_members;
    s["canaries"] = n_canaries;
    if (result.canary_curve) {
      WriteRocCsv(dir / "canary_roc.csv", *result.canary_curve);
      s["canary_auc"] = result.canary_curve->auc;
    } else {
      fs::remove(dir / "canary_roc.csv");
    }
    const std::string name = StrategyName(strategy);
    entry[name] = s;
    if (result.curve.auc >= best_auc) {
      best_auc = result.curve.auc;
      best = name;
    }
    Log(stage, name + " AUC " + Num(result.curve.auc) +
                   (result.canary_curve ? ", canary AUC " + Num(result.canary_curve->auc) : ""));
  }
  entry["best"] = {{"strategy", best}, {"auc", best_auc}};
  json manifest = ReadManifest(layout.manifest());
  manifest["attack"][ModeName(mode)] = entry;
  WriteManifest(layout.manifest(), Stamp(manifest, std::string("attack_") + ModeName(mode)));
  return entry;
}

json CmdEvaluate(const ExperimentConfig& cfg, const std::string& label,
                 const fs::path& checkpoint) {
  cfg.ValidateOrThrow();
  const RunLayout layout(cfg.out_dir);
  ReadManifest(layout.manifest());
  if (label.empty() || label.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("evaluation label must be a plain name; got '" + label + "'");
  }
  fs::path path = checkpoint;
  if (path.empty()) {
    if (label == "base") {
      path = layout.base_checkpoint();
    } else if (label == "baseline" || label == "dp") {
      path = layout.checkpoint(ParseMode(label));
    } else {
      throw ConfigError("no default checkpoint for label '" + label + "'; pass one explicitly");
    }
  }
  const Checkpoint ckpt = LoadCheckpoint(path);
  const std::vector<FimExample> eval = ReadExamplesJsonl(layout.split("eval"));
  if (eval.empty()) throw ConfigError("eval split is empty");

  std::vector<CompletionScore> rows;
  std::string completions;
  size_t excluded = 0;
  const int ctx = ckpt.params.model.context_len;
  const size_t every = std::max<size_t>(1, eval.size() / 10);
  for (size_t i = 0; i < eval.size(); ++i) {
    const FimExample& ex = eval[i];
    const std::string reference = Detokenize(ex.middle);
    if (reference.empty()) {
      ++excluded;
      continue;
    }
    const int prompt = static_cast<int>(ex.prefix.size() + ex.suffix.size()) + 3;
    const int max_new = std::max(0, std::min(cfg.metrics.max_new, ctx - prompt));
    const std::string hyp =
        GenerateCompletion(ckpt.params, Detokenize(ex.prefix), Detokenize(ex.suffix), max_new);
    rows.push_back({ex.id, ChrfPlusPlus(hyp, reference, cfg.metrics.chrf),
                    LmScore(hyp, reference, cfg.metrics.lm_thresholds)});
    // dump() escapes invalid UTF-8 from early, untrained models instead of throwing.
    completions += json{{"id", ex.id}, {"completion", hyp}}
                       .dump(-1, ' ', false, json::error_handler_t::replace) +
                   "\n";
    if ((i + 1) % every == 0) {
      Log("evaluate " + label, std::to_string(i + 1) + "/" + std::to_string(eval.size()));
    }
  }
  if (rows.empty()) throw ConfigError("no eval example has a non-empty reference");
  const fs::path dir = layout.eval_dir(label);
  WriteMetricsCsv(dir / "metrics.csv", rows);
  WriteText(dir / "completions.jsonl", completions);

  std::vector<double> chrf, lm;
  for (const CompletionScore& r : rows) {
    chrf.push_back(r.chrf);
    lm.push_back(r.lm);
  }
  json entry;
  entry["chrf_pp"] = ReportJson(Aggregate(chrf));
  entry["lm_score"] = ReportJson(Aggregate(lm));
  entry["excluded"] = excluded;
  entry["checkpoint"] = {
      {"path", checkpoint.empty() ? Relative(path, layout) : checkpoint.generic_string()},
      {"fingerprint", FileFingerprint(path)}};
  Log("evaluate " + label, "chrF++ " + Num(entry["chrf_pp"]["mean"].get<double>()) +
                               ", LM " + Num(entry["lm_score"]["mean"].get<double>()));
  json manifest = ReadManifest(layout.manifest());
  manifest["metrics"][label] = entry;
  WriteManifest(layout.manifest(), Stamp(manifest, "evaluate_" + label));
  return entry;
}

namespace {

const char* ModeColor(TrainMode mode) {
  return mode == TrainMode::kBaseline ? "#1f77b4" : "#d62728";
}

std::string Pad(const std::string& s, size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

std::string MeanStderr(const json& r) {
  return Num(r.at("mean").get<double>()) + " +/- " + Num(r.at("stderr").get<double>());
}

std::string NumOr(const json& parent, const char* key, const std::string& fallback = "-") {
  return parent.contains(key) && parent.at(key).is_number()
             ? Num(parent.at(key).get<double>())
             : fallback;
}

std::string CountOr(const json& parent, const char* key) {
  return parent.contains(key) ? std::to_string(parent.at(key).get<uint64_t>()) : "-";
}

std::string RenderSummary(const json& m, const std::vector<std::string>& missing) {
  std::ostringstream out;
  out << "dpfim run report\n";
  out << "tool version: " << m.value("tool_version", "?") << "\n";
  if (m.contains("corpus")) {
    const json& c = m["corpus"];
    const json& s = c["splits"];
    out << "corpus fingerprint: " << c.value("fingerprint", "?") << "\n";
    out << "documents: " << CountOr(c, "documents") << ", members: "
        << CountOr(s["members"], "unique") << " (" << CountOr(s["members"], "training_records")
        << " training records), non-members: " << CountOr(s, "nonmembers")
        << ", eval: " << CountOr(s, "eval") << ", public: " << CountOr(s, "public") << "\n";
    out << "canaries: " << c.value("canary_ids", json::array()).size() << " x "
        << CountOr(c, "canary_copies") << " copies\n";
  }

  out << "\nutility on the eval split (mean +/- standard error)\n";
  out << Pad("model", 12) << Pad("chrF++", 36) << Pad("LM score", 36) << "n\n";
  std::vector<std::string> labels = {"base", "baseline", "dp"};
  if (m.contains("metrics")) {
    for (const auto& [label, _] : m["metrics"].items()) {
      if (std::find(labels.begin(), labels.end(), label) == labels.end()) labels.push_back(label);
    }
  }
  for (const std::string& label : labels) {
    out << Pad(label, 12);
    if (!m.contains("metrics") || !m["metrics"].contains(label)) {
      out << "(not evaluated)\n";
      continue;
    }
    const json& e = m["metrics"][label];
    out << Pad(MeanStderr(e["chrf_pp"]), 36) << Pad(MeanStderr(e["lm_score"]), 36)
        << CountOr(e["chrf_pp"], "n") << "\n";
  }

  out << "\nmembership inference AUC (balanced members vs non-members)\n";
  out << Pad("model", 12) << Pad("raw", 22) << Pad("calibrated", 22) << Pad("best", 34)
      << "canary AUC (best strategy)\n";
  for (TrainMode mode : kModes) {
    out << Pad(ModeName(mode), 12);
    if (!m.contains("attack") || !m["attack"].contains(ModeName(mode))) {
      out << "(not run)\n";
      continue;
    }
    const json& a = m["attack"][ModeName(mode)];
    const std::string best = a["best"]["strategy"].get<std::string>();
    out << Pad(NumOr(a["raw"], "auc"), 22) << Pad(NumOr(a["calibrated"], "auc"), 22)
        << Pad(best + " " + NumOr(a["best"], "auc"), 34) << NumOr(a[best], "canary_auc")
        << "\n";
  }

  out << "\ntraining\n";
  for (TrainMode mode : kModes) {
    out << Pad(ModeName(mode), 12);
    if (!m.contains("train") || !m["train"].contains(ModeName(mode))) {
      out << "(not run)\n";
      continue;
    }
    const json& t = m["train"][ModeName(mode)];
    out << CountOr(t, "steps") << " of " << CountOr(t, "planned_steps") << " steps, "
        << CountOr(t, "examples_seen") << " examples seen, final validation loss "
        << NumOr(t, "final_val_loss");
    if (mode == TrainMode::kDp) {
      out << "\n" << Pad("", 12) << "sigma " << NumOr(t, "noise_multiplier") << ", C "
          << NumOr(t, "clip_norm") << ", q " << NumOr(t, "q") << ", delta " << NumOr(t, "delta")
          << ": epsilon " << NumOr(t, "epsilon") << " at order " << NumOr(t, "epsilon_order")
          << "; epsilon at delta 1e-5: " << NumOr(t, "epsilon_at_delta_1e-5");
      if (t.value("budget_exhausted", false)) out << " (budget reached)";
    } else {
      out << " (non-private)";
    }
    out << "\n";
  }

  if (m.contains("accountant") && m["accountant"].contains("reference_setting")) {
    const json& r = m["accountant"]["reference_setting"];
    out << "\nreference DP setting: sigma " << NumOr(r, "noise_multiplier") << ", C "
        << NumOr(r, "clip_norm") << ", B " << NumOr(r, "lot_size") << ", "
        << r["interpretations"][0]["steps"].get<uint64_t>() << " steps\n";
    for (const json& row : r["interpretations"]) {
      const std::string name = row["interpretation"].get<std::string>();
      out << "  " << Pad(name, 28) << "epsilon " << Pad(Num(row["epsilon"].get<double>()), 22)
          << "order " << Num(row["order"].get<double>());
      if (name == r.value("closest", "")) {
        out << "  (closest to " << NumOr(r, "target_epsilon") << ")";
      }
      out << "\n";
    }
  }

  out << "\nmissing inputs\n";
  if (missing.empty()) out << "  none\n";
  for (const std::string& s : missing) out << "  - " << s << "\n";
  return out.str();
}

}  // namespace

std::vector<std::string> CmdReport(const fs::path& run_dir) {
  const RunLayout layout(run_dir);
  const json m = ReadManifest(layout.manifest());
  std::vector<std::string> missing;

  PlotSpec loss;
  loss.title = "Validation loss and privacy budget vs. examples seen";
  loss.x_label = "examples seen";
  loss.y_label = "validation loss";
  for (TrainMode mode : kModes) {
    const std::string name = ModeName(mode);
    if (fs::exists(layout.val_log(mode))) {
      PlotSeries s;
      s.label = name + " validation loss";
      s.color = ModeColor(mode);
      for (const ValRow& r : ReadValLog(layout.val_log(mode))) {
        s.points.emplace_back(static_cast<double>(r.examples_seen), r.val_loss);
      }
      loss.series.push_back(s);
    } else {
      missing.push_back(Relative(layout.val_log(mode), layout));
    }
  }
  if (fs::exists(layout.step_log(TrainMode::kDp))) {
    PlotSeries s;
    s.label = "dp epsilon";
    s.color = ModeColor(TrainMode::kDp);
    s.dashed = true;
    s.right_axis = true;
    s.points.emplace_back(0.0, 0.0);
    double seen = 0.0;
    for (const StepRecord& r : ReadStepLog(layout.step_log(TrainMode::kDp))) {
      seen += static_cast<double>(r.realized_batch);
      s.points.emplace_back(seen, r.epsilon);
    }
    loss.series.push_back(s);
    loss.y2_label = "epsilon";
  } else {
    missing.push_back(Relative(layout.step_log(TrainMode::kDp), layout));
    loss.notes.push_back("no DP step log: epsilon axis omitted");
  }

  PlotSpec roc;
  roc.title = "Membership inference ROC";
  roc.x_label = "false positive rate";
  roc.y_label = "true positive rate";
  roc.unit_square = true;
  for (TrainMode mode : kModes) {
    for (AttackStrategy strategy : kStrategies) {
      const fs::path path = layout.attack_dir(mode, strategy) / "roc.csv";
      if (!fs::exists(path)) {
        missing.push_back(Relative(path, layout));
        continue;
      }
      PlotSeries s;
      s.color = ModeColor(mode);
      s.dashed = strategy == AttackStrategy::kRawLoss;
      s.label = std::string(ModeName(mode)) + " " + StrategyName(strategy);
      const json* entry = nullptr;
      if (m.contains("attack") && m["attack"].contains(ModeName(mode))) {
        entry = &m["attack"][ModeName(mode)][StrategyName(strategy)];
      }
      if (entry != nullptr) s.label += " (AUC " + NumOr(*entry, "auc") + ")";
      for (const RocPoint& p : ReadRocCsv(path)) s.points.emplace_back(p.fpr, p.tpr);
      roc.series.push_back(s);
    }
  }
  if (roc.series.empty()) roc.notes.push_back("no attack outputs");
  for (const char* label : {"baseline", "dp"}) {
    if (!m.contains("metrics") || !m["metrics"].contains(label)) {
      missing.push_back(Relative(layout.eval_dir(label) / "metrics.csv", layout));
    }
  }

  const fs::path dir = layout.report_dir();
  WriteText(dir / "loss_epsilon.svg", RenderSvg(loss));
  WriteText(dir / "roc.svg", RenderSvg(roc));
  WriteText(dir / "summary.txt", RenderSummary(m, missing));
  return missing;
}

void CmdSweep(const ExperimentConfig& cfg) {
  cfg.ValidateOrThrow();
  if (cfg.sweep.ranks.empty() || cfg.sweep.epsilons.empty()) {
    throw ConfigError("sweep.ranks and sweep.epsilons must be non-empty");
  }
  const RunLayout root(cfg.out_dir);
  std::vector<ExperimentConfig> cells;
  for (int rank : cfg.sweep.ranks) {
    for (double eps : cfg.sweep.epsilons) {
      ExperimentConfig cell = cfg;
      cell.lora.rank = rank;
      cell.accountant.epsilon_max = eps;
      cell.dp.target_epsilon = eps;
      cell.out_dir = (root.root() / "sweep" / ("r" + std::to_string(rank) + "_eps" + Num(eps)))
                         .generic_string();
      cell.ValidateOrThrow();
      cells.push_back(cell);
    }
  }
  if (!fs::exists(root.manifest())) CmdPrepare(cfg);
  EnsureBaseModel(cfg);
  const json parent = ReadManifest(root.manifest());

  std::string csv =
      "rank,epsilon_max,noise_multiplier,steps,epsilon,auc_raw,auc_calibrated,chrf_pp,"
      "lm_score\n";
  json rows = json::array();
  for (const ExperimentConfig& cell : cells) {
    const RunLayout layout(cell.out_dir);
    fs::create_directories(layout.root());
    fs::copy(root.root() / "splits", layout.root() / "splits",
             fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    fs::create_directories(layout.base_checkpoint().parent_path());
    fs::copy_file(root.base_checkpoint(), layout.base_checkpoint(),
                  fs::copy_options::overwrite_existing);
    fs::copy_file(root.pretrain_log(), layout.pretrain_log(),
                  fs::copy_options::overwrite_existing);
    json manifest = parent;
    for (const char* key : {"train", "attack", "metrics", "sweep", "timestamps"}) {
      manifest.erase(key);
    }
    manifest["config"] = ToJson(cell);
    manifest["sweep_cell"] = {{"rank", cell.lora.rank},
                              {"epsilon_max", cell.accountant.epsilon_max}};
    WriteManifest(layout.manifest(), manifest);

    const std::string stage = "sweep " + layout.root().filename().string();
    json row = {{"rank", cell.lora.rank}, {"epsilon_max", cell.accountant.epsilon_max}};
    try {
      const TrainOutcome t = CmdTrain(cell, TrainMode::kDp);
      const json a = CmdAttack(cell, TrainMode::kDp);
      const json e = CmdEvaluate(cell, "dp");
      row["noise_multiplier"] = t.noise_multiplier;
      row["steps"] = t.steps;
      row["epsilon"] = t.epsilon;
      row["auc_raw"] = a["raw"]["auc"];
      row["auc_calibrated"] = a["calibrated"]["auc"];
      row["chrf_pp"] = e["chrf_pp"]["mean"];
      row["lm_score"] = e["lm_score"]["mean"];
      CmdReport(layout.root());
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kBudgetExhausted) throw;
      Log(stage, e.what());
      row["error"] = e.what();
    }
    rows.push_back(row);
    csv += std::to_string(cell.lora.rank) + "," + Num(cell.accountant.epsilon_max);
    for (const char* key : {"noise_multiplier", "steps", "epsilon", "auc_raw",
                            "auc_calibrated", "chrf_pp", "lm_score"}) {
      csv += ",";
      if (row.contains(key) && row[key].is_number()) csv += Num(row[key].get<double>());
    }
    csv += "\n";
  }
  WriteText(root.root() / "sweep" / "sweep.csv", csv);
  json manifest = ReadManifest(root.manifest());
  manifest["sweep"] = rows;
  WriteManifest(root.manifest(), Stamp(manifest, "sweep"));
}

}  // namespace dpfim
