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

#include "dpfim/config.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dpfim/error.h"

namespace dpfim {
namespace {

std::string Trim(const std::string& s) {
  const size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = Trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string FormatNumber(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double ParseNumber(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("not a number: " + s);
  return v;
}

long long ParseInteger(const std::string& s) {
  size_t used = 0;
  const long long v = std::stoll(s, &used);
  if (used != s.size()) throw std::invalid_argument("not an integer: " + s);
  return v;
}

template <typename T>
std::string JoinList(const std::vector<T>& items) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ", ";
    if constexpr (std::is_same_v<T, std::string>) {
      out += items[i];
    } else {
      out += FormatNumber(static_cast<double>(items[i]));
    }
  }
  return out;
}

struct Binding {
  std::string section;
  std::string key;
  std::string doc;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

class Registry {
 public:
  void Double(const std::string& section, const std::string& key, double& ref,
              const std::string& doc) {
    Add(section, key, doc, [&ref](const std::string& v) { ref = ParseNumber(v); },
        [&ref] { return FormatNumber(ref); });
  }
  template <typename Int>
  void Integer(const std::string& section, const std::string& key, Int& ref,
               const std::string& doc) {
    Add(section, key, doc,
        [&ref](const std::string& v) {
          const long long x = ParseInteger(v);
          if (std::is_unsigned_v<Int> && x < 0) {
            throw std::invalid_argument("must be non-negative");
          }
          ref = static_cast<Int>(x);
        },
        [&ref] { return std::to_string(ref); });
  }
  void String(const std::string& section, const std::string& key, std::string& ref,
              const std::string& doc) {
    Add(section, key, doc, [&ref](const std::string& v) { ref = v; }, [&ref] { return ref; });
  }
  void StringList(const std::string& section, const std::string& key,
                  std::vector<std::string>& ref, const std::string& doc) {
    Add(section, key, doc, [&ref](const std::string& v) { ref = SplitList(v); },
        [&ref] { return JoinList(ref); });
  }
  void IntList(const std::string& section, const std::string& key, std::vector<int>& ref,
               const std::string& doc) {
    Add(section, key, doc,
        [&ref](const std::string& v) {
          ref.clear();
          for (const std::string& item : SplitList(v)) {
            ref.push_back(static_cast<int>(ParseInteger(item)));
          }
        },
        [&ref] { return JoinList(ref); });
  }
  void DoubleList(const std::string& section, const std::string& key, std::vector<double>& ref,
                  const std::string& doc) {
    Add(section, key, doc,
        [&ref](const std::string& v) {
          ref.clear();
          for (const std::string& item : SplitList(v)) ref.push_back(ParseNumber(item));
        },
        [&ref] { return JoinList(ref); });
  }
  void Thresholds(const std::string& section, const std::string& key, LmThresholds& ref,
                  const std::string& doc) {
    Add(section, key, doc,
        [&ref](const std::string& v) {
          ref.clear();
          for (const std::string& item : SplitList(v)) {
            const size_t colon = item.find(':');
            if (colon == std::string::npos) throw std::invalid_argument("expected ratio:score");
            ref.emplace_back(ParseNumber(Trim(item.substr(0, colon))),
                             ParseNumber(Trim(item.substr(colon + 1))));
          }
        },
        [&ref] {
          std::string out;
          for (size_t i = 0; i < ref.size(); ++i) {
            if (i > 0) out += ", ";
            out += FormatNumber(ref[i].first) + ":" + FormatNumber(ref[i].second);
          }
          return out;
        });
  }

  const std::vector<Binding>& bindings() const { return bindings_; }

  const Binding* Find(const std::string& section, const std::string& key) const {
    for (const Binding& b : bindings_) {
      if (b.section == section && b.key == key) return &b;
    }
    return nullptr;
  }

  bool HasSection(const std::string& section) const {
    for (const Binding& b : bindings_) {
      if (b.section == section) return true;
    }
    return false;
  }

 private:
  void Add(const std::string& section, const std::string& key, const std::string& doc,
           std::function<void(const std::string&)> set, std::function<std::string()> get) {
    bindings_.push_back({section, key, doc, std::move(set), std::move(get)});
  }

  std::vector<Binding> bindings_;
};

void AdamW(Registry& r, const std::string& section, AdamWConfig& a) {
  r.Double(section, "learning_rate", a.learning_rate, "AdamW step size");
  r.Double(section, "beta1", a.beta1, "first-moment decay");
  r.Double(section, "beta2", a.beta2, "second-moment decay");
  r.Double(section, "eps", a.eps, "denominator guard");
  r.Double(section, "weight_decay", a.weight_decay, "decoupled weight decay");
}

Registry MakeRegistry(ExperimentConfig& c) {
  Registry r;
  r.Integer("run", "seed", c.seed, "master seed; every stage derives a named substream");
  r.String("run", "out", c.out_dir, "run directory for all artifacts");

  r.String("corpus", "root", c.corpus.root, "directory of source files");
  r.StringList("corpus", "extensions", c.corpus.extensions, "file extensions to ingest");
  r.Integer("corpus", "max_bytes", c.corpus.max_bytes, "per-file truncation");
  r.Integer("corpus", "min_middle", c.corpus.fim.min_middle, "minimum FIM middle length");
  r.Integer("corpus", "max_len", c.corpus.fim.max_len,
            "FIM sequence length cap incl. sentinels (0: model.context_len)");
  r.Double("corpus", "member_fraction", c.corpus.fractions.member, "share of members");
  r.Double("corpus", "nonmember_fraction", c.corpus.fractions.nonmember,
           "share of held-out non-members");
  r.Double("corpus", "eval_fraction", c.corpus.fractions.eval,
           "share of the utility split; the rest is the public pre-training pool");
  r.Double("corpus", "canary_fraction", c.corpus.canary_fraction,
           "share of members repeated as canaries");
  r.Integer("corpus", "canary_copies", c.corpus.canary_copies,
            "total copies of each canary (1 disables)");

  r.Integer("model", "d_model", c.model.d_model, "embedding width");
  r.Integer("model", "n_layers", c.model.n_layers, "transformer blocks");
  r.Integer("model", "n_heads", c.model.n_heads, "attention heads");
  r.Integer("model", "context_len", c.model.context_len, "maximum sequence length");
  r.Integer("model", "ffn_mult", c.model.ffn_mult, "MLP width multiplier");

  r.Integer("lora", "rank", c.lora.rank, "adapter rank r");
  r.Double("lora", "alpha", c.lora.alpha, "adapter scale numerator; scaling = alpha / r");

  r.Integer("pretrain", "epochs", c.pretrain.epochs, "base-model epochs on the public pool");
  r.Integer("pretrain", "batch_size", c.pretrain.batch_size, "minibatch size");
  AdamW(r, "pretrain", c.pretrain.adamw);

  r.Integer("baseline", "epochs", c.baseline.epochs, "non-private fine-tuning epochs");
  r.Integer("baseline", "batch_size", c.baseline.batch_size, "minibatch size");
  r.Integer("baseline", "max_steps", c.baseline.max_steps, "step cap (0: epochs)");
  AdamW(r, "baseline", c.baseline.adamw);

  r.Double("dp", "clip_norm", c.dp.dp.clip_norm, "per-example L2 clipping bound C");
  r.Double("dp", "noise_multiplier", c.dp.dp.noise_multiplier, "noise std in units of C");
  r.Double("dp", "lot_size", c.dp.dp.lot_size, "expected Poisson lot size B");
  r.Integer("dp", "epochs", c.dp.epochs, "passes over the members");
  r.Integer("dp", "max_steps", c.dp.max_steps, "step cap (0: epochs)");
  r.Double("dp", "target_epsilon", c.dp.target_epsilon,
           "if > 0, calibrate noise_multiplier to end the run at this epsilon");
  AdamW(r, "dp", c.dp.dp.adamw);

  r.Double("accountant", "delta", c.accountant.delta, "target delta (0: 1 / members)");
  r.Double("accountant", "epsilon_max", c.accountant.epsilon_max,
           "stop DP training before epsilon exceeds this");

  r.Integer("metrics", "max_new", c.metrics.max_new, "generation cap per completion");
  r.Integer("metrics", "chrf_char_order", c.metrics.chrf.char_order, "ChrF++ character order");
  r.Integer("metrics", "chrf_word_order", c.metrics.chrf.word_order, "ChrF++ word order");
  r.Double("metrics", "chrf_beta", c.metrics.chrf.beta, "ChrF++ recall weight");
  r.Thresholds("metrics", "lm_thresholds", c.metrics.lm_thresholds,
               "longest-match ratio:score table, checked in order");
  r.Integer("metrics", "val_every", c.metrics.val_every,
            "validation-loss cadence in steps (0: once per epoch)");
  r.Integer("metrics", "val_examples", c.metrics.val_examples,
            "eval examples used for the validation loss");

  r.IntList("sweep", "ranks", c.sweep.ranks, "adapter ranks to sweep");
  r.DoubleList("sweep", "epsilons", c.sweep.epsilons, "epsilon_max values to sweep");
  return r;
}

}  // namespace

FimOptions ExperimentConfig::fim_options() const {
  FimOptions o = corpus.fim;
  if (o.max_len == 0) o.max_len = model.context_len;
  return o;
}

std::vector<std::string> ExperimentConfig::Validate() const {
  std::vector<std::string> errors;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  auto capture = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      errors.push_back(e.what());
    }
  };
  const SplitFractions& f = corpus.fractions;
  check(f.member > 0 && f.nonmember > 0 && f.eval > 0,
        "corpus fractions must all be positive");
  check(f.member + f.nonmember + f.eval <= 1.0 + 1e-12,
        "corpus fractions sum to " + FormatNumber(f.member + f.nonmember + f.eval) + " > 1");
  check(corpus.canary_fraction >= 0 && corpus.canary_fraction <= 1,
        "corpus.canary_fraction must lie in [0, 1]");
  check(corpus.canary_copies >= 1, "corpus.canary_copies must be >= 1");
  check(corpus.max_bytes > 0, "corpus.max_bytes must be positive");
  check(corpus.fim.min_middle >= 1, "corpus.min_middle must be >= 1");
  check(corpus.fim.max_len == 0 || corpus.fim.max_len <= model.context_len,
        "corpus.max_len must not exceed model.context_len");
  capture([&] { model.Validate(); });
  capture([&] { lora.Validate(model); });
  check(pretrain.epochs >= 0, "pretrain.epochs must be >= 0");
  check(pretrain.batch_size > 0, "pretrain.batch_size must be positive");
  capture([&] { pretrain.adamw.Validate(); });
  check(baseline.epochs >= 0, "baseline.epochs must be >= 0");
  check(baseline.batch_size > 0, "baseline.batch_size must be positive");
  capture([&] { baseline.adamw.Validate(); });
  capture([&] { dp.dp.Validate(); });
  check(dp.epochs >= 0, "dp.epochs must be >= 0");
  check(dp.target_epsilon >= 0, "dp.target_epsilon must be >= 0");
  check(accountant.delta >= 0 && accountant.delta < 1, "accountant.delta must lie in [0, 1)");
  check(accountant.epsilon_max > 0, "accountant.epsilon_max must be positive");
  check(metrics.max_new >= 0, "metrics.max_new must be >= 0");
  check(metrics.chrf.char_order >= 1 && metrics.chrf.word_order >= 0,
        "ChrF++ orders must be positive");
  check(metrics.chrf.beta > 0, "metrics.chrf_beta must be positive");
  for (double e : sweep.epsilons) check(e > 0, "sweep epsilons must be positive");
  return errors;
}

void ExperimentConfig::ValidateOrThrow() const {
  const std::vector<std::string> errors = Validate();
  if (errors.empty()) return;
  std::string msg = "invalid configuration:";
  for (const std::string& e : errors) msg += "\n  - " + e;
  throw ConfigError(msg);
}

ExperimentConfig ParseConfig(const std::string& text) {
  ExperimentConfig cfg;
  const Registry registry = MakeRegistry(cfg);
  std::vector<std::string> errors;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const size_t hash = raw.find('#');
    const std::string line = Trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') {
        errors.push_back(where + "malformed section header");
        continue;
      }
      section = Trim(line.substr(1, line.size() - 2));
      if (!registry.HasSection(section)) errors.push_back(where + "unknown section [" + section + "]");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + "expected key = value");
      continue;
    }
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    const Binding* b = registry.Find(section, key);
    if (b == nullptr) {
      errors.push_back(where + "unknown key '" + key + "' in [" + section + "]");
      continue;
    }
    try {
      b->set(value);
    } catch (const std::exception& e) {
      errors.push_back(where + section + "." + key + ": bad value '" + value + "'");
    }
  }
  for (const std::string& e : cfg.Validate()) errors.push_back(e);
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const std::string& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

ExperimentConfig LoadConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseConfig(ss.str());
}

std::string FormatConfig(const ExperimentConfig& cfg) {
  ExperimentConfig copy = cfg;
  const Registry registry = MakeRegistry(copy);
  std::ostringstream out;
  std::string section;
  for (const Binding& b : registry.bindings()) {
    if (b.section != section) {
      if (!section.empty()) out << "\n";
      section = b.section;
      out << "[" << section << "]\n";
    }
    out << "# " << b.doc << "\n" << b.key << " = " << b.get() << "\n";
  }
  return out.str();
}

nlohmann::json ToJson(const ExperimentConfig& cfg) {
  ExperimentConfig copy = cfg;
  const Registry registry = MakeRegistry(copy);
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const Binding& b : registry.bindings()) j[b.section][b.key] = b.get();
  return nlohmann::json::parse(j.dump());
}

}  // namespace dpfim
