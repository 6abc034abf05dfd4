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

#include "dpfim/dp_optimizer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "dpfim/error.h"

namespace dpfim {
namespace {

constexpr double kClipSlack = 1e-9;

std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double ParseDouble(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
  return std::stod(s);
}

}  // namespace

void AdamWConfig::Validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("AdamW betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("AdamW eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

double DpConfig::sampling_rate(size_t n_members) const {
  if (n_members == 0) throw ConfigError("member set is empty");
  return lot_size / static_cast<double>(n_members);
}

void DpConfig::Validate() const {
  if (!(clip_norm > 0.0)) throw ConfigError("dp.clip_norm must be positive");
  if (!(noise_multiplier >= 0.0)) throw ConfigError("dp.noise_multiplier must be >= 0");
  if (!(lot_size > 0.0)) throw ConfigError("dp.lot_size must be positive");
  adamw.Validate();
}

OptimizerState MakeOptimizerState(size_t dim) {
  return OptimizerState{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0), 0};
}

double L2Norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<double> Clip(std::span<const double> g, double clip_norm) {
  std::vector<double> out(g.begin(), g.end());
  const double norm = L2Norm(g);
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (double& x : out) x *= scale;
  }
  return out;
}

std::vector<double> NoisyAggregate(const std::vector<std::vector<double>>& clipped,
                                   size_t dim, double clip_norm, double noise_multiplier,
                                   double lot_size, Rng& rng) {
  std::vector<double> sum(dim, 0.0);
  for (size_t i = 0; i < clipped.size(); ++i) {
    const std::vector<double>& g = clipped[i];
    if (g.size() != dim) throw NumericError("gradient dimension mismatch in aggregation");
    const double norm = L2Norm(g);
    if (!(norm <= clip_norm + kClipSlack)) {
      throw NumericError("unclipped gradient entered aggregation (norm " + FormatDouble(norm) +
                         " > C " + FormatDouble(clip_norm) + ")");
    }
    for (size_t k = 0; k < dim; ++k) sum[k] += g[k];
  }
  if (noise_multiplier > 0.0) {
    std::normal_distribution<double> noise(0.0, noise_multiplier * clip_norm);
    for (size_t k = 0; k < dim; ++k) sum[k] += noise(rng);
  }
  for (double& x : sum) x /= lot_size;
  return sum;
}

Batch PoissonSample(std::span<const FimExample> members, double q, Rng& rng) {
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("sampling rate must lie in (0, 1]");
  Batch batch;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (size_t i = 0; i < members.size(); ++i) {
    // Always consume one draw so the stream position does not depend on q.
    const double draw = u(rng);
    if (q == 1.0 || draw < q) {
      batch.examples.push_back(&members[i]);
      batch.indices.push_back(i);
    }
  }
  return batch;
}

void AdamWStep(OptimizerState& state, std::vector<double>& weights,
               std::span<const double> grad, const AdamWConfig& cfg) {
  if (grad.size() != weights.size() || state.m.size() != weights.size() ||
      state.v.size() != weights.size()) {
    throw NumericError("AdamW dimension mismatch");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (size_t i = 0; i < weights.size(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    double w = weights[i];
    if (cfg.weight_decay != 0.0) w -= cfg.learning_rate * cfg.weight_decay * w;
    w -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
    if (!std::isfinite(w)) {
      throw NumericError("non-finite AdamW update at step " + std::to_string(state.step));
    }
    weights[i] = w;
  }
}

uint64_t DpStepsPerEpoch(size_t n_members, const DpConfig& cfg) {
  const double q = cfg.sampling_rate(n_members);
  return std::max<uint64_t>(1, static_cast<uint64_t>(std::floor(1.0 / q + 1e-9)));
}

StepRecord DpStep(ParameterSet& params, OptimizerState& opt, AccountantState& accountant,
                  std::span<const FimExample> members, const DpConfig& cfg, double delta,
                  uint64_t seed) {
  const double q = cfg.sampling_rate(members.size());
  if (q > 1.0) throw ConfigError("dp.lot_size exceeds the member count");
  const uint64_t t = opt.step;
  Rng sampling = Substream(seed, "sampling", t);
  Rng noise = Substream(seed, "noise", t);

  StepRecord rec;
  rec.step = t + 1;
  const Batch batch = PoissonSample(members, q, sampling);
  rec.realized_batch = batch.size();

  std::vector<double> losses;
  std::vector<std::vector<double>> grads = PerExampleGradients(params, batch, &losses);
  size_t n_clipped = 0;
  double norm_sum = 0.0;
  for (std::vector<double>& g : grads) {
    const double norm = L2Norm(g);
    norm_sum += norm;
    if (norm > cfg.clip_norm) ++n_clipped;
    g = Clip(g, cfg.clip_norm);
    rec.max_postclip_norm = std::max(rec.max_postclip_norm, L2Norm(g));
  }
  if (!grads.empty()) {
    rec.mean_preclip_norm = norm_sum / static_cast<double>(grads.size());
    rec.frac_clipped = static_cast<double>(n_clipped) / static_cast<double>(grads.size());
    rec.loss = std::accumulate(losses.begin(), losses.end(), 0.0) /
               static_cast<double>(losses.size());
  } else {
    rec.loss = std::numeric_limits<double>::quiet_NaN();
  }

  const std::vector<double> update = NoisyAggregate(
      grads, params.trainable_dim(), cfg.clip_norm, cfg.noise_multiplier, cfg.lot_size, noise);
  AdamWStep(opt, params.adapters, update, cfg.adamw);
  accountant = Accumulate(std::move(accountant), 1);
  rec.epsilon = Epsilon(accountant, delta).epsilon;
  return rec;
}

DpEpochResult DpTrainEpoch(ParameterSet& params, OptimizerState& opt,
                           AccountantState& accountant, std::span<const FimExample> members,
                           const DpConfig& cfg, double delta, double epsilon_max,
                           uint64_t seed, uint64_t max_steps) {
  cfg.Validate();
  DpEpochResult result;
  uint64_t steps = DpStepsPerEpoch(members.size(), cfg);
  if (max_steps > 0) steps = std::min(steps, max_steps);
  for (uint64_t i = 0; i < steps; ++i) {
    const EpsilonResult next = Epsilon(Accumulate(accountant, 1), delta);
    if (!(next.epsilon <= epsilon_max)) {
      result.budget_exhausted = true;
      break;
    }
    result.log.push_back(DpStep(params, opt, accountant, members, cfg, delta, seed));
  }
  return result;
}

uint64_t NonPrivateStepsPerEpoch(size_t n_examples, size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  return (n_examples + batch_size - 1) / batch_size;
}

StepRecord NonPrivateStep(ParameterSet& params, OptimizerState& opt,
                          std::span<const FimExample> examples, size_t batch_size,
                          const AdamWConfig& cfg, TrainTarget target, uint64_t seed) {
  if (examples.empty()) throw ConfigError("training set is empty");
  const uint64_t per_epoch = NonPrivateStepsPerEpoch(examples.size(), batch_size);
  const uint64_t t = opt.step;
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng shuffle = Substream(seed, "shuffle", t / per_epoch);
  std::shuffle(order.begin(), order.end(), shuffle);
  const size_t begin = static_cast<size_t>(t % per_epoch) * batch_size;
  const size_t end = std::min(begin + batch_size, examples.size());
  std::vector<size_t> idx(order.begin() + begin, order.begin() + end);
  std::sort(idx.begin(), idx.end());

  const bool base = target == TrainTarget::kBase;
  std::vector<double>& weights = base ? params.base : params.adapters;
  std::vector<double> sum(weights.size(), 0.0);
  StepRecord rec;
  rec.step = t + 1;
  rec.realized_batch = idx.size();
  double loss_sum = 0.0;
  double norm_sum = 0.0;
  Gradients g;
  for (size_t i : idx) {
    loss_sum += ExampleLossAndGradient(params, examples[i], base, g);
    const std::vector<double>& gi = base ? g.base : g.adapters;
    norm_sum += L2Norm(gi);
    for (size_t k = 0; k < sum.size(); ++k) sum[k] += gi[k];
  }
  const double n = static_cast<double>(idx.size());
  for (double& x : sum) x /= n;
  rec.loss = loss_sum / n;
  rec.mean_preclip_norm = norm_sum / n;
  rec.max_postclip_norm = std::numeric_limits<double>::quiet_NaN();
  AdamWStep(opt, weights, sum, cfg);
  return rec;
}

void WriteStepLog(const std::filesystem::path& path, const std::vector<StepRecord>& log,
                  bool append) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const bool header = !append || !std::filesystem::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw ConfigError("cannot write step log " + path.string());
  if (header) out << "step,realized_batch,mean_preclip_norm,frac_clipped,loss,epsilon\n";
  for (const StepRecord& r : log) {
    out << r.step << ',' << r.realized_batch << ',' << FormatDouble(r.mean_preclip_norm) << ','
        << FormatDouble(r.frac_clipped) << ',' << FormatDouble(r.loss) << ','
        << FormatDouble(r.epsilon) << '\n';
  }
}

std::vector<StepRecord> ReadStepLog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("missing step log: " + path.string());
  std::vector<StepRecord> log;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ConfigError("malformed step log row in " + path.string());
    StepRecord r;
    r.step = std::stoull(cells[0]);
    r.realized_batch = std::stoull(cells[1]);
    r.mean_preclip_norm = ParseDouble(cells[2]);
    r.frac_clipped = ParseDouble(cells[3]);
    r.loss = ParseDouble(cells[4]);
    r.epsilon = ParseDouble(cells[5]);
    log.push_back(r);
  }
  return log;
}

}  // namespace dpfim
