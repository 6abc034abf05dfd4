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

#include "dpfim/accountant.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "dpfim/error.h"

namespace dpfim {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double LogAddExp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

// log(e^x - 1) for x > 0.
double LogExpm1(double x) {
  return x > 1.0 ? x + std::log1p(-std::exp(-x)) : std::log(std::expm1(x));
}

// log(1 + e^x).
double Log1pExp(double x) { return x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void CheckArgs(double q, double sigma, double alpha) {
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("sampling rate must lie in (0, 1]");
  if (!(sigma >= 0.0)) throw ConfigError("noise multiplier must be non-negative");
  if (!(alpha > 1.0)) throw ConfigError("RDP order must exceed 1");
}

}  // namespace

void PrivacyBudget::Validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
}

const std::vector<double>& DefaultRdpOrders() {
  static const std::vector<double> orders = [] {
    std::vector<double> v = {1.25, 1.5, 1.75};
    for (int k = 4; k <= 21; ++k) v.push_back(k / 2.0);  // 2, 2.5, ..., 10.5
    for (int a = 11; a <= 64; ++a) v.push_back(a);
    return v;
  }();
  return orders;
}

// The order-alpha moment of the privacy loss expands binomially:
//   A = sum_k C(a,k) (1-q)^(a-k) q^k exp((k^2-k) / (2 sigma^2)).
// Since the binomial weights sum to one, A - 1 keeps only k >= 2 with
// exp(.) replaced by expm1(.), which stays accurate when A is close to 1.
double RdpIntegerOrder(double q, double sigma, int alpha) {
  CheckArgs(q, sigma, alpha);
  if (sigma == 0.0) return kInf;
  const double two_var = 2.0 * sigma * sigma;
  if (q == 1.0) return alpha / two_var;

  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  double log_excess = kNegInf;  // log(A - 1)
  for (int k = 2; k <= alpha; ++k) {
    const double log_binom =
        std::lgamma(alpha + 1.0) - std::lgamma(k + 1.0) - std::lgamma(alpha - k + 1.0);
    const double c = static_cast<double>(k) * (k - 1) / two_var;
    log_excess = LogAddExp(log_excess,
                           log_binom + (alpha - k) * log_1mq + k * log_q + LogExpm1(c));
  }
  return Log1pExp(log_excess) / (alpha - 1);
}

// A - 1 = integral of mu0(x) [g(x)^alpha - 1] dx with mu0 = N(0, sigma^2) and
// g(x) = 1 - q + q exp((2x - 1) / (2 sigma^2)), by the trapezoidal rule on a
// uniform grid. The integrand is analytic in a strip of half-width
// pi sigma^2 around the real axis, so a step of sigma^2 / 10 puts the
// discretization error far below double precision.
double RdpFractionalOrder(double q, double sigma, double alpha) {
  CheckArgs(q, sigma, alpha);
  if (sigma == 0.0) return kInf;
  const double var = sigma * sigma;
  if (q == 1.0) return alpha / (2.0 * var);

  const double lo = -12.0 * sigma - 1.0;
  const double hi = alpha + 12.0 * sigma + 1.0;
  const double h = std::min(sigma / 20.0, var / 10.0);
  const auto n = static_cast<long>(std::ceil((hi - lo) / h));
  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * var);
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);

  // Terms sign * exp(log_mag); summed relative to the running maximum.
  std::vector<double> log_mag;
  std::vector<int8_t> sign;
  log_mag.reserve(n + 1);
  sign.reserve(n + 1);
  double max_log = kNegInf;
  for (long i = 0; i <= n; ++i) {
    const double x = lo + static_cast<double>(i) * h;
    const double z = (2.0 * x - 1.0) / (2.0 * var);
    const double log_g = LogAddExp(log_1mq, log_q + z);
    const double w = alpha * log_g;  // log g^alpha
    if (w == 0.0) continue;
    const double log_abs = w > 0.0 ? LogExpm1(w) : std::log(-std::expm1(w));
    const double weight = (i == 0 || i == n) ? std::log(0.5) : 0.0;
    const double lm = log_norm - x * x / (2.0 * var) + log_abs + weight;
    log_mag.push_back(lm);
    sign.push_back(w > 0.0 ? 1 : -1);
    max_log = std::max(max_log, lm);
  }
  if (max_log == kNegInf) return 0.0;
  double acc = 0.0;
  for (size_t i = 0; i < log_mag.size(); ++i) acc += sign[i] * std::exp(log_mag[i] - max_log);
  if (!(acc > 0.0)) return 0.0;
  const double log_excess = max_log + std::log(acc) + std::log(h);
  return Log1pExp(log_excess) / (alpha - 1.0);
}

double RdpSingleStep(double q, double sigma, double alpha) {
  if (alpha == std::floor(alpha) && alpha >= 2.0) {
    return RdpIntegerOrder(q, sigma, static_cast<int>(alpha));
  }
  return RdpFractionalOrder(q, sigma, alpha);
}

AccountantState MakeAccountant(double q, double sigma, const std::vector<double>& orders) {
  if (orders.empty()) throw ConfigError("accountant needs at least one RDP order");
  AccountantState state;
  state.orders = orders;
  state.q = q;
  state.sigma = sigma;
  for (double a : orders) state.single_step.push_back(RdpSingleStep(q, sigma, a));
  state.rdp.assign(orders.size(), 0.0);
  return state;
}

AccountantState Accumulate(AccountantState state, uint64_t n_steps) {
  state.steps += n_steps;
  const double t = static_cast<double>(state.steps);
  for (size_t i = 0; i < state.rdp.size(); ++i) {
    // inf * 0 would be NaN; zero steps spend nothing.
    state.rdp[i] = state.steps == 0 ? 0.0 : t * state.single_step[i];
  }
  return state;
}

EpsilonResult Epsilon(const AccountantState& state, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  EpsilonResult best{kInf, 0.0, false};
  const double log_inv_delta = std::log(1.0 / delta);
  for (size_t i = 0; i < state.orders.size(); ++i) {
    if (!std::isfinite(state.rdp[i])) continue;
    const double eps = state.rdp[i] + log_inv_delta / (state.orders[i] - 1.0);
    if (!best.finite || eps < best.epsilon) best = {eps, state.orders[i], true};
  }
  return best;
}

uint64_t StepsUntilBudget(double q, double sigma, double delta, double epsilon_max,
                          const std::vector<double>& orders) {
  const AccountantState fresh = MakeAccountant(q, sigma, orders);
  auto fits = [&](uint64_t t) {
    const EpsilonResult r = Epsilon(Accumulate(fresh, t), delta);
    return r.finite && r.epsilon <= epsilon_max;
  };
  if (!fits(1)) return 0;
  constexpr uint64_t kCap = uint64_t{1} << 50;
  uint64_t lo = 1;  // fits
  uint64_t hi = 2;
  while (fits(hi)) {
    lo = hi;
    if (hi >= kCap) return hi;
    hi *= 2;
  }
  while (hi - lo > 1) {
    const uint64_t mid = lo + (hi - lo) / 2;
    if (fits(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

double CalibrateNoiseMultiplier(double q, uint64_t steps, double delta,
                                double epsilon_target, const std::vector<double>& orders) {
  auto eps_at = [&](double sigma) {
    return Epsilon(Accumulate(MakeAccountant(q, sigma, orders), steps), delta).epsilon;
  };
  double lo = 1e-2;
  double hi = 1.0;
  while (eps_at(hi) > epsilon_target) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e6) throw ConfigError("no noise multiplier reaches the target epsilon");
  }
  if (eps_at(lo) <= epsilon_target) return lo;
  while ((hi - lo) > 1e-6 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (eps_at(mid) > epsilon_target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

std::string EpsilonReport(const AccountantState& state, double delta) {
  std::ostringstream out;
  out << "q=" << std::setprecision(10) << state.q << " sigma=" << state.sigma
      << " steps=" << state.steps << " delta=" << delta << "\n";
  out << std::setw(8) << "alpha" << std::setw(22) << "rdp" << std::setw(22) << "eps_at_alpha"
      << "\n";
  const double log_inv_delta = std::log(1.0 / delta);
  for (size_t i = 0; i < state.orders.size(); ++i) {
    const double eps = state.rdp[i] + log_inv_delta / (state.orders[i] - 1.0);
    out << std::setw(8) << state.orders[i] << std::setw(22) << state.rdp[i] << std::setw(22)
        << eps << "\n";
  }
  const EpsilonResult best = Epsilon(state, delta);
  if (best.finite) {
    out << "epsilon=" << best.epsilon << " at alpha=" << best.order << "\n";
  } else {
    out << "epsilon=inf (no finite order)\n";
  }
  return out.str();
}

nlohmann::json ToJson(const AccountantState& state, double delta) {
  const EpsilonResult best = Epsilon(state, delta);
  nlohmann::json j;
  j["q"] = state.q;
  j["sigma"] = state.sigma;
  j["steps"] = state.steps;
  j["delta"] = delta;
  j["orders"] = state.orders;
  j["rdp"] = nlohmann::json::array();
  for (double r : state.rdp) {
    j["rdp"].push_back(std::isfinite(r) ? nlohmann::json(r) : nlohmann::json("inf"));
  }
  if (best.finite) {
    j["epsilon"] = best.epsilon;
    j["best_order"] = best.order;
  } else {
    j["epsilon"] = "inf";
  }
  return j;
}

}  // namespace dpfim
