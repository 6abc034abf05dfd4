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

// Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism and
// conversion to an (epsilon, delta) guarantee.

#ifndef DPFIM_ACCOUNTANT_H_
#define DPFIM_ACCOUNTANT_H_

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dpfim {

struct PrivacyBudget {
  double epsilon = 0.0;
  double delta = 0.0;

  void Validate() const;
};

// 1.25, 1.5, 1.75, every half-integer from 2 to 10.5, every integer up to 64.
const std::vector<double>& DefaultRdpOrders();

// Per-step RDP of the subsampled Gaussian at order `alpha`. Integer orders
// use the binomial closed form; other orders integrate the divergence
// numerically. Returns +infinity when sigma == 0.
double RdpSingleStep(double q, double sigma, double alpha);

double RdpIntegerOrder(double q, double sigma, int alpha);
double RdpFractionalOrder(double q, double sigma, double alpha);

struct AccountantState {
  std::vector<double> orders;
  std::vector<double> single_step;  // per-order RDP of one step
  std::vector<double> rdp;          // cumulative, = steps * single_step
  double q = 0.0;
  double sigma = 0.0;
  uint64_t steps = 0;
};

AccountantState MakeAccountant(double q, double sigma,
                               const std::vector<double>& orders = DefaultRdpOrders());

// Adds n_steps compositions. Cumulative RDP is recomputed as
// steps * single_step, so splitting a run into pieces never changes it.
AccountantState Accumulate(AccountantState state, uint64_t n_steps);

struct EpsilonResult {
  double epsilon = 0.0;
  double order = 0.0;
  // False when every order carries infinite RDP ("no guarantee").
  bool finite = false;
};

// epsilon = min_alpha rdp(alpha) + ln(1/delta) / (alpha - 1).
EpsilonResult Epsilon(const AccountantState& state, double delta);

// Largest T with Epsilon(T steps) <= epsilon_max; 0 when one step is
// already too much.
uint64_t StepsUntilBudget(double q, double sigma, double delta, double epsilon_max,
                          const std::vector<double>& orders = DefaultRdpOrders());

// Smallest noise multiplier (to ~1e-6 relative) that keeps `steps` steps
// within epsilon_target.
double CalibrateNoiseMultiplier(double q, uint64_t steps, double delta,
                                double epsilon_target,
                                const std::vector<double>& orders = DefaultRdpOrders());

// Table of (alpha, rdp, epsilon at alpha) plus the minimizing pair.
std::string EpsilonReport(const AccountantState& state, double delta);

nlohmann::json ToJson(const AccountantState& state, double delta);

}  // namespace dpfim

#endif  // DPFIM_ACCOUNTANT_H_
