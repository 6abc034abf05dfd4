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

#include <cmath>
#include <limits>
#include <vector>

#include "dpfim/error.h"
#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "oracles.h"

namespace dpfim {
namespace {

using ::testing::DoubleNear;

double RelErr(double a, double b) { return std::fabs(a - b) / std::fabs(b); }

TEST(RdpTest, UnsubsampledGaussianIdentity) {
  for (double sigma : {0.5, 1.0, 2.0}) {
    for (int alpha = 2; alpha <= 16; ++alpha) {
      const double expected = alpha / (2.0 * sigma * sigma);
      EXPECT_LE(RelErr(RdpIntegerOrder(1.0, sigma, alpha), expected), 1e-12)
          << "sigma=" << sigma << " alpha=" << alpha;
    }
  }
}

TEST(RdpTest, UnsubsampledIdentityAtFractionalOrders) {
  for (double alpha : {1.25, 1.5, 2.5, 10.5}) {
    EXPECT_LE(RelErr(RdpSingleStep(1.0, 1.0, alpha), alpha / 2.0), 1e-12);
  }
}

TEST(RdpTest, VanishesWithSamplingRate) {
  EXPECT_LT(RdpIntegerOrder(1e-6, 1.0, 2), 1e-9);
  double prev = 0.0;
  for (double q : {1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0}) {
    const double r = RdpIntegerOrder(q, 1.0, 4);
    EXPECT_GT(r, prev);
    prev = r;
  }
}

TEST(RdpTest, QuadratureOracleReproducesUnsubsampledCase) {
  for (double sigma : {0.5, 1.0, 4.0}) {
    for (double alpha : {1.5, 2.0, 8.0}) {
      EXPECT_LE(RelErr(testing::RdpQuadrature(1.0, sigma, alpha), alpha / (2 * sigma * sigma)),
                1e-9)
          << "sigma=" << sigma << " alpha=" << alpha;
    }
  }
}

TEST(RdpTest, IntegerOrdersMatchQuadrature) {
  for (double q : {1e-4, 1e-3, 1e-2, 0.1}) {
    for (double sigma : {0.5, 1.0, 2.0, 4.0}) {
      for (int alpha : {2, 3, 5, 8}) {
        const double oracle = testing::RdpQuadrature(q, sigma, alpha);
        EXPECT_LE(RelErr(RdpIntegerOrder(q, sigma, alpha), oracle), 1e-6)
            << "q=" << q << " sigma=" << sigma << " alpha=" << alpha;
      }
    }
  }
}

TEST(RdpTest, SingleSamplingRateMatchesQuadrature) {
  EXPECT_LE(RelErr(RdpIntegerOrder(0.01, 1.0, 2), testing::RdpQuadrature(0.01, 1.0, 2)), 1e-6);
}

TEST(RdpTest, FractionalOrdersMatchQuadrature) {
  for (double q : {1e-3, 0.01, 0.1}) {
    for (double sigma : {0.7, 1.0, 2.0}) {
      for (double alpha : {1.25, 1.5, 1.75, 2.5, 5.5, 10.5}) {
        const double oracle = testing::RdpQuadrature(q, sigma, alpha);
        EXPECT_LE(RelErr(RdpFractionalOrder(q, sigma, alpha), oracle), 1e-6)
            << "q=" << q << " sigma=" << sigma << " alpha=" << alpha;
      }
    }
  }
}

TEST(RdpTest, ZeroNoiseIsInfinite) {
  EXPECT_TRUE(std::isinf(RdpSingleStep(0.1, 0.0, 2.0)));
  const EpsilonResult r = Epsilon(Accumulate(MakeAccountant(0.1, 0.0), 3), 1e-5);
  EXPECT_FALSE(r.finite);
}

TEST(AccountantTest, DefaultOrderGrid) {
  const std::vector<double>& orders = DefaultRdpOrders();
  EXPECT_EQ(orders.front(), 1.25);
  EXPECT_EQ(orders.back(), 64.0);
  EXPECT_TRUE(std::is_sorted(orders.begin(), orders.end()));
  for (int a = 2; a <= 64; ++a) {
    EXPECT_NE(std::find(orders.begin(), orders.end(), static_cast<double>(a)), orders.end());
  }
}

TEST(AccountantTest, AccumulateZeroStepsIsIdentity) {
  const AccountantState s = MakeAccountant(0.01, 1.0);
  const AccountantState t = Accumulate(s, 0);
  EXPECT_EQ(t.rdp, s.rdp);
  EXPECT_EQ(t.steps, 0u);
}

TEST(AccountantTest, AccumulateIsAdditive) {
  const AccountantState s = MakeAccountant(0.02, 0.9);
  const AccountantState ab = Accumulate(Accumulate(s, 17), 29);
  const AccountantState direct = Accumulate(s, 46);
  EXPECT_EQ(ab.rdp, direct.rdp);
  EXPECT_EQ(ab.steps, 46u);
}

TEST(AccountantTest, DeskConfigIsLinear) {
  const AccountantState s = Accumulate(MakeAccountant(32.0 / 10000.0, 1.0), 312);
  for (size_t i = 0; i < s.orders.size(); ++i) {
    EXPECT_EQ(s.rdp[i], 312.0 * RdpSingleStep(32.0 / 10000.0, 1.0, s.orders[i]));
  }
}

TEST(EpsilonTest, SingleStepMinimizerByExhaustiveScan) {
  const AccountantState s = Accumulate(MakeAccountant(1.0, 1.0), 1);
  const double delta = 1e-5;
  double best = std::numeric_limits<double>::infinity();
  double best_order = 0.0;
  for (double a : DefaultRdpOrders()) {
    const double eps = a / 2.0 + std::log(1.0 / delta) / (a - 1.0);
    if (eps < best) {
      best = eps;
      best_order = a;
    }
  }
  EXPECT_EQ(best_order, 6.0);
  const EpsilonResult r = Epsilon(s, delta);
  EXPECT_EQ(r.order, 6.0);
  EXPECT_THAT(r.epsilon, DoubleNear(3.0 + std::log(1e5) / 5.0, 1e-12));
  EXPECT_THAT(r.epsilon, DoubleNear(5.303, 1e-3));
}

TEST(EpsilonTest, DeltaNearOneApproachesMinimumRdp) {
  const AccountantState s = Accumulate(MakeAccountant(0.05, 1.2), 40);
  const double min_rdp = *std::min_element(s.rdp.begin(), s.rdp.end());
  EXPECT_THAT(Epsilon(s, 1.0 - 1e-12).epsilon, DoubleNear(min_rdp, 1e-9));
}

TEST(EpsilonTest, RejectsBadDelta) {
  const AccountantState s = MakeAccountant(0.05, 1.0);
  EXPECT_THROW(Epsilon(s, 0.0), Error);
  EXPECT_THROW(Epsilon(s, 1.0), Error);
}

TEST(EpsilonTest, MonotoneInStepsAndSamplingRate) {
  for (double sigma : {0.6, 1.0, 3.0}) {
    double prev_q = 0.0;
    for (double q : {1e-4, 1e-3, 1e-2, 0.05, 0.2, 1.0}) {
      const AccountantState s = MakeAccountant(q, sigma);
      double prev_t = 0.0;
      for (uint64_t t : {1, 2, 10, 100, 1000}) {
        const double eps = Epsilon(Accumulate(s, t), 1e-5).epsilon;
        EXPECT_GE(eps, prev_t);
        prev_t = eps;
      }
      const double eps_q = Epsilon(Accumulate(s, 100), 1e-5).epsilon;
      EXPECT_GE(eps_q, prev_q);
      prev_q = eps_q;
    }
  }
}

TEST(EpsilonTest, NonIncreasingInSigma) {
  for (double q : {1e-3, 0.01, 0.3}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double sigma : {0.3, 0.5, 0.8, 1.0, 1.5, 2.0, 4.0, 8.0}) {
      const double eps = Epsilon(Accumulate(MakeAccountant(q, sigma), 200), 1e-5).epsilon;
      EXPECT_LE(eps, prev);
      prev = eps;
    }
  }
}

TEST(StepsUntilBudgetTest, MatchesLinearScan) {
  const double q = 0.0032, sigma = 1.0, delta = 1e-5, eps_max = 8.0;
  const AccountantState fresh = MakeAccountant(q, sigma);
  uint64_t scan = 0;
  while (Epsilon(Accumulate(fresh, scan + 1), delta).epsilon <= eps_max) ++scan;
  EXPECT_GT(scan, 0u);
  EXPECT_EQ(StepsUntilBudget(q, sigma, delta, eps_max), scan);
}

TEST(StepsUntilBudgetTest, DefiningProperty) {
  for (double eps_max : {2.0, 4.0, 10.0}) {
    const double q = 0.01, sigma = 0.8, delta = 1e-5;
    const uint64_t t = StepsUntilBudget(q, sigma, delta, eps_max);
    const AccountantState fresh = MakeAccountant(q, sigma);
    if (t > 0) EXPECT_LE(Epsilon(Accumulate(fresh, t), delta).epsilon, eps_max);
    EXPECT_GT(Epsilon(Accumulate(fresh, t + 1), delta).epsilon, eps_max);
  }
}

TEST(StepsUntilBudgetTest, ZeroWhenOneStepIsTooExpensive) {
  const double single = Epsilon(Accumulate(MakeAccountant(0.5, 0.5), 1), 1e-5).epsilon;
  EXPECT_EQ(StepsUntilBudget(0.5, 0.5, 1e-5, single * 0.5), 0u);
}

TEST(CalibrateNoiseTest, HitsTargetFromBelow) {
  const double q = 32.0 / 1700.0, delta = 1e-5;
  const uint64_t steps = 1000;
  const double sigma = CalibrateNoiseMultiplier(q, steps, delta, 30.0);
  const double eps = Epsilon(Accumulate(MakeAccountant(q, sigma), steps), delta).epsilon;
  EXPECT_LE(eps, 30.0);
  EXPECT_GT(eps, 29.9);
}

TEST(AccountantTest, ReportListsEveryOrder) {
  const AccountantState s = Accumulate(MakeAccountant(0.01, 1.0), 10);
  const std::string text = EpsilonReport(s, 1e-5);
  EXPECT_NE(text.find("epsilon="), std::string::npos);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'),
            static_cast<long>(s.orders.size()) + 3);
}

}  // namespace
}  // namespace dpfim
