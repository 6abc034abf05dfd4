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

// Reference implementations used only by tests. Each one computes its answer
// a different way from the library code it checks.

#ifndef DPFIM_TESTS_ORACLES_H_
#define DPFIM_TESTS_ORACLES_H_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "dpfim/corpus.h"
#include "dpfim/model.h"
#include "dpfim/rng.h"

namespace dpfim::testing {

// Renyi divergence D_alpha(mu1 || mu0) for mu0 = N(0, s^2) and
// mu1 = (1-q) N(0, s^2) + q N(1, s^2), integrated in z over sigma-wide
// panels with 61-point Gauss-Kronrod. With mu1/mu0 = 1 + q u the integrand
// is mu0(z) [(1 + q u)^alpha - 1 - alpha q u]; the dropped linear term
// integrates to zero exactly.
inline double RdpQuadrature(double q, double sigma, double alpha) {
  const double s2 = sigma * sigma;
  const double norm = 1.0 / (sigma * std::sqrt(2.0 * M_PI));
  auto f = [&](double z) {
    const double log_mu0 = -z * z / (2.0 * s2);
    const double u = std::expm1((2.0 * z - 1.0) / (2.0 * s2));
    const double x = q * u;
    const double log_ratio = std::log1p(x);
    double log_g;
    double sign = 1.0;
    if (std::fabs(x) < 1e-3) {
      // (1+x)^a - 1 - a x by its Taylor series.
      double term = x * x * alpha * (alpha - 1.0) / 2.0;
      double g = 0.0;
      for (int k = 2; k < 30 && std::fabs(term) > 1e-300; ++k) {
        g += term;
        term *= x * (alpha - k) / (k + 1.0);
      }
      if (g == 0.0) return 0.0;
      sign = g < 0 ? -1.0 : 1.0;
      log_g = std::log(std::fabs(g));
    } else if (alpha * log_ratio > 600.0) {
      // (1+x)^a dominates; the subtracted terms are below double precision.
      log_g = alpha * log_ratio;
    } else {
      const double g = std::expm1(alpha * log_ratio) - alpha * x;
      if (g == 0.0) return 0.0;
      sign = g < 0 ? -1.0 : 1.0;
      log_g = std::log(std::fabs(g));
    }
    return sign * norm * std::exp(log_mu0 + log_g);
  };
  // The integrand peaks near z = 0 and z = alpha with width sigma.
  const double lo = -14.0 * sigma - 1.0;
  const double hi = alpha + 14.0 * sigma + 1.0;
  double sum = 0.0;
  for (double a = lo; a < hi; a += sigma) {
    const double b = std::min(hi, a + sigma);
    sum += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 8, 1e-13);
  }
  return std::log1p(sum) / (alpha - 1.0);
}

// UTF-8 characters of valid input, one string per code point.
inline std::vector<std::string> Utf8Chars(const std::string& s) {
  std::vector<std::string> out;
  for (size_t i = 0; i < s.size();) {
    size_t len = 1;
    const unsigned char c = s[i];
    if (c >= 0xF0) {
      len = 4;
    } else if (c >= 0xE0) {
      len = 3;
    } else if (c >= 0xC0) {
      len = 2;
    }
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

inline bool IsAsciiSpace(const std::string& ch) {
  return ch.size() == 1 && std::string(" \t\n\r\f\v").find(ch[0]) != std::string::npos;
}

// Every n-gram as a list of units, then clipped matches by greedy pairing:
// each hypothesis n-gram consumes at most one unused equal reference n-gram.
inline double ChrfBruteForce(const std::string& hyp, const std::string& ref,
                             int char_order = 6, int word_order = 2, double beta = 2.0) {
  using Units = std::vector<std::string>;
  auto chars_of = [](const std::string& s) {
    Units out;
    for (const std::string& c : Utf8Chars(s)) {
      if (!IsAsciiSpace(c)) out.push_back(c);
    }
    return out;
  };
  auto words_of = [](const std::string& s) {
    Units out;
    std::string cur;
    for (const std::string& c : Utf8Chars(s)) {
      if (IsAsciiSpace(c)) {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  };
  auto grams = [](const Units& u, int n) {
    std::vector<Units> out;
    for (int i = 0; i + n <= static_cast<int>(u.size()); ++i) {
      out.emplace_back(u.begin() + i, u.begin() + i + n);
    }
    return out;
  };
  double p_sum = 0.0, r_sum = 0.0;
  int orders = 0;
  auto score = [&](const Units& h, const Units& r, int n) {
    const std::vector<Units> hg = grams(h, n);
    const std::vector<Units> rg = grams(r, n);
    if (rg.empty()) return;
    std::vector<bool> used(rg.size(), false);
    int matches = 0;
    for (const Units& g : hg) {
      for (size_t j = 0; j < rg.size(); ++j) {
        if (!used[j] && rg[j] == g) {
          used[j] = true;
          ++matches;
          break;
        }
      }
    }
    ++orders;
    r_sum += static_cast<double>(matches) / rg.size();
    if (!hg.empty()) p_sum += static_cast<double>(matches) / hg.size();
  };
  const Units hc = chars_of(hyp), rc = chars_of(ref);
  const Units hw = words_of(hyp), rw = words_of(ref);
  for (int n = 1; n <= char_order; ++n) score(hc, rc, n);
  for (int n = 1; n <= word_order; ++n) score(hw, rw, n);
  if (orders == 0) return 0.0;
  const double p = p_sum / orders, r = r_sum / orders;
  if (p == 0.0 && r == 0.0) return 0.0;
  const double b2 = beta * beta;
  return 100.0 * (1 + b2) * p * r / (b2 * p + r);
}

// Short strings over a small alphabet so that n-grams collide often. Some
// code points are multi-byte.
inline std::string FuzzText(Rng& rng) {
  static const std::vector<std::string> kAlphabet = {
      "a", "b", "c", " ", " ", "\t", "\n", "x", "(", ")", "\xc3\xa9", "\xe2\x82\xac"};
  std::uniform_int_distribution<size_t> len(0, 24);
  std::uniform_int_distribution<size_t> pick(0, kAlphabet.size() - 1);
  std::string out;
  for (size_t n = len(rng); n > 0; --n) out += kAlphabet[pick(rng)];
  return out;
}

// Fraction of (member, non-member) pairs won by the member, ties half.
inline double PairCountingAuc(const std::vector<double>& members,
                              const std::vector<double>& nonmembers) {
  double wins = 0.0;
  for (double m : members) {
    for (double n : nonmembers) {
      if (m > n) {
        wins += 1.0;
      } else if (m == n) {
        wins += 0.5;
      }
    }
  }
  return wins / (static_cast<double>(members.size()) * nonmembers.size());
}

// Longest run of equal consecutive lines, trying every (i, j) start pair.
inline size_t BruteForceLineRun(const std::vector<std::string>& a,
                                const std::vector<std::string>& b) {
  size_t best = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t j = 0; j < b.size(); ++j) {
      size_t k = 0;
      while (i + k < a.size() && j + k < b.size() && a[i + k] == b[j + k]) ++k;
      best = std::max(best, k);
    }
  }
  return best;
}

inline ModelConfig MicroModel() {
  ModelConfig m;
  m.d_model = 16;
  m.n_layers = 1;
  m.n_heads = 2;
  m.context_len = 32;
  return m;
}

inline LoraConfig MicroLora() {
  LoraConfig l;
  l.rank = 4;
  l.alpha = 8.0;
  return l;
}

// A FIM example over random bytes whose sequence fits max_len.
inline FimExample RandomExample(Rng& rng, int max_len, const std::string& id = "x") {
  std::uniform_int_distribution<int> byte(32, 126);
  std::uniform_int_distribution<int> len(6, max_len - 4);
  std::vector<Token> tokens(len(rng));
  for (Token& t : tokens) t = byte(rng);
  const size_t n = tokens.size();
  std::uniform_int_distribution<size_t> cut(0, n - 2);
  size_t i = cut(rng), j = cut(rng);
  if (i > j) std::swap(i, j);
  if (j == i) ++j;
  return AssembleFim(id, tokens, i, j);
}

// Random nonzero adapters so gradients reach both LoRA factors.
inline void RandomizeAdapters(ParameterSet& params, Rng& rng, double scale = 0.1) {
  std::normal_distribution<double> normal(0.0, scale);
  for (double& w : params.adapters) w = normal(rng);
}

// Max over adapter coordinates of |analytic - numeric| / max(|analytic|,
// |numeric|, floor), numeric from central differences with step h.
inline double MaxAdapterGradientError(const ParameterSet& params, const FimExample& ex,
                                      double h = 1e-3, double floor = 1e-6) {
  Gradients grad;
  ExampleLossAndGradient(params, ex, false, grad);
  ParameterSet probe = params;
  double worst = 0.0;
  for (size_t k = 0; k < params.adapters.size(); ++k) {
    probe.adapters[k] = params.adapters[k] + h;
    const double up = ExampleLoss(probe, ex);
    probe.adapters[k] = params.adapters[k] - h;
    const double down = ExampleLoss(probe, ex);
    probe.adapters[k] = params.adapters[k];
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grad.adapters[k];
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
    worst = std::max(worst, std::fabs(analytic - numeric) / denom);
  }
  return worst;
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("dpfim_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace dpfim::testing

#endif  // DPFIM_TESTS_ORACLES_H_
