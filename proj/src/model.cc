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

#include "dpfim/model.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "dpfim/error.h"
#include "dpfim/rng.h"

namespace dpfim {
namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;
using ColVec = Eigen::VectorXd;
using CMap = Eigen::Map<const Mat>;
using MMap = Eigen::Map<Mat>;
using CRow = Eigen::Map<const RowVec>;
using MRow = Eigen::Map<RowVec>;

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr char kCheckpointMagic[8] = {'D', 'P', 'F', 'I', 'M', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

// Views into aligned weight copies; Eigen's reduction order follows the
// operand address.
CMap View(const ColVec& data, const TensorSlot& s) {
  return CMap(data.data() + s.offset, s.rows, s.cols);
}
CRow RowView(const ColVec& data, const TensorSlot& s) {
  return CRow(data.data() + s.offset, static_cast<Eigen::Index>(s.size()));
}
ColVec AlignedCopy(const std::vector<double>& data) {
  return Eigen::Map<const ColVec>(data.data(), static_cast<Eigen::Index>(data.size()));
}
MMap MutView(std::vector<double>& data, const TensorSlot& s) {
  return MMap(data.data() + s.offset, s.rows, s.cols);
}
MRow MutRow(std::vector<double>& data, const TensorSlot& s) {
  return MRow(data.data() + s.offset, static_cast<Eigen::Index>(s.size()));
}

double Gelu(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double GeluGrad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

struct LayerNormCache {
  Mat xhat;
  ColVec rstd;
};

Mat LayerNorm(const Mat& x, const CRow& gain, const CRow& bias, LayerNormCache& cache) {
  const Eigen::Index rows = x.rows();
  cache.xhat.resize(rows, x.cols());
  cache.rstd.resize(rows);
  Mat out(rows, x.cols());
  for (Eigen::Index t = 0; t < rows; ++t) {
    const double mean = x.row(t).mean();
    const RowVec centered = x.row(t).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(x.cols());
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd(t) = rstd;
    cache.xhat.row(t) = centered * rstd;
    out.row(t) = cache.xhat.row(t).cwiseProduct(gain) + bias;
  }
  return out;
}

// Returns dL/dx; accumulates gain/bias gradients when the pointers are set.
Mat LayerNormBackward(const Mat& dy, const LayerNormCache& cache, const CRow& gain,
                      double* dgain, double* dbias) {
  const Eigen::Index rows = dy.rows();
  const Eigen::Index cols = dy.cols();
  if (dgain != nullptr) {
    MRow(dgain, cols) += RowVec(dy.cwiseProduct(cache.xhat).colwise().sum());
    MRow(dbias, cols) += RowVec(dy.colwise().sum());
  }
  Mat dx(rows, cols);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const RowVec dxhat = dy.row(t).cwiseProduct(gain);
    const double mean_dxhat = dxhat.mean();
    const double mean_dot = dxhat.dot(cache.xhat.row(t)) / static_cast<double>(cols);
    dx.row(t) = cache.rstd(t) *
                (dxhat.array() - mean_dxhat - cache.xhat.row(t).array() * mean_dot).matrix();
  }
  return dx;
}

struct LayerCache {
  Mat x_in;
  LayerNormCache ln1;
  Mat a;
  Mat uq, uv;
  Mat q, k, v;
  std::vector<Mat> probs;
  Mat att;
  LayerNormCache ln2;
  Mat m;
  Mat hpre, hact;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  LayerNormCache lnf;
};

class Network {
 public:
  Network(const ParameterSet& params, bool apply_adapters)
      : p_(params),
        base_(AlignedCopy(params.base)),
        adapters_(AlignedCopy(params.adapters)),
        layout_(params.model, params.lora),
        apply_adapters_(apply_adapters),
        lora_scale_(params.lora.scaling()) {}

  // Hidden states after the final LayerNorm, T x d.
  Mat Forward(std::span<const Token> tokens, ForwardCache* cache) const {
    const int n = static_cast<int>(tokens.size());
    const int d = p_.model.d_model;
    if (n > p_.model.context_len) {
      throw ConfigError("sequence of length " + std::to_string(n) +
                        " exceeds context_len " + std::to_string(p_.model.context_len));
    }
    const CMap wte = View(base_, layout_.wte);
    const CMap wpe = View(base_, layout_.wpe);
    Mat x(n, d);
    for (int t = 0; t < n; ++t) {
      if (tokens[t] < 0 || tokens[t] >= p_.model.vocab_size) {
        throw ConfigError("token id out of range: " + std::to_string(tokens[t]));
      }
      x.row(t) = wte.row(tokens[t]) + wpe.row(t);
    }
    if (cache != nullptr) cache->layers.resize(layout_.layers.size());
    for (size_t l = 0; l < layout_.layers.size(); ++l) {
      LayerCache local;
      LayerCache& lc = cache != nullptr ? cache->layers[l] : local;
      x = LayerForward(l, x, lc);
    }
    LayerNormCache local_lnf;
    return LayerNorm(x, RowView(base_, layout_.lnf_g), RowView(base_, layout_.lnf_b),
                     cache != nullptr ? cache->lnf : local_lnf);
  }

  // Back-propagates dL/d(final hidden) into `grad`.
  void Backward(std::span<const Token> tokens, const ForwardCache& cache, const Mat& dxf,
                bool with_base, Gradients& grad) const {
    double* gb = with_base ? grad.base.data() : nullptr;
    Mat dx = LayerNormBackward(dxf, cache.lnf, RowView(base_, layout_.lnf_g),
                               gb ? gb + layout_.lnf_g.offset : nullptr,
                               gb ? gb + layout_.lnf_b.offset : nullptr);
    for (size_t l = layout_.layers.size(); l-- > 0;) {
      dx = LayerBackward(l, cache.layers[l], dx, with_base, grad);
    }
    if (with_base) {
      MMap dwte = MutView(grad.base, layout_.wte);
      MMap dwpe = MutView(grad.base, layout_.wpe);
      for (Eigen::Index t = 0; t < dx.rows(); ++t) {
        dwte.row(tokens[t]) += dx.row(t);
        dwpe.row(t) += dx.row(t);
      }
    }
  }

  const ParamLayout& layout() const { return layout_; }
  const ColVec& base() const { return base_; }

 private:
  Mat LayerForward(size_t l, const Mat& x, LayerCache& c) const {
    const LayerSlots& L = layout_.layers[l];
    const int d = p_.model.d_model;
    const int heads = p_.model.n_heads;
    const int hd = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const Eigen::Index n = x.rows();

    c.x_in = x;
    c.a = LayerNorm(x, RowView(base_, L.ln1_g), RowView(base_, L.ln1_b), c.ln1);
    c.q.noalias() = c.a * View(base_, L.wq).transpose();
    c.q.rowwise() += RowView(base_, L.bq);
    c.k.noalias() = c.a * View(base_, L.wk).transpose();
    c.k.rowwise() += RowView(base_, L.bk);
    c.v.noalias() = c.a * View(base_, L.wv).transpose();
    c.v.rowwise() += RowView(base_, L.bv);
    if (apply_adapters_) {
      const AdapterSlots& A = layout_.adapters[l];
      c.uq.noalias() = c.a * View(adapters_, A.a_q).transpose();
      c.q.noalias() += lora_scale_ * (c.uq * View(adapters_, A.b_q).transpose());
      c.uv.noalias() = c.a * View(adapters_, A.a_v).transpose();
      c.v.noalias() += lora_scale_ * (c.uv * View(adapters_, A.b_v).transpose());
    }

    c.probs.resize(heads);
    c.att.resize(n, d);
    for (int h = 0; h < heads; ++h) {
      Mat& P = c.probs[h];
      P.noalias() = (c.q.middleCols(h * hd, hd) * c.k.middleCols(h * hd, hd).transpose()) * scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = P.row(i).head(i + 1).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          P(i, j) = std::exp(P(i, j) - mx);
          sum += P(i, j);
        }
        P.row(i).head(i + 1) /= sum;
        P.row(i).tail(n - i - 1).setZero();
      }
      c.att.middleCols(h * hd, hd).noalias() = P * c.v.middleCols(h * hd, hd);
    }

    Mat x_mid = x;
    x_mid.noalias() += c.att * View(base_, L.wo).transpose();
    x_mid.rowwise() += RowView(base_, L.bo);

    c.m = LayerNorm(x_mid, RowView(base_, L.ln2_g), RowView(base_, L.ln2_b), c.ln2);
    c.hpre.noalias() = c.m * View(base_, L.w1).transpose();
    c.hpre.rowwise() += RowView(base_, L.b1);
    c.hact = c.hpre.unaryExpr(&Gelu);
    Mat out = x_mid;
    out.noalias() += c.hact * View(base_, L.w2).transpose();
    out.rowwise() += RowView(base_, L.b2);
    return out;
  }

  Mat LayerBackward(size_t l, const LayerCache& c, const Mat& dout, bool with_base,
                    Gradients& grad) const {
    const LayerSlots& L = layout_.layers[l];
    const int d = p_.model.d_model;
    const int heads = p_.model.n_heads;
    const int hd = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const Eigen::Index n = dout.rows();
    auto base_ptr = [&](const TensorSlot& s) {
      return with_base ? grad.base.data() + s.offset : nullptr;
    };

    // Feed-forward block.
    if (with_base) {
      MutView(grad.base, L.w2).noalias() += Mat(dout.transpose() * c.hact);
      MutRow(grad.base, L.b2) += RowVec(dout.colwise().sum());
    }
    Mat dh = dout * View(base_, L.w2);
    dh.array() *= c.hpre.unaryExpr(&GeluGrad).array();
    if (with_base) {
      MutView(grad.base, L.w1).noalias() += Mat(dh.transpose() * c.m);
      MutRow(grad.base, L.b1) += RowVec(dh.colwise().sum());
    }
    const Mat dm = dh * View(base_, L.w1);
    Mat dx_mid = dout;
    dx_mid += LayerNormBackward(dm, c.ln2, RowView(base_, L.ln2_g), base_ptr(L.ln2_g),
                                base_ptr(L.ln2_b));

    // Attention block.
    if (with_base) {
      MutView(grad.base, L.wo).noalias() += Mat(dx_mid.transpose() * c.att);
      MutRow(grad.base, L.bo) += RowVec(dx_mid.colwise().sum());
    }
    const Mat datt = dx_mid * View(base_, L.wo);
    Mat dq(n, d), dk(n, d), dv(n, d);
    for (int h = 0; h < heads; ++h) {
      const Mat& P = c.probs[h];
      const auto dO = datt.middleCols(h * hd, hd);
      Mat dP = dO * c.v.middleCols(h * hd, hd).transpose();
      dv.middleCols(h * hd, hd).noalias() = P.transpose() * dO;
      const ColVec rowdot = P.cwiseProduct(dP).rowwise().sum();
      Mat dS = P.cwiseProduct(dP.colwise() - rowdot);
      dq.middleCols(h * hd, hd).noalias() = (dS * c.k.middleCols(h * hd, hd)) * scale;
      dk.middleCols(h * hd, hd).noalias() = (dS.transpose() * c.q.middleCols(h * hd, hd)) * scale;
    }

    Mat da = dq * View(base_, L.wq);
    da.noalias() += dk * View(base_, L.wk);
    da.noalias() += dv * View(base_, L.wv);
    if (with_base) {
      MutView(grad.base, L.wq).noalias() += Mat(dq.transpose() * c.a);
      MutRow(grad.base, L.bq) += RowVec(dq.colwise().sum());
      MutView(grad.base, L.wk).noalias() += Mat(dk.transpose() * c.a);
      MutRow(grad.base, L.bk) += RowVec(dk.colwise().sum());
      MutView(grad.base, L.wv).noalias() += Mat(dv.transpose() * c.a);
      MutRow(grad.base, L.bv) += RowVec(dv.colwise().sum());
    }
    if (apply_adapters_) {
      const AdapterSlots& A = layout_.adapters[l];
      MutView(grad.adapters, A.b_q).noalias() += Mat(lora_scale_ * (dq.transpose() * c.uq));
      const Mat duq = lora_scale_ * (dq * View(adapters_, A.b_q));
      MutView(grad.adapters, A.a_q).noalias() += Mat(duq.transpose() * c.a);
      da.noalias() += duq * View(adapters_, A.a_q);

      MutView(grad.adapters, A.b_v).noalias() += Mat(lora_scale_ * (dv.transpose() * c.uv));
      const Mat duv = lora_scale_ * (dv * View(adapters_, A.b_v));
      MutView(grad.adapters, A.a_v).noalias() += Mat(duv.transpose() * c.a);
      da.noalias() += duv * View(adapters_, A.a_v);
    }

    Mat dx = dx_mid;
    dx += LayerNormBackward(da, c.ln1, RowView(base_, L.ln1_g), base_ptr(L.ln1_g),
                            base_ptr(L.ln1_b));
    return dx;
  }

  const ParameterSet& p_;
  const ColVec base_;
  const ColVec adapters_;
  ParamLayout layout_;
  bool apply_adapters_;
  double lora_scale_;
};

std::vector<int> MaskedPositions(const FimExample& ex) {
  std::vector<int> positions;
  for (size_t t = 0; t + 1 < ex.sequence.size(); ++t) {
    if (ex.loss_mask[t]) positions.push_back(static_cast<int>(t));
  }
  return positions;
}

Mat GatherRows(const Mat& x, const std::vector<int>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(i) = x.row(rows[i]);
  return out;
}

// Mean cross-entropy of `targets` under row-wise logits; fills dlogits with
// its gradient when non-null.
double CrossEntropy(const Mat& logits, const std::vector<Token>& targets, Mat* dlogits) {
  const Eigen::Index rows = logits.rows();
  double total = 0.0;
  if (dlogits != nullptr) dlogits->resize(rows, logits.cols());
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const RowVec e = (logits.row(i).array() - mx).exp().matrix();
    const double sum = e.sum();
    total += std::log(sum) + mx - logits(i, targets[i]);
    if (dlogits != nullptr) {
      dlogits->row(i) = e / (sum * static_cast<double>(rows));
      (*dlogits)(i, targets[i]) -= 1.0 / static_cast<double>(rows);
    }
  }
  return total / static_cast<double>(rows);
}

std::vector<Token> TargetsAt(const FimExample& ex, const std::vector<int>& positions) {
  std::vector<Token> targets;
  targets.reserve(positions.size());
  for (int t : positions) targets.push_back(ex.sequence[t + 1]);
  return targets;
}

void CheckFinite(std::span<const double> values, const std::string& what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite gradient for example " + what);
  }
}

}  // namespace

void ModelConfig::Validate() const {
  if (vocab_size < Tokenizer::kVocabSize) {
    throw ConfigError("model.vocab_size must be at least 261");
  }
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || context_len <= 0 || ffn_mult <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model.d_model (" + std::to_string(d_model) +
                      ") must be divisible by model.n_heads (" + std::to_string(n_heads) + ")");
  }
}

void LoraConfig::Validate(const ModelConfig& model) const {
  if (rank < 1 || rank > model.d_model) {
    throw ConfigError("lora.rank must be in [1, d_model]; got " + std::to_string(rank));
  }
  if (!(alpha > 0.0)) throw ConfigError("lora.alpha must be positive");
}

ParamLayout::ParamLayout(const ModelConfig& model, const LoraConfig& lora) {
  const int d = model.d_model;
  const int f = model.ffn_mult * d;
  const int r = lora.rank;
  auto base = [&](int rows, int cols) {
    TensorSlot s{base_size, rows, cols};
    base_size += s.size();
    return s;
  };
  auto adapter = [&](int rows, int cols) {
    TensorSlot s{adapter_size, rows, cols};
    adapter_size += s.size();
    return s;
  };
  wte = base(model.vocab_size, d);
  wpe = base(model.context_len, d);
  for (int l = 0; l < model.n_layers; ++l) {
    LayerSlots L;
    L.ln1_g = base(1, d);
    L.ln1_b = base(1, d);
    L.wq = base(d, d);
    L.bq = base(1, d);
    L.wk = base(d, d);
    L.bk = base(1, d);
    L.wv = base(d, d);
    L.bv = base(1, d);
    L.wo = base(d, d);
    L.bo = base(1, d);
    L.ln2_g = base(1, d);
    L.ln2_b = base(1, d);
    L.w1 = base(f, d);
    L.b1 = base(1, f);
    L.w2 = base(d, f);
    L.b2 = base(1, d);
    layers.push_back(L);
  }
  lnf_g = base(1, d);
  lnf_b = base(1, d);
  head = base(model.vocab_size, d);
  for (int l = 0; l < model.n_layers; ++l) {
    AdapterSlots A;
    A.a_q = adapter(r, d);
    A.b_q = adapter(d, r);
    A.a_v = adapter(r, d);
    A.b_v = adapter(d, r);
    adapters.push_back(A);
  }
}

ParameterSet InitModel(const ModelConfig& model, const LoraConfig& lora, uint64_t seed) {
  model.Validate();
  lora.Validate(model);
  const ParamLayout layout(model, lora);
  ParameterSet p{model, lora, std::vector<double>(layout.base_size, 0.0),
                 std::vector<double>(layout.adapter_size, 0.0)};
  Rng rng = Substream(seed, "init");
  auto fill_normal = [&rng](std::vector<double>& data, const TensorSlot& s, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (size_t i = 0; i < s.size(); ++i) data[s.offset + i] = dist(rng);
  };
  auto fill_const = [&](std::vector<double>& data, const TensorSlot& s, double value) {
    std::fill_n(data.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(), value);
  };
  const double resid_std = 0.02 / std::sqrt(2.0 * model.n_layers);
  fill_normal(p.base, layout.wte, 0.02);
  fill_normal(p.base, layout.wpe, 0.02);
  for (const LayerSlots& L : layout.layers) {
    fill_const(p.base, L.ln1_g, 1.0);
    fill_normal(p.base, L.wq, 0.02);
    fill_normal(p.base, L.wk, 0.02);
    fill_normal(p.base, L.wv, 0.02);
    fill_normal(p.base, L.wo, resid_std);
    fill_const(p.base, L.ln2_g, 1.0);
    fill_normal(p.base, L.w1, 0.02);
    fill_normal(p.base, L.w2, resid_std);
  }
  fill_const(p.base, layout.lnf_g, 1.0);
  fill_normal(p.base, layout.head, 0.02);
  p.adapters = InitAdapters(model, lora, seed);
  return p;
}

std::vector<double> InitAdapters(const ModelConfig& model, const LoraConfig& lora,
                                 uint64_t seed) {
  lora.Validate(model);
  const ParamLayout layout(model, lora);
  std::vector<double> adapters(layout.adapter_size, 0.0);
  Rng rng = Substream(seed, "init-adapters");
  std::normal_distribution<double> dist(0.0, 1.0 / lora.rank);
  for (const AdapterSlots& A : layout.adapters) {
    for (const TensorSlot* s : {&A.a_q, &A.a_v}) {
      for (size_t i = 0; i < s->size(); ++i) adapters[s->offset + i] = dist(rng);
    }
  }
  return adapters;
}

uint64_t HashBase(const ParameterSet& params) {
  return Fnv1a64(std::string_view(reinterpret_cast<const char*>(params.base.data()),
                                  params.base.size() * sizeof(double)));
}

std::vector<double> Logits(const ParameterSet& params, std::span<const Token> tokens,
                           bool apply_adapters) {
  const Network net(params, apply_adapters);
  const Mat xf = net.Forward(tokens, nullptr);
  const Mat logits = xf * View(net.base(), net.layout().head).transpose();
  return std::vector<double>(logits.data(), logits.data() + logits.size());
}

double ExampleLoss(const ParameterSet& params, const FimExample& example,
                   bool apply_adapters) {
  const std::vector<int> positions = MaskedPositions(example);
  if (positions.empty()) return std::numeric_limits<double>::quiet_NaN();
  const Network net(params, apply_adapters);
  const Mat xf = net.Forward(example.sequence, nullptr);
  const Mat logits =
      GatherRows(xf, positions) * View(net.base(), net.layout().head).transpose();
  return CrossEntropy(logits, TargetsAt(example, positions), nullptr);
}

double ExampleLossAndGradient(const ParameterSet& params, const FimExample& example,
                              bool with_base, Gradients& grad) {
  grad.adapters.assign(params.adapters.size(), 0.0);
  if (with_base) {
    grad.base.assign(params.base.size(), 0.0);
  } else {
    grad.base.clear();
  }
  const std::vector<int> positions = MaskedPositions(example);
  if (positions.empty()) return std::numeric_limits<double>::quiet_NaN();

  const Network net(params, /*apply_adapters=*/true);
  ForwardCache cache;
  const Mat xf = net.Forward(example.sequence, &cache);
  const CMap head = View(net.base(), net.layout().head);
  const Mat xp = GatherRows(xf, positions);
  const Mat logits = xp * head.transpose();
  Mat dlogits;
  const double loss = CrossEntropy(logits, TargetsAt(example, positions), &dlogits);

  if (with_base) {
    MutView(grad.base, net.layout().head).noalias() += Mat(dlogits.transpose() * xp);
  }
  const Mat dxp = dlogits * head;
  Mat dxf = Mat::Zero(xf.rows(), xf.cols());
  for (size_t i = 0; i < positions.size(); ++i) dxf.row(positions[i]) = dxp.row(i);
  net.Backward(example.sequence, cache, dxf, with_base, grad);

  CheckFinite(grad.adapters, example.id);
  if (with_base) CheckFinite(grad.base, example.id);
  return loss;
}

Batch MakeBatch(std::span<const FimExample> examples) {
  Batch batch;
  for (size_t i = 0; i < examples.size(); ++i) {
    batch.examples.push_back(&examples[i]);
    batch.indices.push_back(i);
  }
  return batch;
}

BatchLoss ForwardLoss(const ParameterSet& params, const Batch& batch) {
  if (batch.empty()) throw ConfigError("ForwardLoss needs a non-empty batch");
  BatchLoss out;
  double sum = 0.0;
  size_t counted = 0;
  for (const FimExample* ex : batch.examples) {
    const double loss = ExampleLoss(params, *ex);
    out.per_example.push_back(loss);
    if (std::isnan(loss)) {
      out.excluded.push_back(ex->id);
      continue;
    }
    if (!std::isfinite(loss)) throw NumericError("non-finite loss for example " + ex->id);
    sum += loss;
    ++counted;
  }
  out.mean = counted > 0 ? sum / static_cast<double>(counted)
                         : std::numeric_limits<double>::quiet_NaN();
  return out;
}

std::vector<std::vector<double>> PerExampleGradients(const ParameterSet& params,
                                                     const Batch& batch,
                                                     std::vector<double>* losses) {
  std::vector<std::vector<double>> grads;
  grads.reserve(batch.size());
  if (losses != nullptr) losses->clear();
  Gradients g;
  for (const FimExample* ex : batch.examples) {
    const double loss = ExampleLossAndGradient(params, *ex, /*with_base=*/false, g);
    grads.push_back(std::move(g.adapters));
    if (losses != nullptr) losses->push_back(loss);
  }
  return grads;
}

std::string GenerateCompletion(const ParameterSet& params, std::string_view prefix,
                               std::string_view suffix, int max_new) {
  std::vector<Token> seq;
  seq.push_back(Tokenizer::kPre);
  for (Token t : Tokenize(prefix)) seq.push_back(t);
  seq.push_back(Tokenizer::kSuf);
  for (Token t : Tokenize(suffix)) seq.push_back(t);
  seq.push_back(Tokenizer::kMid);
  if (max_new < 0) throw ConfigError("max_new must be non-negative");
  if (static_cast<int>(seq.size()) + max_new > params.model.context_len) {
    throw ConfigError("prompt of " + std::to_string(seq.size()) + " tokens plus max_new " +
                      std::to_string(max_new) + " exceeds context_len " +
                      std::to_string(params.model.context_len));
  }
  const Network net(params, /*apply_adapters=*/true);
  const CMap head = View(net.base(), net.layout().head);
  std::vector<Token> generated;
  for (int step = 0; step < max_new; ++step) {
    const Mat xf = net.Forward(seq, nullptr);
    const RowVec logits = xf.row(xf.rows() - 1) * head.transpose();
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    const Token next = static_cast<Token>(best);
    if (next == Tokenizer::kEom) break;
    generated.push_back(next);
    seq.push_back(next);
  }
  return Detokenize(generated);
}

nlohmann::json ToJson(const ModelConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
          {"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads},
          {"context_len", cfg.context_len}, {"ffn_mult", cfg.ffn_mult}};
}

nlohmann::json ToJson(const LoraConfig& cfg) {
  return {{"rank", cfg.rank}, {"alpha", cfg.alpha}};
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["model"] = ToJson(ckpt.params.model);
  header["lora"] = ToJson(ckpt.params.lora);
  header["state"] = ckpt.state;
  std::vector<std::pair<std::string, const std::vector<double>*>> blobs = {
      {"base", &ckpt.params.base}, {"adapters", &ckpt.params.adapters}};
  for (const auto& [name, data] : ckpt.blobs) blobs.emplace_back(name, &data);
  header["blobs"] = nlohmann::json::array();
  for (const auto& [name, data] : blobs) {
    header["blobs"].push_back({{"name", name}, {"size", data->size()}});
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  const uint32_t version = kCheckpointVersion;
  const uint64_t header_len = text.size();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, data] : blobs) {
    out.write(reinterpret_cast<const char*>(data->data()),
              static_cast<std::streamsize>(data->size() * sizeof(double)));
  }
  if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("missing checkpoint: " + path.string());
  char magic[8];
  uint32_t version = 0;
  uint64_t header_len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ConfigError("not a dpfim checkpoint: " + path.string());
  }
  if (version != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version " + std::to_string(version) + " in " +
                      path.string());
  }
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  const nlohmann::json header = nlohmann::json::parse(text);

  Checkpoint ckpt;
  const auto& m = header.at("model");
  ckpt.params.model = ModelConfig{m.at("vocab_size"), m.at("d_model"), m.at("n_layers"),
                                  m.at("n_heads"),    m.at("context_len"), m.at("ffn_mult")};
  ckpt.params.lora = LoraConfig{header.at("lora").at("rank"), header.at("lora").at("alpha")};
  ckpt.state = header.at("state");
  for (const auto& blob : header.at("blobs")) {
    const std::string name = blob.at("name");
    std::vector<double> data(blob.at("size").get<size_t>());
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw ConfigError("truncated checkpoint " + path.string());
    if (name == "base") {
      ckpt.params.base = std::move(data);
    } else if (name == "adapters") {
      ckpt.params.adapters = std::move(data);
    } else {
      ckpt.blobs[name] = std::move(data);
    }
  }
  const ParamLayout layout(ckpt.params.model, ckpt.params.lora);
  if (ckpt.params.base.size() != layout.base_size ||
      ckpt.params.adapters.size() != layout.adapter_size) {
    throw ConfigError("checkpoint weights do not match its configuration: " + path.string());
  }
  return ckpt;
}

}  // namespace dpfim
