#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "overdilute/errors.hpp"
#include "overdilute/graph.hpp"
#include "overdilute/incidence.hpp"
#include "overdilute/parallel.hpp"
#include "overdilute/rng.hpp"

namespace overdilute {

// Dense row-major tensor of 64-bit floats. Everything runs in double: the
// dilution factors under study span several orders of magnitude and the
// closed-form-vs-autodiff cross checks are asserted at 1e-10 and tighter.
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : dims(std::move(shape)), v(std::move(values)) {
    if (numel_of(dims) != v.size()) {
      throw DimensionError("tensor values do not match shape");
    }
  }

  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (const std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  static Tensor zeros(std::vector<std::size_t> shape) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(std::vector<std::size_t> shape, double value) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.v[i * n + i] = 1.0;
    return t;
  }

  std::size_t numel() const { return v.size(); }
  bool empty() const { return v.empty(); }
  std::size_t rank() const { return dims.size(); }
  std::size_t rows() const { return dims.empty() ? 0 : dims[0]; }
  std::size_t cols() const { return dims.size() < 2 ? 1 : dims[1]; }

  double& at(std::size_t r, std::size_t c) { return v[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  bool all_finite() const {
    for (const double x : v) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }
};

namespace detail {

// out(m,n) += a(m,k) * b(k,n)
inline void mm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                  std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = a + i * k;
    double* out_row = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a_row[p];
      if (aip == 0.0) continue;
      const double* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aip * b_row[j];
    }
  }
}

// out(m,k) += g(m,n) * b(k,n)^T
inline void mm_nt(const double* g, const double* b, double* out, std::size_t m, std::size_t n,
                  std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* g_row = g + i * n;
    double* out_row = out + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* b_row = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += g_row[j] * b_row[j];
      out_row[p] += acc;
    }
  }
}

// out(k,n) += a(m,k)^T * g(m,n)
inline void mm_tn(const double* a, const double* g, double* out, std::size_t m, std::size_t k,
                  std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = a + i * k;
    const double* g_row = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a_row[p];
      if (aip == 0.0) continue;
      double* out_row = out + p * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aip * g_row[j];
    }
  }
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// out_v = x_v / deg~(v) + sum_{u in N(v)} x_u / sqrt(deg~(v) deg~(u));
// the one-hop GCN propagation applied row-wise. Symmetric, so it is its own
// backward operator.
inline void gcn_aggregate_rows(const Graph& g, const double* in, double* out, std::size_t cols) {
  const std::size_t n = g.num_nodes();
  for (std::size_t v = 0; v < n; ++v) {
    const double inv_deg = 1.0 / static_cast<double>(g.self_loop_degree(v));
    const double inv_sqrt_v = std::sqrt(inv_deg);
    double* out_row = out + v * cols;
    const double* self_row = in + v * cols;
    for (std::size_t j = 0; j < cols; ++j) out_row[j] = inv_deg * self_row[j];
    for (const std::uint32_t u : g.neighbors(v)) {
      const double coef = inv_sqrt_v / std::sqrt(static_cast<double>(g.self_loop_degree(u)));
      const double* u_row = in + static_cast<std::size_t>(u) * cols;
      for (std::size_t j = 0; j < cols; ++j) out_row[j] += coef * u_row[j];
    }
  }
}

}  // namespace detail

using TensorId = std::size_t;
inline constexpr TensorId kNoTensor = std::numeric_limits<std::size_t>::max();

enum class OpKind {
  kLeaf,
  kAdd,
  kAddRowVector,
  kScale,
  kScaleByScalar,
  kHadamard,
  kMatmul,
  kTranspose,
  kRelu,
  kSigmoid,
  kConcatCols,
  kSliceCols,
  kMaskedSoftmaxRows,
  kLayerNorm,
  kSumAll,
  kGatherRows,
  kDropout,
  kGcnAggregate,
  kAttentionAggregate,
  kIncidenceMatmul,
  kMaskedCrossAttention,
  kBceLoss,
  kSoftmaxCrossEntropy,
};

// Recorded computation trace. Nodes are append-only, so insertion order is a
// topological order; the backward pass walks nodes in reverse insertion order
// and accumulates gradients in a fixed sequence, which makes repeated backward
// passes over the same trace bit-identical.
//
// Traces are single-writer. A fully built trace is immutable and may be read
// (including backward passes) from many threads at once.
class Trace {
 public:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<TensorId> inputs;
    Tensor value;
    // Op-specific payload.
    std::vector<double> saved;        // softmax probs, dropout mask, attention weights, ...
    std::vector<std::size_t> iargs;   // row lists, slice bounds, head count, label ids
    double darg0 = 0.0;               // scale factor / eps / slope / attention scale
    Tensor aux;                       // constant companion (mask, labels)
    const Graph* graph = nullptr;
    const AttributeIncidence* incidence = nullptr;
  };

  std::size_t size() const { return nodes_.size(); }
  const Node& node(TensorId id) const { return nodes_[id]; }
  const Tensor& value(TensorId id) const { return nodes_[id].value; }
  bool is_leaf(TensorId id) const { return nodes_[id].kind == OpKind::kLeaf; }

  void mark_output(TensorId id) { outputs_.push_back(id); }
  const std::vector<TensorId>& outputs() const { return outputs_; }

  TensorId leaf(Tensor t) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.value = std::move(t);
    return push(std::move(n));
  }

  TensorId add(TensorId a, TensorId b) {
    require_same_shape(a, b, "add");
    Node n = make(OpKind::kAdd, {a, b});
    n.value = value(a);
    const Tensor& tb = value(b);
    for (std::size_t i = 0; i < n.value.v.size(); ++i) n.value.v[i] += tb.v[i];
    return push(std::move(n));
  }

  // x[m x d] + row vector b[d] broadcast over rows.
  TensorId add_row_vector(TensorId x, TensorId b) {
    const Tensor& tx = value(x);
    const Tensor& tb = value(b);
    if (tb.rank() != 1 || tx.rank() != 2 || tb.dims[0] != tx.dims[1]) {
      throw DimensionError("add_row_vector: expected [m x d] + [d]");
    }
    Node n = make(OpKind::kAddRowVector, {x, b});
    n.value = tx;
    const std::size_t d = tb.dims[0];
    for (std::size_t r = 0; r < tx.dims[0]; ++r) {
      for (std::size_t j = 0; j < d; ++j) n.value.v[r * d + j] += tb.v[j];
    }
    return push(std::move(n));
  }

  TensorId scale(TensorId a, double c) {
    Node n = make(OpKind::kScale, {a});
    n.darg0 = c;
    n.value = value(a);
    for (double& x : n.value.v) x *= c;
    return push(std::move(n));
  }

  // x scaled by a traced scalar s (shape [1]); used by the learnable-lambda mix.
  TensorId scale_by_scalar(TensorId x, TensorId s) {
    if (value(s).numel() != 1) throw DimensionError("scale_by_scalar: scalar operand required");
    Node n = make(OpKind::kScaleByScalar, {x, s});
    n.value = value(x);
    const double c = value(s).v[0];
    for (double& e : n.value.v) e *= c;
    return push(std::move(n));
  }

  TensorId hadamard(TensorId a, TensorId b) {
    require_same_shape(a, b, "hadamard");
    Node n = make(OpKind::kHadamard, {a, b});
    n.value = value(a);
    const Tensor& tb = value(b);
    for (std::size_t i = 0; i < n.value.v.size(); ++i) n.value.v[i] *= tb.v[i];
    return push(std::move(n));
  }

  TensorId matmul(TensorId a, TensorId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dims[1] != tb.dims[0]) {
      throw DimensionError("matmul: inner dimensions do not match (" + shape_str(ta) + " x " +
                           shape_str(tb) + ")");
    }
    Node n = make(OpKind::kMatmul, {a, b});
    n.value = Tensor::zeros({ta.dims[0], tb.dims[1]});
    detail::mm_nn(ta.v.data(), tb.v.data(), n.value.v.data(), ta.dims[0], ta.dims[1], tb.dims[1]);
    return push(std::move(n));
  }

  TensorId transpose(TensorId a) {
    const Tensor& ta = value(a);
    if (ta.rank() != 2) throw DimensionError("transpose: 2-d tensor required");
    Node n = make(OpKind::kTranspose, {a});
    n.value = Tensor::zeros({ta.dims[1], ta.dims[0]});
    for (std::size_t r = 0; r < ta.dims[0]; ++r) {
      for (std::size_t c = 0; c < ta.dims[1]; ++c) n.value.v[c * ta.dims[0] + r] = ta.v[r * ta.dims[1] + c];
    }
    return push(std::move(n));
  }

  // Subgradient at 0 is 0 (kept off the finite-difference kink in tests by
  // sampling inputs away from zero).
  TensorId relu(TensorId a) {
    Node n = make(OpKind::kRelu, {a});
    n.value = value(a);
    for (double& x : n.value.v) x = x > 0.0 ? x : 0.0;
    return push(std::move(n));
  }

  TensorId sigmoid(TensorId a) {
    Node n = make(OpKind::kSigmoid, {a});
    n.value = value(a);
    for (double& x : n.value.v) x = detail::stable_sigmoid(x);
    return push(std::move(n));
  }

  TensorId concat_cols(TensorId a, TensorId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dims[0] != tb.dims[0]) {
      throw DimensionError("concat_cols: row counts differ");
    }
    Node n = make(OpKind::kConcatCols, {a, b});
    const std::size_t m = ta.dims[0], p = ta.dims[1], q = tb.dims[1];
    n.value = Tensor::zeros({m, p + q});
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(ta.v.data() + r * p, p, n.value.v.data() + r * (p + q));
      std::copy_n(tb.v.data() + r * q, q, n.value.v.data() + r * (p + q) + p);
    }
    return push(std::move(n));
  }

  TensorId slice_cols(TensorId a, std::size_t first, std::size_t count) {
    const Tensor& ta = value(a);
    if (ta.rank() != 2 || first + count > ta.dims[1]) {
      throw DimensionError("slice_cols: column range out of bounds");
    }
    Node n = make(OpKind::kSliceCols, {a});
    n.iargs = {first, count};
    const std::size_t m = ta.dims[0], d = ta.dims[1];
    n.value = Tensor::zeros({m, count});
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(ta.v.data() + r * d + first, count, n.value.v.data() + r * count);
    }
    return push(std::move(n));
  }

  // Row-wise softmax over the unmasked entries. Masked outputs are exactly 0.
  // Any 1/sqrt(d)-style temperature is the caller's job.
  TensorId masked_softmax_rows(TensorId logits, Tensor mask) {
    const Tensor& tl = value(logits);
    if (!tl.same_shape(mask)) throw DimensionError("masked_softmax_rows: mask shape mismatch");
    if (tl.rank() != 2) throw DimensionError("masked_softmax_rows: 2-d tensor required");
    Node n = make(OpKind::kMaskedSoftmaxRows, {logits});
    const std::size_t m = tl.dims[0], d = tl.dims[1];
    n.value = Tensor::zeros({m, d});
    for (std::size_t r = 0; r < m; ++r) {
      double row_max = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < d; ++j) {
        if (mask.v[r * d + j] != 0.0) row_max = std::max(row_max, tl.v[r * d + j]);
      }
      if (row_max == -std::numeric_limits<double>::infinity()) {
        throw DegenerateRowError("masked_softmax_rows: row " + std::to_string(r) +
                                 " is fully masked");
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        if (mask.v[r * d + j] != 0.0) {
          const double e = std::exp(tl.v[r * d + j] - row_max);
          n.value.v[r * d + j] = e;
          denom += e;
        }
      }
      for (std::size_t j = 0; j < d; ++j) n.value.v[r * d + j] /= denom;
    }
    n.aux = std::move(mask);
    return push(std::move(n));
  }

  // y = (x - mean) / sqrt(var + eps) * gain + bias, statistics per row.
  TensorId layer_norm(TensorId x, TensorId gain, TensorId bias, double eps = 1e-5) {
    const Tensor& tx = value(x);
    const Tensor& tg = value(gain);
    const Tensor& tb = value(bias);
    if (tx.rank() != 2 || tg.rank() != 1 || tb.rank() != 1 || tg.dims[0] != tx.dims[1] ||
        tb.dims[0] != tx.dims[1]) {
      throw DimensionError("layer_norm: expected x[m x d], gain[d], bias[d]");
    }
    Node n = make(OpKind::kLayerNorm, {x, gain, bias});
    n.darg0 = eps;
    const std::size_t m = tx.dims[0], d = tx.dims[1];
    n.value = Tensor::zeros({m, d});
    n.saved.resize(m * d + m);  // xhat rows then inv_std per row
    for (std::size_t r = 0; r < m; ++r) {
      const double* row = tx.v.data() + r * d;
      double mean = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += row[j];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
      var /= static_cast<double>(d);
      const double inv_std = 1.0 / std::sqrt(var + eps);
      n.saved[m * d + r] = inv_std;
      for (std::size_t j = 0; j < d; ++j) {
        const double xhat = (row[j] - mean) * inv_std;
        n.saved[r * d + j] = xhat;
        n.value.v[r * d + j] = xhat * tg.v[j] + tb.v[j];
      }
    }
    return push(std::move(n));
  }

  TensorId sum_all(TensorId a) {
    Node n = make(OpKind::kSumAll, {a});
    double acc = 0.0;
    for (const double x : value(a).v) acc += x;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
  }

  TensorId gather_rows(TensorId a, std::vector<std::size_t> rows) {
    const Tensor& ta = value(a);
    if (ta.rank() != 2) throw DimensionError("gather_rows: 2-d tensor required");
    for (const std::size_t r : rows) {
      if (r >= ta.dims[0]) throw ContractError("gather_rows: row index out of range");
    }
    Node n = make(OpKind::kGatherRows, {a});
    const std::size_t d = ta.dims[1];
    n.value = Tensor::zeros({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(ta.v.data() + rows[i] * d, d, n.value.v.data() + i * d);
    }
    n.iargs = std::move(rows);
    return push(std::move(n));
  }

  // Seeded Bernoulli mask scaled by 1/(1-p). Evaluation mode simply does not
  // record this op.
  TensorId dropout(TensorId a, double p, std::uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must be in [0, 1)");
    Node n = make(OpKind::kDropout, {a});
    n.value = value(a);
    n.saved.resize(n.value.numel());
    Rng rng(seed);
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < n.value.numel(); ++i) {
      const double m = rng.bernoulli(p) ? 0.0 : keep_scale;
      n.saved[i] = m;
      n.value.v[i] *= m;
    }
    return push(std::move(n));
  }

  // One hop of D~^{-1/2} A~ D~^{-1/2} applied to the rows of x. The graph must
  // outlive the trace.
  TensorId gcn_aggregate(TensorId x, const Graph& g) {
    const Tensor& tx = value(x);
    if (tx.rank() != 2 || tx.dims[0] != g.num_nodes()) {
      throw DimensionError("gcn_aggregate: row count must equal node count");
    }
    Node n = make(OpKind::kGcnAggregate, {x});
    n.graph = &g;
    n.value = Tensor::zeros(tx.dims);
    detail::gcn_aggregate_rows(g, tx.v.data(), n.value.v.data(), tx.dims[1]);
    return push(std::move(n));
  }

  // GAT-style aggregation for one head. For every node v and u in N~(v)
  // (self first, then sorted neighbors):
  //   e_vu = leaky_relu(logit_self_v + logit_neigh_u, slope)
  //   alpha_v. = softmax(e_v.)
  //   out_v = sum_u alpha_vu values_u
  TensorId attention_aggregate(TensorId values, TensorId logit_self, TensorId logit_neigh,
                               const Graph& g, double slope) {
    const Tensor& tv = value(values);
    const Tensor& ts = value(logit_self);
    const Tensor& tn = value(logit_neigh);
    const std::size_t nn = g.num_nodes();
    if (tv.rank() != 2 || tv.dims[0] != nn || ts.numel() != nn || tn.numel() != nn) {
      throw DimensionError("attention_aggregate: expected values[n x d], logits[n]");
    }
    Node n = make(OpKind::kAttentionAggregate, {values, logit_self, logit_neigh});
    n.graph = &g;
    n.darg0 = slope;
    const std::size_t d = tv.dims[1];
    n.value = Tensor::zeros({nn, d});
    std::size_t total = 0;
    for (std::size_t v = 0; v < nn; ++v) total += g.degree(v) + 1;
    n.saved.resize(total);
    std::size_t base = 0;
    for (std::size_t v = 0; v < nn; ++v) {
      const auto nb = g.neighbors(v);
      const std::size_t m = nb.size() + 1;
      double* alpha = n.saved.data() + base;
      alpha[0] = ts.v[v] + tn.v[v];
      for (std::size_t i = 0; i < nb.size(); ++i) alpha[1 + i] = ts.v[v] + tn.v[nb[i]];
      double row_max = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m; ++i) {
        alpha[i] = alpha[i] > 0.0 ? alpha[i] : slope * alpha[i];
        row_max = std::max(row_max, alpha[i]);
      }
      double denom = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        alpha[i] = std::exp(alpha[i] - row_max);
        denom += alpha[i];
      }
      double* out_row = n.value.v.data() + v * d;
      for (std::size_t i = 0; i < m; ++i) {
        alpha[i] /= denom;
        const std::size_t u = i == 0 ? v : nb[i - 1];
        const double* src = tv.v.data() + u * d;
        for (std::size_t j = 0; j < d; ++j) out_row[j] += alpha[i] * src[j];
      }
      base += m;
    }
    return push(std::move(n));
  }

  // out_v = sum_{t in T_v} w_t; the product X W for binary incidence X.
  TensorId incidence_matmul(const AttributeIncidence& x, TensorId w) {
    const Tensor& tw = value(w);
    if (tw.rank() != 2 || tw.dims[0] != x.num_attributes()) {
      throw DimensionError("incidence_matmul: weight rows must equal attribute count");
    }
    Node n = make(OpKind::kIncidenceMatmul, {w});
    n.incidence = &x;
    const std::size_t d = tw.dims[1];
    n.value = Tensor::zeros({x.num_nodes(), d});
    for (std::size_t v = 0; v < x.num_nodes(); ++v) {
      double* out_row = n.value.v.data() + v * d;
      for (const std::uint32_t t : x.attributes(v)) {
        const double* w_row = tw.v.data() + static_cast<std::size_t>(t) * d;
        for (std::size_t j = 0; j < d; ++j) out_row[j] += w_row[j];
      }
    }
    return push(std::move(n));
  }

  // Multi-head cross-attention from node queries to attribute keys/values,
  // masked so node v attends only to its own attributes T_v. Computed over the
  // ragged attribute lists, never over dense N_T-wide rows. Heads split the
  // feature dimension; outputs are written back into head-local columns, which
  // is exactly the concatenation of heads. Nodes with empty T_v produce a zero
  // row. `logit_offsets`, when present, is aligned with the flattened
  // incidence entries and is added to the attention logits (magnitude mode).
  TensorId masked_cross_attention(TensorId q, TensorId k, TensorId v,
                                  const AttributeIncidence& x, double scale, std::size_t heads,
                                  const std::vector<double>* logit_offsets = nullptr) {
    const Tensor& tq = value(q);
    const Tensor& tk = value(k);
    const Tensor& tv = value(v);
    if (tq.rank() != 2 || tk.rank() != 2 || tv.rank() != 2 || tq.dims[1] != tk.dims[1] ||
        tk.dims != tv.dims || tq.dims[0] != x.num_nodes() || tk.dims[0] != x.num_attributes()) {
      throw DimensionError("masked_cross_attention: inconsistent operand shapes");
    }
    const std::size_t d = tq.dims[1];
    if (heads == 0 || d % heads != 0) {
      throw ContractError("masked_cross_attention: heads must divide feature dim");
    }
    if (logit_offsets && logit_offsets->size() != x.total_entries()) {
      throw DimensionError("masked_cross_attention: logit offsets misaligned with incidence");
    }
    Node n = make(OpKind::kMaskedCrossAttention, {q, k, v});
    n.incidence = &x;
    n.darg0 = scale;
    n.iargs = {heads};
    if (logit_offsets) {
      n.aux = Tensor({logit_offsets->size()}, *logit_offsets);
    }
    const std::size_t dh = d / heads;
    n.value = Tensor::zeros({x.num_nodes(), d});
    n.saved.assign(x.total_entries() * heads, 0.0);
    std::vector<double> logits;
    for (std::size_t node = 0; node < x.num_nodes(); ++node) {
      const auto attrs = x.attributes(node);
      if (attrs.empty()) continue;  // zero O-row; flagged by the caller
      const std::size_t base = x.entry_offset(node);
      logits.resize(attrs.size());
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        const double* q_row = tq.v.data() + node * d + c0;
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < attrs.size(); ++i) {
          const double* k_row = tk.v.data() + static_cast<std::size_t>(attrs[i]) * d + c0;
          double dot = 0.0;
          for (std::size_t j = 0; j < dh; ++j) dot += q_row[j] * k_row[j];
          dot *= scale;
          if (logit_offsets) dot += (*logit_offsets)[base + i];
          logits[i] = dot;
          row_max = std::max(row_max, dot);
        }
        double denom = 0.0;
        for (std::size_t i = 0; i < attrs.size(); ++i) {
          logits[i] = std::exp(logits[i] - row_max);
          denom += logits[i];
        }
        double* out_row = n.value.v.data() + node * d + c0;
        for (std::size_t i = 0; i < attrs.size(); ++i) {
          const double alpha = logits[i] / denom;
          n.saved[(base + i) * heads + h] = alpha;
          const double* v_row = tv.v.data() + static_cast<std::size_t>(attrs[i]) * d + c0;
          for (std::size_t j = 0; j < dh; ++j) out_row[j] += alpha * v_row[j];
        }
      }
    }
    return push(std::move(n));
  }

  // Attention weights of a masked_cross_attention node, laid out as
  // [incidence entry][head].
  std::span<const double> attention_weights(TensorId id) const {
    const Node& n = nodes_[id];
    if (n.kind != OpKind::kMaskedCrossAttention) {
      throw ContractError("attention_weights: node is not a masked cross-attention");
    }
    return n.saved;
  }

  // Mean binary cross-entropy of scores in (0,1) against 0/1 labels. Scores
  // are clamped to [1e-12, 1 - 1e-12] before the logs.
  TensorId bce_loss(TensorId scores, Tensor labels) {
    const Tensor& ts = value(scores);
    if (ts.numel() != labels.numel()) throw DimensionError("bce_loss: label count mismatch");
    if (ts.numel() == 0) throw ContractError("bce_loss: empty score vector");
    Node n = make(OpKind::kBceLoss, {scores});
    constexpr double kEps = 1e-12;
    double total = 0.0;
    for (std::size_t i = 0; i < ts.numel(); ++i) {
      const double s = std::clamp(ts.v[i], kEps, 1.0 - kEps);
      const double y = labels.v[i];
      total -= y * std::log(s) + (1.0 - y) * std::log(1.0 - s);
    }
    n.value = Tensor::scalar(total / static_cast<double>(ts.numel()));
    n.aux = std::move(labels);
    return push(std::move(n));
  }

  // Mean softmax cross-entropy of logits[rows] against integer labels.
  TensorId softmax_cross_entropy(TensorId logits, const std::vector<std::size_t>& rows,
                                 const std::vector<int>& labels) {
    const Tensor& tl = value(logits);
    if (tl.rank() != 2) throw DimensionError("softmax_cross_entropy: 2-d logits required");
    if (rows.empty()) throw ContractError("softmax_cross_entropy: empty row set");
    const std::size_t c = tl.dims[1];
    Node n = make(OpKind::kSoftmaxCrossEntropy, {logits});
    n.saved.resize(rows.size() * c);
    n.iargs.reserve(rows.size() * 2);
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t r = rows[i];
      if (r >= tl.dims[0]) throw ContractError("softmax_cross_entropy: row out of range");
      const int label = labels[r];
      if (label < 0 || static_cast<std::size_t>(label) >= c) {
        throw ContractError("softmax_cross_entropy: label out of range");
      }
      const double* row = tl.v.data() + r * c;
      double row_max = row[0];
      for (std::size_t j = 1; j < c; ++j) row_max = std::max(row_max, row[j]);
      double denom = 0.0;
      for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - row_max);
      for (std::size_t j = 0; j < c; ++j) n.saved[i * c + j] = std::exp(row[j] - row_max) / denom;
      total -= std::log(n.saved[i * c + static_cast<std::size_t>(label)]);
      n.iargs.push_back(r);
      n.iargs.push_back(static_cast<std::size_t>(label));
    }
    n.value = Tensor::scalar(total / static_cast<double>(rows.size()));
    return push(std::move(n));
  }

  // Exact reverse-mode gradients of a scalar loss with respect to every node.
  // Entries of the result are empty tensors where no gradient flowed.
  std::vector<Tensor> backward(TensorId loss) const {
    if (value(loss).numel() != 1) {
      throw ContractError("backward: loss must be a scalar tensor");
    }
    return backward_seeded(loss, Tensor::scalar(1.0), kNoTensor);
  }

  // Backward pass from an arbitrary seed dL/d(out). When restrict_to names a
  // leaf, gradient propagation is pruned to the nodes that depend on it.
  std::vector<Tensor> backward_seeded(TensorId out, const Tensor& seed,
                                      TensorId restrict_to) const {
    if (!value(out).same_shape(seed)) {
      throw DimensionError("backward_seeded: seed shape must match output");
    }
    std::vector<char> needed;
    if (restrict_to != kNoTensor) {
      needed.assign(nodes_.size(), 0);
      needed[restrict_to] = 1;
      for (std::size_t i = restrict_to + 1; i < nodes_.size(); ++i) {
        for (const TensorId in : nodes_[i].inputs) {
          if (needed[in]) {
            needed[i] = 1;
            break;
          }
        }
      }
      if (!needed[out]) {
        // Output does not depend on the leaf; all gradients are zero.
        return std::vector<Tensor>(nodes_.size());
      }
    }
    std::vector<Tensor> grads(nodes_.size());
    grads[out] = seed;
    for (std::size_t idx = out + 1; idx-- > 0;) {
      if (grads[idx].empty()) continue;
      if (restrict_to != kNoTensor && !needed[idx]) continue;
      accumulate_input_grads(idx, grads, restrict_to == kNoTensor ? nullptr : needed.data());
    }
    return grads;
  }

  // Influence matrix per the summed-absolute-Jacobian definition: entry
  // (i, u) = sum over output dims j and input dims c of
  // |d out(out_rows[i], j) / d in(u, c)|, computed by one backward pass per
  // (output row, output dim). Rows are independent and processed in parallel.
  Tensor jacobian_influence(TensorId out, const std::vector<std::size_t>& out_rows,
                            TensorId in) const;

 private:
  Node make(OpKind kind, std::vector<TensorId> inputs) const {
    Node n;
    n.kind = kind;
    n.inputs = std::move(inputs);
    for (const TensorId id : n.inputs) {
      if (id >= nodes_.size()) throw ContractError("op input refers to an unknown tensor id");
    }
    return n;
  }

  TensorId push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  void require_same_shape(TensorId a, TensorId b, const char* op) const {
    if (!value(a).same_shape(value(b))) {
      throw DimensionError(std::string(op) + ": shapes differ (" + shape_str(value(a)) + " vs " +
                           shape_str(value(b)) + ")");
    }
  }

  static std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.dims.size(); ++i) {
      if (i) s += " x ";
      s += std::to_string(t.dims[i]);
    }
    return s + "]";
  }

  static Tensor& ensure(std::vector<Tensor>& grads, TensorId id, const Tensor& like) {
    if (grads[id].empty()) grads[id] = Tensor::zeros(like.dims);
    return grads[id];
  }

  // Dispatch the vector-Jacobian product of node idx into its inputs' gradient
  // buffers. `needed` (when non-null) suppresses accumulation into inputs that
  // cannot reach the restricted leaf.
  void accumulate_input_grads(TensorId idx, std::vector<Tensor>& grads,
                              const char* needed) const {
    const Node& n = nodes_[idx];
    const Tensor& g = grads[idx];
    auto wants = [&](TensorId id) { return needed == nullptr || needed[id]; };
    switch (n.kind) {
      case OpKind::kLeaf:
        return;
      case OpKind::kAdd: {
        for (const TensorId in : n.inputs) {
          if (!wants(in)) continue;
          Tensor& gi = ensure(grads, in, value(in));
          for (std::size_t i = 0; i < g.v.size(); ++i) gi.v[i] += g.v[i];
        }
        return;
      }
      case OpKind::kAddRowVector: {
        const std::size_t m = g.dims[0], d = g.dims[1];
        if (wants(n.inputs[0])) {
          Tensor& gx = ensure(grads, n.inputs[0], value(n.inputs[0]));
          for (std::size_t i = 0; i < g.v.size(); ++i) gx.v[i] += g.v[i];
        }
        if (wants(n.inputs[1])) {
          Tensor& gb = ensure(grads, n.inputs[1], value(n.inputs[1]));
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < d; ++j) gb.v[j] += g.v[r * d + j];
          }
        }
        return;
      }
      case OpKind::kScale: {
        if (!wants(n.inputs[0])) return;
        Tensor& gi = ensure(grads, n.inputs[0], value(n.inputs[0]));
        for (std::size_t i = 0; i < g.v.size(); ++i) gi.v[i] += n.darg0 * g.v[i];
        return;
      }
      case OpKind::kScaleByScalar: {
        const Tensor& x = value(n.inputs[0]);
        const double s = value(n.inputs[1]).v[0];
        if (wants(n.inputs[0])) {
          Tensor& gx = ensure(grads, n.inputs[0], x);
          for (std::size_t i = 0; i < g.v.size(); ++i) gx.v[i] += s * g.v[i];
        }
        if (wants(n.inputs[1])) {
          Tensor& gs = ensure(grads, n.inputs[1], value(n.inputs[1]));
          double acc = 0.0;
          for (std::size_t i = 0; i < g.v.size(); ++i) acc += g.v[i] * x.v[i];
          gs.v[0] += acc;
        }
        return;
      }
      case OpKind::kHadamard: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        if (wants(n.inputs[0])) {
          Tensor& ga = ensure(grads, n.inputs[0], a);
          for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * b.v[i];
        }
        if (wants(n.inputs[1])) {
          Tensor& gb = ensure(grads, n.inputs[1], b);
          for (std::size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i] * a.v[i];
        }
        return;
      }
      case OpKind::kMatmul: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        const std::size_t m = a.dims[0], k = a.dims[1], c = b.dims[1];
        if (wants(n.inputs[0])) {
          Tensor& ga = ensure(grads, n.inputs[0], a);
          detail::mm_nt(g.v.data(), b.v.data(), ga.v.data(), m, c, k);
        }
        if (wants(n.inputs[1])) {
          Tensor& gb = ensure(grads, n.inputs[1], b);
          detail::mm_tn(a.v.data(), g.v.data(), gb.v.data(), m, k, c);
        }
        return;
      }
      case OpKind::kTranspose: {
        if (!wants(n.inputs[0])) return;
        const Tensor& a = value(n.inputs[0]);
        Tensor& ga = ensure(grads, n.inputs[0], a);
        const std::size_t m = a.dims[0], d = a.dims[1];
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t c = 0; c < d; ++c) ga.v[r * d + c] += g.v[c * m + r];
        }
        return;
      }
      case OpKind::kRelu: {
        if (!wants(n.inputs[0])) return;
        const Tensor& a = value(n.inputs[0]);
        Tensor& ga = ensure(grads, n.inputs[0], a);
        for (std::size_t i = 0; i < g.v.size(); ++i) {
          if (a.v[i] > 0.0) ga.v[i] += g.v[i];
        }
        return;
      }
      case OpKind::kSigmoid: {
        if (!wants(n.inputs[0])) return;
        Tensor& ga = ensure(grads, n.inputs[0], value(n.inputs[0]));
        for (std::size_t i = 0; i < g.v.size(); ++i) {
          const double s = n.value.v[i];
          ga.v[i] += g.v[i] * s * (1.0 - s);
        }
        return;
      }
      case OpKind::kConcatCols: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        const std::size_t m = a.dims[0], p = a.dims[1], q = b.dims[1];
        if (wants(n.inputs[0])) {
          Tensor& ga = ensure(grads, n.inputs[0], a);
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < p; ++j) ga.v[r * p + j] += g.v[r * (p + q) + j];
          }
        }
        if (wants(n.inputs[1])) {
          Tensor& gb = ensure(grads, n.inputs[1], b);
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < q; ++j) gb.v[r * q + j] += g.v[r * (p + q) + p + j];
          }
        }
        return;
      }
      case OpKind::kSliceCols: {
        if (!wants(n.inputs[0])) return;
        const Tensor& a = value(n.inputs[0]);
        Tensor& ga = ensure(grads, n.inputs[0], a);
        const std::size_t first = n.iargs[0], count = n.iargs[1], d = a.dims[1];
        for (std::size_t r = 0; r < a.dims[0]; ++r) {
          for (std::size_t j = 0; j < count; ++j) ga.v[r * d + first + j] += g.v[r * count + j];
        }
        return;
      }
      case OpKind::kMaskedSoftmaxRows: {
        if (!wants(n.inputs[0])) return;
        Tensor& ga = ensure(grads, n.inputs[0], value(n.inputs[0]));
        const std::size_t m = g.dims[0], d = g.dims[1];
        for (std::size_t r = 0; r < m; ++r) {
          double t = 0.0;
          for (std::size_t j = 0; j < d; ++j) t += g.v[r * d + j] * n.value.v[r * d + j];
          for (std::size_t j = 0; j < d; ++j) {
            ga.v[r * d + j] += n.value.v[r * d + j] * (g.v[r * d + j] - t);
          }
        }
        return;
      }
      case OpKind::kLayerNorm: {
        const Tensor& x = value(n.inputs[0]);
        const Tensor& gain = value(n.inputs[1]);
        const std::size_t m = x.dims[0], d = x.dims[1];
        const double* xhat = n.saved.data();
        const double* inv_std = n.saved.data() + m * d;
        if (wants(n.inputs[1])) {
          Tensor& gg = ensure(grads, n.inputs[1], gain);
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < d; ++j) gg.v[j] += g.v[r * d + j] * xhat[r * d + j];
          }
        }
        if (wants(n.inputs[2])) {
          Tensor& gb = ensure(grads, n.inputs[2], value(n.inputs[2]));
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < d; ++j) gb.v[j] += g.v[r * d + j];
          }
        }
        if (wants(n.inputs[0])) {
          Tensor& gx = ensure(grads, n.inputs[0], x);
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < m; ++r) {
            double sum_gh = 0.0, sum_gh_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g.v[r * d + j] * gain.v[j];
              sum_gh += gh;
              sum_gh_xhat += gh * xhat[r * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g.v[r * d + j] * gain.v[j];
              gx.v[r * d + j] +=
                  inv_std[r] * (gh - inv_d * sum_gh - inv_d * xhat[r * d + j] * sum_gh_xhat);
            }
          }
        }
        return;
      }
      case OpKind::kSumAll: {
        if (!wants(n.inputs[0])) return;
        Tensor& ga = ensure(grads, n.inputs[0], value(n.inputs[0]));
        for (double& x : ga.v) x += g.v[0];
        return;
      }
      case OpKind::kGatherRows: {
        if (!wants(n.inputs[0])) return;
        const Tensor& a = value(n.inputs[0]);
        Tensor& ga = ensure(grads, n.inputs[0], a);
        const std::size_t d = a.dims[1];
        for (std::size_t i = 0; i < n.iargs.size(); ++i) {
          const std::size_t r = n.iargs[i];
          for (std::size_t j = 0; j < d; ++j) ga.v[r * d + j] += g.v[i * d + j];
        }
        return;
      }
      case OpKind::kDropout: {
        if (!wants(n.inputs[0])) return;
        Tensor& ga = ensure(grads, n.inputs[0], value(n.inputs[0]));
        for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * n.saved[i];
        return;
      }
      case OpKind::kGcnAggregate: {
        if (!wants(n.inputs[0])) return;
        const Tensor& a = value(n.inputs[0]);
        Tensor& ga = ensure(grads, n.inputs[0], a);
        // M is symmetric: dX = M g, accumulated via a scratch buffer.
        std::vector<double> tmp(g.v.size(), 0.0);
        detail::gcn_aggregate_rows(*n.graph, g.v.data(), tmp.data(), a.dims[1]);
        for (std::size_t i = 0; i < tmp.size(); ++i) ga.v[i] += tmp[i];
        return;
      }
      case OpKind::kAttentionAggregate: {
        const Graph& gr = *n.graph;
        const Tensor& s = value(n.inputs[0]);
        const Tensor& fs = value(n.inputs[1]);
        const Tensor& fn = value(n.inputs[2]);
        const std::size_t d = s.dims[1];
        const double slope = n.darg0;
        Tensor* gs = wants(n.inputs[0]) ? &ensure(grads, n.inputs[0], s) : nullptr;
        Tensor* gfs = wants(n.inputs[1]) ? &ensure(grads, n.inputs[1], fs) : nullptr;
        Tensor* gfn = wants(n.inputs[2]) ? &ensure(grads, n.inputs[2], fn) : nullptr;
        std::size_t base = 0;
        std::vector<double> dalpha;
        for (std::size_t vtx = 0; vtx < gr.num_nodes(); ++vtx) {
          const auto nb = gr.neighbors(vtx);
          const std::size_t m = nb.size() + 1;
          const double* alpha = n.saved.data() + base;
          const double* gout = g.v.data() + vtx * d;
          dalpha.assign(m, 0.0);
          double t = 0.0;
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t u = i == 0 ? vtx : nb[i - 1];
            const double* s_row = s.v.data() + u * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += gout[j] * s_row[j];
            dalpha[i] = dot;
            t += alpha[i] * dot;
            if (gs) {
              double* gs_row = gs->v.data() + u * d;
              for (std::size_t j = 0; j < d; ++j) gs_row[j] += alpha[i] * gout[j];
            }
          }
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t u = i == 0 ? vtx : nb[i - 1];
            const double pre = fs.v[vtx] + fn.v[u];
            const double dpre = alpha[i] * (dalpha[i] - t) * (pre > 0.0 ? 1.0 : slope);
            if (gfs) gfs->v[vtx] += dpre;
            if (gfn) gfn->v[u] += dpre;
          }
          base += m;
        }
        return;
      }
      case OpKind::kIncidenceMatmul: {
        if (!wants(n.inputs[0])) return;
        const Tensor& w = value(n.inputs[0]);
        Tensor& gw = ensure(grads, n.inputs[0], w);
        const std::size_t d = w.dims[1];
        const AttributeIncidence& x = *n.incidence;
        for (std::size_t vtx = 0; vtx < x.num_nodes(); ++vtx) {
          const double* g_row = g.v.data() + vtx * d;
          for (const std::uint32_t t : x.attributes(vtx)) {
            double* gw_row = gw.v.data() + static_cast<std::size_t>(t) * d;
            for (std::size_t j = 0; j < d; ++j) gw_row[j] += g_row[j];
          }
        }
        return;
      }
      case OpKind::kMaskedCrossAttention: {
        const Tensor& q = value(n.inputs[0]);
        const Tensor& k = value(n.inputs[1]);
        const Tensor& vv = value(n.inputs[2]);
        const AttributeIncidence& x = *n.incidence;
        const std::size_t heads = n.iargs[0];
        const std::size_t d = q.dims[1];
        const std::size_t dh = d / heads;
        const double scale = n.darg0;
        Tensor* gq = wants(n.inputs[0]) ? &ensure(grads, n.inputs[0], q) : nullptr;
        Tensor* gk = wants(n.inputs[1]) ? &ensure(grads, n.inputs[1], k) : nullptr;
        Tensor* gv = wants(n.inputs[2]) ? &ensure(grads, n.inputs[2], vv) : nullptr;
        std::vector<double> dalpha;
        for (std::size_t node = 0; node < x.num_nodes(); ++node) {
          const auto attrs = x.attributes(node);
          if (attrs.empty()) continue;
          const std::size_t base = x.entry_offset(node);
          dalpha.resize(attrs.size());
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dh;
            const double* gout = g.v.data() + node * d + c0;
            double t = 0.0;
            for (std::size_t i = 0; i < attrs.size(); ++i) {
              const double alpha = n.saved[(base + i) * heads + h];
              const double* v_row = vv.v.data() + static_cast<std::size_t>(attrs[i]) * d + c0;
              double dot = 0.0;
              for (std::size_t j = 0; j < dh; ++j) dot += gout[j] * v_row[j];
              dalpha[i] = dot;
              t += alpha * dot;
              if (gv) {
                double* gv_row = gv->v.data() + static_cast<std::size_t>(attrs[i]) * d + c0;
                for (std::size_t j = 0; j < dh; ++j) gv_row[j] += alpha * gout[j];
              }
            }
            const double* q_row = q.v.data() + node * d + c0;
            for (std::size_t i = 0; i < attrs.size(); ++i) {
              const double alpha = n.saved[(base + i) * heads + h];
              const double dlogit = scale * alpha * (dalpha[i] - t);
              const double* k_row = k.v.data() + static_cast<std::size_t>(attrs[i]) * d + c0;
              if (gq) {
                double* gq_row = gq->v.data() + node * d + c0;
                for (std::size_t j = 0; j < dh; ++j) gq_row[j] += dlogit * k_row[j];
              }
              if (gk) {
                double* gk_row = gk->v.data() + static_cast<std::size_t>(attrs[i]) * d + c0;
                for (std::size_t j = 0; j < dh; ++j) gk_row[j] += dlogit * q_row[j];
              }
            }
          }
        }
        return;
      }
      case OpKind::kBceLoss: {
        if (!wants(n.inputs[0])) return;
        const Tensor& s = value(n.inputs[0]);
        Tensor& gs = ensure(grads, n.inputs[0], s);
        constexpr double kEps = 1e-12;
        const double inv_n = 1.0 / static_cast<double>(s.numel());
        for (std::size_t i = 0; i < s.numel(); ++i) {
          const double sc = std::clamp(s.v[i], kEps, 1.0 - kEps);
          gs.v[i] += g.v[0] * inv_n * (sc - n.aux.v[i]) / (sc * (1.0 - sc));
        }
        return;
      }
      case OpKind::kSoftmaxCrossEntropy: {
        if (!wants(n.inputs[0])) return;
        const Tensor& logits = value(n.inputs[0]);
        Tensor& gl = ensure(grads, n.inputs[0], logits);
        const std::size_t c = logits.dims[1];
        const std::size_t count = n.iargs.size() / 2;
        const double inv_n = 1.0 / static_cast<double>(count);
        for (std::size_t i = 0; i < count; ++i) {
          const std::size_t r = n.iargs[2 * i];
          const std::size_t label = n.iargs[2 * i + 1];
          for (std::size_t j = 0; j < c; ++j) {
            double p = n.saved[i * c + j];
            if (j == label) p -= 1.0;
            gl.v[r * c + j] += g.v[0] * inv_n * p;
          }
        }
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<TensorId> outputs_;
};

inline Tensor Trace::jacobian_influence(TensorId out, const std::vector<std::size_t>& out_rows,
                                        TensorId in) const {
  if (!is_leaf(in)) throw ContractError("jacobian_influence: input tensor must be a trace leaf");
  const Tensor& out_val = value(out);
  const Tensor& in_val = value(in);
  if (out_val.rank() != 2 || in_val.rank() != 2) {
    throw ContractError("jacobian_influence: output and input must be 2-d");
  }
  for (const std::size_t r : out_rows) {
    if (r >= out_val.dims[0]) {
      throw ContractError("jacobian_influence: output row " + std::to_string(r) +
                          " is not produced by the trace");
    }
  }
  const std::size_t d_out = out_val.dims[1];
  const std::size_t n_in = in_val.dims[0];
  const std::size_t d_in = in_val.dims[1];
  Tensor influence = Tensor::zeros({out_rows.size(), n_in});
  // One backward pass per (output row, output dim); |.| keeps the sign
  // bookkeeping exact for models with signed weights.
  parallel_for(out_rows.size(), [&](std::size_t i) {
    const std::size_t row = out_rows[i];
    Tensor seed = Tensor::zeros(out_val.dims);
    double* acc = influence.v.data() + i * n_in;
    for (std::size_t j = 0; j < d_out; ++j) {
      seed.v[row * d_out + j] = 1.0;
      const std::vector<Tensor> grads = backward_seeded(out, seed, in);
      seed.v[row * d_out + j] = 0.0;
      if (grads[in].empty()) continue;
      const double* gin = grads[in].v.data();
      for (std::size_t u = 0; u < n_in; ++u) {
        double sum = 0.0;
        for (std::size_t c = 0; c < d_in; ++c) sum += std::abs(gin[u * d_in + c]);
        acc[u] += sum;
      }
    }
  });
  return influence;
}

}  // namespace overdilute
