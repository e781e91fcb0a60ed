#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "overdilute/errors.hpp"

namespace overdilute {

using Edge = std::pair<std::uint32_t, std::uint32_t>;

// Immutable undirected graph in compressed adjacency form. Self-loops are
// never stored; they are implicit in self_loop_degree (deg~(v) = |N(v)|+1).
class Graph {
 public:
  Graph() = default;

  // Node ids must be dense in [0, num_nodes); self-loop edges are rejected.
  // Duplicate edges (in either orientation) collapse to one stored edge per
  // direction.
  static Graph from_edges(std::size_t num_nodes, const std::vector<Edge>& edges) {
    std::vector<std::vector<std::uint32_t>> adj(num_nodes);
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const auto [u, v] = edges[i];
      if (u >= num_nodes || v >= num_nodes) {
        throw FormatError("edge " + std::to_string(i) + " references node id out of range [0, " +
                          std::to_string(num_nodes) + ")");
      }
      if (u == v) {
        throw FormatError("edge " + std::to_string(i) + " is a self-loop (" + std::to_string(u) +
                          "," + std::to_string(v) + "); self-loops are implicit");
      }
      adj[u].push_back(v);
      adj[v].push_back(u);
    }
    Graph g;
    g.num_nodes_ = num_nodes;
    g.offsets_.assign(num_nodes + 1, 0);
    for (std::size_t v = 0; v < num_nodes; ++v) {
      auto& nb = adj[v];
      std::sort(nb.begin(), nb.end());
      nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
      g.offsets_[v + 1] = g.offsets_[v] + nb.size();
    }
    g.neighbors_.reserve(g.offsets_[num_nodes]);
    g.self_loop_degree_.resize(num_nodes);
    for (std::size_t v = 0; v < num_nodes; ++v) {
      g.neighbors_.insert(g.neighbors_.end(), adj[v].begin(), adj[v].end());
      g.self_loop_degree_[v] = adj[v].size() + 1;
    }
    return g;
  }

  std::size_t num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return neighbors_.size() / 2; }

  std::span<const std::uint32_t> neighbors(std::size_t v) const {
    return {neighbors_.data() + offsets_[v], neighbors_.data() + offsets_[v + 1]};
  }

  std::size_t degree(std::size_t v) const { return offsets_[v + 1] - offsets_[v]; }

  // deg~(v) = |N(v)| + 1, counting the implicit self-loop.
  std::size_t self_loop_degree(std::size_t v) const { return self_loop_degree_[v]; }

  bool has_edge(std::size_t u, std::size_t v) const {
    const auto nb = neighbors(u);
    return std::binary_search(nb.begin(), nb.end(), static_cast<std::uint32_t>(v));
  }

  // Undirected edge list with u < v, sorted.
  std::vector<Edge> edge_list() const {
    std::vector<Edge> edges;
    edges.reserve(num_edges());
    for (std::uint32_t v = 0; v < num_nodes_; ++v) {
      for (const std::uint32_t u : neighbors(v)) {
        if (v < u) edges.emplace_back(v, u);
      }
    }
    return edges;
  }

 private:
  std::size_t num_nodes_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> neighbors_;
  std::vector<std::size_t> self_loop_degree_;
};

// Dense l-hop propagation matrix M = (D~^{-1/2} A~ D~^{-1/2})^l. Kept dense:
// the analysis path works on graphs of at most a few thousand nodes and the
// closed-form dilution quantities are statements about entries of M^l.
struct PropagationMatrix {
  std::size_t n = 0;
  int hops = 0;
  std::vector<double> m;  // row-major n*n

  double at(std::size_t r, std::size_t c) const { return m[r * n + c]; }
  double& at(std::size_t r, std::size_t c) { return m[r * n + c]; }
};

// One-hop GCN propagation: M_vv = 1/deg~(v), M_vu = 1/sqrt(deg~(v) deg~(u))
// on edges, 0 elsewhere.
inline PropagationMatrix normalized_adjacency(const Graph& g) {
  const std::size_t n = g.num_nodes();
  PropagationMatrix p;
  p.n = n;
  p.hops = 1;
  p.m.assign(n * n, 0.0);
  std::vector<double> inv_sqrt(n);
  for (std::size_t v = 0; v < n; ++v) {
    inv_sqrt[v] = 1.0 / std::sqrt(static_cast<double>(g.self_loop_degree(v)));
  }
  for (std::size_t v = 0; v < n; ++v) {
    p.at(v, v) = 1.0 / static_cast<double>(g.self_loop_degree(v));
    for (const std::uint32_t u : g.neighbors(v)) {
      p.at(v, u) = inv_sqrt[v] * inv_sqrt[u];
    }
  }
  return p;
}

namespace detail {

inline void dense_matmul_accumulate(const std::vector<double>& a, const std::vector<double>& b,
                                    std::vector<double>& out, std::size_t n) {
  // ikj order; accumulation order fixed for determinism.
  for (std::size_t i = 0; i < n; ++i) {
    double* out_row = out.data() + i * n;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a[i * n + k];
      if (aik == 0.0) continue;
      const double* b_row = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aik * b_row[j];
    }
  }
}

}  // namespace detail

// Exact dense power by repeated multiplication. l = 0 yields the identity.
inline PropagationMatrix matrix_power(const PropagationMatrix& base, int l) {
  if (l < 0) throw ContractError("matrix_power: negative hop count");
  const std::size_t n = base.n;
  PropagationMatrix out;
  out.n = n;
  out.hops = base.hops * l;
  if (l == 0) {
    out.m.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) out.m[i * n + i] = 1.0;
    return out;
  }
  out.m = base.m;
  std::vector<double> next(n * n);
  for (int step = 1; step < l; ++step) {
    std::fill(next.begin(), next.end(), 0.0);
    detail::dense_matmul_accumulate(out.m, base.m, next, n);
    out.m.swap(next);
  }
  return out;
}

// |B_l(v)| for every node: count of nodes within shortest-path distance l.
inline std::vector<std::size_t> receptive_field_sizes(const Graph& g, int l) {
  if (l < 0) throw ContractError("receptive_field_sizes: negative radius");
  const std::size_t n = g.num_nodes();
  std::vector<std::size_t> sizes(n, 1);
  if (l == 0) return sizes;
  std::vector<int> dist(n);
  std::vector<std::uint32_t> queue;
  queue.reserve(n);
  for (std::size_t v = 0; v < n; ++v) {
    std::fill(dist.begin(), dist.end(), -1);
    queue.clear();
    queue.push_back(static_cast<std::uint32_t>(v));
    dist[v] = 0;
    std::size_t count = 0;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::uint32_t x = queue[head];
      ++count;
      if (dist[x] == l) continue;
      for (const std::uint32_t u : g.neighbors(x)) {
        if (dist[u] < 0) {
          dist[u] = dist[x] + 1;
          queue.push_back(u);
        }
      }
    }
    sizes[v] = count;
  }
  return sizes;
}

}  // namespace overdilute
