#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "overdilute/errors.hpp"
#include "overdilute/graph.hpp"
#include "overdilute/incidence.hpp"
#include "overdilute/rng.hpp"
#include "overdilute/tensor.hpp"
#include "overdilute/text.hpp"

namespace overdilute {

// Train/valid/test partition of the undirected edge set, plus sampled
// negatives for the scored splits. Positive splits never overlap; negatives
// never collide with any positive edge.
struct LinkSplit {
  std::vector<Edge> train_pos;
  std::vector<Edge> valid_pos;
  std::vector<Edge> test_pos;
  std::vector<Edge> valid_neg;
  std::vector<Edge> test_neg;
  std::uint64_t seed = 0;
};

struct NodeSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
};

struct Dataset {
  std::string name;
  Graph graph;
  AttributeIncidence attrs;
  std::vector<int> labels;             // empty when the dataset is unlabeled
  std::vector<double> magnitudes;      // aligned with incidence entries; empty when binary
  std::optional<NodeSplit> node_split;
  std::map<std::string, std::string> meta;

  bool has_labels() const { return !labels.empty(); }
  std::size_t num_classes() const {
    int c = 0;
    for (const int l : labels) c = std::max(c, l + 1);
    return static_cast<std::size_t>(c);
  }
};

namespace detail {

inline std::vector<std::vector<std::uint32_t>> incidence_lists(const AttributeIncidence& x) {
  std::vector<std::vector<std::uint32_t>> lists(x.num_nodes());
  for (std::size_t v = 0; v < x.num_nodes(); ++v) {
    const auto a = x.attributes(v);
    lists[v].assign(a.begin(), a.end());
  }
  return lists;
}

}  // namespace detail

// Gives every attribute-less node one shared extra attribute (id N_T, which
// grows by one) so downstream attention masks are never empty. Returns the
// number of nodes patched.
inline std::size_t inject_dummy_attribute(Dataset& ds) {
  const auto empty = ds.attrs.attributeless_nodes();
  if (empty.empty()) return 0;
  const std::size_t old_total = ds.attrs.total_entries();
  auto lists = detail::incidence_lists(ds.attrs);
  const auto dummy = static_cast<std::uint32_t>(ds.attrs.num_attributes());
  for (const std::size_t v : empty) lists[v].push_back(dummy);
  const AttributeIncidence old_attrs = ds.attrs;
  ds.attrs = AttributeIncidence::from_lists(ds.attrs.num_attributes() + 1, lists);
  if (!ds.magnitudes.empty()) {
    // Rebuild magnitudes with 0-strength dummies at the injected slots. The
    // dummy id is the largest, so it lands at the end of each node's entries.
    std::vector<double> mags;
    mags.reserve(old_total + empty.size());
    for (std::size_t v = 0; v < ds.attrs.num_nodes(); ++v) {
      const std::size_t old_count = old_attrs.count(v);
      const std::size_t old_base = old_attrs.entry_offset(v);
      for (std::size_t i = 0; i < old_count; ++i) mags.push_back(ds.magnitudes[old_base + i]);
      if (old_count == 0) mags.push_back(0.0);
    }
    ds.magnitudes = std::move(mags);
  }
  ds.meta["dummy_attribute"] = "1";
  return empty.size();
}

struct LoadOptions {
  // Matches the published handling of attribute-less nodes: assign them a
  // shared dummy attribute. Disable to keep empty T_v (zero attention rows).
  bool dummy_for_empty = true;
};

inline Dataset load_dataset(const std::filesystem::path& dir, const LoadOptions& opt = {}) {
  namespace fs = std::filesystem;
  Dataset ds;

  const auto meta_lines = read_lines(dir / "meta.txt");
  for (std::size_t i = 0; i < meta_lines.size(); ++i) {
    if (meta_lines[i].empty()) continue;
    const auto sp = meta_lines[i].find(' ');
    if (sp == std::string::npos) {
      throw FormatError("meta.txt line " + std::to_string(i + 1) + ": expected 'key value'");
    }
    ds.meta[meta_lines[i].substr(0, sp)] = meta_lines[i].substr(sp + 1);
  }
  for (const char* key : {"num_nodes", "num_attributes"}) {
    if (!ds.meta.count(key)) throw FormatError("meta.txt: missing required key " + std::string(key));
  }
  ds.name = ds.meta.count("name") ? ds.meta["name"] : dir.filename().string();
  const auto n = static_cast<std::size_t>(parse_long(ds.meta["num_nodes"], "meta.txt num_nodes"));
  const auto nt =
      static_cast<std::size_t>(parse_long(ds.meta["num_attributes"], "meta.txt num_attributes"));

  std::vector<Edge> edges;
  const auto edge_lines = read_lines(dir / "edges.tsv");
  for (std::size_t i = 0; i < edge_lines.size(); ++i) {
    if (edge_lines[i].empty()) continue;
    const auto f = split_fields(edge_lines[i], '\t');
    const std::string ctx = "edges.tsv line " + std::to_string(i + 1);
    if (f.size() != 2) throw FormatError(ctx + ": expected 'u<TAB>v'");
    const long u = parse_long(f[0], ctx), v = parse_long(f[1], ctx);
    if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
      throw FormatError(ctx + ": node id out of range [0, " + std::to_string(n) + ")");
    }
    if (u == v) throw FormatError(ctx + ": self-loop edges are not allowed");
    edges.emplace_back(static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v));
  }
  ds.graph = Graph::from_edges(n, edges);

  std::vector<std::vector<std::uint32_t>> lists(n);
  std::vector<std::vector<double>> mag_lists(n);
  bool any_magnitude = false;
  const auto attr_lines = read_lines(dir / "attrs.tsv");
  for (std::size_t i = 0; i < attr_lines.size(); ++i) {
    if (attr_lines[i].empty()) continue;
    const auto f = split_fields(attr_lines[i], '\t');
    const std::string ctx = "attrs.tsv line " + std::to_string(i + 1);
    if (f.size() != 2 && f.size() != 3) throw FormatError(ctx + ": expected 'node<TAB>attr[<TAB>value]'");
    const long v = parse_long(f[0], ctx), t = parse_long(f[1], ctx);
    if (v < 0 || static_cast<std::size_t>(v) >= n) throw FormatError(ctx + ": node id out of range");
    if (t < 0 || static_cast<std::size_t>(t) >= nt) {
      throw FormatError(ctx + ": attribute id out of range [0, " + std::to_string(nt) + ")");
    }
    for (const std::uint32_t seen : lists[v]) {
      if (seen == static_cast<std::uint32_t>(t)) {
        throw FormatError(ctx + ": duplicate attribute " + std::to_string(t) + " for node " +
                          std::to_string(v));
      }
    }
    lists[v].push_back(static_cast<std::uint32_t>(t));
    if (f.size() == 3) {
      any_magnitude = true;
      mag_lists[v].push_back(parse_double(f[2], ctx));
    } else {
      mag_lists[v].push_back(1.0);
    }
  }
  // Magnitudes follow the sorted-id entry order used by AttributeIncidence.
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<std::size_t> order(lists[v].size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return lists[v][a] < lists[v][b]; });
    std::vector<double> sorted_mags(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) sorted_mags[i] = mag_lists[v][order[i]];
    mag_lists[v] = std::move(sorted_mags);
  }
  ds.attrs = AttributeIncidence::from_lists(nt, lists);
  if (any_magnitude) {
    ds.magnitudes.reserve(ds.attrs.total_entries());
    for (std::size_t v = 0; v < n; ++v) {
      ds.magnitudes.insert(ds.magnitudes.end(), mag_lists[v].begin(), mag_lists[v].end());
    }
  }

  if (fs::exists(dir / "labels.tsv")) {
    ds.labels.assign(n, -1);
    const auto label_lines = read_lines(dir / "labels.tsv");
    for (std::size_t i = 0; i < label_lines.size(); ++i) {
      if (label_lines[i].empty()) continue;
      const auto f = split_fields(label_lines[i], '\t');
      const std::string ctx = "labels.tsv line " + std::to_string(i + 1);
      if (f.size() != 2) throw FormatError(ctx + ": expected 'node<TAB>label'");
      const long v = parse_long(f[0], ctx);
      if (v < 0 || static_cast<std::size_t>(v) >= n) throw FormatError(ctx + ": node id out of range");
      ds.labels[static_cast<std::size_t>(v)] = static_cast<int>(parse_long(f[1], ctx));
    }
    for (std::size_t v = 0; v < n; ++v) {
      if (ds.labels[v] < 0) throw FormatError("labels.tsv: node " + std::to_string(v) + " has no label");
    }
  }

  if (fs::exists(dir / "splits.tsv")) {
    NodeSplit split;
    const auto split_lines = read_lines(dir / "splits.tsv");
    for (std::size_t i = 0; i < split_lines.size(); ++i) {
      if (split_lines[i].empty()) continue;
      const auto f = split_fields(split_lines[i], '\t');
      const std::string ctx = "splits.tsv line " + std::to_string(i + 1);
      if (f.size() != 2) throw FormatError(ctx + ": expected 'node<TAB>split'");
      const long v = parse_long(f[0], ctx);
      if (v < 0 || static_cast<std::size_t>(v) >= n) throw FormatError(ctx + ": node id out of range");
      if (f[1] == "train") split.train.push_back(static_cast<std::size_t>(v));
      else if (f[1] == "valid") split.valid.push_back(static_cast<std::size_t>(v));
      else if (f[1] == "test") split.test.push_back(static_cast<std::size_t>(v));
      else throw FormatError(ctx + ": unknown split '" + f[1] + "'");
    }
    ds.node_split = std::move(split);
  }

  if (opt.dummy_for_empty) inject_dummy_attribute(ds);
  return ds;
}

// Deterministic writer: sorted ids, LF line endings, UTF-8.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    TextFile meta(dir / "meta.txt");
    std::map<std::string, std::string> all = ds.meta;
    all["name"] = ds.name;
    all["num_nodes"] = std::to_string(ds.graph.num_nodes());
    all["num_attributes"] = std::to_string(ds.attrs.num_attributes());
    for (const auto& [k, v] : all) meta.line(k + " " + v);
  }
  {
    TextFile edges(dir / "edges.tsv");
    for (const auto [u, v] : ds.graph.edge_list()) {
      edges.line(std::to_string(u) + "\t" + std::to_string(v));
    }
  }
  {
    TextFile attrs(dir / "attrs.tsv");
    for (std::size_t v = 0; v < ds.attrs.num_nodes(); ++v) {
      const auto a = ds.attrs.attributes(v);
      for (std::size_t i = 0; i < a.size(); ++i) {
        std::string row = std::to_string(v) + "\t" + std::to_string(a[i]);
        if (!ds.magnitudes.empty()) {
          row += "\t" + format_double(ds.magnitudes[ds.attrs.entry_offset(v) + i]);
        }
        attrs.line(row);
      }
    }
  }
  if (ds.has_labels()) {
    TextFile labels(dir / "labels.tsv");
    for (std::size_t v = 0; v < ds.labels.size(); ++v) {
      labels.line(std::to_string(v) + "\t" + std::to_string(ds.labels[v]));
    }
  }
  if (ds.node_split) {
    std::vector<std::pair<std::size_t, const char*>> rows;
    for (const std::size_t v : ds.node_split->train) rows.emplace_back(v, "train");
    for (const std::size_t v : ds.node_split->valid) rows.emplace_back(v, "valid");
    for (const std::size_t v : ds.node_split->test) rows.emplace_back(v, "test");
    std::sort(rows.begin(), rows.end());
    TextFile splits(dir / "splits.tsv");
    for (const auto& [v, s] : rows) splits.line(std::to_string(v) + "\t" + s);
  }
}

// Uniform random partition of the undirected edge set. Counts follow
// floor(ratio * |E|) for valid and test, with train taking the remainder.
// Negative lists are left empty; they are sampled by the trainer.
inline LinkSplit make_link_split(const Graph& g, std::array<double, 3> ratios,
                                 std::uint64_t seed) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ContractError("make_link_split: ratios must sum to 1");
  std::vector<Edge> edges = g.edge_list();
  const std::size_t n_valid = static_cast<std::size_t>(ratios[1] * static_cast<double>(edges.size()));
  const std::size_t n_test = static_cast<std::size_t>(ratios[2] * static_cast<double>(edges.size()));
  if ((ratios[1] > 0.0 && n_valid == 0) || (ratios[2] > 0.0 && n_test == 0)) {
    throw ContractError("make_link_split: too few edges for the requested ratios");
  }
  Rng rng(seed);
  rng.shuffle(edges);
  LinkSplit split;
  split.seed = seed;
  split.valid_pos.assign(edges.begin(), edges.begin() + n_valid);
  split.test_pos.assign(edges.begin() + n_valid, edges.begin() + n_valid + n_test);
  split.train_pos.assign(edges.begin() + n_valid + n_test, edges.end());
  return split;
}

struct SyntheticConfig {
  std::size_t num_classes = 7;
  std::size_t keys_per_class = 10;
  double p_key = 0.8;
  double p_nonkey = 0.2;
  // Total attribute count (class keys + filler). The filler default matches
  // the Cora-ML attribute-count scale; shrink it for desk-scale runs.
  std::size_t total_attributes = 2879;
  std::array<std::size_t, 3> split_sizes = {1000, 210, 1785};
  std::uint64_t seed = 0;
};

// Synthetic attribute set over an existing labeled topology: 10 key
// attributes per class held with p_key, every other attribute held with
// p_nonkey. Nodes left attribute-less by chance get one forced class key so
// no T_v is empty.
inline Dataset generate_synthetic(const Graph& base, const std::vector<int>& labels,
                                  const SyntheticConfig& cfg) {
  const std::size_t n = base.num_nodes();
  if (labels.size() != n) throw ContractError("generate_synthetic: label count mismatch");
  if (cfg.split_sizes[0] + cfg.split_sizes[1] + cfg.split_sizes[2] > n) {
    throw ContractError("generate_synthetic: split sizes exceed node count");
  }
  const std::size_t num_keys = cfg.num_classes * cfg.keys_per_class;
  if (cfg.total_attributes < num_keys) {
    throw ContractError("generate_synthetic: total attributes below key-attribute count");
  }
  for (const int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= cfg.num_classes) {
      throw ContractError("generate_synthetic: label out of range");
    }
  }
  Rng rng(cfg.seed);
  std::vector<std::vector<std::uint32_t>> lists(n);
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t cls = static_cast<std::size_t>(labels[v]);
    const std::size_t key_begin = cls * cfg.keys_per_class;
    for (std::size_t t = 0; t < cfg.total_attributes; ++t) {
      const bool is_key = t >= key_begin && t < key_begin + cfg.keys_per_class;
      if (rng.bernoulli(is_key ? cfg.p_key : cfg.p_nonkey)) {
        lists[v].push_back(static_cast<std::uint32_t>(t));
      }
    }
    if (lists[v].empty()) {
      lists[v].push_back(
          static_cast<std::uint32_t>(key_begin + rng.uniform_index(cfg.keys_per_class)));
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  NodeSplit split;
  split.train.assign(order.begin(), order.begin() + cfg.split_sizes[0]);
  split.valid.assign(order.begin() + cfg.split_sizes[0],
                     order.begin() + cfg.split_sizes[0] + cfg.split_sizes[1]);
  split.test.assign(order.begin() + cfg.split_sizes[0] + cfg.split_sizes[1],
                    order.begin() + cfg.split_sizes[0] + cfg.split_sizes[1] + cfg.split_sizes[2]);
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.valid.begin(), split.valid.end());
  std::sort(split.test.begin(), split.test.end());

  Dataset ds;
  ds.name = "synthetic";
  ds.graph = base;
  ds.attrs = AttributeIncidence::from_lists(cfg.total_attributes, lists);
  ds.labels = labels;
  ds.node_split = std::move(split);
  ds.meta["generator"] = "synthetic";
  ds.meta["num_classes"] = std::to_string(cfg.num_classes);
  ds.meta["keys_per_class"] = std::to_string(cfg.keys_per_class);
  ds.meta["p_key"] = format_double(cfg.p_key);
  ds.meta["p_nonkey"] = format_double(cfg.p_nonkey);
  ds.meta["seed"] = std::to_string(cfg.seed);
  return ds;
}

// Is attribute t a class key for the node's class under the synthetic layout?
inline bool is_class_key(const Dataset& ds, std::size_t node, std::uint32_t attr,
                         std::size_t keys_per_class) {
  const auto cls = static_cast<std::size_t>(ds.labels[node]);
  return attr >= cls * keys_per_class && attr < (cls + 1) * keys_per_class;
}

enum class BinarizeMode { kThreshold, kMagnitude };

struct BinarizeResult {
  AttributeIncidence attrs;
  std::vector<double> magnitudes;           // empty in threshold mode
  std::vector<std::size_t> empty_nodes;     // rows with no surviving attribute
};

// Threshold mode: attribute present iff value > tau (X becomes binary).
// Magnitude mode: attribute present iff value != 0; the values are kept and
// later added to the decoder's attention logits.
inline BinarizeResult binarize(const Tensor& features, BinarizeMode mode, double tau = 0.0) {
  if (features.rank() != 2) throw ContractError("binarize: 2-d feature matrix required");
  const std::size_t n = features.dims[0], nt = features.dims[1];
  BinarizeResult out;
  std::vector<std::vector<std::uint32_t>> lists(n);
  std::vector<double> mags;
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t t = 0; t < nt; ++t) {
      const double x = features.v[v * nt + t];
      if (std::isnan(x)) {
        throw FormatError("binarize: NaN at (" + std::to_string(v) + ", " + std::to_string(t) + ")");
      }
      const bool present = mode == BinarizeMode::kThreshold ? x > tau : x != 0.0;
      if (present) {
        lists[v].push_back(static_cast<std::uint32_t>(t));
        if (mode == BinarizeMode::kMagnitude) mags.push_back(x);
      }
    }
    if (lists[v].empty()) out.empty_nodes.push_back(v);
  }
  out.attrs = AttributeIncidence::from_lists(nt, lists);
  if (mode == BinarizeMode::kMagnitude) out.magnitudes = std::move(mags);
  return out;
}

// Stochastic block model on contiguous balanced classes; the stand-in
// topology for desk-scale experiments.
inline std::pair<Graph, std::vector<int>> make_sbm(std::size_t n, std::size_t num_classes,
                                                   double p_in, double p_out,
                                                   std::uint64_t seed) {
  if (n == 0 || num_classes == 0) throw ContractError("make_sbm: empty graph");
  std::vector<int> labels(n);
  for (std::size_t v = 0; v < n; ++v) {
    labels[v] = static_cast<int>(v * num_classes / n);
  }
  Rng rng(seed);
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      const double p = labels[u] == labels[v] ? p_in : p_out;
      if (rng.bernoulli(p)) {
        edges.emplace_back(static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v));
      }
    }
  }
  return {Graph::from_edges(n, edges), std::move(labels)};
}

}  // namespace overdilute
