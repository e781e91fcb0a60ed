#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "overdilute/errors.hpp"

namespace overdilute {

// Per-node sorted attribute-id sets T_v; the rows of the binary node-attribute
// matrix X in compressed form.
class AttributeIncidence {
 public:
  AttributeIncidence() = default;

  // lists[v] = attribute ids of node v; ids must be < num_attributes and
  // unique within a node.
  static AttributeIncidence from_lists(std::size_t num_attributes,
                                       const std::vector<std::vector<std::uint32_t>>& lists) {
    AttributeIncidence x;
    x.num_attributes_ = num_attributes;
    x.offsets_.assign(lists.size() + 1, 0);
    for (std::size_t v = 0; v < lists.size(); ++v) {
      x.offsets_[v + 1] = x.offsets_[v] + lists[v].size();
    }
    x.ids_.reserve(x.offsets_.back());
    for (std::size_t v = 0; v < lists.size(); ++v) {
      std::vector<std::uint32_t> sorted = lists[v];
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i] >= num_attributes) {
          throw FormatError("node " + std::to_string(v) + " lists attribute id " +
                            std::to_string(sorted[i]) + " >= " + std::to_string(num_attributes));
        }
        if (i > 0 && sorted[i] == sorted[i - 1]) {
          throw FormatError("node " + std::to_string(v) + " lists attribute " +
                            std::to_string(sorted[i]) + " twice");
        }
      }
      x.ids_.insert(x.ids_.end(), sorted.begin(), sorted.end());
    }
    return x;
  }

  std::size_t num_nodes() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t num_attributes() const { return num_attributes_; }
  std::size_t total_entries() const { return ids_.size(); }

  std::span<const std::uint32_t> attributes(std::size_t v) const {
    return {ids_.data() + offsets_[v], ids_.data() + offsets_[v + 1]};
  }

  std::size_t count(std::size_t v) const { return offsets_[v + 1] - offsets_[v]; }

  // Offset of node v's first entry in the flattened (node, attribute) layout;
  // ragged per-entry arrays (dilution factors, attention weights) share it.
  std::size_t entry_offset(std::size_t v) const { return offsets_[v]; }

  bool has(std::size_t v, std::uint32_t t) const {
    const auto a = attributes(v);
    return std::binary_search(a.begin(), a.end(), t);
  }

  std::vector<std::size_t> attributeless_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < num_nodes(); ++v) {
      if (count(v) == 0) out.push_back(v);
    }
    return out;
  }

 private:
  std::size_t num_attributes_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> ids_;
};

}  // namespace overdilute
