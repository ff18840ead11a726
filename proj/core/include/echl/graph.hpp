#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "echl/common.hpp"

namespace echl {

inline constexpr int kEdgeDim = 8;

enum class Split : std::uint8_t { train = 0, valid = 1, test = 2 };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

// Immutable multigraph in CSR layout over *incoming* edges: for destination
// node i, its incoming edges occupy [csr_in_offsets[i], csr_in_offsets[i+1])
// in csr_in_sources / edge_feat. Edge features live in CSR order and are
// canonicalized within each destination bucket (sorted by source, then
// feature bytes) so that aggregation results do not depend on input row order.
struct GraphDataset {
  std::size_t num_nodes = 0;
  std::size_t num_edges = 0;  // directed
  std::vector<std::uint64_t> csr_in_offsets;   // num_nodes + 1
  std::vector<std::uint32_t> csr_in_sources;   // num_edges
  std::vector<double> edge_feat;               // num_edges x kEdgeDim, in [0,1]
  std::vector<std::uint8_t> labels;            // num_nodes x k_labels, {0,1}
  std::size_t k_labels = 0;
  std::vector<std::uint64_t> species_id;       // num_nodes
  std::vector<Split> split;                    // num_nodes

  std::size_t in_degree(std::size_t node) const {
    return csr_in_offsets[node + 1] - csr_in_offsets[node];
  }
  std::span<const double> edge_feat_row(std::size_t edge) const {
    return {edge_feat.data() + edge * kEdgeDim, kEdgeDim};
  }
  std::vector<std::uint32_t> split_nodes(Split s) const;

  // Throws validation_error on any broken invariant.
  void validate() const;
};

struct NodeFeatures {
  enum class Aggr { mean, sum, max };
  std::size_t num_nodes = 0;
  std::vector<double> x;  // num_nodes x kEdgeDim
  Aggr aggr_kind = Aggr::mean;

  std::span<const double> row(std::size_t node) const {
    return {x.data() + node * kEdgeDim, kEdgeDim};
  }
};

const char* to_string(NodeFeatures::Aggr a);
NodeFeatures::Aggr aggr_from_string(const std::string& s);

// Assembles CSR from an (src, dst, feat) edge list. Used by the TSV loader
// and the synthetic generator; validates index ranges and feature bounds.
GraphDataset build_dataset(std::size_t num_nodes,
                           std::vector<std::uint64_t> species,
                           std::vector<Split> splits,
                           std::vector<std::uint8_t> labels, std::size_t k_labels,
                           std::span<const std::uint32_t> edge_src,
                           std::span<const std::uint32_t> edge_dst,
                           std::span<const double> edge_features);

// nodes.tsv: node_id \t species_id \t split \t labels   (labels = K chars of 0/1)
// edges.tsv: src \t dst \t f0..f7                        (one directed edge per row)
GraphDataset load_dataset(const std::filesystem::path& nodes_path,
                          const std::filesystem::path& edges_path);

void write_dataset_tsv(const GraphDataset& g,
                       const std::filesystem::path& nodes_path,
                       const std::filesystem::path& edges_path);

// x_i = AGG over features of node i's incoming edges, channelwise.
// Isolated nodes get the all-zeros row under every aggregator.
NodeFeatures build_node_features(const GraphDataset& g, NodeFeatures::Aggr aggr);

// True when the species-id sets of train/valid/test are pairwise disjoint.
bool species_splits_disjoint(const GraphDataset& g);

// FNV-1a over (num rows, K, label bytes) of the given rows; identifies the
// exact label set a co-occurrence matrix was built from.
std::uint64_t label_fingerprint(std::span<const std::uint8_t> labels, std::size_t k_labels);

}  // namespace echl
