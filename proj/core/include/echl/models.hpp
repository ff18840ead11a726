#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "echl/graph.hpp"
#include "echl/params.hpp"
#include "echl/tape.hpp"

namespace echl {

enum class ModelKind { mlp, sage, gin };
enum class NormKind { none, bn, ln, cln };
enum class EdgeScalarKind { sum, learned1d };

const char* to_string(ModelKind k);
const char* to_string(NormKind n);
const char* to_string(EdgeScalarKind e);
ModelKind model_kind_from_string(const std::string& s);
NormKind norm_kind_from_string(const std::string& s);
EdgeScalarKind edge_scalar_from_string(const std::string& s);

struct ModelConfig {
  ModelKind kind = ModelKind::sage;
  NormKind norm = NormKind::ln;
  std::size_t layers = 3;
  std::size_t hidden = 512;
  double dropout = 0.1;
  EdgeScalarKind edge_scalar = EdgeScalarKind::sum;
  NodeFeatures::Aggr x_aggr = NodeFeatures::Aggr::mean;
  std::size_t k_labels = 112;
  double leaky_slope = 0.01;
  double norm_eps = 1e-5;
  double bn_momentum = 0.1;

  // Throws usage_error on out-of-range fields.
  void validate() const;
};

// CLN conditioning input: row i is the mean edge-derived feature vector over
// all nodes of node i's species. Feature-derived only, so it extends to
// species never seen in training.
Tensor species_descriptor(const GraphDataset& g, const NodeFeatures& x);

// One architecture instance: learnable parameters, batch-norm running state,
// and a forward pass recorded on a tape.
//
// Layer layout (hidden width h, K labels, L = cfg.layers):
//   mlp:  L hidden blocks (linear -> norm -> LeakyReLU -> dropout), widths
//         8 -> h -> ... -> h, then a plain linear h -> K.
//   sage: L weighted-mean convolutions with widths 8 -> h -> ... -> h -> K;
//         norm/activation/dropout after every conv except the last, which
//         emits the logits directly.
//   gin:  L-1 sum convolutions, each a 2-layer MLP (width h) applied to
//         (1+eps)h_i + sum_j alpha_ij h_j, with norm/activation/dropout after
//         each conv, then a plain linear h -> K.
// Norms act on width-h activations. bn/ln carry a per-site affine (gamma,
// beta); cln predicts per-node gamma, beta from the species descriptor
// through a width-h hidden map (descriptor -> h -> F), initialized so it
// starts as plain LayerNorm.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t param_count() const { return params_.param_count(); }

  // Records logits [num_nodes x K] on the tape. bn_stat_rows selects the rows
  // whose statistics define each train-mode batch-norm batch (the training
  // split under full-graph training); empty means all rows. Ignored in eval
  // mode and by ln/cln.
  Tape::Val forward(Tape& tape, const GraphDataset& g, const NodeFeatures& x,
                    std::span<const std::uint32_t> bn_stat_rows = {});

  std::vector<BatchNormStats> bn_snapshot() const { return bn_stats_; }
  void bn_restore(std::vector<BatchNormStats> s) { bn_stats_ = std::move(s); }
  std::size_t norm_sites() const { return norm_sites_; }

 private:
  Tape::Val edge_alpha(Tape& tape, const GraphDataset& g);
  Tape::Val norm_site(Tape& tape, Tape::Val h, std::size_t site, Tape::Val desc,
                      std::span<const std::uint32_t> bn_stat_rows);
  Tape::Val hidden_tail(Tape& tape, Tape::Val h, std::size_t site, Tape::Val desc,
                        std::span<const std::uint32_t> bn_stat_rows);

  ModelConfig cfg_;
  ParamStore params_;
  std::vector<BatchNormStats> bn_stats_;
  std::size_t norm_sites_ = 0;
};

}  // namespace echl
