#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "echl/graph.hpp"
#include "echl/params.hpp"
#include "echl/tensor.hpp"

namespace echl {

// Running statistics for one batch-norm instance. The stored variance is the
// biased batch variance, so an eval pass after a momentum=1 update reproduces
// the train-mode normalization of that batch exactly.
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;

  explicit BatchNormStats(std::size_t features = 0)
      : mean(features, 0.0), var(features, 1.0) {}
};

// Eager forward evaluation plus a reverse-mode record of one pass. Every op
// validates shapes and rejects non-finite outputs. A tape is consumed by
// exactly one backward() call, which accumulates parameter gradients into the
// bound ParamStore.
class Tape {
 public:
  enum class Mode { train, eval };
  using Val = std::int32_t;

  explicit Tape(Mode mode, std::uint64_t dropout_seed = 0)
      : mode_(mode), rng_(dropout_seed) {}

  Mode mode() const { return mode_; }

  Val input(Tensor t);                                   // constant leaf
  Val param(ParamStore& store, const std::string& name); // differentiable leaf

  Val matmul(Val a, Val b);
  Val add(Val a, Val b);        // elementwise, same shape
  Val mul(Val a, Val b);        // elementwise, same shape
  Val add_row(Val x, Val b);    // [N,F] + [1,F], broadcast over rows
  Val mul_row(Val x, Val g);    // [N,F] * [1,F]
  Val add_scalar(Val x, double c);
  Val scale(Val x, double c);
  Val mul_scalar_param(Val x, Val s);  // s is [1,1]

  Val leaky_relu(Val x, double slope);
  Val softplus(Val x);
  Val sigmoid(Val x);
  Val dropout(Val x, double p);

  // Per-row standardization, the LayerNorm core (affine applied separately).
  Val row_norm(Val x, double eps);
  // Train: biased batch statistics per column + running-stats update; when
  // stat_rows is nonempty, statistics come from those rows only (the training
  // split under full-graph forward passes) while normalization still applies
  // to every row. Eval: normalize with the stored running statistics.
  Val batch_norm(Val x, BatchNormStats& stats, double momentum, double eps,
                 std::span<const std::uint32_t> stat_rows = {});

  // out[i] = sum_e alpha[e] * h[src[e]]        over i's incoming edges
  Val csr_weighted_sum(Val h, Val alpha, const GraphDataset& g);
  // out[i] = sum_e alpha[e] * h[src[e]] / sum_e alpha[e]; zero-weight or
  // empty neighborhoods produce the zero row.
  Val csr_weighted_mean(Val h, Val alpha, const GraphDataset& g);

  Val take_rows(Val x, std::span<const std::uint32_t> rows);

  // Mean over all entries of the numerically stable binary cross-entropy
  // with logits. y must be binary and shape-match z.
  Val bce_with_logits(Val z, const Tensor& y);
  Val sum(Val x);

  const Tensor& value(Val v) const { return nodes_[check(v)].value; }
  const Tensor& grad(Val v) const { return nodes_[check(v)].grad; }

  // Reverse sweep from a scalar loss; marks the tape consumed and pushes
  // parameter gradients into the bound store.
  void backward(Val loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    std::int32_t param_index = -1;
    std::function<void(Tape&)> backward_fn;
  };

  std::size_t check(Val v) const;
  Val push(Node n, const char* where);
  Tensor& grad_buf(Val v);
  bool wants_grad(Val v) const { return nodes_[v].requires_grad; }
  bool has_grad(Val v) const { return !nodes_[v].grad.data.empty(); }

  Mode mode_;
  Rng rng_;
  std::vector<Node> nodes_;
  ParamStore* store_ = nullptr;
  bool consumed_ = false;
};

}  // namespace echl
