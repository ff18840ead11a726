#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "echl/common.hpp"

namespace echl {

// Scores and binary labels for one split, row-major [n x k]. scores may be
// logits or probabilities; rank-based metrics accept either, while micro_f1,
// ece, and brier insist on probabilities in [0,1].
struct EvalTable {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  bool is_probability = false;

  double score(std::size_t i, std::size_t j) const { return scores[i * k + j]; }
  std::uint8_t label(std::size_t i, std::size_t j) const { return labels[i * k + j]; }
  void validate() const;
};

// Mann-Whitney AUC per label with half credit for ties, computed exactly via
// average ranks. Labels with a single class present are undefined and come
// back as NaN; mean_auc skips them.
std::vector<double> roc_auc_per_label(const EvalTable& t);
double mean_auc(std::span<const double> per_label);
double mean_auc(const EvalTable& t);

// TP/FP/FN pooled over every (row,label) pair; prediction rule is p >= tau.
// All-zero counts define F1 = 1. thresholds must lie in [0,1].
double micro_f1(const EvalTable& t, double threshold);
double micro_f1(const EvalTable& t, std::span<const double> thresholds);

// F_beta from pooled counts, same conventions as micro_f1.
double f_beta(std::size_t tp, std::size_t fp, std::size_t fn, double beta);

// Equal-width bins over [0,1] on the flattened (prob,label) pairs;
// sum over bins of (n_b/n) * |positive rate - mean prob|.
double ece(const EvalTable& t, std::size_t bins);

// Mean squared gap between probability and label.
double brier(const EvalTable& t);

struct SpeciesAuc {
  std::uint64_t species_id = 0;
  std::size_t n_nodes = 0;
  double auc = 0.0;  // NaN when every label is single-class within the group
};

// Mean AUC per species group, species listed in ascending id order.
std::vector<SpeciesAuc> per_species_mean_auc(const EvalTable& t,
                                             std::span<const std::uint64_t> species_ids);

}  // namespace echl
