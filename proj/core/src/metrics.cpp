#include "echl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace echl {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

void require_probabilities(const EvalTable& t, const char* what) {
  for (double p : t.scores) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw validation_error(std::string(what) + " requires probabilities in [0,1]");
    }
  }
}

// AUC for one label column over the given row subset; NaN when a class is
// missing.
double auc_column(const EvalTable& t, std::size_t col, std::span<const std::size_t> rows) {
  std::vector<std::pair<double, std::uint8_t>> pairs;
  pairs.reserve(rows.size());
  std::size_t pos = 0;
  for (std::size_t i : rows) {
    const std::uint8_t y = t.label(i, col);
    pos += y;
    pairs.emplace_back(t.score(i, col), y);
  }
  const std::size_t neg = rows.size() - pos;
  if (pos == 0 || neg == 0) return kNan;

  std::sort(pairs.begin(), pairs.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < pairs.size()) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j].first == pairs[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based ranks i+1..j
    for (std::size_t u = i; u < j; ++u) {
      if (pairs[u].second) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double q = static_cast<double>(neg);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q);
}

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

Counts pooled_counts(const EvalTable& t, std::span<const double> thresholds) {
  Counts c;
  for (std::size_t i = 0; i < t.n; ++i) {
    for (std::size_t j = 0; j < t.k; ++j) {
      const bool pred = t.score(i, j) >= thresholds[j];
      const bool truth = t.label(i, j) != 0;
      if (pred && truth) ++c.tp;
      else if (pred && !truth) ++c.fp;
      else if (!pred && truth) ++c.fn;
    }
  }
  return c;
}

}  // namespace

void EvalTable::validate() const {
  if (scores.size() != n * k || labels.size() != n * k) {
    throw validation_error("eval table size mismatch");
  }
  for (std::uint8_t y : labels) {
    if (y > 1) throw validation_error("eval table labels must be 0/1");
  }
}

std::vector<double> roc_auc_per_label(const EvalTable& t) {
  t.validate();
  std::vector<std::size_t> all(t.n);
  for (std::size_t i = 0; i < t.n; ++i) all[i] = i;
  std::vector<double> out(t.k, kNan);
  for (std::size_t j = 0; j < t.k; ++j) out[j] = auc_column(t, j, all);
  return out;
}

double mean_auc(std::span<const double> per_label) {
  double sum = 0.0;
  std::size_t defined = 0;
  for (double a : per_label) {
    if (!std::isnan(a)) {
      sum += a;
      ++defined;
    }
  }
  return defined == 0 ? kNan : sum / static_cast<double>(defined);
}

double mean_auc(const EvalTable& t) {
  const std::vector<double> per_label = roc_auc_per_label(t);
  return mean_auc(per_label);
}

double f_beta(std::size_t tp, std::size_t fp, std::size_t fn, double beta) {
  if (tp == 0 && fp == 0 && fn == 0) return 1.0;
  const double b2 = beta * beta;
  const double denom = (1.0 + b2) * static_cast<double>(tp) + b2 * static_cast<double>(fn) +
                       static_cast<double>(fp);
  if (denom == 0.0) return 0.0;
  return (1.0 + b2) * static_cast<double>(tp) / denom;
}

double micro_f1(const EvalTable& t, double threshold) {
  const std::vector<double> ts(t.k, threshold);
  return micro_f1(t, ts);
}

double micro_f1(const EvalTable& t, std::span<const double> thresholds) {
  t.validate();
  require_probabilities(t, "micro_f1");
  if (thresholds.size() != t.k) throw validation_error("micro_f1: one threshold per label");
  for (double tau : thresholds) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
      throw validation_error("micro_f1: thresholds must lie in [0,1]");
    }
  }
  const Counts c = pooled_counts(t, thresholds);
  return f_beta(c.tp, c.fp, c.fn, 1.0);
}

double ece(const EvalTable& t, std::size_t bins) {
  t.validate();
  require_probabilities(t, "ece");
  if (bins < 1) throw validation_error("ece: bins must be >= 1");
  std::vector<double> prob_sum(bins, 0.0);
  std::vector<double> pos_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < t.scores.size(); ++i) {
    const double p = t.scores[i];
    std::size_t b = static_cast<std::size_t>(p * static_cast<double>(bins));
    if (b >= bins) b = bins - 1;
    prob_sum[b] += p;
    pos_sum[b] += t.labels[i];
    ++count[b];
  }
  const double total = static_cast<double>(t.scores.size());
  if (total == 0.0) return 0.0;
  double out = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    const double conf = prob_sum[b] / nb;
    const double acc = pos_sum[b] / nb;
    out += (nb / total) * std::abs(acc - conf);
  }
  return out;
}

double brier(const EvalTable& t) {
  t.validate();
  require_probabilities(t, "brier");
  if (t.scores.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < t.scores.size(); ++i) {
    const double d = t.scores[i] - static_cast<double>(t.labels[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(t.scores.size());
}

std::vector<SpeciesAuc> per_species_mean_auc(const EvalTable& t,
                                             std::span<const std::uint64_t> species_ids) {
  t.validate();
  if (species_ids.size() != t.n) throw validation_error("per_species_mean_auc: one id per row");
  std::map<std::uint64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < t.n; ++i) groups[species_ids[i]].push_back(i);
  std::vector<SpeciesAuc> out;
  out.reserve(groups.size());
  for (const auto& [sid, rows] : groups) {
    std::vector<double> per_label(t.k, kNan);
    for (std::size_t j = 0; j < t.k; ++j) per_label[j] = auc_column(t, j, rows);
    out.push_back(SpeciesAuc{sid, rows.size(), mean_auc(per_label)});
  }
  return out;
}

}  // namespace echl
