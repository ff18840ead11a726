#include "echl/labelcorr.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

namespace echl {

const char* to_string(CoocMatrix::Variant v) {
  switch (v) {
    case CoocMatrix::Variant::conditional: return "conditional";
    case CoocMatrix::Variant::conditional_centered: return "conditional_centered";
  }
  return "?";
}

CoocMatrix::Variant cooc_variant_from_string(const std::string& s) {
  if (s == "conditional") return CoocMatrix::Variant::conditional;
  if (s == "conditional_centered") return CoocMatrix::Variant::conditional_centered;
  throw usage_error("unknown co-occurrence variant: " + s);
}

CoocMatrix build_cooc_from_train_labels(std::span<const std::uint8_t> labels, std::size_t n,
                                        std::size_t k, CoocMatrix::Variant variant) {
  if (labels.size() != n * k) throw validation_error("co-occurrence: label buffer size mismatch");
  if (n < 1) throw validation_error("co-occurrence: need at least one row");
  for (std::uint8_t y : labels) {
    if (y > 1) throw validation_error("co-occurrence: labels must be 0/1");
  }

  std::vector<double> counts(k * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* row = labels.data() + i * k;
    for (std::size_t j = 0; j < k; ++j) {
      if (!row[j]) continue;
      for (std::size_t m = 0; m < k; ++m) {
        if (row[m]) counts[j * k + m] += 1.0;
      }
    }
  }

  CoocMatrix out;
  out.k = k;
  out.variant = variant;
  out.p.assign(k * k, 0.0);
  out.train_fingerprint = label_fingerprint(labels, k);
  for (std::size_t j = 0; j < k; ++j) {
    const double diag = counts[j * k + j];
    if (diag == 0.0) continue;
    double sum = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      out.p[j * k + m] = counts[j * k + m] / diag;
      sum += out.p[j * k + m];
    }
    for (std::size_t m = 0; m < k; ++m) out.p[j * k + m] /= sum;
    if (variant == CoocMatrix::Variant::conditional_centered) {
      double mean = 0.0;
      for (std::size_t m = 0; m < k; ++m) mean += out.p[j * k + m];
      mean /= static_cast<double>(k);
      for (std::size_t m = 0; m < k; ++m) out.p[j * k + m] -= mean;
    }
  }
  return out;
}

CoocMatrix build_cooc(const GraphDataset& g, CoocMatrix::Variant variant,
                      std::span<const std::uint32_t> rows) {
  std::vector<std::uint32_t> selected(rows.begin(), rows.end());
  if (selected.empty()) {
    selected = g.split_nodes(Split::train);
  }
  if (selected.empty()) throw validation_error("co-occurrence: empty train split");
  std::vector<std::uint8_t> train_labels;
  train_labels.reserve(selected.size() * g.k_labels);
  for (std::uint32_t r : selected) {
    if (r >= g.num_nodes) throw validation_error("co-occurrence: row index out of range");
    if (g.split[r] != Split::train) {
      throw validation_error(
          "co-occurrence must be built from training rows only; row " + std::to_string(r) +
          " is in the " + std::string(to_string(g.split[r])) + " split");
    }
    const std::uint8_t* lab = g.labels.data() + static_cast<std::size_t>(r) * g.k_labels;
    train_labels.insert(train_labels.end(), lab, lab + g.k_labels);
  }
  return build_cooc_from_train_labels(train_labels, selected.size(), g.k_labels, variant);
}

std::vector<double> smooth_logits(std::span<const double> z, std::size_t n, std::size_t k,
                                  const CoocMatrix& cooc, double lambda) {
  if (z.size() != n * k) throw validation_error("smooth_logits: logits size mismatch");
  if (cooc.k != k) throw validation_error("smooth_logits: matrix width mismatch");
  if (lambda < 0.0) throw validation_error("smooth_logits: lambda must be >= 0");
  std::vector<double> out(z.begin(), z.end());
  if (lambda == 0.0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const double* zrow = z.data() + i * k;
    double* orow = out.data() + i * k;
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t m = 0; m < k; ++m) acc += zrow[m] * cooc.p[j * k + m];
      orow[j] += lambda * acc;
    }
  }
  return out;
}

nlohmann::json correlation_stats(const CoocMatrix& cooc, double cutoff) {
  const std::size_t k = cooc.k;
  double sum = 0.0;
  double mx = -std::numeric_limits<double>::infinity();
  double mn = std::numeric_limits<double>::infinity();
  std::size_t above = 0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t m = 0; m < k; ++m) {
      if (j == m) continue;
      const double v = cooc.at(j, m);
      sum += v;
      mx = std::max(mx, v);
      mn = std::min(mn, v);
      if (v > cutoff) ++above;
      ++count;
    }
  }
  double row_sum_mean = 0.0;
  double col_sum_mean = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double rs = 0.0;
    double cs = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      rs += cooc.at(j, m);
      cs += cooc.at(m, j);
    }
    row_sum_mean += rs;
    col_sum_mean += cs;
  }
  row_sum_mean /= static_cast<double>(k);
  col_sum_mean /= static_cast<double>(k);

  nlohmann::json doc;
  doc["k"] = k;
  doc["variant"] = to_string(cooc.variant);
  doc["cutoff"] = cutoff;
  doc["sparsity"] = count ? static_cast<double>(above) / static_cast<double>(count) : 0.0;
  doc["offdiag_mean"] = count ? sum / static_cast<double>(count) : 0.0;
  doc["offdiag_max"] = count ? mx : 0.0;
  doc["offdiag_min"] = count ? mn : 0.0;
  doc["row_sum_mean"] = row_sum_mean;
  doc["col_sum_mean"] = col_sum_mean;
  return doc;
}

void write_cooc(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                const CoocMatrix& cooc, double cutoff) {
  std::ofstream f(csv_path, std::ios::trunc);
  if (!f) throw engine_error("cannot open for writing: " + csv_path.string());
  for (std::size_t j = 0; j < cooc.k; ++j) {
    for (std::size_t m = 0; m < cooc.k; ++m) {
      if (m) f << ',';
      f << format_double(cooc.at(j, m));
    }
    f << "\n";
  }
  if (!f) throw engine_error("write failed: " + csv_path.string());

  nlohmann::json sidecar;
  sidecar["variant"] = to_string(cooc.variant);
  sidecar["cutoff"] = cutoff;
  sidecar["train_fingerprint"] = cooc.train_fingerprint;
  std::ofstream jf(json_path, std::ios::trunc);
  if (!jf) throw engine_error("cannot open for writing: " + json_path.string());
  jf << sidecar.dump(2) << "\n";
}

}  // namespace echl
