#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "echl/graph.hpp"

namespace echl {

// Row-normalized conditional label co-occurrence, built from training labels
// only. conditional: P_jk = C_jk / C_jj, rows rescaled to sum to one (rows of
// never-seen labels stay zero). conditional_centered: the conditional matrix
// with each row shifted by its own mean, so rows sum to zero and smoothing
// can suppress as well as boost.
struct CoocMatrix {
  enum class Variant { conditional, conditional_centered };

  std::size_t k = 0;
  std::vector<double> p;  // k x k row-major
  Variant variant = Variant::conditional;
  std::uint64_t train_fingerprint = 0;

  double at(std::size_t j, std::size_t kk) const { return p[j * k + kk]; }
};

const char* to_string(CoocMatrix::Variant v);
CoocMatrix::Variant cooc_variant_from_string(const std::string& s);

// Counts co-occurrences over the given label rows (flattened n x k). The
// fingerprint identifies exactly the rows used.
CoocMatrix build_cooc_from_train_labels(std::span<const std::uint8_t> labels, std::size_t n,
                                        std::size_t k, CoocMatrix::Variant variant);

// Dataset path with the leakage guard: every selected row must be in the
// train split (empty selection = all train rows); any validation/test row is
// a hard error.
CoocMatrix build_cooc(const GraphDataset& g, CoocMatrix::Variant variant,
                      std::span<const std::uint32_t> rows = {});

// z' = z + lambda * z * P^T, elementwise over n rows of width k.
// lambda = 0 returns z bitwise unchanged.
std::vector<double> smooth_logits(std::span<const double> z, std::size_t n, std::size_t k,
                                  const CoocMatrix& cooc, double lambda);

// Off-diagonal summary of the matrix: sparsity above the cutoff, mean/max/min
// entries, mean row and column sums.
nlohmann::json correlation_stats(const CoocMatrix& cooc, double cutoff = 1e-3);

// K x K CSV plus a JSON sidecar {variant, cutoff, train_fingerprint}.
void write_cooc(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                const CoocMatrix& cooc, double cutoff = 1e-3);

}  // namespace echl
