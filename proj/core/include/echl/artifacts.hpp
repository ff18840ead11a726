#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "echl/metrics.hpp"

namespace echl {

// One split's exported rows: ids, raw logits (f32, the stored precision),
// and ground-truth labels. All post-hoc math starts from these f32 values so
// that recomputing metrics from the file reproduces metrics.json exactly.
struct LogitsTable {
  std::uint32_t k = 0;
  std::vector<std::uint64_t> node_id;
  std::vector<std::uint64_t> species_id;
  std::vector<float> logits;         // rows x k
  std::vector<std::uint8_t> labels;  // rows x k

  std::size_t rows() const { return node_id.size(); }
  void validate() const;
};

// Binary table format, version 1. Little-endian throughout:
//   magic "ECHL" | u32 version=1 | u32 n_rows | u32 k
//   per row: u64 node_id | u64 species_id | k x f32 logits | k x u8 labels
void write_echl(const std::filesystem::path& path, const LogitsTable& t);
LogitsTable read_echl(const std::filesystem::path& path);

// Lossless CSV mirror: logits printed with 9 significant digits, which
// round-trips every f32 exactly.
void write_echl_csv(const std::filesystem::path& path, const LogitsTable& t);

// Metric views. Scores widen each stored f32 verbatim; the prob view applies
// a sigmoid on top.
EvalTable logits_eval_table(const LogitsTable& t);
EvalTable prob_eval_table(const LogitsTable& t);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace echl
