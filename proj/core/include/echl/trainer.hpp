#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "echl/artifacts.hpp"
#include "echl/models.hpp"

namespace echl {

struct TrainConfig {
  double lr = 2e-3;
  std::size_t epochs = 120;
  std::size_t patience = 12;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;
  std::size_t ece_bins = 15;

  // Throws usage_error on out-of-range fields.
  void validate() const;
};

// Everything one run leaves behind: the flag record, the metrics document,
// and the exported logits tables (computed from the best snapshot, stored as
// f32; metrics.json is derived from those f32 values so reloading the tables
// reproduces it exactly).
struct RunArtifact {
  nlohmann::json args;
  nlohmann::json metrics;
  LogitsTable train;
  LogitsTable valid;
  LogitsTable test;
};

// Full-batch training: forward over every node, BCE on train rows only,
// Adam steps, validation mean-AUC every eval_every epochs with best-snapshot
// early stopping (strict improvement; stops after `patience` evaluations
// without one). Divergence aborts with an engine_error naming the epoch.
RunArtifact train_model(const GraphDataset& g, const ModelConfig& mcfg, const TrainConfig& tcfg);

// Writes args.json, metrics.json, logits_{train,valid,test}.echl into dir
// (created if missing).
void write_run_artifact(const std::filesystem::path& dir, const RunArtifact& artifact);

// Split metrics from an exported table: mean AUC, micro-F1@0.5, ECE, Brier,
// and per-species mean AUC.
nlohmann::json evaluate_table(const LogitsTable& t, std::size_t ece_bins);

}  // namespace echl
