#include "echl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace echl {

namespace {

Tensor label_tensor(const GraphDataset& g, std::span<const std::uint32_t> rows) {
  Tensor y(rows.size(), g.k_labels);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::uint8_t* src = g.labels.data() + static_cast<std::size_t>(rows[i]) * g.k_labels;
    double* dst = y.row_ptr(i);
    for (std::size_t j = 0; j < g.k_labels; ++j) dst[j] = src[j];
  }
  return y;
}

LogitsTable split_table(const GraphDataset& g, const Tensor& logits,
                        std::span<const std::uint32_t> rows) {
  LogitsTable t;
  t.k = static_cast<std::uint32_t>(g.k_labels);
  t.node_id.reserve(rows.size());
  t.species_id.reserve(rows.size());
  t.logits.reserve(rows.size() * g.k_labels);
  t.labels.reserve(rows.size() * g.k_labels);
  for (std::uint32_t r : rows) {
    t.node_id.push_back(r);
    t.species_id.push_back(g.species_id[r]);
    const double* z = logits.row_ptr(r);
    for (std::size_t j = 0; j < g.k_labels; ++j) t.logits.push_back(static_cast<float>(z[j]));
    const std::uint8_t* lab = g.labels.data() + static_cast<std::size_t>(r) * g.k_labels;
    t.labels.insert(t.labels.end(), lab, lab + g.k_labels);
  }
  return t;
}

// Validation mean-AUC straight from the f64 forward pass (rank metric, used
// only for early-stopping selection).
double valid_auc_f64(const Tensor& logits, const GraphDataset& g,
                     std::span<const std::uint32_t> rows) {
  EvalTable t;
  t.n = rows.size();
  t.k = g.k_labels;
  t.scores.reserve(t.n * t.k);
  t.labels.reserve(t.n * t.k);
  for (std::uint32_t r : rows) {
    const double* z = logits.row_ptr(r);
    t.scores.insert(t.scores.end(), z, z + g.k_labels);
    const std::uint8_t* lab = g.labels.data() + static_cast<std::size_t>(r) * g.k_labels;
    t.labels.insert(t.labels.end(), lab, lab + g.k_labels);
  }
  return mean_auc(t);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw usage_error("lr must be >= 0");
  if (epochs < 1) throw usage_error("epochs must be >= 1");
  if (patience < 1) throw usage_error("patience must be >= 1");
  if (eval_every < 1) throw usage_error("eval-every must be >= 1");
  if (ece_bins < 1) throw usage_error("ece-bins must be >= 1");
}

RunArtifact train_model(const GraphDataset& g, const ModelConfig& mcfg, const TrainConfig& tcfg) {
  mcfg.validate();
  tcfg.validate();
  g.validate();
  if (mcfg.k_labels != g.k_labels) {
    throw usage_error("model label count " + std::to_string(mcfg.k_labels) +
                      " does not match dataset K=" + std::to_string(g.k_labels));
  }
  const std::vector<std::uint32_t> train_rows = g.split_nodes(Split::train);
  const std::vector<std::uint32_t> valid_rows = g.split_nodes(Split::valid);
  const std::vector<std::uint32_t> test_rows = g.split_nodes(Split::test);
  if (train_rows.empty()) throw usage_error("training split is empty");
  if (valid_rows.empty()) throw usage_error("validation split is empty");

  const auto t_start = std::chrono::steady_clock::now();

  const NodeFeatures x = build_node_features(g, mcfg.x_aggr);
  Model model(mcfg, tcfg.seed);
  Rng dropout_seeds(tcfg.seed ^ 0x65706f6368ULL);
  const Tensor y_train = label_tensor(g, train_rows);

  double best_auc = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<Tensor> best_params = model.params().snapshot_values();
  std::vector<BatchNormStats> best_bn = model.bn_snapshot();
  std::size_t evals_without_improvement = 0;
  std::size_t epochs_run = 0;
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    try {
      Tape tape(Tape::Mode::train, dropout_seeds.next_u64());
      const Tape::Val logits = model.forward(tape, g, x, train_rows);
      const Tape::Val z_train = tape.take_rows(logits, train_rows);
      const Tape::Val loss = tape.bce_with_logits(z_train, y_train);
      final_train_loss = tape.value(loss).data[0];
      tape.backward(loss);
      model.params().adam_step(tcfg.lr);
    } catch (const engine_error& e) {
      throw engine_error("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    epochs_run = epoch;

    if (epoch % tcfg.eval_every != 0) continue;
    Tape eval_tape(Tape::Mode::eval);
    const Tape::Val logits = model.forward(eval_tape, g, x);
    const double auc = valid_auc_f64(eval_tape.value(logits), g, valid_rows);
    if (auc > best_auc) {
      best_auc = auc;
      best_epoch = epoch;
      best_params = model.params().snapshot_values();
      best_bn = model.bn_snapshot();
      evals_without_improvement = 0;
    } else if (++evals_without_improvement >= tcfg.patience) {
      break;
    }
  }

  model.params().restore_values(best_params);
  model.bn_restore(std::move(best_bn));

  Tape final_tape(Tape::Mode::eval);
  const Tape::Val logits_val = model.forward(final_tape, g, x);
  const Tensor& logits = final_tape.value(logits_val);

  RunArtifact a;
  a.train = split_table(g, logits, train_rows);
  a.valid = split_table(g, logits, valid_rows);
  a.test = split_table(g, logits, test_rows);

  const double wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  a.args["model"] = to_string(mcfg.kind);
  a.args["norm"] = to_string(mcfg.norm);
  a.args["x_aggr"] = to_string(mcfg.x_aggr);
  a.args["edge_scalar"] = to_string(mcfg.edge_scalar);
  a.args["hid"] = mcfg.hidden;
  a.args["layers"] = mcfg.layers;
  a.args["dropout"] = mcfg.dropout;
  a.args["k"] = mcfg.k_labels;
  a.args["leaky_slope"] = mcfg.leaky_slope;
  a.args["norm_eps"] = mcfg.norm_eps;
  a.args["bn_momentum"] = mcfg.bn_momentum;
  a.args["lr"] = tcfg.lr;
  a.args["epochs"] = tcfg.epochs;
  a.args["patience"] = tcfg.patience;
  a.args["seed"] = tcfg.seed;
  a.args["eval_every"] = tcfg.eval_every;
  a.args["ece_bins"] = tcfg.ece_bins;

  const EvalTable valid_logits = logits_eval_table(a.valid);
  const EvalTable test_logits = logits_eval_table(a.test);
  const EvalTable test_probs = prob_eval_table(a.test);

  a.metrics["model"] = to_string(mcfg.kind);
  a.metrics["norm"] = to_string(mcfg.norm);
  a.metrics["x_aggr"] = to_string(mcfg.x_aggr);
  a.metrics["edge_scalar"] = to_string(mcfg.edge_scalar);
  a.metrics["hid"] = mcfg.hidden;
  a.metrics["layers"] = mcfg.layers;
  a.metrics["dropout"] = mcfg.dropout;
  a.metrics["seed"] = tcfg.seed;
  a.metrics["lr"] = tcfg.lr;
  a.metrics["epochs"] = tcfg.epochs;
  a.metrics["patience"] = tcfg.patience;
  a.metrics["eval_every"] = tcfg.eval_every;
  a.metrics["ece_bins"] = tcfg.ece_bins;
  a.metrics["epochs_run"] = epochs_run;
  a.metrics["best_epoch"] = best_epoch;
  a.metrics["train_loss"] = final_train_loss;
  a.metrics["val_auc"] = mean_auc(valid_logits);
  a.metrics["test_auc"] = test_rows.empty() ? nlohmann::json() : nlohmann::json(mean_auc(test_logits));
  a.metrics["test_f1_05"] =
      test_rows.empty() ? nlohmann::json() : nlohmann::json(micro_f1(test_probs, 0.5));
  a.metrics["ece"] = test_rows.empty() ? nlohmann::json() : nlohmann::json(ece(test_probs, tcfg.ece_bins));
  a.metrics["brier"] = test_rows.empty() ? nlohmann::json() : nlohmann::json(brier(test_probs));
  a.metrics["params"] = model.param_count();
  a.metrics["n_train"] = train_rows.size();
  a.metrics["n_valid"] = valid_rows.size();
  a.metrics["n_test"] = test_rows.size();
  a.metrics["wall_clock_s"] = wall_clock_s;
  return a;
}

void write_run_artifact(const std::filesystem::path& dir, const RunArtifact& artifact) {
  std::filesystem::create_directories(dir);
  write_json_file(dir / "args.json", artifact.args);
  write_json_file(dir / "metrics.json", artifact.metrics);
  write_echl(dir / "logits_train.echl", artifact.train);
  write_echl(dir / "logits_valid.echl", artifact.valid);
  write_echl(dir / "logits_test.echl", artifact.test);
}

nlohmann::json evaluate_table(const LogitsTable& t, std::size_t ece_bins) {
  const EvalTable logits = logits_eval_table(t);
  const EvalTable probs = prob_eval_table(t);
  nlohmann::json doc;
  doc["n"] = t.rows();
  doc["k"] = t.k;
  doc["mean_auc"] = mean_auc(logits);
  doc["micro_f1_05"] = micro_f1(probs, 0.5);
  doc["ece"] = ece(probs, ece_bins);
  doc["ece_bins"] = ece_bins;
  doc["brier"] = brier(probs);
  nlohmann::json by_species = nlohmann::json::array();
  for (const SpeciesAuc& s : per_species_mean_auc(logits, t.species_id)) {
    nlohmann::json row;
    row["species_id"] = s.species_id;
    row["n_nodes"] = s.n_nodes;
    row["mean_auc"] = s.auc;
    by_species.push_back(row);
  }
  doc["per_species"] = by_species;
  return doc;
}

}  // namespace echl
