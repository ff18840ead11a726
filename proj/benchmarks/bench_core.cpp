#include <cstdint>
#include <vector>

#include <benchmark/benchmark.h>

#include "echl/calibrate.hpp"
#include "echl/metrics.hpp"
#include "echl/models.hpp"
#include "echl/synth.hpp"
#include "echl/tape.hpp"

namespace {

using namespace echl;

const GraphDataset& bench_graph() {
  static const GraphDataset g = [] {
    SynthSpec spec;
    spec.num_species = 4;
    spec.nodes_per_species = 1000;
    spec.k_labels = 32;
    spec.avg_degree = 8.0;
    return generate_synthetic(spec, 3);
  }();
  return g;
}

void bm_matmul_forward(benchmark::State& state) {
  const std::size_t n = state.range(0);
  ParamStore store;
  Rng rng(1);
  Tensor& a = store.create("a", n, n);
  Tensor& b = store.create("b", n, n);
  for (double& v : a.data) v = rng.normal();
  for (double& v : b.data) v = rng.normal();
  for (auto _ : state) {
    Tape tape(Tape::Mode::eval);
    const Tape::Val c = tape.matmul(tape.param(store, "a"), tape.param(store, "b"));
    benchmark::DoNotOptimize(tape.value(c).data.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

void bm_matmul_train_step(benchmark::State& state) {
  const std::size_t n = state.range(0);
  ParamStore store;
  Rng rng(1);
  Tensor& a = store.create("a", n, n);
  Tensor& b = store.create("b", n, n);
  for (double& v : a.data) v = 0.01 * rng.normal();
  for (double& v : b.data) v = 0.01 * rng.normal();
  for (auto _ : state) {
    Tape tape(Tape::Mode::train);
    const Tape::Val c = tape.matmul(tape.param(store, "a"), tape.param(store, "b"));
    const Tape::Val loss = tape.sum(tape.sigmoid(c));
    tape.backward(loss);
    benchmark::DoNotOptimize(store.grad("a").data.data());
  }
}

void bm_csr_weighted_mean(benchmark::State& state) {
  const GraphDataset& g = bench_graph();
  ParamStore store;
  Rng rng(2);
  Tensor& h = store.create("h", g.num_nodes, 64);
  for (double& v : h.data) v = rng.normal();
  Tensor alpha(g.num_edges, 1, 1.0);
  for (auto _ : state) {
    Tape tape(Tape::Mode::eval);
    const Tape::Val pooled =
        tape.csr_weighted_mean(tape.param(store, "h"), tape.input(alpha), g);
    benchmark::DoNotOptimize(tape.value(pooled).data.data());
  }
  state.SetItemsProcessed(state.iterations() * g.num_edges);
}

void bm_sage_forward(benchmark::State& state) {
  const GraphDataset& g = bench_graph();
  ModelConfig cfg;
  cfg.hidden = state.range(0);
  cfg.k_labels = g.k_labels;
  cfg.dropout = 0.0;
  Model model(cfg, 1);
  const NodeFeatures x = build_node_features(g, cfg.x_aggr);
  for (auto _ : state) {
    Tape tape(Tape::Mode::eval);
    const Tape::Val z = model.forward(tape, g, x);
    benchmark::DoNotOptimize(tape.value(z).data.data());
  }
  state.SetItemsProcessed(state.iterations() * g.num_nodes);
}

EvalTable random_table(std::size_t n, std::size_t k, bool probabilities) {
  Rng rng(7);
  EvalTable t;
  t.n = n;
  t.k = k;
  t.is_probability = probabilities;
  t.scores.resize(n * k);
  t.labels.resize(n * k);
  for (double& s : t.scores) s = probabilities ? rng.uniform() : rng.normal();
  for (auto& l : t.labels) l = rng.bernoulli(0.3) ? 1 : 0;
  return t;
}

void bm_roc_auc(benchmark::State& state) {
  const EvalTable t = random_table(state.range(0), 112, false);
  for (auto _ : state) {
    benchmark::DoNotOptimize(roc_auc_per_label(t));
  }
  state.SetItemsProcessed(state.iterations() * t.n * t.k);
}

void bm_fit_temperature(benchmark::State& state) {
  const EvalTable t = random_table(state.range(0), 112, false);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        fit_temperature(t, CalibrationModel::Mode::per_label, 1.0));
  }
}

void bm_ece(benchmark::State& state) {
  const EvalTable t = random_table(state.range(0), 112, true);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ece(t, 15));
  }
}

BENCHMARK(bm_matmul_forward)->Arg(128)->Arg(512);
BENCHMARK(bm_matmul_train_step)->Arg(128)->Arg(512);
BENCHMARK(bm_csr_weighted_mean);
BENCHMARK(bm_sage_forward)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_roc_auc)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_fit_temperature)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_ece)->Arg(20000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
