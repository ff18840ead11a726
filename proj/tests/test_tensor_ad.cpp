#include <cmath>
#include <cstdint>
#include <vector>

#include <doctest.h>

#include "echl/graph.hpp"
#include "echl/params.hpp"
#include "echl/tape.hpp"
#include "echl/tensor.hpp"
#include "oracles.hpp"

using namespace echl;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

// 4-node fixture with parallel edges and one isolated node (node 3).
GraphDataset small_graph() {
  std::vector<std::uint32_t> src{0, 1, 1, 2, 0};
  std::vector<std::uint32_t> dst{2, 2, 0, 1, 2};
  std::vector<double> feat(5 * kEdgeDim, 0.25);
  return build_dataset(4, {0, 0, 1, 2},
                       {Split::train, Split::train, Split::valid, Split::test}, {1, 0, 1, 0}, 1,
                       src, dst, feat);
}

}  // namespace

TEST_CASE("linear fixtures") {
  Tape t(Tape::Mode::eval);
  auto x = t.input(Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}}));
  auto w = t.input(Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}}));
  auto b = t.input(Tensor(1, 2, 0.0));
  auto y = t.add_row(t.matmul(x, w), b);
  CHECK(t.value(y).at(0, 0) == 1.0);
  CHECK(t.value(y).at(0, 1) == 0.0);
  CHECK(t.value(y).at(1, 1) == 1.0);

  Tape t2(Tape::Mode::eval);
  auto x2 = t2.input(Tensor::from_rows({{1.0, 2.0}}));
  auto w2 = t2.input(Tensor::from_rows({{1.0}, {1.0}}));
  auto b2 = t2.input(Tensor::from_rows({{3.0}}));
  auto y2 = t2.add_row(t2.matmul(x2, w2), b2);
  CHECK(t2.value(y2).at(0, 0) == 6.0);
}

TEST_CASE("gradient of sum(xW+b) wrt b is all ones") {
  ParamStore store;
  store.create("w", 3, 2);
  store.create("b", 1, 2);
  Rng rng(5);
  for (auto& v : store.value("w").data) v = rng.normal();

  Tape t(Tape::Mode::train);
  auto x = t.input(random_tensor(4, 3, rng));
  auto y = t.add_row(t.matmul(x, t.param(store, "w")), t.param(store, "b"));
  t.backward(t.sum(y));
  for (double g : store.grad("b").data) CHECK(g == 4.0);  // one per row
}

TEST_CASE("leaky relu values and slope") {
  Tape t(Tape::Mode::eval);
  auto x = t.input(Tensor::from_rows({{-1.0, 0.0, 2.0}}));
  auto y = t.leaky_relu(x, 0.01);
  CHECK(t.value(y).at(0, 0) == -0.01);
  CHECK(t.value(y).at(0, 1) == 0.0);
  CHECK(t.value(y).at(0, 2) == 2.0);
  auto z = t.leaky_relu(y, 0.01);  // idempotent on nonnegative part
  CHECK(t.value(z).at(0, 2) == 2.0);

  CHECK_THROWS_AS(t.leaky_relu(x, 1.5), engine_error);
}

TEST_CASE("bce with logits fixtures") {
  Tape t(Tape::Mode::eval);
  auto z = t.input(Tensor::scalar(0.0));
  auto loss = t.bce_with_logits(z, Tensor::scalar(1.0));
  CHECK(t.value(loss).data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Tape t2(Tape::Mode::eval);
  auto z2 = t2.input(Tensor::scalar(50.0));
  auto l2 = t2.bce_with_logits(z2, Tensor::scalar(1.0));
  CHECK(t2.value(l2).data[0] < 1e-20);

  // single element: d(loss)/dz = sigmoid(z) - y exactly
  ParamStore store;
  store.create("z", 1, 1).data[0] = 0.7;
  Tape t3(Tape::Mode::train);
  auto z3 = t3.param(store, "z");
  t3.backward(t3.bce_with_logits(z3, Tensor::scalar(1.0)));
  const double sig = 1.0 / (1.0 + std::exp(-0.7));
  CHECK(store.grad("z").data[0] == doctest::Approx(sig - 1.0).epsilon(1e-14));

  Tape t4(Tape::Mode::eval);
  auto z4 = t4.input(Tensor::scalar(0.0));
  CHECK_THROWS_AS(t4.bce_with_logits(z4, Tensor::scalar(0.5)), engine_error);
}

TEST_CASE("dropout modes") {
  Rng rng(3);
  const Tensor x = random_tensor(5, 4, rng);

  Tape train_p0(Tape::Mode::train, 7);
  auto a = train_p0.dropout(train_p0.input(x), 0.0);
  CHECK(train_p0.value(a).data == x.data);

  Tape ev(Tape::Mode::eval, 7);
  auto b = ev.dropout(ev.input(x), 0.9);
  CHECK(ev.value(b).data == x.data);
}

TEST_CASE("dropout keeps the mean over many seeds") {
  const Tensor ones(100, 100, 1.0);
  const double p = 0.3;
  double total = 0.0;
  Tape t(Tape::Mode::train, 99);
  auto y = t.dropout(t.input(ones), p);
  for (double v : t.value(y).data) total += v;
  const double mean = total / 10000.0;
  // element variance is p/(1-p); 3 sigma of the mean of 10^4 draws
  const double sigma3 = 3.0 * std::sqrt(p / (1.0 - p) / 10000.0);
  CHECK(std::fabs(mean - 1.0) < sigma3);
}

TEST_CASE("row norm basics") {
  Tape t(Tape::Mode::eval);
  auto c = t.input(Tensor(2, 5, 3.25));
  auto y = t.row_norm(c, 1e-5);
  for (double v : t.value(y).data) CHECK(v == 0.0);

  // shift/scale invariance per row, eps small against unit variance
  Rng rng(11);
  const Tensor x = random_tensor(6, 8, rng);
  Tensor xs = x;
  for (std::size_t i = 0; i < xs.rows; ++i) {
    for (std::size_t j = 0; j < xs.cols; ++j) xs.at(i, j) = 2.5 * xs.at(i, j) + 7.0;
  }
  Tape t2(Tape::Mode::eval);
  auto a = t2.row_norm(t2.input(x), 1e-12);
  auto b = t2.row_norm(t2.input(xs), 1e-12);
  for (std::size_t e = 0; e < x.numel(); ++e) {
    CHECK(t2.value(a).data[e] == doctest::Approx(t2.value(b).data[e]).epsilon(1e-9));
  }
}

TEST_CASE("batch norm normalizes already-standard columns to themselves") {
  Rng rng(13);
  Tensor x(50, 3);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 50; ++i) mean += (x.at(i, j) = rng.normal());
    mean /= 50.0;
    double var = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
      x.at(i, j) -= mean;
      var += x.at(i, j) * x.at(i, j);
    }
    var /= 50.0;
    for (std::size_t i = 0; i < 50; ++i) x.at(i, j) /= std::sqrt(var);
  }
  BatchNormStats stats(3);
  Tape t(Tape::Mode::train);
  auto y = t.batch_norm(t.input(x), stats, 0.1, 1e-5);
  for (std::size_t e = 0; e < x.numel(); ++e) {
    CHECK(t.value(y).data[e] == doctest::Approx(x.data[e]).epsilon(1e-4));
  }
  // running stats moved toward the batch
  CHECK(stats.mean[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(stats.var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0).epsilon(1e-6));
}

TEST_CASE("batch norm eval after momentum-1 update reproduces train output") {
  Rng rng(29);
  const Tensor x = random_tensor(12, 4, rng);
  BatchNormStats stats(4);
  Tape tr(Tape::Mode::train);
  auto ytr = tr.batch_norm(tr.input(x), stats, 1.0, 1e-5);
  Tape ev(Tape::Mode::eval);
  auto yev = ev.batch_norm(ev.input(x), stats, 1.0, 1e-5);
  for (std::size_t e = 0; e < x.numel(); ++e) {
    CHECK(ev.value(yev).data[e] == doctest::Approx(tr.value(ytr).data[e]).epsilon(1e-12));
  }
}

TEST_CASE("elementwise op gradients match finite differences") {
  Rng rng(17);
  ParamStore store;
  store.create("a", 4, 3) = random_tensor(4, 3, rng);
  store.create("b", 4, 3) = random_tensor(4, 3, rng);
  store.create("r", 1, 3) = random_tensor(1, 3, rng);
  store.create("s", 1, 1) = random_tensor(1, 1, rng);

  auto build = [&](bool grad) {
    Tape t(Tape::Mode::train, 1);
    auto a = t.param(store, "a");
    auto b = t.param(store, "b");
    auto r = t.param(store, "r");
    auto s = t.param(store, "s");
    auto h = t.mul(t.add(a, b), b);
    h = t.add_row(h, r);
    h = t.mul_row(h, r);
    h = t.leaky_relu(h, 0.01);
    h = t.softplus(h);
    h = t.sigmoid(h);
    h = t.scale(t.add_scalar(h, 0.25), 1.5);
    h = t.mul_scalar_param(h, s);
    auto loss = t.sum(h);
    if (grad) t.backward(loss);
    return t.value(loss).data[0];
  };
  const auto res = oracles::finite_diff(store, build);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("matmul and take_rows gradients match finite differences") {
  Rng rng(19);
  ParamStore store;
  store.create("w1", 5, 4) = random_tensor(5, 4, rng);
  store.create("w2", 4, 2) = random_tensor(4, 2, rng);
  const Tensor x = random_tensor(6, 5, rng);
  const std::vector<std::uint32_t> rows{0, 2, 5};
  Tensor y(3, 2);
  for (auto& v : y.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;

  auto build = [&](bool grad) {
    Tape t(Tape::Mode::train, 1);
    auto h = t.matmul(t.matmul(t.input(x), t.param(store, "w1")), t.param(store, "w2"));
    auto z = t.take_rows(h, rows);
    auto loss = t.bce_with_logits(z, y);
    if (grad) t.backward(loss);
    return t.value(loss).data[0];
  };
  const auto res = oracles::finite_diff(store, build);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("row norm and batch norm gradients match finite differences") {
  Rng rng(23);
  ParamStore store;
  store.create("x", 7, 4) = random_tensor(7, 4, rng);
  BatchNormStats stats(4);
  const std::vector<std::uint32_t> stat_rows{0, 2, 3, 6};

  auto build_ln = [&](bool grad) {
    Tape t(Tape::Mode::train, 1);
    auto loss = t.sum(t.sigmoid(t.row_norm(t.param(store, "x"), 1e-5)));
    if (grad) t.backward(loss);
    return t.value(loss).data[0];
  };
  CHECK(oracles::finite_diff(store, build_ln).max_rel_err < 1e-4);

  auto build_bn_all = [&](bool grad) {
    Tape t(Tape::Mode::train, 1);
    auto loss = t.sum(t.sigmoid(t.batch_norm(t.param(store, "x"), stats, 0.1, 1e-5)));
    if (grad) t.backward(loss);
    return t.value(loss).data[0];
  };
  CHECK(oracles::finite_diff(store, build_bn_all).max_rel_err < 1e-4);

  // statistics from a row subset while every row is normalized
  auto build_bn_subset = [&](bool grad) {
    Tape t(Tape::Mode::train, 1);
    auto loss =
        t.sum(t.sigmoid(t.batch_norm(t.param(store, "x"), stats, 0.1, 1e-5, stat_rows)));
    if (grad) t.backward(loss);
    return t.value(loss).data[0];
  };
  CHECK(oracles::finite_diff(store, build_bn_subset).max_rel_err < 1e-4);
}

TEST_CASE("csr aggregation ops") {
  const GraphDataset g = small_graph();
  Rng rng(31);
  const Tensor h = random_tensor(4, 3, rng);
  Tensor alpha(g.num_edges, 1);
  for (auto& v : alpha.data) v = 0.5 + rng.uniform();

  SUBCASE("weighted mean is invariant to doubling alpha") {
    Tape t(Tape::Mode::eval);
    auto hv = t.input(h);
    auto m1 = t.csr_weighted_mean(hv, t.input(alpha), g);
    Tensor alpha2 = alpha;
    for (auto& v : alpha2.data) v *= 2.0;
    auto m2 = t.csr_weighted_mean(hv, t.input(alpha2), g);
    for (std::size_t e = 0; e < t.value(m1).numel(); ++e) {
      CHECK(t.value(m1).data[e] == doctest::Approx(t.value(m2).data[e]).epsilon(1e-14));
    }
  }

  SUBCASE("weighted sum is exactly linear in alpha") {
    Tape t(Tape::Mode::eval);
    auto hv = t.input(h);
    auto s1 = t.csr_weighted_sum(hv, t.input(alpha), g);
    Tensor alpha2 = alpha;
    for (auto& v : alpha2.data) v *= 2.0;
    auto s2 = t.csr_weighted_sum(hv, t.input(alpha2), g);
    for (std::size_t e = 0; e < t.value(s1).numel(); ++e) {
      CHECK(t.value(s2).data[e] == doctest::Approx(2.0 * t.value(s1).data[e]).epsilon(1e-14));
    }
  }

  SUBCASE("isolated and zero-weight nodes get the zero row") {
    Tape t(Tape::Mode::eval);
    auto m = t.csr_weighted_mean(t.input(h), t.input(Tensor(g.num_edges, 1, 0.0)), g);
    for (double v : t.value(m).data) CHECK(v == 0.0);

    auto s = t.csr_weighted_sum(t.input(h), t.input(alpha), g);
    for (std::size_t j = 0; j < 3; ++j) CHECK(t.value(s).at(3, j) == 0.0);  // node 3 isolated
  }

  SUBCASE("gradients through both csr ops") {
    ParamStore store;
    store.create("h", 4, 3) = h;
    store.create("alpha", g.num_edges, 1) = alpha;
    auto build = [&](bool grad) {
      Tape t(Tape::Mode::train, 1);
      auto hp = t.param(store, "h");
      auto ap = t.param(store, "alpha");
      auto a = t.csr_weighted_mean(hp, ap, g);
      auto b = t.csr_weighted_sum(hp, ap, g);
      auto loss = t.sum(t.sigmoid(t.add(a, b)));
      if (grad) t.backward(loss);
      return t.value(loss).data[0];
    };
    CHECK(oracles::finite_diff(store, build).max_rel_err < 1e-4);
  }
}

TEST_CASE("tape misuse") {
  ParamStore store;
  store.create("w", 1, 1).data[0] = 2.0;

  SUBCASE("two backward calls") {
    Tape t(Tape::Mode::train);
    auto loss = t.sum(t.param(store, "w"));
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), engine_error);
  }

  SUBCASE("backward needs a scalar") {
    Tape t(Tape::Mode::train);
    auto x = t.input(Tensor(2, 2, 1.0));
    CHECK_THROWS_AS(t.backward(x), engine_error);
  }

  SUBCASE("one tape cannot bind two stores") {
    ParamStore other;
    other.create("v", 1, 1);
    Tape t(Tape::Mode::train);
    t.param(store, "w");
    CHECK_THROWS_AS(t.param(other, "v"), engine_error);
  }

  SUBCASE("non-finite values are rejected at the producing op") {
    Tape t(Tape::Mode::eval);
    auto huge = t.input(Tensor::scalar(1e308));
    CHECK_THROWS_AS(t.scale(huge, 10.0), engine_error);
    Tensor nan_t = Tensor::scalar(std::nan(""));
    CHECK_THROWS_AS(t.input(nan_t), engine_error);
  }

  SUBCASE("take_rows checks indices") {
    Tape t(Tape::Mode::eval);
    auto x = t.input(Tensor(3, 2, 1.0));
    const std::vector<std::uint32_t> bad{0, 9};
    CHECK_THROWS_AS(t.take_rows(x, bad), engine_error);
  }
}

TEST_CASE("adam fixtures") {
  SUBCASE("parameters without gradient stay put") {
    ParamStore store;
    store.create("used", 1, 1).data[0] = 1.0;
    store.create("idle", 1, 1).data[0] = 4.0;
    Tape t(Tape::Mode::train);
    t.backward(t.sum(t.param(store, "used")));
    store.adam_step(0.1);
    CHECK(store.value("idle").data[0] == 4.0);
    CHECK(store.value("used").data[0] != 1.0);
  }

  SUBCASE("quadratic converges to its minimum") {
    ParamStore store;
    store.create("w", 1, 1).data[0] = 0.0;
    for (int i = 0; i < 2000; ++i) {
      Tape t(Tape::Mode::train);
      auto d = t.add_scalar(t.param(store, "w"), -3.0);
      t.backward(t.mul(d, d));
      store.adam_step(0.05);
      if (std::fabs(store.value("w").data[0] - 3.0) < 1e-3) break;
    }
    CHECK(store.value("w").data[0] == doctest::Approx(3.0).epsilon(1e-3));
  }

  SUBCASE("first step size is the learning rate regardless of gradient scale") {
    for (double scale : {1e-3, 1.0, 1e6}) {
      ParamStore store;
      store.create("w", 1, 1).data[0] = 0.0;
      Tape t(Tape::Mode::train);
      t.backward(t.scale(t.param(store, "w"), scale));
      store.adam_step(0.05);
      CHECK(std::fabs(store.value("w").data[0]) == doctest::Approx(0.05).epsilon(1e-4));
    }
  }

  SUBCASE("step without gradients is an error") {
    ParamStore store;
    store.create("w", 1, 1);
    CHECK_THROWS_AS(store.adam_step(0.1), engine_error);
  }
}
