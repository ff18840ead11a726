#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <doctest.h>

#include "echl/labelcorr.hpp"
#include "echl/synth.hpp"

using namespace echl;

namespace {

CoocMatrix identity_cooc(std::size_t k) {
  CoocMatrix m;
  m.k = k;
  m.variant = CoocMatrix::Variant::conditional;
  m.p.assign(k * k, 0.0);
  for (std::size_t j = 0; j < k; ++j) m.p[j * k + j] = 1.0;
  return m;
}

}  // namespace

TEST_CASE("conditional matrix from a hand-counted fixture") {
  // rows: [1,1,0], [1,0,0], [0,1,1]
  const std::vector<std::uint8_t> labels{1, 1, 0, 1, 0, 0, 0, 1, 1};
  const CoocMatrix m =
      build_cooc_from_train_labels(labels, 3, 3, CoocMatrix::Variant::conditional);
  // counts C = [[2,1,0],[1,2,1],[0,1,1]]; divide by diagonal, then renormalize
  CHECK(m.at(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(m.at(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(m.at(0, 2) == 0.0);
  CHECK(m.at(1, 0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(m.at(1, 1) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(m.at(1, 2) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(m.at(2, 0) == 0.0);
  CHECK(m.at(2, 1) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(m.at(2, 2) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("rows sum to one, or to zero when a label never fires") {
  Rng rng(12);
  const std::size_t n = 200;
  const std::size_t k = 6;
  std::vector<std::uint8_t> labels(n * k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j + 1 < k; ++j) labels[i * k + j] = rng.bernoulli(0.3) ? 1 : 0;
    // label k-1 never fires
  }
  const CoocMatrix m = build_cooc_from_train_labels(labels, n, k,
                                                    CoocMatrix::Variant::conditional);
  for (std::size_t j = 0; j + 1 < k; ++j) {
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += m.at(j, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (std::size_t c = 0; c < k; ++c) CHECK(m.at(k - 1, c) == 0.0);

  const CoocMatrix mc = build_cooc_from_train_labels(
      labels, n, k, CoocMatrix::Variant::conditional_centered);
  for (std::size_t j = 0; j + 1 < k; ++j) {
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += mc.at(j, c);
    CHECK(std::fabs(sum) < 1e-12);
  }
}

TEST_CASE("smoothing with lambda zero is the bitwise identity") {
  Rng rng(3);
  const std::size_t n = 17;
  const std::size_t k = 5;
  std::vector<double> z(n * k);
  for (auto& v : z) v = 10.0 * rng.normal();
  const CoocMatrix m = identity_cooc(k);
  const std::vector<double> out = smooth_logits(z, n, k, m, 0.0);
  CHECK(std::memcmp(out.data(), z.data(), z.size() * sizeof(double)) == 0);
}

TEST_CASE("identity matrix scales logits uniformly") {
  const std::vector<double> z{1.0, -2.0, 0.5, 3.0, 0.0, -1.0};
  const CoocMatrix m = identity_cooc(3);
  const std::vector<double> out = smooth_logits(z, 2, 3, m, 0.25);
  for (std::size_t i = 0; i < z.size(); ++i) {
    CHECK(out[i] == doctest::Approx(1.25 * z[i]).epsilon(1e-15));
  }
}

TEST_CASE("one-row hand example") {
  // Labels 0 and 1 always co-fire, so rows 0 and 1 mirror each other and
  // evidence for label 0 spills into label 1.
  CoocMatrix m;
  m.k = 3;
  m.variant = CoocMatrix::Variant::conditional;
  m.p = {0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  const std::vector<double> z{1.0, 0.0, 0.0};
  const std::vector<double> out = smooth_logits(z, 1, 3, m, 0.1);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(out[2] == 0.0);
}

TEST_CASE("smoothing is affine in the logits and linear in lambda") {
  Rng rng(9);
  const std::size_t n = 8;
  const std::size_t k = 4;
  std::vector<std::uint8_t> labels(40 * k);
  for (auto& v : labels) v = rng.bernoulli(0.4) ? 1 : 0;
  const CoocMatrix m = build_cooc_from_train_labels(
      labels, 40, k, CoocMatrix::Variant::conditional_centered);

  std::vector<double> z1(n * k), z2(n * k);
  for (auto& v : z1) v = rng.normal();
  for (auto& v : z2) v = rng.normal();

  const auto a = smooth_logits(z1, n, k, m, 0.05);
  const auto b = smooth_logits(z1, n, k, m, 0.15);
  const auto ab = smooth_logits(z1, n, k, m, 0.2);
  for (std::size_t i = 0; i < z1.size(); ++i) {
    CHECK(std::fabs(a[i] + b[i] - z1[i] - ab[i]) < 1e-12);
  }

  std::vector<double> zsum(n * k);
  for (std::size_t i = 0; i < zsum.size(); ++i) zsum[i] = z1[i] + z2[i];
  const auto s1 = smooth_logits(z1, n, k, m, 0.1);
  const auto s2 = smooth_logits(z2, n, k, m, 0.1);
  const auto ss = smooth_logits(zsum, n, k, m, 0.1);
  for (std::size_t i = 0; i < zsum.size(); ++i) {
    CHECK(std::fabs(s1[i] + s2[i] - ss[i]) < 1e-12);
  }
}

TEST_CASE("training-only guard") {
  SynthSpec spec;
  spec.nodes_per_species = 20;
  spec.k_labels = 4;
  const GraphDataset g = generate_synthetic(spec, 8);

  const CoocMatrix ok = build_cooc(g, CoocMatrix::Variant::conditional);
  CHECK(ok.k == 4);

  auto rows = g.split_nodes(Split::train);
  rows.push_back(g.split_nodes(Split::valid).front());
  CHECK_THROWS_AS(build_cooc(g, CoocMatrix::Variant::conditional, rows), validation_error);
  try {
    build_cooc(g, CoocMatrix::Variant::conditional, rows);
  } catch (const validation_error& e) {
    CHECK(std::string(e.what()).find("valid") != std::string::npos);
  }

  // default rows equal the explicit train split
  const CoocMatrix explicit_rows =
      build_cooc(g, CoocMatrix::Variant::conditional, g.split_nodes(Split::train));
  CHECK(explicit_rows.p == ok.p);
  CHECK(explicit_rows.train_fingerprint == ok.train_fingerprint);
}

TEST_CASE("correlation stats fixtures") {
  SUBCASE("identity matrix") {
    const auto doc = correlation_stats(identity_cooc(4), 1e-3);
    CHECK(doc["offdiag_mean"].get<double>() == 0.0);
    CHECK(doc["sparsity"].get<double>() == 0.0);
  }
  SUBCASE("uniform off-diagonal") {
    CoocMatrix m = identity_cooc(4);
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t c = 0; c < 4; ++c) {
        if (j != c) m.p[j * 4 + c] = 0.2;
      }
    }
    const auto doc = correlation_stats(m, 1e-3);
    CHECK(doc["offdiag_max"].get<double>() == 0.2);
    CHECK(doc["offdiag_min"].get<double>() == 0.2);
    CHECK(doc["offdiag_mean"].get<double>() == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(doc["sparsity"].get<double>() == 1.0);
  }
  SUBCASE("three-label fixture against a counting oracle") {
    const std::vector<std::uint8_t> labels{1, 1, 0, 1, 0, 0, 0, 1, 1};
    const CoocMatrix m =
        build_cooc_from_train_labels(labels, 3, 3, CoocMatrix::Variant::conditional);
    const auto doc = correlation_stats(m, 1e-3);
    // off-diagonal entries: 1/3, 0, 1/4, 1/4, 0, 1/2
    CHECK(doc["offdiag_max"].get<double>() == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(doc["offdiag_min"].get<double>() == 0.0);
    CHECK(doc["offdiag_mean"].get<double>() ==
          doctest::Approx((1.0 / 3.0 + 0.25 + 0.25 + 0.5) / 6.0).epsilon(1e-14));
    CHECK(doc["sparsity"].get<double>() == doctest::Approx(4.0 / 6.0).epsilon(1e-14));
  }
}

TEST_CASE("written matrix parses back") {
  const std::vector<std::uint8_t> labels{1, 1, 0, 1, 0, 0, 0, 1, 1};
  const CoocMatrix m =
      build_cooc_from_train_labels(labels, 3, 3, CoocMatrix::Variant::conditional_centered);
  const auto dir = std::filesystem::temp_directory_path() / "echl_labelcorr_tests";
  std::filesystem::create_directories(dir);
  write_cooc(dir / "cooc.csv", dir / "cooc.json", m);

  std::ifstream f(dir / "cooc.csv");
  std::vector<double> parsed;
  std::string line;
  while (std::getline(f, line)) {
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) parsed.push_back(std::stod(cell));
  }
  CHECK(parsed == m.p);

  std::ifstream jf(dir / "cooc.json");
  const auto side = nlohmann::json::parse(jf);
  CHECK(side["variant"] == "conditional_centered");
  CHECK(side["train_fingerprint"].get<std::uint64_t>() == m.train_fingerprint);
}

TEST_CASE("variant names") {
  CHECK(cooc_variant_from_string("conditional") == CoocMatrix::Variant::conditional);
  CHECK(cooc_variant_from_string("conditional_centered") ==
        CoocMatrix::Variant::conditional_centered);
  CHECK_THROWS_AS(cooc_variant_from_string("pmi"), usage_error);
}
