#include "echl/synth.hpp"

#include <algorithm>
#include <cmath>

namespace echl {

void SynthSpec::validate() const {
  if (num_species < 3) throw usage_error("synth: need at least 3 species (train/valid/test)");
  if (nodes_per_species < 1) throw usage_error("synth: nodes_per_species must be >= 1");
  if (k_labels < 1) throw usage_error("synth: k_labels must be >= 1");
  if (!(avg_degree >= 1.0)) throw usage_error("synth: avg_degree must be >= 1");
  if (!(signal >= 0.0 && signal <= 1.0)) throw usage_error("synth: signal must be in [0,1]");
  if (!(noise >= 0.0 && noise <= 1.0)) throw usage_error("synth: noise must be in [0,1]");
  if (!(label_flip >= 0.0 && label_flip < 1.0)) {
    throw usage_error("synth: label_flip must be in [0,1)");
  }
  if (!(homophily >= 0.0 && homophily <= 1.0)) {
    throw usage_error("synth: homophily must be in [0,1]");
  }
}

namespace {

// Jaccard overlap of two label rows restricted to one channel's label group
// (labels k with k % kEdgeDim == channel). Empty-union convention: 0.
double group_jaccard(const std::uint8_t* a, const std::uint8_t* b, std::size_t k_labels,
                     int channel) {
  int inter = 0;
  int uni = 0;
  for (std::size_t k = channel; k < k_labels; k += kEdgeDim) {
    const bool ya = a[k] != 0;
    const bool yb = b[k] != 0;
    inter += ya && yb;
    uni += ya || yb;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double full_jaccard(const std::uint8_t* a, const std::uint8_t* b, std::size_t k_labels) {
  int inter = 0;
  int uni = 0;
  for (std::size_t k = 0; k < k_labels; ++k) {
    const bool ya = a[k] != 0;
    const bool yb = b[k] != 0;
    inter += ya && yb;
    uni += ya || yb;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Fraction of active labels in one channel's label group.
double group_frac(const std::uint8_t* a, std::size_t k_labels, int channel) {
  int act = 0;
  int tot = 0;
  for (std::size_t k = channel; k < k_labels; k += kEdgeDim) {
    ++tot;
    act += a[k] != 0;
  }
  return tot == 0 ? 0.0 : static_cast<double>(act) / static_cast<double>(tot);
}

}  // namespace

GraphDataset generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t S = spec.num_species;
  const std::size_t per = spec.nodes_per_species;
  const std::size_t n = S * per;
  const std::size_t k = spec.k_labels;

  Rng rng(seed ^ 0x45434848u);  // domain-separated from other seed users

  std::vector<std::uint64_t> species(n);
  std::vector<Split> splits(n);
  for (std::size_t s = 0; s < S; ++s) {
    Split sp = s + 2 < S ? Split::train : (s + 2 == S ? Split::valid : Split::test);
    for (std::size_t j = 0; j < per; ++j) {
      species[s * per + j] = s;
      splits[s * per + j] = sp;
    }
  }

  // Per-species Bernoulli prototype per label, then node draws + flip noise.
  std::vector<double> proto(S * k);
  for (auto& p : proto) p = rng.uniform(0.2, 0.8);
  std::vector<std::uint8_t> labels(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = proto.data() + species[i] * k;
    for (std::size_t c = 0; c < k; ++c) {
      bool y = rng.bernoulli(p[c]);
      if (rng.bernoulli(spec.label_flip)) y = !y;
      labels[i * k + c] = y ? 1 : 0;
    }
  }

  // Undirected picks per node; the rate scales with label activity times the
  // signal knob, so node degree carries label evidence only when edges do.
  // Each accepted pick is emitted in both directions.
  const double base_picks = spec.avg_degree / 2.0;
  std::vector<std::uint32_t> src, dst;
  std::vector<double> feat;
  for (std::size_t u = 0; u < n; ++u) {
    int active = 0;
    for (std::size_t c = 0; c < k; ++c) active += labels[u * k + c];
    const double act = static_cast<double>(active) / static_cast<double>(k);
    const auto picks = static_cast<std::size_t>(
        std::max<long>(1, std::lround(base_picks * (0.5 + spec.signal * act))));
    for (std::size_t t = 0; t < picks; ++t) {
      std::size_t v = u;
      if (per > 1 && rng.bernoulli(spec.homophily)) {
        // Tournament pick: strongest label overlap among a few same-species
        // candidates, so links are label-assortative rather than merely
        // species-assortative. Neighbor feature pooling then denoises a
        // node's own labels instead of just its species prior.
        double best = -1.0;
        for (int attempt = 0; attempt < 6; ++attempt) {
          const std::size_t cand = species[u] * per + rng.uniform_int(per);
          if (cand == u) continue;
          const double j = full_jaccard(labels.data() + u * k, labels.data() + cand * k, k);
          if (j > best) {
            best = j;
            v = cand;
          }
        }
      } else {
        for (int attempt = 0; attempt < 16 && v == u; ++attempt) v = rng.uniform_int(n);
      }
      if (v == u) continue;
      // Each direction blends the shared overlap term with the source
      // node's own label activity, so an incoming edge is evidence about
      // the neighbor as much as about the pair.
      double fwd[kEdgeDim];
      double bwd[kEdgeDim];
      for (int c = 0; c < kEdgeDim; ++c) {
        const double j =
            0.5 * group_jaccard(labels.data() + u * k, labels.data() + v * k, k, c);
        const double gu = 0.5 * group_frac(labels.data() + u * k, k, c);
        const double gv = 0.5 * group_frac(labels.data() + v * k, k, c);
        fwd[c] = std::clamp(spec.signal * (j + gu) + rng.uniform(0.0, spec.noise), 0.0, 1.0);
        bwd[c] = std::clamp(spec.signal * (j + gv) + rng.uniform(0.0, spec.noise), 0.0, 1.0);
      }
      feat.insert(feat.end(), fwd, fwd + kEdgeDim);
      feat.insert(feat.end(), bwd, bwd + kEdgeDim);
      src.push_back(static_cast<std::uint32_t>(u));
      dst.push_back(static_cast<std::uint32_t>(v));
      src.push_back(static_cast<std::uint32_t>(v));
      dst.push_back(static_cast<std::uint32_t>(u));
    }
  }

  return build_dataset(n, std::move(species), std::move(splits), std::move(labels), k,
                       src, dst, feat);
}

}  // namespace echl
