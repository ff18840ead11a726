#pragma once

#include <cstdint>

#include "echl/graph.hpp"

namespace echl {

// Knobs for the synthetic species-split generator. Labels come from
// per-species Bernoulli prototypes with node-level flip noise; edges are
// drawn with species homophily and a per-node rate that grows with label
// activity, so sum-style edge->node aggregation sees degree x strength.
// Channel c of an edge encodes the endpoints' label overlap restricted to
// the label group {k : k % 8 == c}, scaled by `signal` plus uniform noise.
struct SynthSpec {
  std::size_t num_species = 3;        // >= 3; last two become valid and test
  std::size_t nodes_per_species = 500;
  std::size_t k_labels = 16;
  double avg_degree = 8.0;            // expected incoming directed degree
  double signal = 0.8;                // s in [0,1]; 0 = labels carry no edge evidence
  double noise = 0.1;                 // per-channel uniform noise amplitude
  double label_flip = 0.02;           // node-level label flip probability
  double homophily = 0.8;             // probability an edge pick stays within species

  void validate() const;
};

// Deterministic for fixed (spec, seed). Splits are species-disjoint by
// construction: species 0..S-3 train, S-2 valid, S-1 test.
GraphDataset generate_synthetic(const SynthSpec& spec, std::uint64_t seed);

}  // namespace echl
