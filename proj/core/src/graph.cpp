#include "echl/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace echl {

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw parse_error("unknown split '" + s + "'");
}

const char* to_string(NodeFeatures::Aggr a) {
  switch (a) {
    case NodeFeatures::Aggr::mean: return "mean";
    case NodeFeatures::Aggr::sum: return "sum";
    case NodeFeatures::Aggr::max: return "max";
  }
  return "?";
}

NodeFeatures::Aggr aggr_from_string(const std::string& s) {
  if (s == "mean") return NodeFeatures::Aggr::mean;
  if (s == "sum") return NodeFeatures::Aggr::sum;
  if (s == "max") return NodeFeatures::Aggr::max;
  throw usage_error("unknown aggregator '" + s + "' (expected mean|sum|max)");
}

std::vector<std::uint32_t> GraphDataset::split_nodes(Split s) const {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < num_nodes; ++i) {
    if (split[i] == s) out.push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

void GraphDataset::validate() const {
  if (csr_in_offsets.size() != num_nodes + 1) {
    throw validation_error("csr_in_offsets size mismatch");
  }
  if (csr_in_offsets.front() != 0 || csr_in_offsets.back() != num_edges) {
    throw validation_error("csr_in_offsets must start at 0 and end at num_edges");
  }
  for (std::size_t i = 0; i + 1 < csr_in_offsets.size(); ++i) {
    if (csr_in_offsets[i] > csr_in_offsets[i + 1]) {
      throw validation_error("csr_in_offsets must be nondecreasing");
    }
  }
  if (csr_in_sources.size() != num_edges) throw validation_error("csr_in_sources size mismatch");
  for (std::uint32_t s : csr_in_sources) {
    if (s >= num_nodes) throw validation_error("edge source index out of range");
  }
  if (edge_feat.size() != num_edges * kEdgeDim) throw validation_error("edge_feat size mismatch");
  for (double v : edge_feat) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw validation_error("edge feature outside [0,1]: " + format_double(v));
    }
  }
  if (labels.size() != num_nodes * k_labels) throw validation_error("labels size mismatch");
  for (std::uint8_t y : labels) {
    if (y > 1) throw validation_error("labels must be binary");
  }
  if (species_id.size() != num_nodes) throw validation_error("species_id size mismatch");
  if (split.size() != num_nodes) throw validation_error("split size mismatch");
}

GraphDataset build_dataset(std::size_t num_nodes,
                           std::vector<std::uint64_t> species,
                           std::vector<Split> splits,
                           std::vector<std::uint8_t> labels, std::size_t k_labels,
                           std::span<const std::uint32_t> edge_src,
                           std::span<const std::uint32_t> edge_dst,
                           std::span<const double> edge_features) {
  const std::size_t num_edges = edge_src.size();
  if (edge_dst.size() != num_edges || edge_features.size() != num_edges * kEdgeDim) {
    throw validation_error("edge arrays disagree on edge count");
  }
  for (std::size_t e = 0; e < num_edges; ++e) {
    if (edge_src[e] >= num_nodes) {
      throw validation_error("edge source " + std::to_string(edge_src[e]) +
                             " out of range for " + std::to_string(num_nodes) + " nodes");
    }
    if (edge_dst[e] >= num_nodes) {
      throw validation_error("edge destination " + std::to_string(edge_dst[e]) +
                             " out of range for " + std::to_string(num_nodes) + " nodes");
    }
  }

  GraphDataset g;
  g.num_nodes = num_nodes;
  g.num_edges = num_edges;
  g.k_labels = k_labels;
  g.species_id = std::move(species);
  g.split = std::move(splits);
  g.labels = std::move(labels);

  // Counting sort by destination.
  g.csr_in_offsets.assign(num_nodes + 1, 0);
  for (std::size_t e = 0; e < num_edges; ++e) g.csr_in_offsets[edge_dst[e] + 1]++;
  for (std::size_t i = 0; i < num_nodes; ++i) g.csr_in_offsets[i + 1] += g.csr_in_offsets[i];

  std::vector<std::uint64_t> cursor(g.csr_in_offsets.begin(), g.csr_in_offsets.end() - 1);
  std::vector<std::uint32_t> order(num_edges);  // CSR slot -> input edge index
  for (std::size_t e = 0; e < num_edges; ++e) {
    order[cursor[edge_dst[e]]++] = static_cast<std::uint32_t>(e);
  }

  // Canonicalize within each destination bucket: sort by (src, feature bytes).
  // This makes the CSR layout, and hence every float accumulation over it,
  // independent of the edge-file row order.
  auto edge_less = [&](std::uint32_t a, std::uint32_t b) {
    if (edge_src[a] != edge_src[b]) return edge_src[a] < edge_src[b];
    return std::memcmp(edge_features.data() + a * kEdgeDim,
                       edge_features.data() + b * kEdgeDim,
                       kEdgeDim * sizeof(double)) < 0;
  };
  for (std::size_t i = 0; i < num_nodes; ++i) {
    std::sort(order.begin() + g.csr_in_offsets[i], order.begin() + g.csr_in_offsets[i + 1],
              edge_less);
  }

  g.csr_in_sources.resize(num_edges);
  g.edge_feat.resize(num_edges * kEdgeDim);
  for (std::size_t slot = 0; slot < num_edges; ++slot) {
    std::uint32_t e = order[slot];
    g.csr_in_sources[slot] = edge_src[e];
    std::copy_n(edge_features.data() + e * kEdgeDim, kEdgeDim,
                g.edge_feat.data() + slot * kEdgeDim);
  }

  g.validate();
  return g;
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == '\t') {
      fields.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return fields;
}

std::uint64_t parse_u64(std::string_view s, std::size_t line, const char* what) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw parse_error(std::string("bad ") + what + " '" + std::string(s) + "'", line);
  }
  return v;
}

double parse_f64(std::string_view s, std::size_t line, const char* what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw parse_error(std::string("bad ") + what + " '" + std::string(s) + "'", line);
  }
  return v;
}

// Strips a trailing '\r' so CRLF files load too.
bool get_line(std::istream& in, std::string& out) {
  if (!std::getline(in, out)) return false;
  if (!out.empty() && out.back() == '\r') out.pop_back();
  return true;
}

}  // namespace

GraphDataset load_dataset(const std::filesystem::path& nodes_path,
                          const std::filesystem::path& edges_path) {
  std::ifstream nf(nodes_path);
  if (!nf) throw parse_error("cannot open " + nodes_path.string());
  std::string line;
  std::size_t lineno = 0;

  if (!get_line(nf, line)) throw parse_error("empty nodes file", 1);
  ++lineno;
  if (line != "node_id\tspecies_id\tsplit\tlabels") {
    throw parse_error("nodes.tsv header must be 'node_id\\tspecies_id\\tsplit\\tlabels'", lineno);
  }

  struct NodeRow {
    std::uint64_t species;
    Split split;
    std::string labels;
  };
  std::vector<std::uint64_t> ids;
  std::vector<NodeRow> rows;
  std::size_t k_labels = 0;
  while (get_line(nf, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 4) throw parse_error("expected 4 tab-separated fields", lineno);
    NodeRow r;
    std::uint64_t id = parse_u64(f[0], lineno, "node_id");
    r.species = parse_u64(f[1], lineno, "species_id");
    try {
      r.split = split_from_string(std::string(f[2]));
    } catch (const parse_error& e) {
      throw parse_error(e.what(), lineno);
    }
    r.labels = std::string(f[3]);
    if (r.labels.empty()) throw parse_error("empty label string", lineno);
    for (char c : r.labels) {
      if (c != '0' && c != '1') throw parse_error("labels must be a string of 0/1", lineno);
    }
    if (k_labels == 0) {
      k_labels = r.labels.size();
    } else if (r.labels.size() != k_labels) {
      throw parse_error("inconsistent label width (expected " + std::to_string(k_labels) + ")",
                        lineno);
    }
    ids.push_back(id);
    rows.push_back(std::move(r));
  }
  const std::size_t n = rows.size();
  if (n == 0) throw parse_error("nodes file has no data rows");

  // node ids must be a permutation of 0..n-1; rows may appear in any order.
  std::vector<std::uint8_t> seen(n, 0);
  for (std::uint64_t id : ids) {
    if (id >= n) {
      throw validation_error("node_id " + std::to_string(id) + " out of range for " +
                             std::to_string(n) + " nodes");
    }
    if (seen[id]++) throw validation_error("duplicate node_id " + std::to_string(id));
  }

  std::vector<std::uint64_t> species(n);
  std::vector<Split> splits(n);
  std::vector<std::uint8_t> labels(n * k_labels);
  for (std::size_t r = 0; r < n; ++r) {
    std::uint64_t id = ids[r];
    species[id] = rows[r].species;
    splits[id] = rows[r].split;
    for (std::size_t k = 0; k < k_labels; ++k) {
      labels[id * k_labels + k] = rows[r].labels[k] == '1' ? 1 : 0;
    }
  }

  std::ifstream ef(edges_path);
  if (!ef) throw parse_error("cannot open " + edges_path.string());
  lineno = 0;
  if (!get_line(ef, line)) throw parse_error("empty edges file", 1);
  ++lineno;
  {
    std::string expected = "src\tdst";
    for (int c = 0; c < kEdgeDim; ++c) expected += "\tf" + std::to_string(c);
    if (line != expected)
      throw parse_error("edges.tsv header must be 'src\\tdst\\tf0..f7'", lineno);
  }

  std::vector<std::uint32_t> src, dst;
  std::vector<double> feats;
  while (get_line(ef, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 2 + kEdgeDim) {
      throw parse_error("expected " + std::to_string(2 + kEdgeDim) + " tab-separated fields",
                        lineno);
    }
    std::uint64_t s = parse_u64(f[0], lineno, "src");
    std::uint64_t d = parse_u64(f[1], lineno, "dst");
    if (s >= n) throw validation_error("edge source " + std::to_string(s) +
                                       " out of range (line " + std::to_string(lineno) + ")");
    if (d >= n) throw validation_error("edge destination " + std::to_string(d) +
                                       " out of range (line " + std::to_string(lineno) + ")");
    src.push_back(static_cast<std::uint32_t>(s));
    dst.push_back(static_cast<std::uint32_t>(d));
    for (int c = 0; c < kEdgeDim; ++c) {
      double v = parse_f64(f[2 + c], lineno, "edge feature");
      if (!(v >= 0.0 && v <= 1.0)) {
        throw validation_error("edge feature " + format_double(v) +
                               " outside [0,1] (line " + std::to_string(lineno) + ")");
      }
      feats.push_back(v);
    }
  }

  return build_dataset(n, std::move(species), std::move(splits), std::move(labels), k_labels,
                       src, dst, feats);
}

void write_dataset_tsv(const GraphDataset& g,
                       const std::filesystem::path& nodes_path,
                       const std::filesystem::path& edges_path) {
  std::ofstream nf(nodes_path, std::ios::binary);
  if (!nf) throw std::runtime_error("cannot write " + nodes_path.string());
  nf << "node_id\tspecies_id\tsplit\tlabels\n";
  std::string lbl(g.k_labels, '0');
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    for (std::size_t k = 0; k < g.k_labels; ++k) {
      lbl[k] = g.labels[i * g.k_labels + k] ? '1' : '0';
    }
    nf << i << '\t' << g.species_id[i] << '\t' << to_string(g.split[i]) << '\t' << lbl << '\n';
  }

  std::ofstream ef(edges_path, std::ios::binary);
  if (!ef) throw std::runtime_error("cannot write " + edges_path.string());
  ef << "src\tdst";
  for (int c = 0; c < kEdgeDim; ++c) ef << "\tf" << c;
  ef << '\n';
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    for (std::uint64_t e = g.csr_in_offsets[i]; e < g.csr_in_offsets[i + 1]; ++e) {
      ef << g.csr_in_sources[e] << '\t' << i;
      for (int c = 0; c < kEdgeDim; ++c) {
        ef << '\t' << format_double(g.edge_feat[e * kEdgeDim + c]);
      }
      ef << '\n';
    }
  }
}

NodeFeatures build_node_features(const GraphDataset& g, NodeFeatures::Aggr aggr) {
  NodeFeatures nf;
  nf.num_nodes = g.num_nodes;
  nf.aggr_kind = aggr;
  nf.x.assign(g.num_nodes * kEdgeDim, 0.0);

  parallel_for(g.num_nodes, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::uint64_t lo = g.csr_in_offsets[i];
      const std::uint64_t hi = g.csr_in_offsets[i + 1];
      double* out = nf.x.data() + i * kEdgeDim;
      if (lo == hi) continue;  // isolated node: all-zeros row
      if (aggr == NodeFeatures::Aggr::max) {
        for (std::uint64_t e = lo; e < hi; ++e) {
          const double* f = g.edge_feat.data() + e * kEdgeDim;
          for (int c = 0; c < kEdgeDim; ++c) out[c] = std::max(out[c], f[c]);
        }
      } else {
        for (std::uint64_t e = lo; e < hi; ++e) {
          const double* f = g.edge_feat.data() + e * kEdgeDim;
          for (int c = 0; c < kEdgeDim; ++c) out[c] += f[c];
        }
        if (aggr == NodeFeatures::Aggr::mean) {
          const double inv = 1.0 / static_cast<double>(hi - lo);
          for (int c = 0; c < kEdgeDim; ++c) out[c] *= inv;
        }
      }
    }
  });
  return nf;
}

bool species_splits_disjoint(const GraphDataset& g) {
  std::vector<std::vector<std::uint64_t>> sets(3);
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    sets[static_cast<int>(g.split[i])].push_back(g.species_id[i]);
  }
  for (auto& s : sets) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      std::vector<std::uint64_t> inter;
      std::set_intersection(sets[a].begin(), sets[a].end(), sets[b].begin(), sets[b].end(),
                            std::back_inserter(inter));
      if (!inter.empty()) return false;
    }
  }
  return true;
}

std::uint64_t label_fingerprint(std::span<const std::uint8_t> labels, std::size_t k_labels) {
  std::uint64_t h = fnv1a(&k_labels, sizeof(k_labels));
  std::size_t n = k_labels ? labels.size() / k_labels : 0;
  h = fnv1a(&n, sizeof(n), h);
  return fnv1a(labels.data(), labels.size(), h);
}

}  // namespace echl
