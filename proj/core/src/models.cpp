#include "echl/models.hpp"

#include <unordered_map>

namespace echl {

const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::mlp: return "mlp";
    case ModelKind::sage: return "sage";
    case ModelKind::gin: return "gin";
  }
  return "?";
}

const char* to_string(NormKind n) {
  switch (n) {
    case NormKind::none: return "none";
    case NormKind::bn: return "bn";
    case NormKind::ln: return "ln";
    case NormKind::cln: return "cln";
  }
  return "?";
}

const char* to_string(EdgeScalarKind e) {
  switch (e) {
    case EdgeScalarKind::sum: return "sum";
    case EdgeScalarKind::learned1d: return "learned1d";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mlp") return ModelKind::mlp;
  if (s == "sage") return ModelKind::sage;
  if (s == "gin") return ModelKind::gin;
  throw usage_error("unknown model kind: " + s);
}

NormKind norm_kind_from_string(const std::string& s) {
  if (s == "none") return NormKind::none;
  if (s == "bn") return NormKind::bn;
  if (s == "ln") return NormKind::ln;
  if (s == "cln") return NormKind::cln;
  throw usage_error("unknown norm kind: " + s);
}

EdgeScalarKind edge_scalar_from_string(const std::string& s) {
  if (s == "sum") return EdgeScalarKind::sum;
  if (s == "learned1d") return EdgeScalarKind::learned1d;
  throw usage_error("unknown edge scalarizer: " + s);
}

void ModelConfig::validate() const {
  if (layers < 1) throw usage_error("layers must be >= 1");
  if (hidden < 1) throw usage_error("hidden width must be >= 1");
  if (k_labels < 1) throw usage_error("label count must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw usage_error("dropout must be in [0,1)");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw usage_error("leaky slope must be in (0,1)");
  if (!(norm_eps > 0.0)) throw usage_error("norm eps must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) {
    throw usage_error("bn momentum must be in (0,1]");
  }
}

Tensor species_descriptor(const GraphDataset& g, const NodeFeatures& x) {
  if (x.num_nodes != g.num_nodes) throw engine_error("species_descriptor: node count mismatch");
  std::unordered_map<std::uint64_t, std::pair<std::vector<double>, std::size_t>> acc;
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    auto& slot = acc[g.species_id[i]];
    if (slot.first.empty()) slot.first.assign(kEdgeDim, 0.0);
    const std::span<const double> row = x.row(i);
    for (int c = 0; c < kEdgeDim; ++c) slot.first[c] += row[c];
    ++slot.second;
  }
  Tensor d(g.num_nodes, kEdgeDim);
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    const auto& slot = acc[g.species_id[i]];
    double* row = d.row_ptr(i);
    for (int c = 0; c < kEdgeDim; ++c) {
      row[c] = slot.first[c] / static_cast<double>(slot.second);
    }
  }
  return d;
}

namespace {

std::string pname(const char* prefix, std::size_t i, const char* field) {
  return std::string(prefix) + std::to_string(i) + "." + field;
}

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed ^ 0x6d6f64656cULL);
  const std::size_t h = cfg_.hidden;
  const std::size_t k = cfg_.k_labels;
  const std::size_t d_in = static_cast<std::size_t>(kEdgeDim);

  auto weight = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    Tensor& t = params_.create(name, rows, cols);
    init_kaiming_uniform(t, rows, rng);
  };
  auto zeros = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    params_.create(name, rows, cols);
  };

  switch (cfg_.kind) {
    case ModelKind::mlp: {
      std::size_t fin = d_in;
      for (std::size_t l = 0; l < cfg_.layers; ++l) {
        weight(pname("l", l, "w"), fin, h);
        zeros(pname("l", l, "b"), 1, h);
        fin = h;
      }
      weight("out.w", fin, k);
      zeros("out.b", 1, k);
      norm_sites_ = cfg_.layers;
      break;
    }
    case ModelKind::sage: {
      std::size_t fin = d_in;
      for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::size_t fout = (l + 1 == cfg_.layers) ? k : h;
        weight(pname("l", l, "w_self"), fin, fout);
        weight(pname("l", l, "w"), fin, fout);
        zeros(pname("l", l, "b"), 1, fout);
        fin = fout;
      }
      norm_sites_ = cfg_.layers - 1;
      break;
    }
    case ModelKind::gin: {
      std::size_t fin = d_in;
      for (std::size_t l = 0; l + 1 < cfg_.layers; ++l) {
        Tensor& eps = params_.create(pname("l", l, "eps"), 1, 1);
        eps.data[0] = 0.0;
        weight(pname("l", l, "mlp1.w"), fin, h);
        zeros(pname("l", l, "mlp1.b"), 1, h);
        weight(pname("l", l, "mlp2.w"), h, h);
        zeros(pname("l", l, "mlp2.b"), 1, h);
        fin = h;
      }
      weight("out.w", fin, k);
      zeros("out.b", 1, k);
      norm_sites_ = cfg_.layers - 1;
      break;
    }
  }

  if (cfg_.norm == NormKind::none) norm_sites_ = 0;
  for (std::size_t s = 0; s < norm_sites_; ++s) {
    switch (cfg_.norm) {
      case NormKind::bn:
      case NormKind::ln: {
        Tensor& gamma = params_.create(pname("n", s, "gamma"), 1, h);
        for (double& v : gamma.data) v = 1.0;
        zeros(pname("n", s, "beta"), 1, h);
        break;
      }
      case NormKind::cln: {
        weight(pname("n", s, "p"), d_in, h);
        zeros(pname("n", s, "pb"), 1, h);
        // Zero-initialized conditioning maps make the initial CLN an exact
        // LayerNorm with gamma=1, beta=0.
        zeros(pname("n", s, "ug"), h, h);
        zeros(pname("n", s, "ub"), h, h);
        break;
      }
      case NormKind::none:
        break;
    }
  }
  if (cfg_.norm == NormKind::bn) {
    bn_stats_.assign(norm_sites_, BatchNormStats(h));
  }

  if (cfg_.kind != ModelKind::mlp && cfg_.edge_scalar == EdgeScalarKind::learned1d) {
    weight("edge.u", d_in, 1);
    zeros("edge.b", 1, 1);
  }
}

Tape::Val Model::edge_alpha(Tape& tape, const GraphDataset& g) {
  if (cfg_.edge_scalar == EdgeScalarKind::sum) {
    Tensor a(g.num_edges, 1);
    for (std::size_t e = 0; e < g.num_edges; ++e) {
      double s = 0.0;
      for (double v : g.edge_feat_row(e)) s += v;
      a.data[e] = s;
    }
    return tape.input(std::move(a));
  }
  Tensor feats(g.num_edges, kEdgeDim);
  feats.data.assign(g.edge_feat.begin(), g.edge_feat.end());
  const Tape::Val e_in = tape.input(std::move(feats));
  const Tape::Val u = tape.param(params_, "edge.u");
  const Tape::Val b = tape.param(params_, "edge.b");
  return tape.softplus(tape.add_row(tape.matmul(e_in, u), b));
}

Tape::Val Model::norm_site(Tape& tape, Tape::Val h, std::size_t site, Tape::Val desc,
                           std::span<const std::uint32_t> bn_stat_rows) {
  switch (cfg_.norm) {
    case NormKind::none:
      return h;
    case NormKind::bn: {
      const Tape::Val xhat =
          tape.batch_norm(h, bn_stats_[site], cfg_.bn_momentum, cfg_.norm_eps, bn_stat_rows);
      const Tape::Val gamma = tape.param(params_, pname("n", site, "gamma"));
      const Tape::Val beta = tape.param(params_, pname("n", site, "beta"));
      return tape.add_row(tape.mul_row(xhat, gamma), beta);
    }
    case NormKind::ln: {
      const Tape::Val xhat = tape.row_norm(h, cfg_.norm_eps);
      const Tape::Val gamma = tape.param(params_, pname("n", site, "gamma"));
      const Tape::Val beta = tape.param(params_, pname("n", site, "beta"));
      return tape.add_row(tape.mul_row(xhat, gamma), beta);
    }
    case NormKind::cln: {
      const Tape::Val xhat = tape.row_norm(h, cfg_.norm_eps);
      const Tape::Val p = tape.param(params_, pname("n", site, "p"));
      const Tape::Val pb = tape.param(params_, pname("n", site, "pb"));
      const Tape::Val ug = tape.param(params_, pname("n", site, "ug"));
      const Tape::Val ub = tape.param(params_, pname("n", site, "ub"));
      const Tape::Val t =
          tape.leaky_relu(tape.add_row(tape.matmul(desc, p), pb), cfg_.leaky_slope);
      const Tape::Val gamma = tape.add_scalar(tape.matmul(t, ug), 1.0);
      const Tape::Val beta = tape.matmul(t, ub);
      return tape.add(tape.mul(xhat, gamma), beta);
    }
  }
  throw engine_error("unreachable norm kind");
}

Tape::Val Model::hidden_tail(Tape& tape, Tape::Val h, std::size_t site, Tape::Val desc,
                             std::span<const std::uint32_t> bn_stat_rows) {
  h = norm_site(tape, h, site, desc, bn_stat_rows);
  h = tape.leaky_relu(h, cfg_.leaky_slope);
  if (cfg_.dropout > 0.0) h = tape.dropout(h, cfg_.dropout);
  return h;
}

Tape::Val Model::forward(Tape& tape, const GraphDataset& g, const NodeFeatures& x,
                         std::span<const std::uint32_t> bn_stat_rows) {
  if (x.num_nodes != g.num_nodes) throw engine_error("forward: node count mismatch");
  Tensor x0(g.num_nodes, kEdgeDim);
  x0.data.assign(x.x.begin(), x.x.end());
  Tape::Val h = tape.input(std::move(x0));

  Tape::Val desc = h;
  if (cfg_.norm == NormKind::cln && norm_sites_ > 0) {
    desc = tape.input(species_descriptor(g, x));
  }

  switch (cfg_.kind) {
    case ModelKind::mlp: {
      for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const Tape::Val w = tape.param(params_, pname("l", l, "w"));
        const Tape::Val b = tape.param(params_, pname("l", l, "b"));
        h = tape.add_row(tape.matmul(h, w), b);
        h = hidden_tail(tape, h, l, desc, bn_stat_rows);
      }
      break;
    }
    case ModelKind::sage: {
      const Tape::Val alpha = edge_alpha(tape, g);
      for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const Tape::Val w_self = tape.param(params_, pname("l", l, "w_self"));
        const Tape::Val w = tape.param(params_, pname("l", l, "w"));
        const Tape::Val b = tape.param(params_, pname("l", l, "b"));
        const Tape::Val own = tape.matmul(h, w_self);
        const Tape::Val agg = tape.csr_weighted_mean(tape.matmul(h, w), alpha, g);
        h = tape.add_row(tape.add(own, agg), b);
        if (l + 1 < cfg_.layers) h = hidden_tail(tape, h, l, desc, bn_stat_rows);
      }
      return h;
    }
    case ModelKind::gin: {
      const Tape::Val alpha = edge_alpha(tape, g);
      for (std::size_t l = 0; l + 1 < cfg_.layers; ++l) {
        const Tape::Val eps = tape.param(params_, pname("l", l, "eps"));
        const Tape::Val agg = tape.csr_weighted_sum(h, alpha, g);
        Tape::Val s = tape.add(tape.add(h, tape.mul_scalar_param(h, eps)), agg);
        const Tape::Val w1 = tape.param(params_, pname("l", l, "mlp1.w"));
        const Tape::Val b1 = tape.param(params_, pname("l", l, "mlp1.b"));
        const Tape::Val w2 = tape.param(params_, pname("l", l, "mlp2.w"));
        const Tape::Val b2 = tape.param(params_, pname("l", l, "mlp2.b"));
        s = tape.leaky_relu(tape.add_row(tape.matmul(s, w1), b1), cfg_.leaky_slope);
        s = tape.add_row(tape.matmul(s, w2), b2);
        h = hidden_tail(tape, s, l, desc, bn_stat_rows);
      }
      break;
    }
  }

  const Tape::Val w = tape.param(params_, "out.w");
  const Tape::Val b = tape.param(params_, "out.b");
  return tape.add_row(tape.matmul(h, w), b);
}

}  // namespace echl
