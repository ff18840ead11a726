#include "echl/tape.hpp"

#include <algorithm>
#include <cmath>

namespace echl {

namespace {

double stable_softplus(double x) {
  // log(1 + e^x) without overflow on either side
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::size_t Tape::check(Val v) const {
  if (v < 0 || static_cast<std::size_t>(v) >= nodes_.size()) {
    throw engine_error("invalid tape value handle");
  }
  return static_cast<std::size_t>(v);
}

Tape::Val Tape::push(Node n, const char* where) {
  check_finite(n.value, where);
  nodes_.push_back(std::move(n));
  return static_cast<Val>(nodes_.size() - 1);
}

Tensor& Tape::grad_buf(Val v) {
  Node& n = nodes_[v];
  if (n.grad.data.empty()) n.grad = Tensor(n.value.rows, n.value.cols);
  return n.grad;
}

Tape::Val Tape::input(Tensor t) {
  Node n;
  n.value = std::move(t);
  n.requires_grad = false;
  return push(std::move(n), "input");
}

Tape::Val Tape::param(ParamStore& store, const std::string& name) {
  if (store_ && store_ != &store) throw engine_error("tape bound to a different ParamStore");
  store_ = &store;
  Node n;
  n.value = store.value(name);
  n.requires_grad = true;
  n.param_index = static_cast<std::int32_t>(store.index_of(name));
  return push(std::move(n), "param");
}

Tape::Val Tape::matmul(Val a, Val b) {
  check(a);
  check(b);
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (A.cols != B.rows) throw engine_error("matmul shape mismatch");
  Tensor out(A.rows, B.cols);
  parallel_for(A.rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const double* arow = A.row_ptr(i);
      double* orow = out.row_ptr(i);
      for (std::size_t k = 0; k < A.cols; ++k) {
        const double av = arow[k];
        if (av == 0.0) continue;
        const double* brow = B.row_ptr(k);
        for (std::size_t j = 0; j < B.cols; ++j) orow[j] += av * brow[j];
      }
    }
  });
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Val self = push(std::move(n), "matmul");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [a, b, self](Tape& t) {
      const Tensor& G = t.nodes_[self].grad;
      const Tensor& A = t.nodes_[a].value;
      const Tensor& B = t.nodes_[b].value;
      if (t.wants_grad(a)) {
        Tensor& dA = t.grad_buf(a);
        parallel_for(A.rows, [&](std::size_t lo, std::size_t hi) {
          for (std::size_t i = lo; i < hi; ++i) {
            const double* grow = G.row_ptr(i);
            double* darow = dA.row_ptr(i);
            for (std::size_t k = 0; k < A.cols; ++k) {
              const double* brow = B.row_ptr(k);
              double acc = 0.0;
              for (std::size_t j = 0; j < B.cols; ++j) acc += grow[j] * brow[j];
              darow[k] += acc;
            }
          }
        });
      }
      if (t.wants_grad(b)) {
        Tensor& dB = t.grad_buf(b);
        parallel_for(B.rows, [&](std::size_t lo, std::size_t hi) {
          for (std::size_t k = lo; k < hi; ++k) {
            double* dbrow = dB.row_ptr(k);
            for (std::size_t i = 0; i < A.rows; ++i) {
              const double av = A.at(i, k);
              if (av == 0.0) continue;
              const double* grow = G.row_ptr(i);
              for (std::size_t j = 0; j < B.cols; ++j) dbrow[j] += av * grow[j];
            }
          }
        });
      }
    };
  }
  return self;
}

Tape::Val Tape::add(Val a, Val b) {
  check(a);
  check(b);
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (!A.same_shape(B)) throw engine_error("add shape mismatch");
  Tensor out = A;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Val self = push(std::move(n), "add");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [a, b, self](Tape& t) {
      const Tensor& G = t.nodes_[self].grad;
      for (Val src : {a, b}) {
        if (!t.wants_grad(src)) continue;
        Tensor& d = t.grad_buf(src);
        for (std::size_t i = 0; i < G.data.size(); ++i) d.data[i] += G.data[i];
      }
    };
  }
  return self;
}

Tape::Val Tape::mul(Val a, Val b) {
  check(a);
  check(b);
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (!A.same_shape(B)) throw engine_error("mul shape mismatch");
  Tensor out = A;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Val self = push(std::move(n), "mul");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [a, b, self](Tape& t) {
      const Tensor& G = t.nodes_[self].grad;
      const Tensor& A = t.nodes_[a].value;
      const Tensor& B = t.nodes_[b].value;
      if (t.wants_grad(a)) {
        Tensor& d = t.grad_buf(a);
        for (std::size_t i = 0; i < G.data.size(); ++i) d.data[i] += G.data[i] * B.data[i];
      }
      if (t.wants_grad(b)) {
        Tensor& d = t.grad_buf(b);
        for (std::size_t i = 0; i < G.data.size(); ++i) d.data[i] += G.data[i] * A.data[i];
      }
    };
  }
  return self;
}

Tape::Val Tape::add_row(Val x, Val b) {
  check(x);
  check(b);
  const Tensor& X = nodes_[x].value;
  const Tensor& B = nodes_[b].value;
  if (B.rows != 1 || B.cols != X.cols) throw engine_error("add_row shape mismatch");
  Tensor out = X;
  for (std::size_t i = 0; i < X.rows; ++i) {
    double* row = out.row_ptr(i);
    for (std::size_t j = 0; j < X.cols; ++j) row[j] += B.data[j];
  }
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[x].requires_grad || nodes_[b].requires_grad;
  Val self = push(std::move(n), "add_row");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [x, b, self](Tape& t) {
      const Tensor& G = t.nodes_[self].grad;
      if (t.wants_grad(x)) {
        Tensor& d = t.grad_buf(x);
        for (std::size_t i = 0; i < G.data.size(); ++i) d.data[i] += G.data[i];
      }
      if (t.wants_grad(b)) {
        Tensor& d = t.grad_buf(b);
        for (std::size_t i = 0; i < G.rows; ++i) {
          const double* grow = G.row_ptr(i);
          for (std::size_t j = 0; j < G.cols; ++j) d.data[j] += grow[j];
        }
      }
    };
  }
  return self;
}

Tape::Val Tape::mul_row(Val x, Val g) {
  check(x);
  check(g);
  const Tensor& X = nodes_[x].value;
  const Tensor& Grow = nodes_[g].value;
  if (Grow.rows != 1 || Grow.cols != X.cols) throw engine_error("mul_row shape mismatch");
  Tensor out = X;
  for (std::size_t i = 0; i < X.rows; ++i) {
    double* row = out.row_ptr(i);
    for (std::size_t j = 0; j < X.cols; ++j) row[j] *= Grow.data[j];
  }
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[x].requires_grad || nodes_[g].requires_grad;
  Val self = push(std::move(n), "mul_row");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [x, g, self](Tape& t) {
      const Tensor& G = t.nodes_[self].grad;
      const Tensor& X = t.nodes_[x].value;
      const Tensor& W = t.nodes_[g].value;
      if (t.wants_grad(x)) {
        Tensor& d = t.grad_buf(x);
        for (std::size_t i = 0; i < G.rows; ++i) {
          for (std::size_t j = 0; j < G.cols; ++j) d.at(i, j) += G.at(i, j) * W.data[j];
        }
      }
      if (t.wants_grad(g)) {
        Tensor& d = t.grad_buf(g);
        for (std::size_t i = 0; i < G.rows; ++i) {
          for (std::size_t j = 0; j < G.cols; ++j) d.data[j] += G.at(i, j) * X.at(i, j);
        }
      }
    };
  }
  return self;
}

Tape::Val Tape::add_scalar(Val x, double c) {
  check(x);
  Tensor out = nodes_[x].value;
  for (double& v : out.data) v += c;
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[x].requires_grad;
  Val self = push(std::move(n), "add_scalar");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [x, self](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Tensor& G = t.nodes_[self].grad;
      Tensor& d = t.grad_buf(x);
      for (std::size_t i = 0; i < G.data.size(); ++i) d.data[i] += G.data[i];
    };
  }
  return self;
}

Tape::Val Tape::scale(Val x, double c) {
  check(x);
  Tensor out = nodes_[x].value;
  for (double& v : out.data) v *= c;
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[x].requires_grad;
  Val self = push(std::move(n), "scale");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [x, c, self](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Tensor& G = t.nodes_[self].grad;
      Tensor& d = t.grad_buf(x);
      for (std::size_t i = 0; i < G.data.size(); ++i) d.data[i] += c * G.data[i];
    };
  }
  return self;
}

Tape::Val Tape::mul_scalar_param(Val x, Val s) {
  check(x);
  check(s);
  const Tensor& X = nodes_[x].value;
  const Tensor& S = nodes_[s].value;
  if (!S.is_scalar()) throw engine_error("mul_scalar_param: s must be 1x1");
  const double sv = S.data[0];
  Tensor out = X;
  for (double& v : out.data) v *= sv;
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[x].requires_grad || nodes_[s].requires_grad;
  Val self = push(std::move(n), "mul_scalar_param");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [x, s, self](Tape& t) {
      const Tensor& G = t.nodes_[self].grad;
      const Tensor& X = t.nodes_[x].value;
      const double sv = t.nodes_[s].value.data[0];
      if (t.wants_grad(x)) {
        Tensor& d = t.grad_buf(x);
        for (std::size_t i = 0; i < G.data.size(); ++i) d.data[i] += sv * G.data[i];
      }
      if (t.wants_grad(s)) {
        double acc = 0.0;
        for (std::size_t i = 0; i < G.data.size(); ++i) acc += G.data[i] * X.data[i];
        t.grad_buf(s).data[0] += acc;
      }
    };
  }
  return self;
}

Tape::Val Tape::leaky_relu(Val x, double slope) {
  check(x);
  if (!(slope > 0.0 && slope < 1.0)) throw engine_error("leaky_relu: slope must be in (0,1)");
  Tensor out = nodes_[x].value;
  for (double& v : out.data) v = v >= 0.0 ? v : slope * v;
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[x].requires_grad;
  Val self = push(std::move(n), "leaky_relu");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [x, slope, self](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Tensor& G = t.nodes_[self].grad;
      const Tensor& X = t.nodes_[x].value;
      Tensor& d = t.grad_buf(x);
      for (std::size_t i = 0; i < G.data.size(); ++i) {
        d.data[i] += G.data[i] * (X.data[i] >= 0.0 ? 1.0 : slope);
      }
    };
  }
  return self;
}

Tape::Val Tape::softplus(Val x) {
  check(x);
  Tensor out = nodes_[x].value;
  for (double& v : out.data) v = stable_softplus(v);
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[x].requires_grad;
  Val self = push(std::move(n), "softplus");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [x, self](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Tensor& G = t.nodes_[self].grad;
      const Tensor& X = t.nodes_[x].value;
      Tensor& d = t.grad_buf(x);
      for (std::size_t i = 0; i < G.data.size(); ++i) {
        d.data[i] += G.data[i] * stable_sigmoid(X.data[i]);
      }
    };
  }
  return self;
}

Tape::Val Tape::sigmoid(Val x) {
  check(x);
  Tensor out = nodes_[x].value;
  for (double& v : out.data) v = stable_sigmoid(v);
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[x].requires_grad;
  Val self = push(std::move(n), "sigmoid");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [x, self](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Tensor& G = t.nodes_[self].grad;
      const Tensor& Y = t.nodes_[self].value;
      Tensor& d = t.grad_buf(x);
      for (std::size_t i = 0; i < G.data.size(); ++i) {
        d.data[i] += G.data[i] * Y.data[i] * (1.0 - Y.data[i]);
      }
    };
  }
  return self;
}

Tape::Val Tape::dropout(Val x, double p) {
  check(x);
  if (!(p >= 0.0 && p < 1.0)) throw engine_error("dropout: p must be in [0,1)");
  if (mode_ == Mode::eval) {
    // identity in eval mode
    Tensor out = nodes_[x].value;
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[x].requires_grad;
    Val self = push(std::move(n), "dropout");
    if (nodes_[self].requires_grad) {
      nodes_[self].backward_fn = [x, self](Tape& t) {
        if (!t.wants_grad(x)) return;
        const Tensor& G = t.nodes_[self].grad;
        Tensor& d = t.grad_buf(x);
        for (std::size_t i = 0; i < G.data.size(); ++i) d.data[i] += G.data[i];
      };
    }
    return self;
  }

  const Tensor& X = nodes_[x].value;
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(X.data.size());
  Tensor out = X;
  for (std::size_t i = 0; i < X.data.size(); ++i) {
    const double m = rng_.uniform() < p ? 0.0 : keep_scale;
    (*mask)[i] = m;
    out.data[i] *= m;
  }
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[x].requires_grad;
  Val self = push(std::move(n), "dropout");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [x, mask, self](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Tensor& G = t.nodes_[self].grad;
      Tensor& d = t.grad_buf(x);
      for (std::size_t i = 0; i < G.data.size(); ++i) d.data[i] += G.data[i] * (*mask)[i];
    };
  }
  return self;
}

Tape::Val Tape::row_norm(Val x, double eps) {
  check(x);
  const Tensor& X = nodes_[x].value;
  const std::size_t F = X.cols;
  if (F == 0) throw engine_error("row_norm on empty tensor");
  Tensor out(X.rows, F);
  auto inv_std = std::make_shared<std::vector<double>>(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i) {
    const double* row = X.row_ptr(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < F; ++j) mean += row[j];
    mean /= static_cast<double>(F);
    double var = 0.0;
    for (std::size_t j = 0; j < F; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(F);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    double* orow = out.row_ptr(i);
    for (std::size_t j = 0; j < F; ++j) orow[j] = (row[j] - mean) * inv;
  }
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[x].requires_grad;
  Val self = push(std::move(n), "row_norm");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [x, inv_std, self](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Tensor& G = t.nodes_[self].grad;
      const Tensor& Y = t.nodes_[self].value;  // x-hat
      Tensor& d = t.grad_buf(x);
      const std::size_t F = G.cols;
      for (std::size_t i = 0; i < G.rows; ++i) {
        const double* grow = G.row_ptr(i);
        const double* yrow = Y.row_ptr(i);
        double gsum = 0.0;
        double gysum = 0.0;
        for (std::size_t j = 0; j < F; ++j) {
          gsum += grow[j];
          gysum += grow[j] * yrow[j];
        }
        const double gmean = gsum / static_cast<double>(F);
        const double gymean = gysum / static_cast<double>(F);
        const double inv = (*inv_std)[i];
        double* drow = d.row_ptr(i);
        for (std::size_t j = 0; j < F; ++j) {
          drow[j] += inv * (grow[j] - gmean - yrow[j] * gymean);
        }
      }
    };
  }
  return self;
}

Tape::Val Tape::batch_norm(Val x, BatchNormStats& stats, double momentum, double eps,
                           std::span<const std::uint32_t> stat_rows) {
  check(x);
  const Tensor& X = nodes_[x].value;
  const std::size_t N = X.rows;
  const std::size_t F = X.cols;
  if (stats.mean.size() != F) throw engine_error("batch_norm stats width mismatch");

  if (mode_ == Mode::eval) {
    Tensor out(N, F);
    auto inv = std::make_shared<std::vector<double>>(F);
    for (std::size_t j = 0; j < F; ++j) (*inv)[j] = 1.0 / std::sqrt(stats.var[j] + eps);
    for (std::size_t i = 0; i < N; ++i) {
      const double* row = X.row_ptr(i);
      double* orow = out.row_ptr(i);
      for (std::size_t j = 0; j < F; ++j) orow[j] = (row[j] - stats.mean[j]) * (*inv)[j];
    }
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[x].requires_grad;
    Val self = push(std::move(n), "batch_norm");
    if (nodes_[self].requires_grad) {
      nodes_[self].backward_fn = [x, inv, self](Tape& t) {
        if (!t.wants_grad(x)) return;
        const Tensor& G = t.nodes_[self].grad;
        Tensor& d = t.grad_buf(x);
        for (std::size_t i = 0; i < G.rows; ++i) {
          for (std::size_t j = 0; j < G.cols; ++j) d.at(i, j) += G.at(i, j) * (*inv)[j];
        }
      };
    }
    return self;
  }

  // Rows whose statistics define the batch; all rows are normalized with them.
  auto rows = std::make_shared<std::vector<std::uint32_t>>(stat_rows.begin(), stat_rows.end());
  if (rows->empty()) {
    rows->resize(N);
    for (std::size_t i = 0; i < N; ++i) (*rows)[i] = static_cast<std::uint32_t>(i);
  }
  for (std::uint32_t r : *rows) {
    if (r >= N) throw engine_error("batch_norm: stat row out of range");
  }
  const std::size_t M = rows->size();
  if (M < 2) throw engine_error("batch_norm: train mode needs at least 2 statistic rows");

  auto inv_std = std::make_shared<std::vector<double>>(F);
  Tensor out(N, F);
  for (std::size_t j = 0; j < F; ++j) {
    double mean = 0.0;
    for (std::uint32_t r : *rows) mean += X.at(r, j);
    mean /= static_cast<double>(M);
    double var = 0.0;
    for (std::uint32_t r : *rows) {
      const double d = X.at(r, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(M);  // biased
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[j] = inv;
    for (std::size_t i = 0; i < N; ++i) out.at(i, j) = (X.at(i, j) - mean) * inv;
    stats.mean[j] = (1.0 - momentum) * stats.mean[j] + momentum * mean;
    stats.var[j] = (1.0 - momentum) * stats.var[j] + momentum * var;
  }
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[x].requires_grad;
  Val self = push(std::move(n), "batch_norm");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [x, inv_std, rows, self](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Tensor& G = t.nodes_[self].grad;
      const Tensor& Y = t.nodes_[self].value;  // x-hat
      Tensor& d = t.grad_buf(x);
      const std::size_t N = G.rows;
      const std::size_t F = G.cols;
      const double M = static_cast<double>(rows->size());
      std::vector<char> is_stat(N, 0);
      for (std::uint32_t r : *rows) is_stat[r] = 1;
      for (std::size_t j = 0; j < F; ++j) {
        // Every row's output depends on the statistics, so the mean-gradient
        // terms sum over all rows even though only stat rows receive them.
        double gsum = 0.0;
        double gysum = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
          gsum += G.at(i, j);
          gysum += G.at(i, j) * Y.at(i, j);
        }
        const double gmean = gsum / M;
        const double gymean = gysum / M;
        const double inv = (*inv_std)[j];
        for (std::size_t i = 0; i < N; ++i) {
          if (is_stat[i]) {
            d.at(i, j) += inv * (G.at(i, j) - gmean - Y.at(i, j) * gymean);
          } else {
            d.at(i, j) += inv * G.at(i, j);
          }
        }
      }
    };
  }
  return self;
}

Tape::Val Tape::csr_weighted_sum(Val h, Val alpha, const GraphDataset& g) {
  check(h);
  check(alpha);
  const Tensor& H = nodes_[h].value;
  const Tensor& A = nodes_[alpha].value;
  if (H.rows != g.num_nodes) throw engine_error("csr_weighted_sum: node count mismatch");
  if (A.numel() != g.num_edges || A.cols != 1) {
    throw engine_error("csr_weighted_sum: alpha must be [num_edges,1]");
  }
  const std::size_t F = H.cols;
  Tensor out(g.num_nodes, F);
  parallel_for(g.num_nodes, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* orow = out.row_ptr(i);
      for (std::uint64_t e = g.csr_in_offsets[i]; e < g.csr_in_offsets[i + 1]; ++e) {
        const double a = A.data[e];
        const double* hrow = H.row_ptr(g.csr_in_sources[e]);
        for (std::size_t j = 0; j < F; ++j) orow[j] += a * hrow[j];
      }
    }
  });
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[h].requires_grad || nodes_[alpha].requires_grad;
  Val self = push(std::move(n), "csr_weighted_sum");
  if (nodes_[self].requires_grad) {
    const GraphDataset* gp = &g;
    nodes_[self].backward_fn = [h, alpha, gp, self](Tape& t) {
      const Tensor& G = t.nodes_[self].grad;
      const Tensor& H = t.nodes_[h].value;
      const Tensor& A = t.nodes_[alpha].value;
      const std::size_t F = H.cols;
      const bool need_h = t.wants_grad(h);
      const bool need_a = t.wants_grad(alpha);
      Tensor* dH = need_h ? &t.grad_buf(h) : nullptr;
      Tensor* dA = need_a ? &t.grad_buf(alpha) : nullptr;
      for (std::size_t i = 0; i < gp->num_nodes; ++i) {
        const double* grow = G.row_ptr(i);
        for (std::uint64_t e = gp->csr_in_offsets[i]; e < gp->csr_in_offsets[i + 1]; ++e) {
          const std::uint32_t s = gp->csr_in_sources[e];
          const double* hrow = H.row_ptr(s);
          if (need_h) {
            double* drow = dH->row_ptr(s);
            const double a = A.data[e];
            for (std::size_t j = 0; j < F; ++j) drow[j] += a * grow[j];
          }
          if (need_a) {
            double acc = 0.0;
            for (std::size_t j = 0; j < F; ++j) acc += hrow[j] * grow[j];
            dA->data[e] += acc;
          }
        }
      }
    };
  }
  return self;
}

Tape::Val Tape::csr_weighted_mean(Val h, Val alpha, const GraphDataset& g) {
  check(h);
  check(alpha);
  const Tensor& H = nodes_[h].value;
  const Tensor& A = nodes_[alpha].value;
  if (H.rows != g.num_nodes) throw engine_error("csr_weighted_mean: node count mismatch");
  if (A.numel() != g.num_edges || A.cols != 1) {
    throw engine_error("csr_weighted_mean: alpha must be [num_edges,1]");
  }
  const std::size_t F = H.cols;
  Tensor out(g.num_nodes, F);
  auto weights = std::make_shared<std::vector<double>>(g.num_nodes, 0.0);
  parallel_for(g.num_nodes, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* orow = out.row_ptr(i);
      double w = 0.0;
      for (std::uint64_t e = g.csr_in_offsets[i]; e < g.csr_in_offsets[i + 1]; ++e) {
        const double a = A.data[e];
        w += a;
        const double* hrow = H.row_ptr(g.csr_in_sources[e]);
        for (std::size_t j = 0; j < F; ++j) orow[j] += a * hrow[j];
      }
      (*weights)[i] = w;
      if (w > 0.0) {
        const double inv = 1.0 / w;
        for (std::size_t j = 0; j < F; ++j) orow[j] *= inv;
      } else {
        for (std::size_t j = 0; j < F; ++j) orow[j] = 0.0;
      }
    }
  });
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[h].requires_grad || nodes_[alpha].requires_grad;
  Val self = push(std::move(n), "csr_weighted_mean");
  if (nodes_[self].requires_grad) {
    const GraphDataset* gp = &g;
    nodes_[self].backward_fn = [h, alpha, gp, weights, self](Tape& t) {
      const Tensor& G = t.nodes_[self].grad;
      const Tensor& Y = t.nodes_[self].value;  // the weighted means
      const Tensor& H = t.nodes_[h].value;
      const Tensor& A = t.nodes_[alpha].value;
      const std::size_t F = H.cols;
      const bool need_h = t.wants_grad(h);
      const bool need_a = t.wants_grad(alpha);
      Tensor* dH = need_h ? &t.grad_buf(h) : nullptr;
      Tensor* dA = need_a ? &t.grad_buf(alpha) : nullptr;
      for (std::size_t i = 0; i < gp->num_nodes; ++i) {
        const double w = (*weights)[i];
        if (w <= 0.0) continue;
        const double inv = 1.0 / w;
        const double* grow = G.row_ptr(i);
        const double* yrow = Y.row_ptr(i);
        double ydotg = 0.0;
        if (need_a) {
          for (std::size_t j = 0; j < F; ++j) ydotg += yrow[j] * grow[j];
        }
        for (std::uint64_t e = gp->csr_in_offsets[i]; e < gp->csr_in_offsets[i + 1]; ++e) {
          const std::uint32_t s = gp->csr_in_sources[e];
          const double* hrow = H.row_ptr(s);
          if (need_h) {
            double* drow = dH->row_ptr(s);
            const double scaled = A.data[e] * inv;
            for (std::size_t j = 0; j < F; ++j) drow[j] += scaled * grow[j];
          }
          if (need_a) {
            double hdotg = 0.0;
            for (std::size_t j = 0; j < F; ++j) hdotg += hrow[j] * grow[j];
            dA->data[e] += (hdotg - ydotg) * inv;
          }
        }
      }
    };
  }
  return self;
}

Tape::Val Tape::take_rows(Val x, std::span<const std::uint32_t> rows) {
  check(x);
  const Tensor& X = nodes_[x].value;
  auto idx = std::make_shared<std::vector<std::uint32_t>>(rows.begin(), rows.end());
  for (std::uint32_t r : *idx) {
    if (r >= X.rows) throw engine_error("take_rows: index out of range");
  }
  Tensor out(idx->size(), X.cols);
  for (std::size_t i = 0; i < idx->size(); ++i) {
    std::copy_n(X.row_ptr((*idx)[i]), X.cols, out.row_ptr(i));
  }
  Node n;
  n.value = std::move(out);
  n.requires_grad = nodes_[x].requires_grad;
  Val self = push(std::move(n), "take_rows");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [x, idx, self](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Tensor& G = t.nodes_[self].grad;
      Tensor& d = t.grad_buf(x);
      for (std::size_t i = 0; i < idx->size(); ++i) {
        double* drow = d.row_ptr((*idx)[i]);
        const double* grow = G.row_ptr(i);
        for (std::size_t j = 0; j < G.cols; ++j) drow[j] += grow[j];
      }
    };
  }
  return self;
}

Tape::Val Tape::bce_with_logits(Val z, const Tensor& y) {
  check(z);
  const Tensor& Z = nodes_[z].value;
  if (!Z.same_shape(y)) throw engine_error("bce_with_logits shape mismatch");
  for (double v : y.data) {
    if (v != 0.0 && v != 1.0) throw engine_error("bce_with_logits: labels must be binary");
  }
  const double inv_n = 1.0 / static_cast<double>(Z.numel());
  double loss = 0.0;
  for (std::size_t i = 0; i < Z.data.size(); ++i) {
    const double sign = y.data[i] > 0.5 ? 1.0 : -1.0;
    loss += stable_softplus(-sign * Z.data[i]);
  }
  loss *= inv_n;
  auto labels = std::make_shared<Tensor>(y);
  Node n;
  n.value = Tensor::scalar(loss);
  n.requires_grad = nodes_[z].requires_grad;
  Val self = push(std::move(n), "bce_with_logits");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [z, labels, inv_n, self](Tape& t) {
      if (!t.wants_grad(z)) return;
      const double g = t.nodes_[self].grad.data[0];
      const Tensor& Z = t.nodes_[z].value;
      Tensor& d = t.grad_buf(z);
      for (std::size_t i = 0; i < Z.data.size(); ++i) {
        d.data[i] += g * inv_n * (stable_sigmoid(Z.data[i]) - labels->data[i]);
      }
    };
  }
  return self;
}

Tape::Val Tape::sum(Val x) {
  check(x);
  const Tensor& X = nodes_[x].value;
  double acc = 0.0;
  for (double v : X.data) acc += v;
  Node n;
  n.value = Tensor::scalar(acc);
  n.requires_grad = nodes_[x].requires_grad;
  Val self = push(std::move(n), "sum");
  if (nodes_[self].requires_grad) {
    nodes_[self].backward_fn = [x, self](Tape& t) {
      if (!t.wants_grad(x)) return;
      const double g = t.nodes_[self].grad.data[0];
      Tensor& d = t.grad_buf(x);
      for (double& v : d.data) v += g;
    };
  }
  return self;
}

void Tape::backward(Val loss) {
  const std::size_t li = check(loss);
  if (consumed_) throw engine_error("backward on a consumed tape");
  if (!nodes_[li].value.is_scalar()) throw engine_error("backward: loss must be a scalar");
  consumed_ = true;

  grad_buf(loss).data[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward_fn) continue;
    if (n.grad.data.empty()) continue;  // not reached from the loss
    n.backward_fn(*this);
  }
  if (store_) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.param_index < 0) continue;
      if (!n.grad.data.empty()) {
        check_finite(n.grad, "backward");
        store_->accumulate_grad(static_cast<std::size_t>(n.param_index), n.grad);
      }
    }
    store_->mark_grads_ready();
  }
}

}  // namespace echl
