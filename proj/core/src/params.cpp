#include "echl/params.hpp"

#include <cmath>

namespace echl {

Tensor& ParamStore::create(const std::string& name, std::size_t rows, std::size_t cols) {
  if (contains(name)) throw engine_error("duplicate parameter name '" + name + "'");
  Entry e;
  e.name = name;
  e.value = Tensor(rows, cols);
  e.value.requires_grad = true;
  e.grad = Tensor(rows, cols);
  e.m = Tensor(rows, cols);
  e.v = Tensor(rows, cols);
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
  return entries_.back().value;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw engine_error("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::accumulate_grad(std::size_t i, const Tensor& g) {
  Entry& e = entries_[i];
  if (!e.grad.same_shape(g)) throw engine_error("gradient shape mismatch for '" + e.name + "'");
  for (std::size_t j = 0; j < g.data.size(); ++j) e.grad.data[j] += g.data[j];
}

void ParamStore::zero_grads() {
  for (Entry& e : entries_) {
    std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
  }
  grads_ready_ = false;
}

void ParamStore::adam_step(double lr, double beta1, double beta2, double eps) {
  if (!grads_ready_) throw engine_error("adam_step before backward");
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
  for (Entry& e : entries_) {
    for (std::size_t j = 0; j < e.value.data.size(); ++j) {
      const double g = e.grad.data[j];
      e.m.data[j] = beta1 * e.m.data[j] + (1.0 - beta1) * g;
      e.v.data[j] = beta2 * e.v.data[j] + (1.0 - beta2) * g * g;
      const double m_hat = e.m.data[j] / bc1;
      const double v_hat = e.v.data[j] / bc2;
      e.value.data[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    check_finite(e.value, "adam_step");
  }
  zero_grads();
}

std::size_t ParamStore::param_count() const {
  std::size_t total = 0;
  for (const Entry& e : entries_) total += e.value.numel();
  return total;
}

std::vector<Tensor> ParamStore::snapshot_values() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const Entry& e : entries_) out.push_back(e.value);
  return out;
}

void ParamStore::restore_values(const std::vector<Tensor>& values) {
  if (values.size() != entries_.size()) throw engine_error("snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i].same_shape(entries_[i].value)) {
      throw engine_error("snapshot shape mismatch for '" + entries_[i].name + "'");
    }
    entries_[i].value.data = values[i].data;
  }
}

void init_kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in ? fan_in : 1));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

}  // namespace echl
