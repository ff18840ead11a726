#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "echl/tensor.hpp"

namespace echl {

// Named learnable tensors plus their Adam moment buffers. Names are unique
// and shapes are frozen at creation. Gradients are accumulated here by
// Tape::backward and consumed (then cleared) by adam_step.
class ParamStore {
 public:
  Tensor& create(const std::string& name, std::size_t rows, std::size_t cols);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  const std::string& name_at(std::size_t i) const { return entries_[i].name; }
  Tensor& value_at(std::size_t i) { return entries_[i].value; }
  const Tensor& value_at(std::size_t i) const { return entries_[i].value; }
  Tensor& value(const std::string& name) { return entries_[index_of(name)].value; }
  const Tensor& value(const std::string& name) const { return entries_[index_of(name)].value; }
  const Tensor& grad(const std::string& name) const { return entries_[index_of(name)].grad; }

  void accumulate_grad(std::size_t i, const Tensor& g);
  void zero_grads();
  void mark_grads_ready() { grads_ready_ = true; }
  bool grads_ready() const { return grads_ready_; }

  // Standard Adam with bias correction. Throws engine_error if no backward
  // pass populated gradients since the last step. Clears gradients.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  std::int64_t step_count() const { return step_count_; }
  std::size_t param_count() const;

  std::vector<Tensor> snapshot_values() const;
  void restore_values(const std::vector<Tensor>& values);

 private:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::int64_t step_count_ = 0;
  bool grads_ready_ = false;
};

// Kaiming-style fan-in uniform init: U(-b, b) with b = sqrt(6 / fan_in).
void init_kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng);

}  // namespace echl
