/* Copyright 2026 The dhoi Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "dhoi/params.hpp"

#include <cmath>

#include "dhoi/errors.hpp"

namespace dhoi {

Matrix& ParameterStore::add(const std::string& name, Matrix init) {
  if (values_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  order_.push_back(name);
  return values_[name] = std::move(init);
}

Matrix& ParameterStore::get(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw LookupError("unknown parameter '" + name + "'");
  return it->second;
}

const Matrix& ParameterStore::get(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw LookupError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : values_) n += m.size();
  return n;
}

ad::Var ParamBinding::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Matrix& value = store_.get(name);
  ad::Var v = trainable_ ? tape_.variable(value) : tape_.constant(value);
  bound_.emplace(name, v);
  return v;
}

Gradients ParamBinding::gradients() const {
  Gradients out;
  accumulate_into(out);
  return out;
}

void ParamBinding::accumulate_into(Gradients& total) const {
  for (const auto& [name, var] : bound_) {
    Matrix& slot = total[name];
    if (slot.empty()) slot = Matrix(var.rows(), var.cols());
    const Matrix& g = var.grad();
    if (g.empty()) continue;
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
  }
}

void Adam::step(ParameterStore& store, const Gradients& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Matrix& p = store.get(name);
    if (!p.same_shape(g)) throw DimensionError("gradient shape for '" + name + "'");
    Matrix& m = m_[name];
    Matrix& v = v_[name];
    if (m.empty()) {
      m = Matrix(p.rows(), p.cols());
      v = Matrix(p.rows(), p.cols());
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void scale_gradients(Gradients& g, double s) {
  for (auto& [_, m] : g)
    for (double& v : m.values()) v *= s;
}

}  // namespace dhoi
