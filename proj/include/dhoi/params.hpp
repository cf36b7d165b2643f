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

#pragma once

#include <map>
#include <string>
#include <vector>

#include "dhoi/autograd.hpp"
#include "dhoi/matrix.hpp"

namespace dhoi {

// Named trainable tensors, iterated in insertion order so serialization and
// optimizer updates are deterministic.
class ParameterStore {
 public:
  Matrix& add(const std::string& name, Matrix init);
  Matrix& get(const std::string& name);
  const Matrix& get(const std::string& name) const;
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  const std::vector<std::string>& names() const { return order_; }
  std::size_t scalar_count() const;

 private:
  std::map<std::string, Matrix> values_;
  std::vector<std::string> order_;
};

using Gradients = std::map<std::string, Matrix>;

// Exposes store entries on a tape. Entries are bound lazily, once per tape;
// frozen bindings produce constants.
class ParamBinding {
 public:
  ParamBinding(ad::Tape& tape, const ParameterStore& store, bool trainable = true)
      : tape_(tape), store_(store), trainable_(trainable) {}

  ad::Var operator()(const std::string& name);
  ad::Tape& tape() { return tape_; }

  // Gradients of every bound entry after tape.backward(); entries the loss
  // never reached get zeros.
  Gradients gradients() const;
  void accumulate_into(Gradients& total) const;

 private:
  ad::Tape& tape_;
  const ParameterStore& store_;
  bool trainable_;
  std::map<std::string, ad::Var> bound_;
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterStore& store, const Gradients& grads);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Matrix> m_, v_;
};

void scale_gradients(Gradients& g, double s);

}  // namespace dhoi
