// Copyright (c) 2026 DEAAN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DEAAN_NN_HPP_
#define DEAAN_NN_HPP_

#include <deque>
#include <string>
#include <vector>

#include "deaan/autodiff.hpp"

namespace deaan::nn {

using ad::Node;
using ad::Param;
using ad::Tape;

// Owns every trainable parameter of a model. Components keep raw pointers
// into the deque (stable addresses).
class ParamStore {
 public:
  Param *add(const std::string &name, Eigen::Index rows, Eigen::Index cols);
  Param *find(const std::string &name);
  std::vector<Param *> all();
  std::vector<Param *> with_prefix(const std::string &prefix);
  size_t count() const { return params_.size(); }
  size_t scalar_count() const;

 private:
  std::deque<Param> params_;
};

void init_uniform_fan_in(Param &p, Eigen::Index fan_in, RandomStream &rng);

struct Linear {
  Param *w = nullptr;  // in x out
  Param *b = nullptr;  // 1 x out
  void init(ParamStore &ps, const std::string &name, Eigen::Index in,
            Eigen::Index out, RandomStream &rng);
  Node *forward(Tape &t, Node *x) const;
};

struct Conv1d {
  int k = 3, stride = 1, pad = 1;
  Param *w = nullptr;  // (k*cin) x cout
  Param *b = nullptr;
  void init(ParamStore &ps, const std::string &name, Eigen::Index cin,
            Eigen::Index cout, int k, int stride, int pad, RandomStream &rng);
  Node *forward(Tape &t, Node *x) const;
};

struct ConvTranspose1d {
  int k = 4, stride = 2, pad = 1;
  Param *w = nullptr;
  Param *b = nullptr;
  void init(ParamStore &ps, const std::string &name, Eigen::Index cin,
            Eigen::Index cout, int k, int stride, int pad, RandomStream &rng);
  Node *forward(Tape &t, Node *x) const;
};

struct BatchNorm1d {
  Param *gamma = nullptr;
  Param *beta = nullptr;
  Vector running_mean, running_var;
  void init(ParamStore &ps, const std::string &name, Eigen::Index channels);
  Node *forward(Tape &t, Node *x, bool train);
};

// Self-attentive pooling: per-frame scores from a learned tanh projection and
// context vector, softmax over time, attention-weighted mean of the frames.
struct SelfAttentivePooling {
  Linear att;
  Param *context = nullptr;  // hidden x 1
  void init(ParamStore &ps, const std::string &name, Eigen::Index dim,
            Eigen::Index hidden, RandomStream &rng);
  Node *forward(Tape &t, Node *frames) const;  // T x D -> 1 x D
};

struct AdamOptimizer {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step_count = 0;
  void step(const std::vector<Param *> &params, double lr_now);
};

struct MomentumSgd {
  double lr = 1e-4;
  double momentum = 0.9;
  void step(const std::vector<Param *> &params, double lr_now);
};

double global_grad_norm(const std::vector<Param *> &params);
void clip_global_norm(const std::vector<Param *> &params, double max_norm);
void zero_grads(const std::vector<Param *> &params);

}  // namespace deaan::nn

#endif  // DEAAN_NN_HPP_
