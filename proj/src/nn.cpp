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

#include "deaan/nn.hpp"

#include <cmath>

namespace deaan::nn {

Param *ParamStore::add(const std::string &name, Eigen::Index rows,
                       Eigen::Index cols) {
  if (find(name) != nullptr)
    throw ConfigError("duplicate parameter name: " + name);
  params_.emplace_back();
  Param &p = params_.back();
  p.name = name;
  p.value = Matrix::Zero(rows, cols);
  p.init_slots();
  return &p;
}

Param *ParamStore::find(const std::string &name) {
  for (Param &p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::vector<Param *> ParamStore::all() {
  std::vector<Param *> out;
  out.reserve(params_.size());
  for (Param &p : params_) out.push_back(&p);
  return out;
}

std::vector<Param *> ParamStore::with_prefix(const std::string &prefix) {
  std::vector<Param *> out;
  for (Param &p : params_)
    if (p.name.rfind(prefix, 0) == 0) out.push_back(&p);
  return out;
}

size_t ParamStore::scalar_count() const {
  size_t n = 0;
  for (const Param &p : params_) n += static_cast<size_t>(p.value.size());
  return n;
}

void init_uniform_fan_in(Param &p, Eigen::Index fan_in, RandomStream &rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
  for (Eigen::Index r = 0; r < p.value.rows(); ++r)
    for (Eigen::Index c = 0; c < p.value.cols(); ++c)
      p.value(r, c) = rng.uniform(-bound, bound);
}

void Linear::init(ParamStore &ps, const std::string &name, Eigen::Index in,
                  Eigen::Index out, RandomStream &rng) {
  w = ps.add(name + ".w", in, out);
  b = ps.add(name + ".b", 1, out);
  init_uniform_fan_in(*w, in, rng);
  init_uniform_fan_in(*b, in, rng);
}

Node *Linear::forward(Tape &t, Node *x) const {
  if (x->val.cols() != w->value.rows())
    throw ShapeError("linear " + w->name + ": input dim " +
                     std::to_string(x->val.cols()) + " != " +
                     std::to_string(w->value.rows()));
  return ad::add_rowvec(t, ad::matmul(t, x, t.param(*w)), t.param(*b));
}

void Conv1d::init(ParamStore &ps, const std::string &name, Eigen::Index cin,
                  Eigen::Index cout, int k_, int stride_, int pad_,
                  RandomStream &rng) {
  k = k_;
  stride = stride_;
  pad = pad_;
  w = ps.add(name + ".w", static_cast<Eigen::Index>(k) * cin, cout);
  b = ps.add(name + ".b", 1, cout);
  init_uniform_fan_in(*w, static_cast<Eigen::Index>(k) * cin, rng);
  init_uniform_fan_in(*b, static_cast<Eigen::Index>(k) * cin, rng);
}

Node *Conv1d::forward(Tape &t, Node *x) const {
  return ad::conv1d(t, x, t.param(*w), t.param(*b), k, stride, pad);
}

void ConvTranspose1d::init(ParamStore &ps, const std::string &name,
                           Eigen::Index cin, Eigen::Index cout, int k_,
                           int stride_, int pad_, RandomStream &rng) {
  k = k_;
  stride = stride_;
  pad = pad_;
  w = ps.add(name + ".w", static_cast<Eigen::Index>(k) * cin, cout);
  b = ps.add(name + ".b", 1, cout);
  init_uniform_fan_in(*w, static_cast<Eigen::Index>(k) * cin, rng);
  init_uniform_fan_in(*b, static_cast<Eigen::Index>(k) * cin, rng);
}

Node *ConvTranspose1d::forward(Tape &t, Node *x) const {
  return ad::conv1d_transpose(t, x, t.param(*w), t.param(*b), k, stride, pad);
}

void BatchNorm1d::init(ParamStore &ps, const std::string &name,
                       Eigen::Index channels) {
  gamma = ps.add(name + ".gamma", 1, channels);
  beta = ps.add(name + ".beta", 1, channels);
  gamma->value.setOnes();
  running_mean = Vector::Zero(channels);
  running_var = Vector::Ones(channels);
}

Node *BatchNorm1d::forward(Tape &t, Node *x, bool train) {
  return ad::batchnorm(t, x, t.param(*gamma), t.param(*beta), running_mean,
                       running_var, train);
}

void SelfAttentivePooling::init(ParamStore &ps, const std::string &name,
                                Eigen::Index dim, Eigen::Index hidden,
                                RandomStream &rng) {
  att.init(ps, name + ".att", dim, hidden, rng);
  context = ps.add(name + ".ctx", hidden, 1);
  init_uniform_fan_in(*context, hidden, rng);
}

Node *SelfAttentivePooling::forward(Tape &t, Node *frames) const {
  if (frames->val.rows() < 1)
    throw ShapeError("self-attentive pooling: empty time axis");
  Node *h = ad::tanh_op(t, att.forward(t, frames));      // T x H
  Node *e = ad::matmul(t, h, t.param(*context));         // T x 1
  Node *weights = ad::softmax_rows(t, ad::transpose(t, e));  // 1 x T
  return ad::matmul(t, weights, frames);                 // 1 x D
}

void AdamOptimizer::step(const std::vector<Param *> &params, double lr_now) {
  ++step_count;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (Param *p : params) {
    p->m = beta1 * p->m + (1.0 - beta1) * p->grad;
    p->v = beta2 * p->v + (1.0 - beta2) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= lr_now * (p->m.array() / bc1) /
                        ((p->v.array() / bc2).sqrt() + eps);
  }
}

void MomentumSgd::step(const std::vector<Param *> &params, double lr_now) {
  for (Param *p : params) {
    p->m = momentum * p->m + p->grad;
    p->value -= lr_now * p->m;
  }
}

double global_grad_norm(const std::vector<Param *> &params) {
  double sq = 0.0;
  for (Param *p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

void clip_global_norm(const std::vector<Param *> &params, double max_norm) {
  double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (Param *p : params) p->grad *= s;
  }
}

void zero_grads(const std::vector<Param *> &params) {
  for (Param *p : params) p->zero_grad();
}

}  // namespace deaan::nn
