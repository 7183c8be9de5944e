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

#ifndef DEAAN_MI_HPP_
#define DEAAN_MI_HPP_

#include <vector>

#include "deaan/model.hpp"

namespace deaan::mi {

using ad::Node;
using ad::Tape;

// Overflow-safe log(1 + e^z).
double softplus(double z);

// Donsker-Varadhan bound: mean(t_joint) - log(mean(exp(t_marg))), with
// log-sum-exp stabilization.
double dv_estimate(const Vector &t_joint, const Vector &t_marg);
Node *dv_estimate_node(Tape &t, Node *t_joint, Node *t_marg);

// JSD surrogate: mean(-sp(-t_joint)) - mean(sp(t_marg)).
double jsd_estimate(const Vector &t_joint, const Vector &t_marg);
Node *jsd_estimate_node(Tape &t, Node *t_joint, Node *t_marg);

// Derangement-preferring within-batch permutation used to sample the product
// of marginals. Throws ShapeError for n < 2.
std::vector<int> shuffle_permutation(int n, RandomStream &rng);

// MI training term for one domain. f_id: B x d_id, f_dom: B x d_dom (stacked
// encoder outputs). Value is the JSD estimate; the backward pass routes
// encoder inputs through GRL(grl_lambda) and reverses the statistics-network
// direction, so one descent step trains T to maximize the estimate and the
// encoders to minimize it.
Node *mi_term(Tape &t, const model::DeaanModel &m, Node *f_id, Node *f_dom,
              double grl_lambda, RandomStream &rng);

// Sum of the source- and target-domain terms of the min-max loss.
Node *mi_loss(Tape &t, const model::DeaanModel &m, Node *f_id_s, Node *f_dom_s,
              Node *f_id_t, Node *f_dom_t, double grl_lambda, RandomStream &rng);

// Correlated-Gaussian benchmark: trains a fresh statistics network per
// estimator and reports estimates against the closed form -0.5*ln(1-rho^2).
struct GaussianBenchResult {
  double rho = 0, closed_form = 0, dv = 0, jsd = 0;
};
GaussianBenchResult run_gaussian_bench(double rho, int n_samples,
                                       int train_steps, uint64_t seed);

}  // namespace deaan::mi

#endif  // DEAAN_MI_HPP_
