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

#include "deaan/mi.hpp"

#include <algorithm>
#include <cmath>

namespace deaan::mi {

double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

static void check_nonempty(Eigen::Index a, Eigen::Index b) {
  if (a < 1 || b < 1) throw ShapeError("MI estimator: empty batch");
}

double dv_estimate(const Vector &t_joint, const Vector &t_marg) {
  check_nonempty(t_joint.size(), t_marg.size());
  double m = t_marg.maxCoeff();
  double lse = m + std::log((t_marg.array() - m).exp().sum());
  double log_mean_exp = lse - std::log(static_cast<double>(t_marg.size()));
  return t_joint.mean() - log_mean_exp;
}

Node *dv_estimate_node(Tape &t, Node *t_joint, Node *t_marg) {
  check_nonempty(t_joint->val.size(), t_marg->val.size());
  Node *lse = ad::logsumexp_all(t, t_marg);
  Node *log_mean =
      ad::add_const(t, lse, -std::log(static_cast<double>(t_marg->val.size())));
  return ad::sub(t, ad::mean_all(t, t_joint), log_mean);
}

double jsd_estimate(const Vector &t_joint, const Vector &t_marg) {
  check_nonempty(t_joint.size(), t_marg.size());
  double a = 0, b = 0;
  for (Eigen::Index i = 0; i < t_joint.size(); ++i) a += -softplus(-t_joint[i]);
  for (Eigen::Index i = 0; i < t_marg.size(); ++i) b += softplus(t_marg[i]);
  return a / static_cast<double>(t_joint.size()) -
         b / static_cast<double>(t_marg.size());
}

Node *jsd_estimate_node(Tape &t, Node *t_joint, Node *t_marg) {
  check_nonempty(t_joint->val.size(), t_marg->val.size());
  Node *a = ad::scale(
      t, ad::mean_all(t, ad::softplus_op(t, ad::scale(t, t_joint, -1.0))), -1.0);
  Node *b = ad::mean_all(t, ad::softplus_op(t, t_marg));
  return ad::sub(t, a, b);
}

std::vector<int> shuffle_permutation(int n, RandomStream &rng) {
  if (n < 2)
    throw ShapeError("MI marginal shuffle requires batch size >= 2, got " +
                     std::to_string(n));
  std::vector<int> perm(static_cast<size_t>(n));
  for (int attempt = 0; attempt < 20; ++attempt) {
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i)
      std::swap(perm[static_cast<size_t>(i)],
                perm[static_cast<size_t>(rng.randint(0, i))]);
    bool derangement = true;
    for (int i = 0; i < n; ++i)
      if (perm[static_cast<size_t>(i)] == i) { derangement = false; break; }
    if (derangement) return perm;
  }
  // Fallback: cyclic shift, always a derangement.
  for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = (i + 1) % n;
  return perm;
}

Node *mi_term(Tape &t, const model::DeaanModel &m, Node *f_id, Node *f_dom,
              double grl_lambda, RandomStream &rng) {
  if (f_id->val.rows() != f_dom->val.rows())
    throw ShapeError("mi_term: batch size mismatch");
  int n = static_cast<int>(f_id->val.rows());
  std::vector<int> perm = shuffle_permutation(n, rng);
  Node *gid = ad::grl(t, f_id, grl_lambda);
  Node *gdom = ad::grl(t, f_dom, grl_lambda);
  Node *joint = ad::concat_cols(t, gid, gdom);
  Node *marg = ad::concat_cols(t, gid, ad::permute_rows(t, gdom, perm));
  Node *est = jsd_estimate_node(t, m.mine_stat(t, joint), m.mine_stat(t, marg));
  // Outer reversal: the statistics network ascends the estimate while the
  // GRL-routed encoders descend it; the node's value stays the estimate.
  return ad::grl(t, est, 1.0);
}

Node *mi_loss(Tape &t, const model::DeaanModel &m, Node *f_id_s, Node *f_dom_s,
              Node *f_id_t, Node *f_dom_t, double grl_lambda, RandomStream &rng) {
  Node *s = mi_term(t, m, f_id_s, f_dom_s, grl_lambda, rng);
  Node *tt = mi_term(t, m, f_id_t, f_dom_t, grl_lambda, rng);
  return ad::add(t, s, tt);
}

// ---------------------------------------------------------------------------
// Correlated-Gaussian benchmark
// ---------------------------------------------------------------------------

namespace {

struct BenchNet {
  nn::ParamStore ps;
  nn::Linear fc1, fc2, fc3;
  void init(RandomStream &rng) {
    fc1.init(ps, "b.fc1", 2, 128, rng);
    fc2.init(ps, "b.fc2", 128, 128, rng);
    fc3.init(ps, "b.fc3", 128, 1, rng);
  }
  Node *forward(Tape &t, Node *xz) {
    Node *h = ad::relu(t, fc1.forward(t, xz));
    h = ad::relu(t, fc2.forward(t, h));
    return fc3.forward(t, h);
  }
  Vector eval(const Matrix &xz) {
    Tape t;
    return forward(t, t.leaf(xz))->val.col(0);
  }
};

Matrix sample_pairs(double rho, int n, RandomStream &rng) {
  Matrix xz(n, 2);
  double s = std::sqrt(1.0 - rho * rho);
  for (int i = 0; i < n; ++i) {
    double a = rng.gaussian(), b = rng.gaussian();
    xz(i, 0) = a;
    xz(i, 1) = rho * a + s * b;
  }
  return xz;
}

// Trains one statistics network to maximize the selected estimator.
double train_and_estimate(const Matrix &data, bool use_dv, int steps,
                          uint64_t seed) {
  RandomStream rng(derive_seed(seed, use_dv ? "mi-bench-dv" : "mi-bench-jsd"));
  BenchNet net;
  net.init(rng);
  nn::AdamOptimizer opt;
  auto params = net.ps.all();
  const int batch = 256;
  int n = static_cast<int>(data.rows());
  for (int step = 0; step < steps; ++step) {
    Matrix joint(batch, 2), marg(batch, 2);
    for (int i = 0; i < batch; ++i) {
      joint.row(i) = data.row(rng.randint(0, n - 1));
      marg(i, 0) = data(rng.randint(0, n - 1), 0);
      marg(i, 1) = data(rng.randint(0, n - 1), 1);
    }
    Tape t;
    Node *tj = net.forward(t, t.leaf(joint));
    Node *tm = net.forward(t, t.leaf(marg));
    Node *est = use_dv ? dv_estimate_node(t, tj, tm) : jsd_estimate_node(t, tj, tm);
    Node *loss = ad::scale(t, est, -1.0);
    nn::zero_grads(params);
    t.backward(loss);
    opt.step(params, 1e-3);
  }
  // Final estimate on the full sample with a fixed cyclic-shift marginal.
  Vector tj = net.eval(data);
  Matrix shifted(data.rows(), 2);
  shifted.col(0) = data.col(0);
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    shifted(i, 1) = data((i + data.rows() / 2) % data.rows(), 1);
  Vector tm = net.eval(shifted);
  return use_dv ? dv_estimate(tj, tm) : jsd_estimate(tj, tm);
}

}  // namespace

GaussianBenchResult run_gaussian_bench(double rho, int n_samples,
                                       int train_steps, uint64_t seed) {
  if (rho < 0 || rho >= 1) throw ConfigError("rho must be in [0,1)");
  RandomStream rng(derive_seed(seed, "mi-bench-data"));
  Matrix data = sample_pairs(rho, n_samples, rng);
  GaussianBenchResult res;
  res.rho = rho;
  res.closed_form = -0.5 * std::log(1.0 - rho * rho);
  res.dv = train_and_estimate(data, /*use_dv=*/true, train_steps, seed);
  res.jsd = train_and_estimate(data, /*use_dv=*/false, train_steps, seed);
  return res;
}

}  // namespace deaan::mi
