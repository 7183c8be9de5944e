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

#ifndef DEAAN_AUTODIFF_HPP_
#define DEAAN_AUTODIFF_HPP_

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "deaan/common.hpp"

namespace deaan::ad {

// Reverse-mode autodiff over dense double matrices. A Tape owns the nodes of
// one forward pass; backward() walks them in reverse creation order.
struct Node {
  Matrix val;
  Matrix grad;  // allocated on demand, same shape as val
  bool requires_grad = false;
  std::function<void(Node &)> back;  // accumulates into input grads

  void ensure_grad() {
    if (grad.size() == 0) grad = Matrix::Zero(val.rows(), val.cols());
  }
};

// Trainable parameter: value plus gradient accumulator and optimizer slots.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m, v;  // Adam moments / SGD momentum buffer (m)

  void init_slots() {
    grad = Matrix::Zero(value.rows(), value.cols());
    m = Matrix::Zero(value.rows(), value.cols());
    v = Matrix::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(); }
};

class Tape {
 public:
  Node *leaf(Matrix v, bool requires_grad = false);
  Node *make(Matrix v, bool requires_grad, std::function<void(Node &)> back);
  // Leaf bound to a Param; one node per Param per tape so gradients from all
  // uses accumulate in place. After backward() the gradient is flushed into
  // Param::grad.
  Node *param(Param &p);

  void backward(Node *scalar_loss);
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
  std::unordered_map<Param *, Node *> param_nodes_;
};

// --- elementwise / linear algebra ---
Node *add(Tape &t, Node *a, Node *b);
Node *sub(Tape &t, Node *a, Node *b);
Node *mul(Tape &t, Node *a, Node *b);
Node *scale(Tape &t, Node *a, double c);
Node *add_const(Tape &t, Node *a, double c);
Node *matmul(Tape &t, Node *a, Node *b);
Node *transpose(Tape &t, Node *a);
Node *add_rowvec(Tape &t, Node *x, Node *bias);  // bias: 1 x C
Node *relu(Tape &t, Node *x);
Node *tanh_op(Tape &t, Node *x);
Node *sigmoid_clamped(Tape &t, Node *logits, double clamp = 15.0);
Node *softplus_op(Tape &t, Node *x);
Node *log_floor(Tape &t, Node *x, double eps = 1e-12);
Node *exp_op(Tape &t, Node *x);

// --- reductions / shaping ---
Node *sum_all(Tape &t, Node *x);
Node *mean_all(Tape &t, Node *x);
Node *logsumexp_all(Tape &t, Node *x);
Node *softmax_rows(Tape &t, Node *x);
Node *pick_per_row(Tape &t, Node *probs, const std::vector<int> &labels);
Node *concat_cols(Tape &t, Node *a, Node *b);
Node *stack_rows(Tape &t, const std::vector<Node *> &rows);
Node *permute_rows(Tape &t, Node *x, const std::vector<int> &perm);
Node *reshape(Tape &t, Node *x, Eigen::Index rows, Eigen::Index cols);  // row-major

// Gradient reversal: identity forward, upstream gradient times -lambda.
Node *grl(Tape &t, Node *x, double lambda);

// --- sequence ops (rows = time, cols = channels) ---
// w: (k*cin) x cout, bias: 1 x cout, zero padding `pad` on both ends.
Node *conv1d(Tape &t, Node *x, Node *w, Node *bias, int k, int stride, int pad);
// Transposed convolution; output length (T-1)*stride + k - 2*pad.
Node *conv1d_transpose(Tape &t, Node *x, Node *w, Node *bias, int k, int stride,
                       int pad);
// Normalizes per column. In train mode uses batch statistics and updates the
// running buffers in place; in eval mode uses the running buffers.
Node *batchnorm(Tape &t, Node *x, Node *gamma, Node *beta, Vector &running_mean,
                Vector &running_var, bool train, double momentum = 0.1,
                double eps = 1e-5);

// Plain-value helpers.
double scalar(const Node *n);

}  // namespace deaan::ad

#endif  // DEAAN_AUTODIFF_HPP_
