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

#include "deaan/autodiff.hpp"

#include <cmath>

namespace deaan::ad {

Node *Tape::leaf(Matrix v, bool requires_grad) {
  auto n = std::make_unique<Node>();
  n->val = std::move(v);
  n->requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return nodes_.back().get();
}

Node *Tape::make(Matrix v, bool requires_grad, std::function<void(Node &)> back) {
  auto n = std::make_unique<Node>();
  n->val = std::move(v);
  n->requires_grad = requires_grad;
  if (requires_grad) n->back = std::move(back);
  nodes_.push_back(std::move(n));
  return nodes_.back().get();
}

Node *Tape::param(Param &p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return it->second;
  Node *n = leaf(p.value, true);
  param_nodes_[&p] = n;
  return n;
}

void Tape::backward(Node *scalar_loss) {
  if (scalar_loss->val.size() != 1)
    throw ShapeError("backward requires a scalar loss node");
  scalar_loss->ensure_grad();
  scalar_loss->grad(0, 0) = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node &n = **it;
    if (n.requires_grad && n.back && n.grad.size() != 0) n.back(n);
  }
  for (auto &[p, node] : param_nodes_)
    if (node->grad.size() != 0) p->grad += node->grad;
}

double scalar(const Node *n) {
  if (n->val.size() != 1) throw ShapeError("scalar() on non-scalar node");
  return n->val(0, 0);
}

static bool rg(const Node *a) { return a->requires_grad; }
static bool rg(const Node *a, const Node *b) {
  return a->requires_grad || b->requires_grad;
}

static void same_shape(const Node *a, const Node *b, const char *op) {
  if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     std::to_string(a->val.rows()) + "x" +
                     std::to_string(a->val.cols()) + " vs " +
                     std::to_string(b->val.rows()) + "x" +
                     std::to_string(b->val.cols()));
}

Node *add(Tape &t, Node *a, Node *b) {
  same_shape(a, b, "add");
  return t.make(a->val + b->val, rg(a, b), [a, b](Node &n) {
    if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad; }
    if (b->requires_grad) { b->ensure_grad(); b->grad += n.grad; }
  });
}

Node *sub(Tape &t, Node *a, Node *b) {
  same_shape(a, b, "sub");
  return t.make(a->val - b->val, rg(a, b), [a, b](Node &n) {
    if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad; }
    if (b->requires_grad) { b->ensure_grad(); b->grad -= n.grad; }
  });
}

Node *mul(Tape &t, Node *a, Node *b) {
  same_shape(a, b, "mul");
  return t.make(a->val.cwiseProduct(b->val), rg(a, b), [a, b](Node &n) {
    if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad.cwiseProduct(b->val); }
    if (b->requires_grad) { b->ensure_grad(); b->grad += n.grad.cwiseProduct(a->val); }
  });
}

Node *scale(Tape &t, Node *a, double c) {
  return t.make(a->val * c, rg(a), [a, c](Node &n) {
    a->ensure_grad();
    a->grad += n.grad * c;
  });
}

Node *add_const(Tape &t, Node *a, double c) {
  return t.make(a->val.array() + c, rg(a), [a](Node &n) {
    a->ensure_grad();
    a->grad += n.grad;
  });
}

Node *matmul(Tape &t, Node *a, Node *b) {
  if (a->val.cols() != b->val.rows())
    throw ShapeError("matmul: inner dims " + std::to_string(a->val.cols()) +
                     " vs " + std::to_string(b->val.rows()));
  return t.make(a->val * b->val, rg(a, b), [a, b](Node &n) {
    if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad * b->val.transpose(); }
    if (b->requires_grad) { b->ensure_grad(); b->grad += a->val.transpose() * n.grad; }
  });
}

Node *transpose(Tape &t, Node *a) {
  return t.make(a->val.transpose(), rg(a), [a](Node &n) {
    a->ensure_grad();
    a->grad += n.grad.transpose();
  });
}

Node *add_rowvec(Tape &t, Node *x, Node *bias) {
  if (bias->val.rows() != 1 || bias->val.cols() != x->val.cols())
    throw ShapeError("add_rowvec: bias must be 1x" + std::to_string(x->val.cols()));
  Matrix y = x->val;
  y.rowwise() += bias->val.row(0);
  return t.make(std::move(y), rg(x, bias), [x, bias](Node &n) {
    if (x->requires_grad) { x->ensure_grad(); x->grad += n.grad; }
    if (bias->requires_grad) {
      bias->ensure_grad();
      bias->grad.row(0) += n.grad.colwise().sum();
    }
  });
}

Node *relu(Tape &t, Node *x) {
  return t.make(x->val.cwiseMax(0.0), rg(x), [x](Node &n) {
    x->ensure_grad();
    x->grad.array() += n.grad.array() * (x->val.array() > 0.0).cast<double>();
  });
}

Node *tanh_op(Tape &t, Node *x) {
  Matrix y = x->val.array().tanh();
  return t.make(y, rg(x), [x, y](Node &n) {
    x->ensure_grad();
    x->grad.array() += n.grad.array() * (1.0 - y.array().square());
  });
}

Node *sigmoid_clamped(Tape &t, Node *logits, double clamp) {
  Matrix z = logits->val.cwiseMax(-clamp).cwiseMin(clamp);
  Matrix y = (1.0 / (1.0 + (-z.array()).exp())).matrix();
  Matrix inside =
      ((logits->val.array().abs() < clamp).cast<double>()).matrix();
  return t.make(y, rg(logits), [x = logits, y, inside](Node &n) {
    x->ensure_grad();
    x->grad.array() +=
        n.grad.array() * y.array() * (1.0 - y.array()) * inside.array();
  });
}

Node *softplus_op(Tape &t, Node *x) {
  Matrix y = (x->val.array().max(0.0) + (-x->val.array().abs()).exp().log1p());
  return t.make(y, rg(x), [x](Node &n) {
    x->ensure_grad();
    x->grad.array() +=
        n.grad.array() / (1.0 + (-x->val.array()).exp());
  });
}

Node *log_floor(Tape &t, Node *x, double eps) {
  Matrix y = x->val.cwiseMax(eps).array().log();
  return t.make(y, rg(x), [x, eps](Node &n) {
    x->ensure_grad();
    x->grad.array() += n.grad.array() *
                       (x->val.array() >= eps).cast<double>() /
                       x->val.array().max(eps);
  });
}

Node *exp_op(Tape &t, Node *x) {
  Matrix y = x->val.array().exp();
  return t.make(y, rg(x), [x, y](Node &n) {
    x->ensure_grad();
    x->grad.array() += n.grad.array() * y.array();
  });
}

Node *sum_all(Tape &t, Node *x) {
  Matrix y(1, 1);
  y(0, 0) = x->val.sum();
  return t.make(y, rg(x), [x](Node &n) {
    x->ensure_grad();
    x->grad.array() += n.grad(0, 0);
  });
}

Node *mean_all(Tape &t, Node *x) {
  if (x->val.size() == 0) throw ShapeError("mean_all on empty node");
  double inv = 1.0 / static_cast<double>(x->val.size());
  Matrix y(1, 1);
  y(0, 0) = x->val.sum() * inv;
  return t.make(y, rg(x), [x, inv](Node &n) {
    x->ensure_grad();
    x->grad.array() += n.grad(0, 0) * inv;
  });
}

Node *logsumexp_all(Tape &t, Node *x) {
  if (x->val.size() == 0) throw ShapeError("logsumexp on empty node");
  double m = x->val.maxCoeff();
  double s = (x->val.array() - m).exp().sum();
  Matrix y(1, 1);
  y(0, 0) = m + std::log(s);
  double lse = y(0, 0);
  return t.make(y, rg(x), [x, lse](Node &n) {
    x->ensure_grad();
    x->grad.array() += n.grad(0, 0) * (x->val.array() - lse).exp();
  });
}

Node *softmax_rows(Tape &t, Node *x) {
  Matrix y(x->val.rows(), x->val.cols());
  for (Eigen::Index r = 0; r < x->val.rows(); ++r) {
    double m = x->val.row(r).maxCoeff();
    Eigen::ArrayXd e = (x->val.row(r).array() - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  return t.make(y, rg(x), [x, y](Node &n) {
    x->ensure_grad();
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double dot = n.grad.row(r).dot(y.row(r));
      x->grad.row(r).array() +=
          y.row(r).array() * (n.grad.row(r).array() - dot);
    }
  });
}

Node *pick_per_row(Tape &t, Node *probs, const std::vector<int> &labels) {
  if (static_cast<Eigen::Index>(labels.size()) != probs->val.rows())
    throw ShapeError("pick_per_row: label count mismatch");
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= probs->val.cols())
      throw LabelError("label " + std::to_string(labels[i]) +
                       " out of range [0," + std::to_string(probs->val.cols()) +
                       ")");
  Matrix y(probs->val.rows(), 1);
  for (Eigen::Index r = 0; r < y.rows(); ++r)
    y(r, 0) = probs->val(r, labels[static_cast<size_t>(r)]);
  return t.make(y, rg(probs), [probs, labels](Node &n) {
    probs->ensure_grad();
    for (Eigen::Index r = 0; r < n.grad.rows(); ++r)
      probs->grad(r, labels[static_cast<size_t>(r)]) += n.grad(r, 0);
  });
}

Node *concat_cols(Tape &t, Node *a, Node *b) {
  if (a->val.rows() != b->val.rows())
    throw ShapeError("concat_cols: row mismatch");
  Matrix y(a->val.rows(), a->val.cols() + b->val.cols());
  y << a->val, b->val;
  Eigen::Index ca = a->val.cols();
  return t.make(std::move(y), rg(a, b), [a, b, ca](Node &n) {
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad += n.grad.leftCols(ca);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      b->grad += n.grad.rightCols(n.grad.cols() - ca);
    }
  });
}

Node *stack_rows(Tape &t, const std::vector<Node *> &rows) {
  if (rows.empty()) throw ShapeError("stack_rows on empty list");
  Eigen::Index cols = rows[0]->val.cols(), total = 0;
  for (Node *r : rows) {
    if (r->val.cols() != cols) throw ShapeError("stack_rows: col mismatch");
    total += r->val.rows();
  }
  Matrix y(total, cols);
  Eigen::Index at = 0;
  bool need = false;
  for (Node *r : rows) {
    y.middleRows(at, r->val.rows()) = r->val;
    at += r->val.rows();
    need = need || r->requires_grad;
  }
  auto parts = rows;
  return t.make(std::move(y), need, [parts](Node &n) {
    Eigen::Index at = 0;
    for (Node *r : parts) {
      if (r->requires_grad) {
        r->ensure_grad();
        r->grad += n.grad.middleRows(at, r->val.rows());
      }
      at += r->val.rows();
    }
  });
}

Node *permute_rows(Tape &t, Node *x, const std::vector<int> &perm) {
  if (static_cast<Eigen::Index>(perm.size()) != x->val.rows())
    throw ShapeError("permute_rows: size mismatch");
  Matrix y(x->val.rows(), x->val.cols());
  for (size_t i = 0; i < perm.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = x->val.row(perm[i]);
  return t.make(std::move(y), rg(x), [x, perm](Node &n) {
    x->ensure_grad();
    for (size_t i = 0; i < perm.size(); ++i)
      x->grad.row(perm[i]) += n.grad.row(static_cast<Eigen::Index>(i));
  });
}

Node *reshape(Tape &t, Node *x, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != x->val.size())
    throw ShapeError("reshape: size mismatch");
  using RowMajor =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor rm = x->val;
  Matrix y = Eigen::Map<RowMajor>(rm.data(), rows, cols);
  return t.make(std::move(y), rg(x), [x](Node &n) {
    x->ensure_grad();
    RowMajor gm = n.grad;
    Matrix g = Eigen::Map<RowMajor>(gm.data(), x->val.rows(), x->val.cols());
    x->grad += g;
  });
}

Node *grl(Tape &t, Node *x, double lambda) {
  if (lambda < 0.0) throw ConfigError("grl lambda must be >= 0");
  return t.make(x->val, rg(x), [x, lambda](Node &n) {
    x->ensure_grad();
    x->grad -= lambda * n.grad;
  });
}

static Matrix im2col(const Matrix &x, int k, int stride, int pad, Eigen::Index t_out) {
  Eigen::Index cin = x.cols();
  Matrix cols = Matrix::Zero(t_out, static_cast<Eigen::Index>(k) * cin);
  for (Eigen::Index to = 0; to < t_out; ++to) {
    for (int j = 0; j < k; ++j) {
      Eigen::Index src = to * stride + j - pad;
      if (src >= 0 && src < x.rows())
        cols.block(to, static_cast<Eigen::Index>(j) * cin, 1, cin) = x.row(src);
    }
  }
  return cols;
}

Node *conv1d(Tape &t, Node *x, Node *w, Node *bias, int k, int stride, int pad) {
  Eigen::Index cin = x->val.cols();
  if (w->val.rows() != static_cast<Eigen::Index>(k) * cin)
    throw ShapeError("conv1d: weight rows " + std::to_string(w->val.rows()) +
                     " != k*cin " + std::to_string(k * cin));
  Eigen::Index t_out = (x->val.rows() + 2 * pad - k) / stride + 1;
  if (t_out < 1)
    throw ShapeError("conv1d: input length " + std::to_string(x->val.rows()) +
                     " below minimum " + std::to_string(k - 2 * pad));
  auto cols = std::make_shared<Matrix>(im2col(x->val, k, stride, pad, t_out));
  Matrix y = (*cols) * w->val;
  y.rowwise() += bias->val.row(0);
  return t.make(std::move(y), true, [x, w, bias, cols, k, stride, pad](Node &n) {
    if (bias->requires_grad) {
      bias->ensure_grad();
      bias->grad.row(0) += n.grad.colwise().sum();
    }
    if (w->requires_grad) {
      w->ensure_grad();
      w->grad += cols->transpose() * n.grad;
    }
    if (x->requires_grad) {
      x->ensure_grad();
      Matrix dcols = n.grad * w->val.transpose();
      Eigen::Index cin = x->val.cols();
      for (Eigen::Index to = 0; to < dcols.rows(); ++to) {
        for (int j = 0; j < k; ++j) {
          Eigen::Index src = to * stride + j - pad;
          if (src >= 0 && src < x->val.rows())
            x->grad.row(src) +=
                dcols.block(to, static_cast<Eigen::Index>(j) * cin, 1, cin);
        }
      }
    }
  });
}

Node *conv1d_transpose(Tape &t, Node *x, Node *w, Node *bias, int k, int stride,
                       int pad) {
  Eigen::Index cin = x->val.cols();
  Eigen::Index cout = w->val.cols();
  if (w->val.rows() != static_cast<Eigen::Index>(k) * cin)
    throw ShapeError("conv1d_transpose: weight rows mismatch");
  Eigen::Index t_out = (x->val.rows() - 1) * stride + k - 2 * pad;
  if (t_out < 1) throw ShapeError("conv1d_transpose: empty output");
  Matrix y = Matrix::Zero(t_out, cout);
  for (Eigen::Index ti = 0; ti < x->val.rows(); ++ti) {
    for (int j = 0; j < k; ++j) {
      Eigen::Index to = ti * stride + j - pad;
      if (to >= 0 && to < t_out)
        y.row(to) += x->val.row(ti) *
                     w->val.middleRows(static_cast<Eigen::Index>(j) * cin, cin);
    }
  }
  y.rowwise() += bias->val.row(0);
  return t.make(std::move(y), true, [x, w, bias, k, stride, pad](Node &n) {
    Eigen::Index cin = x->val.cols();
    if (bias->requires_grad) {
      bias->ensure_grad();
      bias->grad.row(0) += n.grad.colwise().sum();
    }
    for (Eigen::Index ti = 0; ti < x->val.rows(); ++ti) {
      for (int j = 0; j < k; ++j) {
        Eigen::Index to = ti * stride + j - pad;
        if (to < 0 || to >= n.grad.rows()) continue;
        if (x->requires_grad) {
          x->ensure_grad();
          x->grad.row(ti) +=
              n.grad.row(to) *
              w->val.middleRows(static_cast<Eigen::Index>(j) * cin, cin)
                  .transpose();
        }
        if (w->requires_grad) {
          w->ensure_grad();
          w->grad.middleRows(static_cast<Eigen::Index>(j) * cin, cin) +=
              x->val.row(ti).transpose() * n.grad.row(to);
        }
      }
    }
  });
}

Node *batchnorm(Tape &t, Node *x, Node *gamma, Node *beta, Vector &running_mean,
                Vector &running_var, bool train, double momentum, double eps) {
  Eigen::Index c = x->val.cols();
  if (gamma->val.cols() != c || beta->val.cols() != c)
    throw ShapeError("batchnorm: gamma/beta dim mismatch");
  if (running_mean.size() != c) {
    running_mean = Vector::Zero(c);
    running_var = Vector::Ones(c);
  }
  Eigen::Index nrows = x->val.rows();
  if (train) {
    Eigen::RowVectorXd mu = x->val.colwise().mean();
    Matrix centered = x->val.rowwise() - mu;
    Eigen::RowVectorXd var =
        centered.array().square().colwise().mean();
    Eigen::RowVectorXd istd = (var.array() + eps).rsqrt();
    Matrix xhat = centered.array().rowwise() * istd.array();
    Matrix y = (xhat.array().rowwise() * gamma->val.row(0).array()).matrix();
    y.rowwise() += beta->val.row(0);
    running_mean = (1.0 - momentum) * running_mean + momentum * mu.transpose();
    running_var = (1.0 - momentum) * running_var + momentum * var.transpose();
    auto xhat_p = std::make_shared<Matrix>(std::move(xhat));
    auto istd_p = std::make_shared<Eigen::RowVectorXd>(std::move(istd));
    return t.make(std::move(y), true, [x, gamma, beta, xhat_p, istd_p, nrows](Node &n) {
      const Matrix &xh = *xhat_p;
      Eigen::RowVectorXd dbeta = n.grad.colwise().sum();
      Eigen::RowVectorXd dgamma =
          (n.grad.array() * xh.array()).colwise().sum();
      if (beta->requires_grad) {
        beta->ensure_grad();
        beta->grad.row(0) += dbeta;
      }
      if (gamma->requires_grad) {
        gamma->ensure_grad();
        gamma->grad.row(0) += dgamma;
      }
      if (x->requires_grad) {
        x->ensure_grad();
        double invn = 1.0 / static_cast<double>(nrows);
        // dX = gamma*istd/N * (N*dY - sum(dY) - xhat * sum(dY*xhat))
        Matrix term = n.grad * static_cast<double>(nrows);
        term.rowwise() -= dbeta;
        term -= (xh.array().rowwise() * dgamma.array()).matrix();
        x->grad.array() +=
            term.array().rowwise() *
            (gamma->val.row(0).array() * istd_p->array() * invn);
      }
    });
  }
  Eigen::RowVectorXd istd =
      (running_var.transpose().array() + eps).rsqrt();
  Matrix y = ((x->val.rowwise() - running_mean.transpose()).array().rowwise() *
              (istd.array() * gamma->val.row(0).array()))
                 .matrix();
  y.rowwise() += beta->val.row(0);
  Matrix xhat = (x->val.rowwise() - running_mean.transpose()).array().rowwise() *
                istd.array();
  auto xhat_p = std::make_shared<Matrix>(std::move(xhat));
  auto istd_p = std::make_shared<Eigen::RowVectorXd>(std::move(istd));
  return t.make(std::move(y), true, [x, gamma, beta, xhat_p, istd_p](Node &n) {
    if (beta->requires_grad) {
      beta->ensure_grad();
      beta->grad.row(0) += n.grad.colwise().sum();
    }
    if (gamma->requires_grad) {
      gamma->ensure_grad();
      gamma->grad.row(0) +=
          (n.grad.array() * xhat_p->array()).colwise().sum().matrix();
    }
    if (x->requires_grad) {
      x->ensure_grad();
      x->grad.array() += n.grad.array().rowwise() *
                         (gamma->val.row(0).array() * istd_p->array());
    }
  });
}

}  // namespace deaan::ad
