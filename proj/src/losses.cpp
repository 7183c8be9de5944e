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

#include "deaan/losses.hpp"

#include <cmath>
#include <sstream>

namespace deaan::losses {

void LossWeights::validate() const {
  for (double v : {lambda_dom, lambda_adv, lambda_r, lambda_mi})
    if (!std::isfinite(v) || v < 0)
      throw ConfigError("loss weights must be finite and >= 0");
}

static void check_probs(const Node *n, const char *what) {
  if (n->val.cols() != 1)
    throw ShapeError(std::string(what) + ": expected a single probability column");
  if ((n->val.array() <= 0.0).any() || (n->val.array() >= 1.0).any())
    throw ProbabilityError(std::string(what) + ": probability outside (0,1)");
}

// mean over the batch of -log p, with p floored at the logit-clamp value.
static Node *mean_neg_log(Tape &t, Node *p) {
  return ad::scale(t, ad::mean_all(t, ad::log_floor(t, p, kProbFloor)), -1.0);
}

static Node *one_minus(Tape &t, Node *p) {
  return ad::add_const(t, ad::scale(t, p, -1.0), 1.0);
}

Node *identity_loss(Tape &t, Node *probs_source,
                    const std::vector<int> &labels_source, Node *probs_target,
                    const std::vector<int> &labels_target) {
  Node *l = mean_neg_log(t, ad::pick_per_row(t, probs_source, labels_source));
  if (probs_target != nullptr)
    l = ad::add(t, l,
                mean_neg_log(t, ad::pick_per_row(t, probs_target, labels_target)));
  return l;
}

Node *domain_disc_loss(Tape &t, Node *d_source, Node *d_target) {
  check_probs(d_source, "domain_disc_loss source");
  check_probs(d_target, "domain_disc_loss target");
  return ad::add(t, mean_neg_log(t, d_source),
                 mean_neg_log(t, one_minus(t, d_target)));
}

static Node *batch_mean_mse(Tape &t, const std::vector<Node *> &recon,
                            const std::vector<Matrix> &orig) {
  if (recon.size() != orig.size() || recon.empty())
    throw ShapeError("reconstruction batch size mismatch");
  std::vector<Node *> per_item;
  per_item.reserve(recon.size());
  for (size_t i = 0; i < recon.size(); ++i) {
    if (recon[i]->val.rows() != orig[i].rows() ||
        recon[i]->val.cols() != orig[i].cols())
      throw ShapeError("reconstruction shape mismatch: " +
                       std::to_string(recon[i]->val.rows()) + "x" +
                       std::to_string(recon[i]->val.cols()) + " vs " +
                       std::to_string(orig[i].rows()) + "x" +
                       std::to_string(orig[i].cols()));
    Node *diff = ad::sub(t, recon[i], t.leaf(orig[i]));
    per_item.push_back(ad::mean_all(t, ad::mul(t, diff, diff)));
  }
  return ad::mean_all(t, ad::stack_rows(t, per_item));
}

Node *reconstruction_loss(Tape &t, const std::vector<Node *> &recon_source,
                          const std::vector<Matrix> &x_source,
                          const std::vector<Node *> &recon_target,
                          const std::vector<Matrix> &x_target) {
  return ad::add(t, batch_mean_mse(t, recon_source, x_source),
                 batch_mean_mse(t, recon_target, x_target));
}

Node *adversarial_loss(Tape &t, Node *d_adv_source, Node *d_adv_target,
                       AdvRole role) {
  check_probs(d_adv_source, "adversarial_loss source");
  check_probs(d_adv_target, "adversarial_loss target");
  if (role == AdvRole::kDiscriminator)
    return ad::add(t, mean_neg_log(t, d_adv_source),
                   mean_neg_log(t, one_minus(t, d_adv_target)));
  return ad::add(t, mean_neg_log(t, one_minus(t, d_adv_source)),
                 mean_neg_log(t, d_adv_target));
}

LossReport combine(double l_id, double l_dom, double l_r, double l_adv,
                   double l_mi, const LossWeights &w) {
  w.validate();
  struct { const char *name; double v; } parts[] = {
      {"l_id", l_id}, {"l_dom", l_dom}, {"l_R", l_r},
      {"l_adv", l_adv}, {"l_MI", l_mi}};
  for (auto &p : parts)
    if (!std::isfinite(p.v))
      throw NumericError(std::string("non-finite loss part: ") + p.name);
  LossReport r;
  r.l_id = l_id;
  r.l_dom = l_dom;
  r.l_r = l_r;
  r.l_adv = l_adv;
  r.l_mi = l_mi;
  r.total = l_id + (w.lambda_dom * l_dom + w.lambda_adv * l_adv) +
            (w.lambda_r * l_r + w.lambda_mi * l_mi);
  return r;
}

Node *combine_nodes(Tape &t, Node *l_id, Node *l_dom, Node *l_r, Node *l_adv,
                    Node *l_mi, const LossWeights &w) {
  w.validate();
  Node *total = l_id;
  auto acc = [&](Node *part, double weight) {
    if (part != nullptr) total = ad::add(t, total, ad::scale(t, part, weight));
  };
  acc(l_dom, w.lambda_dom);
  acc(l_adv, w.lambda_adv);
  acc(l_r, w.lambda_r);
  acc(l_mi, w.lambda_mi);
  return total;
}

std::string report_to_jsonl(long step, const LossReport &r) {
  std::ostringstream os;
  os.precision(10);
  os << "{\"step\":" << step << ",\"l_id\":" << r.l_id << ",\"l_dom\":" << r.l_dom
     << ",\"l_R\":" << r.l_r << ",\"l_adv\":" << r.l_adv << ",\"l_MI\":" << r.l_mi
     << ",\"total\":" << r.total << "}";
  return os.str();
}

}  // namespace deaan::losses
