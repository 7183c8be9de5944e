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

#ifndef DEAAN_LOSSES_HPP_
#define DEAAN_LOSSES_HPP_

#include <string>
#include <vector>

#include "deaan/autodiff.hpp"

namespace deaan::losses {

using ad::Node;
using ad::Tape;

// Probability floor matching the +/-15 logit clamp of the discriminators:
// sigmoid(-15). -log of it is just above 15.
inline constexpr double kProbFloor = 3.059022269256247e-07;

struct LossWeights {
  double lambda_dom = 0.5;
  double lambda_adv = 0.5;
  double lambda_r = 0.2;
  double lambda_mi = 0.2;
  void validate() const;
};

struct LossReport {
  double l_id = 0, l_dom = 0, l_r = 0, l_adv = 0, l_mi = 0, total = 0;
};

enum class AdvRole { kDiscriminator, kEncoder };

// Mean cross-entropy over the source batch plus mean cross-entropy over the
// target batch. probs_target may be null (baseline / fine-tune modes).
Node *identity_loss(Tape &t, Node *probs_source,
                    const std::vector<int> &labels_source, Node *probs_target,
                    const std::vector<int> &labels_target);

// Two-sided BCE on the domain discriminator outputs: source labeled 1,
// target labeled 0. Inputs are probabilities in (0,1), one column.
Node *domain_disc_loss(Tape &t, Node *d_source, Node *d_target);

// Element-mean squared error per utterance, batch-averaged, summed over both
// domains. Reconstructions are graph nodes; originals are fixed targets.
Node *reconstruction_loss(Tape &t, const std::vector<Node *> &recon_source,
                          const std::vector<Matrix> &x_source,
                          const std::vector<Node *> &recon_target,
                          const std::vector<Matrix> &x_target);

// Standard GAN pair on D_adv outputs for f_id. Discriminator role: source=1,
// target=0. Encoder role: flipped labels (non-saturating).
Node *adversarial_loss(Tape &t, Node *d_adv_source, Node *d_adv_target,
                       AdvRole role);

// Weighted total. Throws NumericError naming the first non-finite part.
LossReport combine(double l_id, double l_dom, double l_r, double l_adv,
                   double l_mi, const LossWeights &w);

// Same weighting on graph nodes (for the training backward pass); null terms
// are treated as absent.
Node *combine_nodes(Tape &t, Node *l_id, Node *l_dom, Node *l_r, Node *l_adv,
                    Node *l_mi, const LossWeights &w);

std::string report_to_jsonl(long step, const LossReport &r);

}  // namespace deaan::losses

#endif  // DEAAN_LOSSES_HPP_
