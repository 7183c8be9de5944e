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

#include "deaan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "deaan/io.hpp"

namespace deaan::trainer {

using ad::Node;
using ad::Tape;

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (batch_size < 2)
    throw ConfigError("batch_size must be >= 2 (marginal shuffle needs it)");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (main_lr <= 0 || adv_lr <= 0) throw ConfigError("learning rates must be > 0");
  if (adv_momentum < 0 || adv_momentum >= 1)
    throw ConfigError("adv_momentum must be in [0, 1)");
  if (crop_min < 1 || crop_max < crop_min)
    throw ConfigError("require 1 <= crop_min <= crop_max");
}

double lr_schedule(long epoch, double base) {
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  double lr = base;
  for (long i = 0; i < epoch / 5; ++i) lr *= 0.95;
  return lr;
}

Trainer::Trainer(const TrainConfig &cfg)
    : cfg_(cfg), rng_(derive_seed(cfg.seed, "trainer")) {
  cfg_.validate();
  adv_opt_.momentum = cfg_.adv_momentum;
}

model::DeaanModel &Trainer::model() {
  if (!model_) throw ConfigError("trainer model not built yet (call run)");
  return *model_;
}

void Trainer::build_model(int num_speakers_source, int num_speakers_target,
                          const std::filesystem::path &init_checkpoint) {
  if (cfg_.mode == model::TrainMode::kFinetune) {
    if (init_checkpoint.empty())
      throw ConfigError("fine-tune mode requires an initial checkpoint");
    auto loaded = model::DeaanModel::load_checkpoint(init_checkpoint);
    model_ = std::move(loaded.model);
    model_->reinit_classifier_heads(num_speakers_source,
                                    derive_seed(cfg_.seed, "finetune-head"));
  } else {
    model::ModelConfig mc = cfg_.model;
    mc.num_speakers_source = num_speakers_source;
    mc.num_speakers_target = num_speakers_target;
    model_ = std::make_unique<model::DeaanModel>(mc, cfg_.mode,
                                                 derive_seed(cfg_.seed, "model"));
  }
}

Batch Trainer::sample_batch(const corpus::Manifest &m,
                            const std::vector<size_t> &order, size_t start,
                            int count, long crop_frames) {
  Batch b;
  for (int i = 0; i < count; ++i) {
    const auto &rec = m.utts[order[(start + static_cast<size_t>(i)) % order.size()]];
    Matrix feats = corpus::load_features(m, rec);
    b.crops.push_back(corpus::random_crop(feats, crop_frames, rng_));
    b.labels.push_back(rec.speaker);
  }
  return b;
}

losses::LossReport Trainer::train_step(const Batch &batch_source,
                                       const Batch &batch_target, long step,
                                       long epoch) {
  if (cfg_.mode == model::TrainMode::kDeaan) {
    if (batch_source.crops.empty() || batch_target.crops.empty())
      throw DataError("deaan step needs rows from both domains");
    return deaan_step(batch_source, batch_target, step, epoch);
  }
  if (batch_source.crops.empty()) throw DataError("empty training batch");
  return classifier_step(batch_source, step, epoch);
}

losses::LossReport Trainer::classifier_step(const Batch &b, long step,
                                            long epoch) {
  Tape t;
  std::vector<Node *> embs;
  for (const Matrix &crop : b.crops) {
    Node *frames = model_->backbone_forward(t, crop, /*train=*/true);
    embs.push_back(model_->encode(t, frames, model::EncoderKind::kId));
  }
  Node *f_id = ad::stack_rows(t, embs);
  Node *probs = model_->classify_source(t, f_id);
  Node *l_id = losses::identity_loss(t, probs, b.labels, nullptr, {});
  losses::LossWeights w = cfg_.weights;
  losses::LossReport rep = losses::combine(l_id->val(0, 0), 0, 0, 0, 0, w);

  auto params = model_->all_params();
  nn::zero_grads(params);
  t.backward(l_id);
  if (cfg_.grad_clip > 0) nn::clip_global_norm(params, cfg_.grad_clip);
  main_opt_.step(params, lr_schedule(epoch, cfg_.main_lr));
  (void)step;
  return rep;
}

losses::LossReport Trainer::deaan_step(const Batch &bs, const Batch &bt,
                                       long step, long epoch) {
  Tape t;
  auto encode_batch = [&](const Batch &b, model::EncoderKind dom_kind,
                          std::vector<Node *> &ids, std::vector<Node *> &doms,
                          Node *&f_id, Node *&f_dom) {
    for (const Matrix &crop : b.crops) {
      Node *frames = model_->backbone_forward(t, crop, /*train=*/true);
      ids.push_back(model_->encode(t, frames, model::EncoderKind::kId));
      doms.push_back(model_->encode(t, frames, dom_kind));
    }
    f_id = ad::stack_rows(t, ids);
    f_dom = ad::stack_rows(t, doms);
  };

  std::vector<Node *> ids_s, doms_s, ids_t, doms_t;
  Node *f_id_s, *f_ds, *f_id_t, *f_dt;
  encode_batch(bs, model::EncoderKind::kDomSource, ids_s, doms_s, f_id_s, f_ds);
  encode_batch(bt, model::EncoderKind::kDomTarget, ids_t, doms_t, f_id_t, f_dt);

  // Identity classification on both domains.
  Node *l_id = losses::identity_loss(
      t, model_->classify_source(t, f_id_s), bs.labels,
      model_->classify_target(t, f_id_t), bt.labels);

  // Domain discrimination on the domain embeddings (cooperative).
  Node *l_dom = losses::domain_disc_loss(
      t, model_->discriminate(t, f_ds, model::DiscHead::kDom),
      model_->discriminate(t, f_dt, model::DiscHead::kDom));

  // Per-item reconstruction from the fused embedding.
  std::vector<Node *> recon_s, recon_t;
  std::vector<Matrix> orig_s, orig_t;
  auto decode_batch = [&](const Batch &b, const std::vector<Node *> &ids,
                          const std::vector<Node *> &doms,
                          std::vector<Node *> &recon,
                          std::vector<Matrix> &orig) {
    for (size_t i = 0; i < b.crops.size(); ++i) {
      recon.push_back(model_->decode(t, ids[i], doms[i], /*train=*/true));
      orig.push_back(b.crops[i]);
    }
  };
  decode_batch(bs, ids_s, doms_s, recon_s, orig_s);
  decode_batch(bt, ids_t, doms_t, recon_t, orig_t);
  Node *l_r = losses::reconstruction_loss(t, recon_s, orig_s, recon_t, orig_t);

  // Adversarial alignment: reversal layer on f_id into the alignment
  // discriminator, so one pass trains the discriminator and confuses the
  // identity encoder.
  double lam = cfg_.model.grl_lambda;
  Node *l_adv = losses::adversarial_loss(
      t,
      model_->discriminate(t, ad::grl(t, f_id_s, lam), model::DiscHead::kAdv),
      model_->discriminate(t, ad::grl(t, f_id_t, lam), model::DiscHead::kAdv),
      losses::AdvRole::kDiscriminator);

  Node *l_mi = mi::mi_loss(t, *model_, f_id_s, f_ds, f_id_t, f_dt, lam, rng_);

  losses::LossReport rep =
      losses::combine(l_id->val(0, 0), l_dom->val(0, 0), l_r->val(0, 0),
                      l_adv->val(0, 0), l_mi->val(0, 0), cfg_.weights);
  Node *total = losses::combine_nodes(t, l_id, l_dom, l_r, l_adv, l_mi,
                                      cfg_.weights);

  auto adv_params = model_->adversarial_params();
  auto main_params = model_->main_params();
  auto all = model_->all_params();
  nn::zero_grads(all);
  t.backward(total);
  if (cfg_.grad_clip > 0) nn::clip_global_norm(all, cfg_.grad_clip);
  main_opt_.step(main_params, lr_schedule(epoch, cfg_.main_lr));
  adv_opt_.step(adv_params, cfg_.adv_lr);
  (void)step;
  return rep;
}

TrainResult Trainer::run(const corpus::Manifest &source,
                         const corpus::Manifest &target,
                         const std::filesystem::path &out_dir,
                         const std::filesystem::path &init_checkpoint) {
  namespace fs = std::filesystem;
  bool deaan = cfg_.mode == model::TrainMode::kDeaan;
  if (source.utts.empty()) throw DataError("training manifest is empty");
  if (deaan && target.utts.empty())
    throw DataError("deaan mode requires a non-empty target manifest");
  fs::create_directories(out_dir);

  build_model(source.num_speakers(), deaan ? target.num_speakers() : 0,
              init_checkpoint);

  std::vector<size_t> order_s(source.utts.size()), order_t(target.utts.size());
  for (size_t i = 0; i < order_s.size(); ++i) order_s[i] = i;
  for (size_t i = 0; i < order_t.size(); ++i) order_t[i] = i;

  size_t pass_len = deaan ? std::min(order_s.size(), order_t.size())
                          : order_s.size();
  long steps_per_epoch = std::max<long>(
      1, static_cast<long>(pass_len) / cfg_.batch_size);

  TrainResult res;
  std::ostringstream log;
  long step = 0;
  fs::path last_ckpt;
  auto shuffle = [this](std::vector<size_t> &v) {
    for (size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[static_cast<size_t>(
                    rng_.randint(0, static_cast<int64_t>(i) - 1))]);
  };

  try {
    for (long epoch = 0; epoch < cfg_.epochs; ++epoch) {
      shuffle(order_s);
      if (deaan) shuffle(order_t);
      for (long s = 0; s < steps_per_epoch; ++s, ++step) {
        long crop = deaan ? cfg_.model.crop_frames
                          : rng_.randint(cfg_.crop_min, cfg_.crop_max);
        size_t start = static_cast<size_t>(s) * static_cast<size_t>(cfg_.batch_size);
        Batch b_s = sample_batch(source, order_s, start, cfg_.batch_size, crop);
        Batch b_t;
        if (deaan)
          b_t = sample_batch(target, order_t, start, cfg_.batch_size, crop);
        losses::LossReport rep = train_step(b_s, b_t, step, epoch);
        if (step == 0) res.first_step = rep;
        res.last_step = rep;
        log << losses::report_to_jsonl(step, rep) << '\n';
      }
      std::ostringstream rng_state;
      rng_state << rng_.engine();
      fs::path ckpt = out_dir / ("checkpoint_epoch_" + std::to_string(epoch) +
                                 ".ckpt");
      model_->save_checkpoint(ckpt, epoch, rng_state.str());
      last_ckpt = ckpt;
    }
  } catch (const NumericError &e) {
    std::string where = last_ckpt.empty() ? std::string("<none>")
                                          : last_ckpt.string();
    write_atomic(out_dir / "train_log.jsonl",
                 [&](std::ostream &os) { os << log.str(); });
    throw NumericError(std::string(e.what()) +
                       "; aborting, last finite checkpoint: " + where);
  }

  res.steps = step;
  res.log_path = out_dir / "train_log.jsonl";
  write_atomic(res.log_path, [&](std::ostream &os) { os << log.str(); });
  res.final_checkpoint = out_dir / "checkpoint_final.ckpt";
  std::ostringstream rng_state;
  rng_state << rng_.engine();
  model_->save_checkpoint(res.final_checkpoint, cfg_.epochs - 1, rng_state.str());
  return res;
}

}  // namespace deaan::trainer
