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

#ifndef DEAAN_TRAINER_HPP_
#define DEAAN_TRAINER_HPP_

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "deaan/corpus.hpp"
#include "deaan/losses.hpp"
#include "deaan/mi.hpp"
#include "deaan/model.hpp"

namespace deaan::trainer {

struct TrainConfig {
  model::TrainMode mode = model::TrainMode::kBaseline;
  model::ModelConfig model;  // num_speakers_* filled from the manifests
  int batch_size = 8;
  int epochs = 10;
  double main_lr = 1e-4;  // adaptive-moments group, decays x0.95 every 5 epochs
  double adv_lr = 1e-4;   // momentum-SGD group for the alignment discriminator
  double adv_momentum = 0.9;
  losses::LossWeights weights;
  double grad_clip = 5.0;  // global norm; <= 0 disables
  uint64_t seed = 0;
  // Variable-length crops for baseline / fine-tune steps.
  int crop_min = 300, crop_max = 800;

  void validate() const;
};

// base * 0.95^floor(epoch / 5).
double lr_schedule(long epoch, double base);

struct Batch {
  std::vector<Matrix> crops;  // frames x n_mels each
  std::vector<int> labels;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path log_path;
  losses::LossReport first_step, last_step;
  long steps = 0;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig &cfg);

  // Deaan mode consumes both manifests; baseline trains on `source`;
  // fine-tune resumes `init_checkpoint` on `target` with a fresh classifier
  // head. Writes per-epoch checkpoints and a JSON-lines loss log to out_dir.
  TrainResult run(const corpus::Manifest &source, const corpus::Manifest &target,
                  const std::filesystem::path &out_dir,
                  const std::filesystem::path &init_checkpoint = {});

  // Single update on prepared crops. In deaan mode both batches must be
  // non-empty; baseline/fine-tune ignore batch_target.
  losses::LossReport train_step(const Batch &batch_source,
                                const Batch &batch_target, long step,
                                long epoch);

  model::DeaanModel &model();
  RandomStream &rng() { return rng_; }

 private:
  void build_model(int num_speakers_source, int num_speakers_target,
                   const std::filesystem::path &init_checkpoint);
  Batch sample_batch(const corpus::Manifest &m,
                     const std::vector<size_t> &order, size_t start, int count,
                     long crop_frames);
  losses::LossReport deaan_step(const Batch &bs, const Batch &bt, long step,
                                long epoch);
  losses::LossReport classifier_step(const Batch &b, long step, long epoch);

  TrainConfig cfg_;
  std::unique_ptr<model::DeaanModel> model_;
  nn::AdamOptimizer main_opt_;
  nn::MomentumSgd adv_opt_;
  RandomStream rng_;
};

}  // namespace deaan::trainer

#endif  // DEAAN_TRAINER_HPP_
