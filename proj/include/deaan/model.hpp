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

#ifndef DEAAN_MODEL_HPP_
#define DEAAN_MODEL_HPP_

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "deaan/nn.hpp"

namespace deaan::model {

using ad::Node;
using ad::Tape;

enum class BackboneScale { kToy, kResnet34 };
enum class TrainMode { kBaseline, kFinetune, kDeaan };
enum class EncoderKind { kId, kDomSource, kDomTarget };
enum class DiscHead { kDom, kAdv };

std::string scale_name(BackboneScale s);
BackboneScale parse_scale(const std::string &s);
std::string mode_name(TrainMode m);
TrainMode parse_mode(const std::string &s);

struct ModelConfig {
  BackboneScale backbone_scale = BackboneScale::kToy;
  int n_mels = 64;
  int d_id = 128;
  int d_dom = 128;
  int num_speakers_source = 0;
  int num_speakers_target = 0;
  double grl_lambda = 1.0;
  int crop_frames = 384;  // decoder target length

  void validate() const;
};

// Residual 1D convolution stack over time; mel bins enter as channels.
struct Backbone {
  struct Block {
    nn::Conv1d c1, c2;
    nn::BatchNorm1d bn1, bn2;
  };
  struct Stage {
    nn::Conv1d down;
    nn::BatchNorm1d bn;
    std::vector<Block> blocks;
  };
  std::vector<Stage> stages;
  int total_stride = 8;
  int out_channels = 0;

  void init(nn::ParamStore &ps, const std::string &name, const ModelConfig &cfg,
            RandomStream &rng);
  Node *forward(Tape &t, Node *x, bool train);
};

// One SAP layer plus two fully-connected layers.
struct Encoder {
  nn::SelfAttentivePooling sap;
  nn::Linear fc1, fc2;
  void init(nn::ParamStore &ps, const std::string &name, Eigen::Index in_dim,
            Eigen::Index out_dim, RandomStream &rng);
  Node *forward(Tape &t, Node *frames) const;  // T' x D -> 1 x out_dim
};

// Three fully-connected layers, then nine transposed convolutions with batch
// normalization, ending at crop_frames x n_mels.
struct Decoder {
  nn::Linear fc1, fc2, fc3;
  std::vector<nn::ConvTranspose1d> deconvs;
  std::vector<nn::BatchNorm1d> bns;
  int seed_len = 3, seed_ch = 32;
  long out_frames = 384;
  void init(nn::ParamStore &ps, const std::string &name, const ModelConfig &cfg,
            RandomStream &rng);
  Node *forward(Tape &t, Node *fused, bool train);  // 1 x (d_id+d_dom)
};

struct Discriminator {
  nn::Linear fc1, fc2;
  void init(nn::ParamStore &ps, const std::string &name, Eigen::Index in_dim,
            RandomStream &rng);
  Node *forward(Tape &t, Node *v) const;  // B x d -> B x 1 probability
};

// MINE statistics network: concat(f_id, f_dom) -> 2 hidden layers -> scalar.
struct MineNet {
  nn::Linear fc1, fc2, fc3;
  void init(nn::ParamStore &ps, const std::string &name, Eigen::Index in_dim,
            RandomStream &rng);
  Node *forward(Tape &t, Node *pairs) const;  // B x (d_id+d_dom) -> B x 1
};

class DeaanModel {
 public:
  DeaanModel(const ModelConfig &cfg, TrainMode mode, uint64_t seed);

  const ModelConfig &config() const { return cfg_; }
  TrainMode mode() const { return mode_; }
  nn::ParamStore &params() { return store_; }

  Node *backbone_forward(Tape &t, const Matrix &chunk, bool train);
  Node *encode(Tape &t, Node *frames, EncoderKind which) const;
  Node *decode(Tape &t, Node *f_id, Node *f_dom, bool train);
  Node *classify_source(Tape &t, Node *emb) const;  // B x d_id -> B x I probs
  Node *classify_target(Tape &t, Node *emb) const;
  Node *discriminate(Tape &t, Node *v, DiscHead head) const;  // B x d -> B x 1
  Node *mine_stat(Tape &t, Node *pairs) const;

  // Convenience: full-utterance embedding in eval mode (f_id, or the pooled
  // baseline embedding for baseline-mode models). Wrap-pads inputs shorter
  // than the backbone minimum.
  Vector extract_embedding(const Matrix &feats);

  std::vector<ad::Param *> adversarial_params();  // D_adv group
  std::vector<ad::Param *> main_params();         // everything else
  std::vector<ad::Param *> all_params() { return store_.all(); }
  std::vector<std::pair<std::string, Vector *>> buffers();

  bool has_component(const std::string &prefix);
  // Drops and re-creates the source/target classifier heads (fine-tuning).
  void reinit_classifier_heads(int num_speakers, uint64_t seed);

  void save_checkpoint(const std::filesystem::path &path, long epoch,
                       const std::string &rng_state) const;
  struct Loaded {
    std::unique_ptr<DeaanModel> model;
    long epoch = 0;
    std::string rng_state;
  };
  static Loaded load_checkpoint(const std::filesystem::path &path);

 private:
  ModelConfig cfg_;
  TrainMode mode_;
  nn::ParamStore store_;
  Backbone backbone_;
  Encoder e_id_, e_ds_, e_dt_;
  Decoder decoder_;
  nn::Linear c_s_, c_t_;
  Discriminator d_dom_, d_adv_;
  MineNet mine_;
  bool has_adaptation_ = false;  // E_ds/E_dt/R/D_dom/D_adv/MINE/C_t present

  void build(uint64_t seed);
  friend struct CheckpointCodec;
};

}  // namespace deaan::model

#endif  // DEAAN_MODEL_HPP_
