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

#include "deaan/model.hpp"

#include <fstream>
#include <json.hpp>

#include "deaan/corpus.hpp"
#include "deaan/io.hpp"

namespace deaan::model {

using nlohmann::json;

std::string scale_name(BackboneScale s) {
  return s == BackboneScale::kToy ? "toy" : "resnet34";
}
BackboneScale parse_scale(const std::string &s) {
  if (s == "toy") return BackboneScale::kToy;
  if (s == "resnet34") return BackboneScale::kResnet34;
  throw ConfigError("unknown backbone scale: " + s);
}
std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kBaseline: return "baseline";
    case TrainMode::kFinetune: return "finetune";
    default: return "deaan";
  }
}
TrainMode parse_mode(const std::string &s) {
  if (s == "baseline") return TrainMode::kBaseline;
  if (s == "finetune") return TrainMode::kFinetune;
  if (s == "deaan") return TrainMode::kDeaan;
  throw ConfigError("unknown train mode: " + s);
}

void ModelConfig::validate() const {
  if (n_mels <= 0 || d_id <= 0 || d_dom <= 0)
    throw ConfigError("model dims must be > 0");
  if (grl_lambda < 0) throw ConfigError("grl_lambda must be >= 0");
  if (crop_frames % 128 != 0 || crop_frames <= 0)
    throw ConfigError("crop_frames must be a positive multiple of 128");
}

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

void Backbone::init(nn::ParamStore &ps, const std::string &name,
                    const ModelConfig &cfg, RandomStream &rng) {
  std::vector<int> channels, blocks;
  if (cfg.backbone_scale == BackboneScale::kToy) {
    channels = {8, 16, 32, 64};
    blocks = {1, 1, 1, 1};
  } else {
    channels = {64, 128, 256, 512};
    blocks = {3, 4, 6, 3};
  }
  std::vector<int> strides = {1, 2, 2, 2};
  total_stride = 8;
  out_channels = channels.back();
  int cin = cfg.n_mels;
  stages.resize(channels.size());
  for (size_t s = 0; s < channels.size(); ++s) {
    std::string sn = name + ".stage" + std::to_string(s);
    Stage &st = stages[s];
    st.down.init(ps, sn + ".down", cin, channels[s], 3, strides[s], 1, rng);
    st.bn.init(ps, sn + ".down_bn", channels[s]);
    st.blocks.resize(static_cast<size_t>(blocks[s]));
    for (size_t b = 0; b < st.blocks.size(); ++b) {
      std::string bn_name = sn + ".block" + std::to_string(b);
      Block &blk = st.blocks[b];
      blk.c1.init(ps, bn_name + ".c1", channels[s], channels[s], 3, 1, 1, rng);
      blk.bn1.init(ps, bn_name + ".bn1", channels[s]);
      blk.c2.init(ps, bn_name + ".c2", channels[s], channels[s], 3, 1, 1, rng);
      blk.bn2.init(ps, bn_name + ".bn2", channels[s]);
    }
    cin = channels[s];
  }
}

Node *Backbone::forward(Tape &t, Node *x, bool train) {
  if (x->val.rows() < total_stride)
    throw ShapeError("backbone requires at least " +
                     std::to_string(total_stride) + " input frames, got " +
                     std::to_string(x->val.rows()));
  Node *h = x;
  for (Stage &st : stages) {
    h = ad::relu(t, st.bn.forward(t, st.down.forward(t, h), train));
    for (Block &blk : st.blocks) {
      Node *y = ad::relu(t, blk.bn1.forward(t, blk.c1.forward(t, h), train));
      y = blk.bn2.forward(t, blk.c2.forward(t, y), train);
      h = ad::relu(t, ad::add(t, h, y));
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Encoder / Decoder / heads
// ---------------------------------------------------------------------------

void Encoder::init(nn::ParamStore &ps, const std::string &name,
                   Eigen::Index in_dim, Eigen::Index out_dim, RandomStream &rng) {
  sap.init(ps, name + ".sap", in_dim, 64, rng);
  fc1.init(ps, name + ".fc1", in_dim, 128, rng);
  fc2.init(ps, name + ".fc2", 128, out_dim, rng);
}

Node *Encoder::forward(Tape &t, Node *frames) const {
  Node *pooled = sap.forward(t, frames);
  return fc2.forward(t, ad::relu(t, fc1.forward(t, pooled)));
}

void Decoder::init(nn::ParamStore &ps, const std::string &name,
                   const ModelConfig &cfg, RandomStream &rng) {
  out_frames = cfg.crop_frames;
  seed_len = cfg.crop_frames / 128;
  seed_ch = 32;
  Eigen::Index fused = cfg.d_id + cfg.d_dom;
  fc1.init(ps, name + ".fc1", fused, 256, rng);
  fc2.init(ps, name + ".fc2", 256, 256, rng);
  fc3.init(ps, name + ".fc3", 256, seed_len * seed_ch, rng);
  // Seven stride-2 upsamplers (x128 in length) and two refiners at stride 1.
  struct Spec { int cin, cout, k, stride; };
  std::vector<Spec> specs = {
      {32, 32, 4, 2}, {32, 32, 4, 2}, {32, 16, 4, 2}, {16, 16, 4, 2},
      {16, 16, 4, 2}, {16, 8, 4, 2},  {8, 8, 4, 2},   {8, 8, 3, 1},
      {8, cfg.n_mels, 3, 1}};
  deconvs.resize(specs.size());
  bns.resize(specs.size() - 1);
  for (size_t i = 0; i < specs.size(); ++i) {
    std::string ln = name + ".deconv" + std::to_string(i);
    deconvs[i].init(ps, ln, specs[i].cin, specs[i].cout, specs[i].k,
                    specs[i].stride, 1, rng);
    if (i + 1 < specs.size()) bns[i].init(ps, ln + ".bn", specs[i].cout);
  }
}

Node *Decoder::forward(Tape &t, Node *fused, bool train) {
  Node *h = ad::relu(t, fc1.forward(t, fused));
  h = ad::relu(t, fc2.forward(t, h));
  h = fc3.forward(t, h);
  h = ad::reshape(t, h, seed_len, seed_ch);
  for (size_t i = 0; i < deconvs.size(); ++i) {
    h = deconvs[i].forward(t, h);
    if (i + 1 < deconvs.size()) h = ad::relu(t, bns[i].forward(t, h, train));
  }
  return h;
}

void Discriminator::init(nn::ParamStore &ps, const std::string &name,
                         Eigen::Index in_dim, RandomStream &rng) {
  fc1.init(ps, name + ".fc1", in_dim, 64, rng);
  fc2.init(ps, name + ".fc2", 64, 1, rng);
}

Node *Discriminator::forward(Tape &t, Node *v) const {
  return ad::sigmoid_clamped(t, fc2.forward(t, ad::relu(t, fc1.forward(t, v))));
}

void MineNet::init(nn::ParamStore &ps, const std::string &name,
                   Eigen::Index in_dim, RandomStream &rng) {
  fc1.init(ps, name + ".fc1", in_dim, 128, rng);
  fc2.init(ps, name + ".fc2", 128, 128, rng);
  fc3.init(ps, name + ".fc3", 128, 1, rng);
}

Node *MineNet::forward(Tape &t, Node *pairs) const {
  Node *h = ad::relu(t, fc1.forward(t, pairs));
  h = ad::relu(t, fc2.forward(t, h));
  return fc3.forward(t, h);
}

// ---------------------------------------------------------------------------
// DeaanModel
// ---------------------------------------------------------------------------

DeaanModel::DeaanModel(const ModelConfig &cfg, TrainMode mode, uint64_t seed)
    : cfg_(cfg), mode_(mode) {
  cfg_.validate();
  build(seed);
}

void DeaanModel::build(uint64_t seed) {
  has_adaptation_ = mode_ == TrainMode::kDeaan;
  RandomStream rng(derive_seed(seed, "model-init"));
  backbone_.init(store_, "G", cfg_, rng);
  e_id_.init(store_, "Eid", backbone_.out_channels, cfg_.d_id, rng);
  if (cfg_.num_speakers_source > 0)
    c_s_.init(store_, "Cs", cfg_.d_id, cfg_.num_speakers_source, rng);
  if (has_adaptation_) {
    e_ds_.init(store_, "Eds", backbone_.out_channels, cfg_.d_dom, rng);
    e_dt_.init(store_, "Edt", backbone_.out_channels, cfg_.d_dom, rng);
    decoder_.init(store_, "R", cfg_, rng);
    if (cfg_.num_speakers_target > 0)
      c_t_.init(store_, "Ct", cfg_.d_id, cfg_.num_speakers_target, rng);
    d_dom_.init(store_, "Ddom", cfg_.d_dom, rng);
    d_adv_.init(store_, "Dadv", cfg_.d_id, rng);
    mine_.init(store_, "T", cfg_.d_id + cfg_.d_dom, rng);
  }
}

Node *DeaanModel::backbone_forward(Tape &t, const Matrix &chunk, bool train) {
  if (chunk.cols() != cfg_.n_mels)
    throw ShapeError("input has " + std::to_string(chunk.cols()) +
                     " mel bins, model expects " + std::to_string(cfg_.n_mels));
  if (!chunk.allFinite()) throw NumericError("non-finite input chunk");
  return backbone_.forward(t, t.leaf(chunk), train);
}

Node *DeaanModel::encode(Tape &t, Node *frames, EncoderKind which) const {
  switch (which) {
    case EncoderKind::kId: return e_id_.forward(t, frames);
    case EncoderKind::kDomSource:
      if (!has_adaptation_) throw ConfigError("model has no E_ds");
      return e_ds_.forward(t, frames);
    default:
      if (!has_adaptation_) throw ConfigError("model has no E_dt");
      return e_dt_.forward(t, frames);
  }
}

Node *DeaanModel::decode(Tape &t, Node *f_id, Node *f_dom, bool train) {
  if (!has_adaptation_) throw ConfigError("model has no decoder");
  if (f_id->val.cols() != cfg_.d_id || f_dom->val.cols() != cfg_.d_dom)
    throw ShapeError("decode: embedding dims do not match config");
  return decoder_.forward(t, ad::concat_cols(t, f_id, f_dom), train);
}

Node *DeaanModel::classify_source(Tape &t, Node *emb) const {
  return ad::softmax_rows(t, c_s_.forward(t, emb));
}

Node *DeaanModel::classify_target(Tape &t, Node *emb) const {
  if (!has_adaptation_) throw ConfigError("model has no C_t");
  return ad::softmax_rows(t, c_t_.forward(t, emb));
}

Node *DeaanModel::discriminate(Tape &t, Node *v, DiscHead head) const {
  if (!has_adaptation_) throw ConfigError("model has no discriminators");
  if (head == DiscHead::kDom) {
    if (v->val.cols() != cfg_.d_dom)
      throw ShapeError("D_dom expects dim " + std::to_string(cfg_.d_dom));
    return d_dom_.forward(t, v);
  }
  if (v->val.cols() != cfg_.d_id)
    throw ShapeError("D_adv expects dim " + std::to_string(cfg_.d_id));
  return d_adv_.forward(t, v);
}

Node *DeaanModel::mine_stat(Tape &t, Node *pairs) const {
  if (!has_adaptation_) throw ConfigError("model has no MINE network");
  return mine_.forward(t, pairs);
}

Vector DeaanModel::extract_embedding(const Matrix &feats) {
  Matrix input = feats;
  if (input.rows() < backbone_.total_stride)
    input = corpus::wrap_pad(input, backbone_.total_stride);
  Tape t;
  Node *frames = backbone_forward(t, input, /*train=*/false);
  Node *emb = encode(t, frames, EncoderKind::kId);
  return emb->val.row(0).transpose();
}

std::vector<ad::Param *> DeaanModel::adversarial_params() {
  return store_.with_prefix("Dadv.");
}

std::vector<ad::Param *> DeaanModel::main_params() {
  std::vector<ad::Param *> out;
  for (ad::Param *p : store_.all())
    if (p->name.rfind("Dadv.", 0) != 0) out.push_back(p);
  return out;
}

bool DeaanModel::has_component(const std::string &prefix) {
  return !store_.with_prefix(prefix).empty();
}

void DeaanModel::reinit_classifier_heads(int num_speakers, uint64_t seed) {
  if (num_speakers <= 0) throw ConfigError("num_speakers must be > 0");
  RandomStream rng(derive_seed(seed, "head-reinit"));
  cfg_.num_speakers_source = num_speakers;
  ad::Param *w = store_.find("Cs.w"), *b = store_.find("Cs.b");
  if (w == nullptr) throw ConfigError("model has no classifier head");
  w->value = Matrix::Zero(cfg_.d_id, num_speakers);
  b->value = Matrix::Zero(1, num_speakers);
  w->init_slots();
  b->init_slots();
  nn::init_uniform_fan_in(*w, cfg_.d_id, rng);
  nn::init_uniform_fan_in(*b, cfg_.d_id, rng);
}

std::vector<std::pair<std::string, Vector *>> DeaanModel::buffers() {
  std::vector<std::pair<std::string, Vector *>> out;
  auto add_bn = [&out](const std::string &n, nn::BatchNorm1d &bn) {
    out.emplace_back(n + ".running_mean", &bn.running_mean);
    out.emplace_back(n + ".running_var", &bn.running_var);
  };
  for (size_t s = 0; s < backbone_.stages.size(); ++s) {
    auto &st = backbone_.stages[s];
    std::string sn = "G.stage" + std::to_string(s);
    add_bn(sn + ".down_bn", st.bn);
    for (size_t b = 0; b < st.blocks.size(); ++b) {
      std::string bn_name = sn + ".block" + std::to_string(b);
      add_bn(bn_name + ".bn1", st.blocks[b].bn1);
      add_bn(bn_name + ".bn2", st.blocks[b].bn2);
    }
  }
  if (has_adaptation_)
    for (size_t i = 0; i < decoder_.bns.size(); ++i)
      add_bn("R.deconv" + std::to_string(i) + ".bn", decoder_.bns[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container: "DEAANCK1" magic, u64 JSON header length, JSON header
// (config + parameter/buffer table), then float64 little-endian payload.
// ---------------------------------------------------------------------------

static json config_to_json(const ModelConfig &c) {
  return json{{"backbone_scale", scale_name(c.backbone_scale)},
              {"n_mels", c.n_mels},
              {"d_id", c.d_id},
              {"d_dom", c.d_dom},
              {"num_speakers_source", c.num_speakers_source},
              {"num_speakers_target", c.num_speakers_target},
              {"grl_lambda", c.grl_lambda},
              {"crop_frames", c.crop_frames}};
}

static ModelConfig config_from_json(const json &j) {
  ModelConfig c;
  c.backbone_scale = parse_scale(j.at("backbone_scale").get<std::string>());
  c.n_mels = j.at("n_mels").get<int>();
  c.d_id = j.at("d_id").get<int>();
  c.d_dom = j.at("d_dom").get<int>();
  c.num_speakers_source = j.at("num_speakers_source").get<int>();
  c.num_speakers_target = j.at("num_speakers_target").get<int>();
  c.grl_lambda = j.at("grl_lambda").get<double>();
  c.crop_frames = j.at("crop_frames").get<int>();
  return c;
}

void DeaanModel::save_checkpoint(const std::filesystem::path &path, long epoch,
                                 const std::string &rng_state) const {
  auto *self = const_cast<DeaanModel *>(this);
  json header;
  header["format"] = "DEAANCK1";
  header["mode"] = mode_name(mode_);
  header["epoch"] = epoch;
  header["rng_state"] = rng_state;
  header["config"] = config_to_json(cfg_);
  json params = json::array();
  for (ad::Param *p : self->store_.all())
    params.push_back(json{{"name", p->name},
                          {"rows", p->value.rows()},
                          {"cols", p->value.cols()}});
  header["params"] = params;
  json buffers_j = json::array();
  for (auto &[name, vec] : self->buffers())
    buffers_j.push_back(json{{"name", name}, {"size", vec->size()}});
  header["buffers"] = buffers_j;

  std::string hs = header.dump();
  write_atomic(path, [&](std::ostream &os) {
    os.write("DEAANCK1", 8);
    uint64_t len = hs.size();
    os.write(reinterpret_cast<const char *>(&len), 8);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (ad::Param *p : self->store_.all())
      for (Eigen::Index r = 0; r < p->value.rows(); ++r)
        os.write(reinterpret_cast<const char *>(p->value.row(r).eval().data()),
                 static_cast<std::streamsize>(sizeof(double)) * p->value.cols());
    for (auto &[name, vec] : self->buffers())
      os.write(reinterpret_cast<const char *>(vec->data()),
               static_cast<std::streamsize>(sizeof(double)) * vec->size());
  });
}

DeaanModel::Loaded DeaanModel::load_checkpoint(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != "DEAANCK1")
    throw ConfigError("not a checkpoint file: " + path.string());
  uint64_t len = 0;
  is.read(reinterpret_cast<char *>(&len), 8);
  std::string hs(len, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(len));
  if (!is) throw ConfigError("truncated checkpoint header");
  json header = json::parse(hs);

  Loaded out;
  ModelConfig cfg = config_from_json(header.at("config"));
  TrainMode mode = parse_mode(header.at("mode").get<std::string>());
  out.model = std::make_unique<DeaanModel>(cfg, mode, /*seed=*/0);
  out.epoch = header.at("epoch").get<long>();
  out.rng_state = header.at("rng_state").get<std::string>();

  // Verify the stored table against the freshly built model; report every
  // mismatched parameter by name.
  std::string diff;
  for (const auto &pj : header.at("params")) {
    std::string name = pj.at("name").get<std::string>();
    ad::Param *p = out.model->store_.find(name);
    if (p == nullptr) {
      diff += "  missing in model: " + name + "\n";
      continue;
    }
    if (p->value.rows() != pj.at("rows").get<Eigen::Index>() ||
        p->value.cols() != pj.at("cols").get<Eigen::Index>())
      diff += "  dim mismatch: " + name + " checkpoint " +
              std::to_string(pj.at("rows").get<long>()) + "x" +
              std::to_string(pj.at("cols").get<long>()) + " vs model " +
              std::to_string(p->value.rows()) + "x" +
              std::to_string(p->value.cols()) + "\n";
  }
  if (header.at("params").size() != out.model->store_.count())
    diff += "  parameter count mismatch\n";
  if (!diff.empty())
    throw ConfigError("incompatible checkpoint " + path.string() + ":\n" + diff);

  for (const auto &pj : header.at("params")) {
    ad::Param *p = out.model->store_.find(pj.at("name").get<std::string>());
    std::vector<double> row(static_cast<size_t>(p->value.cols()));
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      is.read(reinterpret_cast<char *>(row.data()),
              static_cast<std::streamsize>(sizeof(double)) * p->value.cols());
      for (Eigen::Index c = 0; c < p->value.cols(); ++c)
        p->value(r, c) = row[static_cast<size_t>(c)];
    }
  }
  auto bufs = out.model->buffers();
  size_t bi = 0;
  for (const auto &bj : header.at("buffers")) {
    if (bi >= bufs.size() || bufs[bi].first != bj.at("name").get<std::string>())
      throw ConfigError("checkpoint buffer table mismatch at " +
                        bj.at("name").get<std::string>());
    Vector &v = *bufs[bi].second;
    if (v.size() != bj.at("size").get<Eigen::Index>())
      throw ConfigError("checkpoint buffer size mismatch: " + bufs[bi].first);
    is.read(reinterpret_cast<char *>(v.data()),
            static_cast<std::streamsize>(sizeof(double)) * v.size());
    ++bi;
  }
  if (!is) throw ConfigError("truncated checkpoint payload");
  return out;
}

}  // namespace deaan::model
