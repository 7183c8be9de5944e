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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "deaan/trainer.hpp"

using namespace deaan;
namespace fs = std::filesystem;

namespace {

struct MicroCorpus {
  fs::path dir;
  corpus::Manifest source, target;

  MicroCorpus() {
    dir = fs::temp_directory_path() /
          ("deaan_trainer_corpus_" + std::to_string(::getpid()));
    if (!fs::exists(dir / "manifest_source.tsv")) {
      corpus::SynthConfig sc;
      sc.num_speakers_source = 4;
      sc.num_speakers_target = 4;
      sc.utts_per_speaker = 6;
      sc.frames_per_utt = 384;
      sc.n_mels = 16;
      sc.seed = 77;
      corpus::generate_corpus(sc, dir);
    }
    source = corpus::read_manifest(dir / "manifest_source.tsv");
    target = corpus::read_manifest(dir / "manifest_target.tsv");
  }
};

MicroCorpus &micro() {
  static MicroCorpus c;
  return c;
}

trainer::TrainConfig micro_cfg(model::TrainMode mode) {
  trainer::TrainConfig cfg;
  cfg.mode = mode;
  cfg.model.n_mels = 16;
  cfg.model.d_id = 8;
  cfg.model.d_dom = 6;
  cfg.model.crop_frames = 128;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.seed = 5;
  cfg.crop_min = 96;
  cfg.crop_max = 160;
  return cfg;
}

fs::path fresh_out(const std::string &tag) {
  fs::path p = fs::temp_directory_path() /
               ("deaan_trainer_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::vector<double> log_totals(const fs::path &log_path) {
  std::ifstream in(log_path);
  std::vector<double> totals;
  std::string line;
  while (std::getline(in, line)) {
    size_t pos = line.find("\"total\":");
    REQUIRE(pos != std::string::npos);
    totals.push_back(std::stod(line.substr(pos + 8)));
  }
  return totals;
}

}  // namespace

TEST_CASE("learning-rate schedule decays by 0.95 every five epochs") {
  CHECK(trainer::lr_schedule(0, 1e-4) == 1e-4);
  CHECK(trainer::lr_schedule(4, 1e-4) == 1e-4);
  CHECK(trainer::lr_schedule(5, 1e-4) == 9.5e-5);  // exact product contract
  CHECK(trainer::lr_schedule(10, 1e-4) == 1e-4 * 0.95 * 0.95);
  CHECK_THROWS_AS(trainer::lr_schedule(-1, 1e-4), ConfigError);
}

TEST_CASE("train config validation") {
  trainer::TrainConfig cfg = micro_cfg(model::TrainMode::kBaseline);
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("batch of one cannot support the marginal shuffle") {
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("momentum must stay below one") {
    cfg.adv_momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("crop bounds must be ordered") {
    cfg.crop_min = 200;
    cfg.crop_max = 100;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("learning rates must be positive") {
    cfg.main_lr = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("baseline training reduces classifier loss on a micro corpus") {
  trainer::TrainConfig cfg = micro_cfg(model::TrainMode::kBaseline);
  cfg.epochs = 50;
  cfg.main_lr = 2e-3;
  fs::path out = fresh_out("baseline");
  trainer::Trainer tr(cfg);
  trainer::TrainResult res = tr.run(micro().source, {}, out);
  CHECK(res.steps == 50 * (24 / 4));
  std::vector<double> totals = log_totals(res.log_path);
  REQUIRE(static_cast<long>(totals.size()) == res.steps);
  double head = 0, tail = 0;
  for (int i = 0; i < 6; ++i) {
    head += totals[static_cast<size_t>(i)] / 6;
    tail += totals[totals.size() - 1 - static_cast<size_t>(i)] / 6;
  }
  CHECK(tail < 0.9 * head);  // at least a 10% drop first epoch to last
  CHECK(fs::exists(res.final_checkpoint));
  CHECK(fs::exists(out / "checkpoint_epoch_0.ckpt"));

  SUBCASE("baseline checkpoints carry no adaptation components") {
    auto loaded = model::DeaanModel::load_checkpoint(res.final_checkpoint);
    CHECK_FALSE(loaded.model->has_component("Dadv."));
    CHECK_FALSE(loaded.model->has_component("T."));
    CHECK_FALSE(loaded.model->has_component("Eds."));
    CHECK_FALSE(loaded.model->has_component("R."));
    CHECK(loaded.model->has_component("Eid."));
  }
}

TEST_CASE("adaptation training touches every component and is deterministic") {
  trainer::TrainConfig cfg = micro_cfg(model::TrainMode::kDeaan);
  cfg.epochs = 1;
  fs::path out_a = fresh_out("deaan_a"), out_b = fresh_out("deaan_b");
  trainer::Trainer ta(cfg), tb(cfg);
  trainer::TrainResult ra = ta.run(micro().source, micro().target, out_a);
  trainer::TrainResult rb = tb.run(micro().source, micro().target, out_b);

  SUBCASE("identical seeds give bit-identical parameters and logs") {
    auto pa = ta.model().all_params(), pb = tb.model().all_params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
      REQUIRE(pa[i]->name == pb[i]->name);
      CHECK((pa[i]->value - pb[i]->value).cwiseAbs().maxCoeff() == 0.0);
    }
    std::ifstream fa(ra.log_path), fb(rb.log_path);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().size() > 0);
  }

  SUBCASE("every component receives gradient in the joint objective") {
    // Nonzero first Adam/SGD moment means a nonzero gradient reached the
    // parameter at some step; a dead subgraph would leave it at zero.
    for (const char *prefix : {"G.", "Eid.", "Eds.", "Edt.", "Cs.", "Ct.",
                               "Ddom.", "Dadv.", "R.", "T."}) {
      auto group = ta.model().params().with_prefix(prefix);
      REQUIRE(!group.empty());
      double moment = 0;
      for (ad::Param *p : group) moment += p->m.cwiseAbs().sum();
      INFO("component ", prefix);
      CHECK(moment > 0);
    }
  }

  SUBCASE("loss report carries all five parts") {
    CHECK(ra.first_step.l_id > 0);
    CHECK(ra.first_step.l_dom > 0);
    CHECK(ra.first_step.l_r > 0);
    CHECK(ra.first_step.l_adv > 0);
    CHECK(std::isfinite(ra.first_step.l_mi));
    CHECK(std::isfinite(ra.last_step.total));
  }
}

TEST_CASE("adaptation mode requires a non-empty target manifest") {
  trainer::TrainConfig cfg = micro_cfg(model::TrainMode::kDeaan);
  trainer::Trainer tr(cfg);
  CHECK_THROWS_AS(tr.run(micro().source, {}, fresh_out("deaan_empty")),
                  DataError);
}

TEST_CASE("empty batches are rejected at the step level") {
  trainer::TrainConfig cfg = micro_cfg(model::TrainMode::kDeaan);
  cfg.epochs = 1;
  trainer::Trainer tr(cfg);
  tr.run(micro().source, micro().target, fresh_out("deaan_step"));
  trainer::Batch full, empty;
  full.crops.assign(4, Matrix::Zero(128, 16));
  full.labels.assign(4, 0);
  CHECK_THROWS_AS(tr.train_step(full, empty, 0, 0), DataError);
}

TEST_CASE("fine-tuning resumes a checkpoint with a fresh head") {
  trainer::TrainConfig base_cfg = micro_cfg(model::TrainMode::kBaseline);
  fs::path base_out = fresh_out("ft_base");
  trainer::Trainer base(base_cfg);
  trainer::TrainResult base_res = base.run(micro().source, {}, base_out);

  trainer::TrainConfig ft_cfg = micro_cfg(model::TrainMode::kFinetune);
  SUBCASE("missing initial checkpoint is a config error") {
    trainer::Trainer ft(ft_cfg);
    CHECK_THROWS_AS(ft.run(micro().target, {}, fresh_out("ft_none")),
                    ConfigError);
  }
  SUBCASE("resumed model keeps the backbone and swaps the classifier") {
    ad::Param *before;
    Matrix backbone_w;
    {
      auto loaded = model::DeaanModel::load_checkpoint(base_res.final_checkpoint);
      before = loaded.model->params().find("G.stage0.down.w");
      REQUIRE(before != nullptr);
      backbone_w = before->value;
    }
    trainer::Trainer ft(ft_cfg);
    trainer::TrainResult res = ft.run(micro().target, {}, fresh_out("ft_run"),
                                      base_res.final_checkpoint);
    CHECK(res.steps > 0);
    ad::Param *cs = ft.model().params().find("Cs.w");
    REQUIRE(cs != nullptr);
    CHECK(cs->value.cols() == micro().target.num_speakers());
    // Backbone was inherited (then updated): same shape, started from the
    // checkpoint rather than a fresh init.
    ad::Param *g = ft.model().params().find("G.stage0.down.w");
    REQUIRE(g != nullptr);
    CHECK(g->value.rows() == backbone_w.rows());
    CHECK(g->value.cols() == backbone_w.cols());
  }
}
