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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "deaan/backend.hpp"
#include "deaan/cli.hpp"
#include "deaan/common.hpp"

using namespace deaan;
namespace fs = std::filesystem;

namespace {

int run(const std::vector<std::string> &args) {
  std::vector<const char *> argv;
  argv.push_back("deaan");
  for (const std::string &a : args) argv.push_back(a.c_str());
  return cli::dispatch(static_cast<int>(argv.size()), argv.data());
}

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() /
                 ("deaan_cli_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("flat dotted-key configuration") {
  fs::path cfg_path = work_dir() / "cfg_test.cfg";
  {
    std::ofstream out(cfg_path);
    out << "# comment line\n"
        << "a.x = 3\n"
        << "a.y = hello world\n"
        << "b.rate = 0.25\n";
  }
  SUBCASE("file values, fallbacks, and override precedence") {
    cli::Config c = cli::Config::load(cfg_path, {"a.x=7", "c.z=new"});
    CHECK(c.integer("a.x", 0) == 7);  // command line wins
    CHECK(c.str("a.y", "") == "hello world");
    CHECK(c.real("b.rate", 0) == 0.25);
    CHECK(c.str("c.z", "") == "new");
    CHECK(c.integer("missing.key", 42) == 42);
    CHECK_THROWS_AS(c.require("missing.key"), ConfigError);
  }
  SUBCASE("malformed numbers are config errors") {
    cli::Config c = cli::Config::load(cfg_path, {"a.y=not_a_number"});
    CHECK_THROWS_AS(c.integer("a.y", 0), ConfigError);
    CHECK_THROWS_AS(c.real("a.y", 0), ConfigError);
  }
  SUBCASE("unknown keys are rejected with the valid set listed") {
    cli::Config c = cli::Config::load(cfg_path, {});
    try {
      c.restrict_keys({"a.x", "a.y"});
      FAIL("expected ConfigError");
    } catch (const ConfigError &e) {
      std::string msg = e.what();
      CHECK(msg.find("b.rate") != std::string::npos);  // the offender
      CHECK(msg.find("a.x") != std::string::npos);     // a valid key listed
    }
  }
}

TEST_CASE("top-level dispatch exit codes") {
  CHECK(run({"--help"}) == 0);
  CHECK(run({"no_such_command"}) == 1);
  CHECK(run({"synth"}) == 1);  // missing required synth.out_dir
  CHECK(run({"metrics", "metrics.trials=/nonexistent/t.tsv",
             "metrics.scores=/nonexistent/s.tsv"}) == 2);
}

TEST_CASE("unknown configuration keys fail with exit code 1") {
  CHECK(run({"synth", "synth.out_dir=" + (work_dir() / "x").string(),
             "synth.bogus_key=1"}) == 1);
}

TEST_CASE("full pipeline through the command line") {
  fs::path d = work_dir();
  fs::path corpus_dir = d / "corpus";

  REQUIRE(run({"synth", "synth.out_dir=" + corpus_dir.string(),
               "synth.num_speakers_source=4", "synth.num_speakers_target=4",
               "synth.utts_per_speaker=6", "synth.frames_per_utt=384",
               "synth.n_mels=16", "synth.seed=3"}) == 0);
  REQUIRE(fs::exists(corpus_dir / "manifest_source.tsv"));
  REQUIRE(fs::exists(corpus_dir / "manifest_target.tsv"));

  fs::path train_dir = d / "train_deaan";
  REQUIRE(run({"train", "train.mode=deaan",
               "train.source_manifest=" +
                   (corpus_dir / "manifest_source.tsv").string(),
               "train.target_manifest=" +
                   (corpus_dir / "manifest_target.tsv").string(),
               "train.out_dir=" + train_dir.string(), "train.batch_size=4",
               "train.epochs=1", "train.seed=3", "model.n_mels=16",
               "model.d_id=8", "model.d_dom=6", "model.crop_frames=128"}) ==
          0);
  fs::path ckpt = train_dir / "checkpoint_final.ckpt";
  REQUIRE(fs::exists(ckpt));
  REQUIRE(fs::exists(train_dir / "train_log.jsonl"));

  fs::path emb = d / "emb_all";
  std::string manifests = (corpus_dir / "manifest_source.tsv").string() + "," +
                          (corpus_dir / "manifest_target.tsv").string();
  REQUIRE(run({"extract", "extract.checkpoint=" + ckpt.string(),
               "extract.manifest=" + manifests,
               "extract.out_prefix=" + emb.string()}) == 0);

  SUBCASE("extraction covers every manifest row and reruns identically") {
    backend::EmbeddingSet e = backend::read_embedding_set(emb);
    CHECK(e.rows.rows() == 48);  // 24 utterances per domain
    CHECK(e.rows.cols() == 8);
    fs::path emb2 = d / "emb_again";
    REQUIRE(run({"extract", "extract.checkpoint=" + ckpt.string(),
                 "extract.manifest=" + manifests,
                 "extract.out_prefix=" + emb2.string()}) == 0);
    CHECK(slurp(emb.string() + ".fm") == slurp(emb2.string() + ".fm"));
    CHECK(slurp(emb.string() + ".tsv") == slurp(emb2.string() + ".tsv"));
  }

  SUBCASE("scoring, metrics, and probes complete the evaluation") {
    fs::path trials = d / "trials.tsv", scores = d / "scores.tsv";
    REQUIRE(run({"score", "score.method=cosine",
                 "score.embeddings=" + emb.string(),
                 "score.trials=" + trials.string(),
                 "score.manifest=" +
                     (corpus_dir / "manifest_target.tsv").string(),
                 "score.n_target=20", "score.n_nontarget=20",
                 "score.trial_seed=3", "score.out=" + scores.string()}) == 0);
    REQUIRE(fs::exists(trials));
    REQUIRE(fs::exists(scores));

    fs::path mjson = d / "metrics.json";
    REQUIRE(run({"metrics", "metrics.trials=" + trials.string(),
                 "metrics.scores=" + scores.string(),
                 "metrics.out=" + mjson.string()}) == 0);
    std::string j = slurp(mjson);
    CHECK(j.find("\"eer\"") != std::string::npos);
    CHECK(j.find("\"min_dcf\"") != std::string::npos);

    fs::path probe_out = d / "probe.json";
    REQUIRE(run({"probe", "probe.embeddings=" + emb.string(),
                 "probe.label=domain", "probe.seed=3",
                 "probe.out=" + probe_out.string()}) == 0);
    CHECK(slurp(probe_out).find("\"accuracy\"") != std::string::npos);
  }

  SUBCASE("backend fitting and ratio scoring run end to end") {
    fs::path bk = d / "backend.bk";
    REQUIRE(run({"backend-fit", "backend.embeddings=" + emb.string(),
                 "backend.dim=3", "backend.out=" + bk.string()}) == 0);
    REQUIRE(fs::exists(bk));
    fs::path trials = d / "trials_plda.tsv", scores = d / "scores_plda.tsv";
    REQUIRE(run({"score", "score.method=plda",
                 "score.embeddings=" + emb.string(),
                 "score.backend=" + bk.string(),
                 "score.trials=" + trials.string(),
                 "score.manifest=" +
                     (corpus_dir / "manifest_target.tsv").string(),
                 "score.n_target=15", "score.n_nontarget=15",
                 "score.trial_seed=5", "score.out=" + scores.string()}) == 0);
    CHECK(fs::exists(scores));
  }
}

TEST_CASE("mutual-information benchmark emits a CSV table") {
  fs::path out = work_dir() / "mi.csv";
  REQUIRE(run({"mi-bench", "mi.rhos=0,0.9", "mi.samples=2000", "mi.steps=25",
               "mi.seed=1", "mi.out=" + out.string()}) == 0);
  std::string csv = slurp(out);
  CHECK(csv.rfind("rho,closed_form,dv,jsd", 0) == 0);
  // Header plus one line per requested correlation.
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
