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

#include "deaan/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <unordered_map>

#include "deaan/backend.hpp"
#include "deaan/corpus.hpp"
#include "deaan/io.hpp"
#include "deaan/metrics.hpp"
#include "deaan/mi.hpp"
#include "deaan/model.hpp"
#include "deaan/trainer.hpp"

namespace deaan::cli {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string &s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::pair<std::string, std::string> split_kv(const std::string &line,
                                             const std::string &where) {
  size_t eq = line.find('=');
  if (eq == std::string::npos)
    throw ConfigError("expected key=value in " + where + ": '" + line + "'");
  std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
  if (k.empty()) throw ConfigError("empty key in " + where + ": '" + line + "'");
  return {k, v};
}

}  // namespace

Config Config::load(const fs::path &file,
                    const std::vector<std::string> &overrides) {
  Config c;
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot open config file: " + file.string());
    std::string line;
    while (std::getline(is, line)) {
      size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      auto [k, v] = split_kv(line, file.string());
      c.kv_[k] = v;
    }
  }
  for (const std::string &ov : overrides) {
    auto [k, v] = split_kv(ov, "override");
    c.kv_[k] = v;
  }
  return c;
}

std::string Config::str(const std::string &key, const std::string &fb) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fb : it->second;
}

std::string Config::require(const std::string &key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("missing required config key: " + key);
  return it->second;
}

long Config::integer(const std::string &key, long fb) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fb;
  try {
    size_t pos = 0;
    long v = std::stol(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception &) {
    throw ConfigError("config key " + key + " is not an integer: '" +
                      it->second + "'");
  }
}

double Config::real(const std::string &key, double fb) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fb;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception &) {
    throw ConfigError("config key " + key + " is not a number: '" + it->second +
                      "'");
  }
}

uint64_t Config::seed(const std::string &key, uint64_t fb) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fb;
  try {
    return std::stoull(it->second);
  } catch (const std::exception &) {
    throw ConfigError("config key " + key + " is not a seed: '" + it->second +
                      "'");
  }
}

void Config::restrict_keys(const std::vector<std::string> &valid) const {
  for (const auto &[k, v] : kv_) {
    if (std::find(valid.begin(), valid.end(), k) == valid.end()) {
      std::string msg = "unknown config key '" + k + "'; valid keys:";
      for (const auto &vk : valid) msg += " " + vk;
      throw ConfigError(msg);
    }
  }
}

// ---------------------------------------------------------------------------
// Subcommand implementations
// ---------------------------------------------------------------------------

namespace {

void emit(const json &result, const std::string &out_path) {
  std::string text = result.dump(2);
  if (!out_path.empty())
    write_atomic(out_path, [&](std::ostream &os) { os << text << '\n'; });
  std::cout << text << std::endl;
}

int run_synth(const Config &cfg) {
  cfg.restrict_keys({"synth.out_dir", "synth.num_speakers_source",
                     "synth.num_speakers_target", "synth.utts_per_speaker",
                     "synth.frames_per_utt", "synth.domain_shift",
                     "synth.noise_scale", "synth.seed", "synth.n_mels"});
  corpus::SynthConfig sc;
  fs::path out_dir = cfg.require("synth.out_dir");
  sc.num_speakers_source = static_cast<int>(
      cfg.integer("synth.num_speakers_source", sc.num_speakers_source));
  sc.num_speakers_target = static_cast<int>(
      cfg.integer("synth.num_speakers_target", sc.num_speakers_target));
  sc.utts_per_speaker =
      static_cast<int>(cfg.integer("synth.utts_per_speaker", sc.utts_per_speaker));
  sc.frames_per_utt =
      static_cast<int>(cfg.integer("synth.frames_per_utt", sc.frames_per_utt));
  sc.domain_shift = cfg.real("synth.domain_shift", sc.domain_shift);
  sc.noise_scale = cfg.real("synth.noise_scale", sc.noise_scale);
  sc.seed = cfg.seed("synth.seed", sc.seed);
  sc.n_mels = static_cast<int>(cfg.integer("synth.n_mels", sc.n_mels));
  corpus::CorpusSummary s = corpus::generate_corpus(sc, out_dir);
  emit(json{{"source_utts", s.source_utts},
            {"target_utts", s.target_utts},
            {"source_speakers", s.source_speakers},
            {"target_speakers", s.target_speakers},
            {"out_dir", out_dir.string()}},
       "");
  return 0;
}

int run_train(const Config &cfg) {
  cfg.restrict_keys(
      {"train.mode", "train.source_manifest", "train.target_manifest",
       "train.out_dir", "train.init_checkpoint", "train.batch_size",
       "train.epochs", "train.main_lr", "train.adv_lr", "train.adv_momentum",
       "train.grad_clip", "train.seed", "train.crop_min", "train.crop_max",
       "model.n_mels", "model.d_id", "model.d_dom", "model.grl_lambda",
       "model.crop_frames", "model.backbone_scale", "loss.lambda_dom",
       "loss.lambda_adv", "loss.lambda_r", "loss.lambda_mi"});
  trainer::TrainConfig tc;
  tc.mode = model::parse_mode(cfg.str("train.mode", "baseline"));
  tc.batch_size = static_cast<int>(cfg.integer("train.batch_size", tc.batch_size));
  tc.epochs = static_cast<int>(cfg.integer("train.epochs", tc.epochs));
  tc.main_lr = cfg.real("train.main_lr", tc.main_lr);
  tc.adv_lr = cfg.real("train.adv_lr", tc.adv_lr);
  tc.adv_momentum = cfg.real("train.adv_momentum", tc.adv_momentum);
  tc.grad_clip = cfg.real("train.grad_clip", tc.grad_clip);
  tc.seed = cfg.seed("train.seed", tc.seed);
  tc.crop_min = static_cast<int>(cfg.integer("train.crop_min", tc.crop_min));
  tc.crop_max = static_cast<int>(cfg.integer("train.crop_max", tc.crop_max));
  tc.model.n_mels = static_cast<int>(cfg.integer("model.n_mels", tc.model.n_mels));
  tc.model.d_id = static_cast<int>(cfg.integer("model.d_id", tc.model.d_id));
  tc.model.d_dom = static_cast<int>(cfg.integer("model.d_dom", tc.model.d_dom));
  tc.model.grl_lambda = cfg.real("model.grl_lambda", tc.model.grl_lambda);
  tc.model.crop_frames =
      static_cast<int>(cfg.integer("model.crop_frames", tc.model.crop_frames));
  tc.model.backbone_scale =
      model::parse_scale(cfg.str("model.backbone_scale", "toy"));
  tc.weights.lambda_dom = cfg.real("loss.lambda_dom", tc.weights.lambda_dom);
  tc.weights.lambda_adv = cfg.real("loss.lambda_adv", tc.weights.lambda_adv);
  tc.weights.lambda_r = cfg.real("loss.lambda_r", tc.weights.lambda_r);
  tc.weights.lambda_mi = cfg.real("loss.lambda_mi", tc.weights.lambda_mi);

  corpus::Manifest source = corpus::read_manifest(cfg.require("train.source_manifest"));
  corpus::Manifest target;
  if (cfg.has("train.target_manifest"))
    target = corpus::read_manifest(cfg.require("train.target_manifest"));
  else if (tc.mode == model::TrainMode::kDeaan)
    throw ConfigError("deaan mode requires train.target_manifest");
  fs::path out_dir = cfg.require("train.out_dir");
  fs::path init = cfg.str("train.init_checkpoint", "");

  trainer::Trainer tr(tc);
  trainer::TrainResult res = tr.run(source, target, out_dir, init);
  emit(json{{"final_checkpoint", res.final_checkpoint.string()},
            {"log", res.log_path.string()},
            {"steps", res.steps},
            {"first_step_total", res.first_step.total},
            {"last_step_total", res.last_step.total}},
       "");
  return 0;
}

int run_extract(const Config &cfg) {
  cfg.restrict_keys({"extract.checkpoint", "extract.manifest",
                     "extract.out_prefix"});
  auto loaded = model::DeaanModel::load_checkpoint(cfg.require("extract.checkpoint"));
  // Comma-separated list so source and target can share one archive.
  std::vector<corpus::Manifest> manifests;
  size_t total = 0;
  {
    std::stringstream ss(cfg.require("extract.manifest"));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      manifests.push_back(corpus::read_manifest(trim(tok)));
      total += manifests.back().utts.size();
    }
  }
  if (total == 0) throw DataError("manifest has no utterances");
  backend::EmbeddingSet set;
  Eigen::Index d = 0, row = 0;
  for (const auto &m : manifests) {
    for (const auto &rec : m.utts) {
      Vector e = loaded.model->extract_embedding(corpus::load_features(m, rec));
      if (row == 0) {
        d = e.size();
        set.rows.resize(static_cast<Eigen::Index>(total), d);
      }
      set.rows.row(row++) = e.transpose();
      set.labels.push_back(rec.speaker);
      set.utts.push_back(rec.utt_id);
      set.domains.push_back(rec.domain);
    }
  }
  fs::path prefix = cfg.require("extract.out_prefix");
  backend::write_embedding_set(prefix, set);
  emit(json{{"rows", set.rows.rows()}, {"dim", d}, {"prefix", prefix.string()}},
       "");
  return 0;
}

int run_backend_fit(const Config &cfg) {
  cfg.restrict_keys({"backend.embeddings", "backend.dim", "backend.out"});
  backend::EmbeddingSet train =
      backend::read_embedding_set(cfg.require("backend.embeddings"));
  int p = static_cast<int>(cfg.integer("backend.dim", 0));
  if (p <= 0) {
    // Toy-scale default: min(d, classes-1), capped at 200.
    std::vector<int> uniq = train.labels;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    p = static_cast<int>(std::min<long>(
        {200, train.rows.cols(), static_cast<long>(uniq.size()) - 1}));
  }
  backend::PldaFitStats stats;
  backend::BackendModel model = backend::fit_backend(train, p, &stats);
  fs::path out = cfg.require("backend.out");
  model.save(out);
  emit(json{{"dim", p},
            {"em_iterations", stats.iterations},
            {"final_loglik", stats.loglik_per_iter.back()},
            {"out", out.string()}},
       "");
  return 0;
}

int run_score(const Config &cfg) {
  cfg.restrict_keys({"score.backend", "score.embeddings", "score.trials",
                     "score.out", "score.method", "score.manifest",
                     "score.n_target", "score.n_nontarget", "score.trial_seed"});
  std::string method = cfg.str("score.method", "plda");
  if (method != "plda" && method != "cosine")
    throw ConfigError("score.method must be plda or cosine");
  backend::EmbeddingSet set =
      backend::read_embedding_set(cfg.require("score.embeddings"));
  fs::path trials_path = cfg.require("score.trials");

  metrics::TrialList trials;
  if (cfg.has("score.manifest")) {
    corpus::Manifest m = corpus::read_manifest(cfg.require("score.manifest"));
    trials = metrics::make_trials(
        m, static_cast<int>(cfg.integer("score.n_target", 200)),
        static_cast<int>(cfg.integer("score.n_nontarget", 200)),
        cfg.seed("score.trial_seed", 0));
    metrics::write_trial_list(trials_path, trials);
  } else {
    trials = metrics::read_trial_list(trials_path);
  }

  std::unordered_map<std::string, Eigen::Index> row_of;
  for (size_t i = 0; i < set.utts.size(); ++i)
    row_of[set.utts[i]] = static_cast<Eigen::Index>(i);
  auto lookup = [&](const std::string &utt) -> Vector {
    auto it = row_of.find(utt);
    if (it == row_of.end())
      throw DataError("trial utterance not in embedding archive: " + utt);
    return set.rows.row(it->second).transpose();
  };

  std::vector<double> scores;
  scores.reserve(trials.rows.size());
  if (method == "plda") {
    backend::BackendModel bm = backend::BackendModel::load(cfg.require("score.backend"));
    std::unordered_map<std::string, Vector> cache;
    auto processed = [&](const std::string &utt) -> const Vector & {
      auto it = cache.find(utt);
      if (it == cache.end())
        it = cache.emplace(utt, bm.transform(lookup(utt))).first;
      return it->second;
    };
    for (const auto &tr : trials.rows)
      scores.push_back(bm.plda_score(processed(tr.enroll), processed(tr.test)));
  } else {
    for (const auto &tr : trials.rows)
      scores.push_back(backend::cosine_score(lookup(tr.enroll), lookup(tr.test)));
  }
  fs::path out = cfg.require("score.out");
  metrics::write_score_file(out, trials, scores);
  emit(json{{"trials", trials.rows.size()}, {"out", out.string()}}, "");
  return 0;
}

int run_metrics(const Config &cfg) {
  cfg.restrict_keys({"metrics.scores", "metrics.trials", "metrics.out",
                     "metrics.p_target", "metrics.c_miss", "metrics.c_fa"});
  metrics::TrialList trials =
      metrics::read_trial_list(cfg.require("metrics.trials"));
  metrics::ScoreSet scores =
      metrics::read_scores(cfg.require("metrics.scores"), trials);
  metrics::DcfParams params;
  params.p_target = cfg.real("metrics.p_target", params.p_target);
  params.c_miss = cfg.real("metrics.c_miss", params.c_miss);
  params.c_fa = cfg.real("metrics.c_fa", params.c_fa);
  std::string text = metrics::metrics_json(scores, params);
  std::string out = cfg.str("metrics.out", "");
  if (!out.empty())
    write_atomic(out, [&](std::ostream &os) { os << text << '\n'; });
  std::cout << text << std::endl;
  return 0;
}

int run_probe(const Config &cfg) {
  cfg.restrict_keys({"probe.embeddings", "probe.label", "probe.seed",
                     "probe.out"});
  backend::EmbeddingSet set =
      backend::read_embedding_set(cfg.require("probe.embeddings"));
  std::string label = cfg.require("probe.label");
  std::vector<int> y;
  if (label == "speaker") {
    // Speakers are numbered within each domain; give each (domain, speaker)
    // pair its own class.
    int max_spk = 0;
    for (int s : set.labels) max_spk = std::max(max_spk, s);
    for (size_t i = 0; i < set.labels.size(); ++i)
      y.push_back(set.labels[i] +
                  (set.domains[i] == corpus::Domain::kTarget ? max_spk + 1 : 0));
    // Compact to consecutive ids.
    std::vector<int> uniq = y;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (int &v : y)
      v = static_cast<int>(std::lower_bound(uniq.begin(), uniq.end(), v) -
                           uniq.begin());
  } else if (label == "domain") {
    for (auto d : set.domains)
      y.push_back(d == corpus::Domain::kTarget ? 1 : 0);
  } else {
    throw ConfigError("probe.label must be speaker or domain");
  }
  double acc = metrics::probe_accuracy(set.rows, y, cfg.seed("probe.seed", 0));
  emit(json{{"label", label},
            {"accuracy", acc},
            {"n", set.rows.rows()}},
       cfg.str("probe.out", ""));
  return 0;
}

int run_mi_bench(const Config &cfg) {
  cfg.restrict_keys({"mi.rhos", "mi.samples", "mi.steps", "mi.seed", "mi.out"});
  std::string rhos_str = cfg.str("mi.rhos", "0,0.5,0.9");
  std::vector<double> rhos;
  std::stringstream ss(rhos_str);
  std::string tok;
  while (std::getline(ss, tok, ',')) rhos.push_back(std::stod(trim(tok)));
  int samples = static_cast<int>(cfg.integer("mi.samples", 50000));
  int steps = static_cast<int>(cfg.integer("mi.steps", 300));
  uint64_t seed = cfg.seed("mi.seed", 0);
  std::ostringstream csv;
  csv << "rho,closed_form,dv,jsd\n";
  csv.precision(10);
  for (double rho : rhos) {
    mi::GaussianBenchResult r = mi::run_gaussian_bench(rho, samples, steps, seed);
    csv << r.rho << ',' << r.closed_form << ',' << r.dv << ',' << r.jsd << '\n';
  }
  std::string out = cfg.str("mi.out", "");
  if (!out.empty())
    write_atomic(out, [&](std::ostream &os) { os << csv.str(); });
  std::cout << csv.str();
  return 0;
}

}  // namespace

int dispatch(int argc, const char *const *argv) {
  if (const char *threads = std::getenv("DEAAN_THREADS")) {
    try {
      Eigen::setNbThreads(std::max(1, std::stoi(threads)));
    } catch (const std::exception &) {
      std::cerr << "error: DEAAN_THREADS must be a positive integer"
                << std::endl;
      return 1;
    }
  } else {
    Eigen::setNbThreads(1);
  }

  CLI::App app{"deaan: disentangled-embedding speaker verification pipeline"};
  app.require_subcommand(1);
  struct Sub {
    std::string config;
    std::vector<std::string> overrides;
  };
  std::map<std::string, Sub> subs;
  std::map<std::string, int (*)(const Config &)> handlers = {
      {"synth", run_synth},         {"train", run_train},
      {"extract", run_extract},     {"backend-fit", run_backend_fit},
      {"score", run_score},         {"metrics", run_metrics},
      {"probe", run_probe},         {"mi-bench", run_mi_bench}};
  std::map<std::string, std::string> descriptions = {
      {"synth", "generate the two-domain synthetic corpus"},
      {"train", "train a model (baseline, finetune, or deaan)"},
      {"extract", "extract per-utterance embeddings from a checkpoint"},
      {"backend-fit", "fit the centering/LDA/PLDA scoring backend"},
      {"score", "score a trial list (plda or cosine)"},
      {"metrics", "compute EER and minDCF from scores"},
      {"probe", "linear-probe an embedding archive for a label"},
      {"mi-bench", "correlated-Gaussian benchmark for the MI estimators"}};
  for (auto &[name, handler] : handlers) {
    CLI::App *sc = app.add_subcommand(name, descriptions[name]);
    Sub &s = subs[name];
    sc->add_option("-c,--config", s.config, "flat key=value config file");
    sc->add_option("overrides", s.overrides, "key=value overrides");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return 1;
  }

  try {
    for (auto &[name, handler] : handlers) {
      if (app.got_subcommand(name)) {
        Config cfg = Config::load(subs[name].config, subs[name].overrides);
        return handler(cfg);
      }
    }
    std::cerr << "error: no subcommand" << std::endl;
    return 1;
  } catch (const ConfigError &e) {
    std::cerr << "configuration error: " << e.what() << std::endl;
    return 1;
  } catch (const UsageError &e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
}

}  // namespace deaan::cli
