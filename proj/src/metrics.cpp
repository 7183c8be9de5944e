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

#include "deaan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "deaan/io.hpp"

namespace deaan::metrics {

void TrialList::validate() const {
  std::set<std::pair<std::string, std::string>> seen;
  bool has_target = false, has_nontarget = false;
  for (const Trial &tr : rows) {
    if (!seen.insert({tr.enroll, tr.test}).second)
      throw DataError("duplicate trial pair: " + tr.enroll + " / " + tr.test);
    (tr.is_target ? has_target : has_nontarget) = true;
  }
  if (!has_target || !has_nontarget)
    throw DataError("trial list needs at least one target and one nontarget");
}

void DcfParams::validate() const {
  if (!(p_target > 0 && p_target < 1))
    throw ConfigError("p_target must be in (0,1)");
  if (c_miss <= 0 || c_fa <= 0) throw ConfigError("costs must be positive");
}

namespace {

// Operating points at thresholds {+inf} followed by each distinct score in
// descending order, under the accept-iff-score>=threshold convention.
struct RocPoint {
  double far, frr;
};

std::vector<RocPoint> roc_points(const ScoreSet &s) {
  if (s.target.empty() || s.nontarget.empty())
    throw DataError("need at least one target and one nontarget score");
  std::vector<double> thresholds;
  thresholds.reserve(s.target.size() + s.nontarget.size());
  thresholds.insert(thresholds.end(), s.target.begin(), s.target.end());
  thresholds.insert(thresholds.end(), s.nontarget.begin(), s.nontarget.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  std::vector<double> tar = s.target, non = s.nontarget;
  std::sort(tar.begin(), tar.end());
  std::sort(non.begin(), non.end());
  double nt = static_cast<double>(tar.size()), nn = static_cast<double>(non.size());

  std::vector<RocPoint> pts;
  pts.push_back({0.0, 1.0});  // threshold +inf
  for (double th : thresholds) {
    auto n_ge = [&](const std::vector<double> &v) {
      return static_cast<double>(v.end() -
                                 std::lower_bound(v.begin(), v.end(), th));
    };
    pts.push_back({n_ge(non) / nn, (nt - n_ge(tar)) / nt});
  }
  return pts;
}

}  // namespace

double eer(const ScoreSet &scores) {
  std::vector<RocPoint> pts = roc_points(scores);
  for (size_t k = 0; k + 1 < pts.size(); ++k) {
    double d0 = pts[k].far - pts[k].frr;
    double d1 = pts[k + 1].far - pts[k + 1].frr;
    if (d0 <= 0.0 && d1 >= 0.0) {
      if (d1 == d0) return pts[k].far;
      double alpha = -d0 / (d1 - d0);
      return pts[k].far + alpha * (pts[k + 1].far - pts[k].far);
    }
  }
  // FAR-FRR is -1 at +inf and +1 at the lowest threshold, so a crossing
  // always exists; the last point is a safe fallback against fp ties.
  return pts.back().far;
}

double min_dcf(const ScoreSet &scores, const DcfParams &params) {
  params.validate();
  std::vector<RocPoint> pts = roc_points(scores);
  double normalizer =
      std::min(params.p_target * params.c_miss, (1 - params.p_target) * params.c_fa);
  double best = std::numeric_limits<double>::infinity();
  for (const RocPoint &p : pts) {
    double cost = params.p_target * params.c_miss * p.frr +
                  (1 - params.p_target) * params.c_fa * p.far;
    best = std::min(best, cost);
  }
  return best / normalizer;
}

double probe_accuracy(const Matrix &embeddings, const std::vector<int> &labels,
                      uint64_t split_seed) {
  Eigen::Index n = embeddings.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw DataError("probe: label count mismatch");
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw DataError("probe needs at least 2 label values");
  for (auto &[l, c] : counts)
    if (c < 10)
      throw DataError("probe needs >= 10 samples per label, label " +
                      std::to_string(l) + " has " + std::to_string(c));
  int k = 0;
  std::map<int, int> remap;
  for (auto &[l, c] : counts) remap[l] = k++;

  RandomStream rng(derive_seed(split_seed, "probe-split"));
  std::vector<int> idx(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = static_cast<int>(i);
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(idx[static_cast<size_t>(i)],
              idx[static_cast<size_t>(rng.randint(0, i))]);
  Eigen::Index n_train = (n * 7) / 10;
  if (n_train < 1 || n_train >= n) throw DataError("probe: split too small");

  Eigen::Index d = embeddings.cols();
  Matrix xtr(n_train, d), xte(n - n_train, d);
  std::vector<int> ytr, yte;
  for (Eigen::Index i = 0; i < n; ++i) {
    int src = idx[static_cast<size_t>(i)];
    if (i < n_train) {
      xtr.row(i) = embeddings.row(src);
      ytr.push_back(remap[labels[static_cast<size_t>(src)]]);
    } else {
      xte.row(i - n_train) = embeddings.row(src);
      yte.push_back(remap[labels[static_cast<size_t>(src)]]);
    }
  }
  // Standardize with training statistics.
  Eigen::RowVectorXd mu = xtr.colwise().mean();
  Eigen::RowVectorXd sd =
      ((xtr.rowwise() - mu).array().square().colwise().mean() + 1e-8).sqrt();
  xtr = (xtr.rowwise() - mu).array().rowwise() / sd.array();
  xte = (xte.rowwise() - mu).array().rowwise() / sd.array();

  // Multinomial logistic regression, full-batch gradient descent.
  Matrix w = Matrix::Zero(d, k);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(k);
  double lr = 0.5;
  for (int iter = 0; iter < 300; ++iter) {
    Matrix logits = (xtr * w).rowwise() + b;
    Matrix probs(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::ArrayXd e = (logits.row(r).array() - logits.row(r).maxCoeff()).exp();
      probs.row(r) = (e / e.sum()).matrix();
    }
    for (Eigen::Index r = 0; r < probs.rows(); ++r)
      probs(r, ytr[static_cast<size_t>(r)]) -= 1.0;
    probs /= static_cast<double>(n_train);
    w -= lr * (xtr.transpose() * probs + 1e-4 * w);
    b -= lr * probs.colwise().sum();
  }
  int correct = 0;
  Matrix logits = (xte * w).rowwise() + b;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index pred = 0;
    logits.row(r).maxCoeff(&pred);
    if (static_cast<int>(pred) == yte[static_cast<size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

TrialList make_trials(const corpus::Manifest &manifest, int n_target,
                      int n_nontarget, uint64_t seed) {
  if (n_target < 1 || n_nontarget < 1)
    throw DataError("trial counts must be >= 1");
  std::map<int, std::vector<std::string>> by_speaker;
  for (const auto &u : manifest.utts) by_speaker[u.speaker].push_back(u.utt_id);

  RandomStream rng(derive_seed(seed, "trials"));
  // Per-speaker same-speaker pair pools, shuffled.
  std::vector<std::vector<std::pair<std::string, std::string>>> pools;
  long total_same = 0;
  for (auto &[spk, utts] : by_speaker) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (size_t i = 0; i < utts.size(); ++i)
      for (size_t j = i + 1; j < utts.size(); ++j)
        pairs.emplace_back(utts[i], utts[j]);
    for (size_t i = pairs.size(); i > 1; --i)
      std::swap(pairs[i - 1], pairs[static_cast<size_t>(rng.randint(0, static_cast<int64_t>(i) - 1))]);
    total_same += static_cast<long>(pairs.size());
    pools.push_back(std::move(pairs));
  }
  if (total_same < n_target)
    throw DataError("n_target " + std::to_string(n_target) +
                    " exceeds available same-speaker pairs (" +
                    std::to_string(total_same) + ")");

  TrialList out;
  std::set<std::pair<std::string, std::string>> used;
  // Round-robin over speakers for balance.
  size_t spk_idx = 0;
  int made = 0;
  while (made < n_target) {
    auto &pool = pools[spk_idx % pools.size()];
    if (!pool.empty()) {
      auto pr = pool.back();
      pool.pop_back();
      if (used.insert(pr).second) {
        out.rows.push_back({pr.first, pr.second, true});
        ++made;
      }
    }
    ++spk_idx;
    bool any_left = false;
    for (auto &p : pools) any_left = any_left || !p.empty();
    if (!any_left && made < n_target)
      throw DataError("exhausted same-speaker pairs");
  }

  // Cross-speaker pairs.
  std::vector<const corpus::UtteranceRecord *> utts;
  for (const auto &u : manifest.utts) utts.push_back(&u);
  long n_utts = static_cast<long>(utts.size());
  long cross_avail = 0;
  {
    long sum_sq = 0;
    for (auto &[spk, v] : by_speaker)
      sum_sq += static_cast<long>(v.size()) * static_cast<long>(v.size());
    cross_avail = (n_utts * n_utts - sum_sq) / 2;
  }
  if (n_nontarget > cross_avail)
    throw DataError("n_nontarget exceeds available cross-speaker pairs (" +
                    std::to_string(cross_avail) + ")");
  made = 0;
  long attempts = 0, max_attempts = 200L * n_nontarget + 10000;
  while (made < n_nontarget) {
    if (++attempts > max_attempts)
      throw DataError("could not sample enough distinct nontarget pairs");
    const auto *a = utts[static_cast<size_t>(rng.randint(0, n_utts - 1))];
    const auto *b = utts[static_cast<size_t>(rng.randint(0, n_utts - 1))];
    if (a->speaker == b->speaker) continue;
    auto key = a->utt_id < b->utt_id ? std::make_pair(a->utt_id, b->utt_id)
                                     : std::make_pair(b->utt_id, a->utt_id);
    if (!used.insert(key).second) continue;
    out.rows.push_back({key.first, key.second, false});
    ++made;
  }
  out.validate();
  return out;
}

void write_trial_list(const std::filesystem::path &path, const TrialList &t) {
  write_atomic(path, [&](std::ostream &os) {
    for (const Trial &tr : t.rows)
      os << tr.enroll << '\t' << tr.test << '\t'
         << (tr.is_target ? "target" : "nontarget") << '\n';
  });
}

TrialList read_trial_list(const std::filesystem::path &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open trial list: " + path.string());
  TrialList out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    Trial tr;
    std::string label;
    std::getline(ss, tr.enroll, '\t');
    std::getline(ss, tr.test, '\t');
    std::getline(ss, label, '\t');
    if (label == "target") tr.is_target = true;
    else if (label == "nontarget") tr.is_target = false;
    else throw DataError("bad trial label: " + label);
    out.rows.push_back(std::move(tr));
  }
  return out;
}

void write_score_file(const std::filesystem::path &path, const TrialList &t,
                      const std::vector<double> &scores) {
  if (scores.size() != t.rows.size())
    throw DataError("score count does not match trial list");
  write_atomic(path, [&](std::ostream &os) {
    char buf[64];
    for (size_t i = 0; i < scores.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.6f", scores[i]);
      os << t.rows[i].enroll << '\t' << t.rows[i].test << '\t' << buf << '\n';
    }
  });
}

ScoreSet read_scores(const std::filesystem::path &score_path,
                     const TrialList &trials) {
  std::ifstream is(score_path);
  if (!is) throw IoError("cannot open score file: " + score_path.string());
  std::map<std::pair<std::string, std::string>, double> by_pair;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string e, t, s;
    std::getline(ss, e, '\t');
    std::getline(ss, t, '\t');
    std::getline(ss, s, '\t');
    by_pair[{e, t}] = std::stod(s);
  }
  ScoreSet out;
  for (const Trial &tr : trials.rows) {
    auto it = by_pair.find({tr.enroll, tr.test});
    if (it == by_pair.end())
      throw DataError("missing score for trial " + tr.enroll + " / " + tr.test);
    (tr.is_target ? out.target : out.nontarget).push_back(it->second);
  }
  return out;
}

std::string metrics_json(const ScoreSet &scores, const DcfParams &params) {
  std::ostringstream os;
  os.precision(10);
  os << "{\"eer\":" << eer(scores) << ",\"min_dcf\":" << min_dcf(scores, params)
     << ",\"n_target\":" << scores.target.size()
     << ",\"n_nontarget\":" << scores.nontarget.size() << "}";
  return os.str();
}

}  // namespace deaan::metrics
