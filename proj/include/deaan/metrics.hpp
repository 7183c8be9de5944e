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

#ifndef DEAAN_METRICS_HPP_
#define DEAAN_METRICS_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "deaan/corpus.hpp"

namespace deaan::metrics {

struct Trial {
  std::string enroll;
  std::string test;
  bool is_target = false;
};

struct TrialList {
  std::vector<Trial> rows;
  void validate() const;  // no duplicate pairs, both classes present
};

struct ScoreSet {
  std::vector<double> target;
  std::vector<double> nontarget;
};

struct DcfParams {
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;
  void validate() const;
};

// Rate at which the piecewise-linear interpolations of FAR and FRR over the
// sorted score thresholds intersect (accept iff score >= threshold).
double eer(const ScoreSet &scores);

// Min over thresholds of the detection cost, normalized by the cost of the
// trivial decision.
double min_dcf(const ScoreSet &scores, const DcfParams &params);

// Held-out accuracy (70/30 split by seed) of a linear softmax probe.
double probe_accuracy(const Matrix &embeddings, const std::vector<int> &labels,
                      uint64_t split_seed);

// Deterministic sampled trial list: speaker-balanced targets, no duplicate
// (enroll, test) pairs.
TrialList make_trials(const corpus::Manifest &manifest, int n_target,
                      int n_nontarget, uint64_t seed);

void write_trial_list(const std::filesystem::path &path, const TrialList &t);
TrialList read_trial_list(const std::filesystem::path &path);

// Score file: enroll \t test \t score (6 decimals), aligned with a trial list.
void write_score_file(const std::filesystem::path &path, const TrialList &t,
                      const std::vector<double> &scores);
ScoreSet read_scores(const std::filesystem::path &score_path,
                     const TrialList &trials);

std::string metrics_json(const ScoreSet &scores, const DcfParams &params);

}  // namespace deaan::metrics

#endif  // DEAAN_METRICS_HPP_
