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

#ifndef DEAAN_BACKEND_HPP_
#define DEAAN_BACKEND_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "deaan/common.hpp"
#include "deaan/corpus.hpp"

namespace deaan::backend {

struct EmbeddingSet {
  Matrix rows;                     // N x d
  std::vector<int> labels;         // speaker ids
  std::vector<std::string> utts;   // utt ids
  std::vector<corpus::Domain> domains;
  void validate() const;
};

// Archive on disk: <prefix>.fm (feature-matrix container) plus <prefix>.tsv
// with one `utt \t speaker \t domain` line per row.
void write_embedding_set(const std::filesystem::path &prefix,
                         const EmbeddingSet &e);
EmbeddingSet read_embedding_set(const std::filesystem::path &prefix);

// Centering + LDA + length normalization + two-covariance Gaussian PLDA.
class BackendModel {
 public:
  Vector mean;        // d, computed before projection
  Matrix projection;  // d x p, rows orthonormal under the within-class metric
  Vector plda_mean;   // p
  Matrix between;     // p x p, symmetric PSD
  Matrix within;      // p x p, symmetric PD

  Eigen::Index input_dim() const { return projection.rows(); }
  Eigen::Index out_dim() const { return projection.cols(); }

  // center -> project -> length-normalize. Throws NumericError when the
  // projected vector is (numerically) zero.
  Vector transform(const Vector &e) const;

  // Log-likelihood ratio log p(same) - log p(different) on processed vectors.
  double plda_score(const Vector &enroll, const Vector &test) const;

  void save(const std::filesystem::path &path) const;
  static BackendModel load(const std::filesystem::path &path);

 private:
  // Cached Cholesky pieces for scoring, rebuilt on demand.
  mutable bool scorer_ready_ = false;
  mutable Eigen::LLT<Matrix> tot_llt_;    // B + W
  mutable Eigen::LLT<Matrix> joint_llt_;  // [[B+W, B], [B, B+W]]
  mutable double tot_logdet_ = 0, joint_logdet_ = 0;
  void ensure_scorer() const;
};

struct PldaFitStats {
  std::vector<double> loglik_per_iter;  // non-decreasing
  int iterations = 0;
};

// Two-covariance PLDA parameters fitted by EM on already-processed vectors.
struct PldaParams {
  Vector mean;
  Matrix between, within;
};

// EM on N x p rows with integer class labels; >= 10 iterations or
// log-likelihood improvement < 1e-6. Exposed separately so the estimator can
// be validated against data synthesized from known parameters.
PldaParams fit_plda(const Matrix &rows, const std::vector<int> &labels,
                    PldaFitStats *stats = nullptr);

// p: target LDA dimension; requires >= 2 classes with >= 2 samples each and
// p <= min(d, classes-1). Within-class scatter is regularized by
// 1e-6 * trace/d * I. PLDA runs EM for >= 10 iterations or until the
// log-likelihood improves by < 1e-6.
BackendModel fit_backend(const EmbeddingSet &train, int p,
                         PldaFitStats *stats = nullptr);

double cosine_score(const Vector &enroll, const Vector &test);

}  // namespace deaan::backend

#endif  // DEAAN_BACKEND_HPP_
