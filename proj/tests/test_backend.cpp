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
#include <numbers>
#include <vector>

#include "deaan/backend.hpp"
#include "deaan/metrics.hpp"

using namespace deaan;
namespace fs = std::filesystem;

namespace {

// Gaussian-cluster embedding set: class means spread apart, small
// within-class noise.
backend::EmbeddingSet make_clusters(int classes, int per_class, int d,
                                    double between_scale, double within_scale,
                                    uint64_t seed) {
  RandomStream rng(seed);
  backend::EmbeddingSet e;
  e.rows.resize(classes * per_class, d);
  int r = 0;
  for (int c = 0; c < classes; ++c) {
    Vector mean(d);
    for (int j = 0; j < d; ++j) mean(j) = between_scale * rng.gaussian();
    for (int i = 0; i < per_class; ++i, ++r) {
      for (int j = 0; j < d; ++j)
        e.rows(r, j) = mean(j) + within_scale * rng.gaussian();
      e.labels.push_back(c);
      e.utts.push_back("u" + std::to_string(r));
      e.domains.push_back(corpus::Domain::kSource);
    }
  }
  return e;
}

}  // namespace

TEST_CASE("cosine score on canonical pairs") {
  Vector a(3), b(3), c(3);
  a << 2, 0, 0;
  b << -5, 0, 0;
  c << 0, 3, 0;
  CHECK(backend::cosine_score(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(backend::cosine_score(a, b) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(backend::cosine_score(a, c) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("embedding-set archives round-trip") {
  backend::EmbeddingSet e = make_clusters(3, 4, 6, 2.0, 0.3, 1);
  fs::path prefix = fs::temp_directory_path() /
                    ("deaan_backend_emb_" + std::to_string(::getpid()));
  backend::write_embedding_set(prefix, e);
  backend::EmbeddingSet r = backend::read_embedding_set(prefix);
  CHECK(r.labels == e.labels);
  CHECK(r.utts == e.utts);
  REQUIRE(r.rows.rows() == e.rows.rows());
  // Stored as float32: round trip is close, not exact.
  CHECK((r.rows - e.rows).cwiseAbs().maxCoeff() <= 1e-5);
  for (size_t i = 0; i < r.domains.size(); ++i)
    CHECK(r.domains[i] == e.domains[i]);
}

TEST_CASE("fitting rejects degenerate inputs") {
  SUBCASE("projection dimension above classes-1") {
    backend::EmbeddingSet e = make_clusters(3, 5, 8, 2.0, 0.3, 2);
    CHECK_THROWS_AS(backend::fit_backend(e, 3), ShapeError);
  }
  SUBCASE("singleton class") {
    backend::EmbeddingSet e = make_clusters(3, 5, 8, 2.0, 0.3, 3);
    e.rows.conservativeResize(e.rows.rows() + 1, Eigen::NoChange);
    e.rows.row(e.rows.rows() - 1).setOnes();
    e.labels.push_back(99);
    e.utts.push_back("singleton");
    e.domains.push_back(corpus::Domain::kSource);
    CHECK_THROWS_AS(backend::fit_backend(e, 2), DataError);
  }
}

TEST_CASE("transform centers, projects, and length-normalizes") {
  backend::EmbeddingSet e = make_clusters(5, 10, 8, 2.0, 0.4, 4);
  backend::BackendModel m = backend::fit_backend(e, 3);
  CHECK(m.input_dim() == 8);
  CHECK(m.out_dim() == 3);
  for (int i = 0; i < 5; ++i) {
    Vector z = m.transform(e.rows.row(i).transpose());
    CHECK(z.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("a vector that projects to zero is a numeric error") {
    backend::BackendModel id;
    id.mean = Vector::Constant(3, 0.5);
    id.projection = Matrix::Identity(3, 3);
    id.plda_mean = Vector::Zero(3);
    id.between = Matrix::Identity(3, 3);
    id.within = Matrix::Identity(3, 3);
    CHECK_THROWS_AS(id.transform(Vector::Constant(3, 0.5)), NumericError);
  }
}

TEST_CASE("log-likelihood-ratio scoring properties") {
  backend::EmbeddingSet e = make_clusters(6, 12, 10, 2.0, 0.5, 5);
  backend::BackendModel m = backend::fit_backend(e, 4);
  RandomStream rng(6);
  SUBCASE("symmetric in its arguments") {
    for (int rep = 0; rep < 10; ++rep) {
      Vector u(4), v(4);
      for (int j = 0; j < 4; ++j) {
        u(j) = rng.gaussian();
        v(j) = rng.gaussian();
      }
      u.normalize();
      v.normalize();
      CHECK(std::abs(m.plda_score(u, v) - m.plda_score(v, u)) <= 1e-9);
    }
  }
  SUBCASE("identical vectors beat opposite vectors") {
    Vector u(4);
    for (int j = 0; j < 4; ++j) u(j) = rng.gaussian();
    u.normalize();
    CHECK(m.plda_score(u, u) > m.plda_score(u, Vector(-u)));
  }
  SUBCASE("zero between-class covariance makes every ratio zero") {
    backend::BackendModel flat = m;
    flat.between.setZero();
    for (int rep = 0; rep < 5; ++rep) {
      Vector u(4), v(4);
      for (int j = 0; j < 4; ++j) {
        u(j) = rng.gaussian();
        v(j) = rng.gaussian();
      }
      CHECK(std::abs(flat.plda_score(u, v)) <= 1e-9);
    }
  }
}

TEST_CASE("scoring matches a dense two-dimensional oracle") {
  // Diagonal two-covariance model in 2-D factorizes per dimension; the
  // oracle below evaluates the joint and independent Gaussian densities
  // directly.
  backend::BackendModel m;
  m.mean = Vector::Zero(2);
  m.projection = Matrix::Identity(2, 2);
  m.plda_mean.resize(2);
  m.plda_mean << 0.3, -0.2;
  m.between = Matrix::Zero(2, 2);
  m.within = Matrix::Zero(2, 2);
  m.between.diagonal() << 1.7, 0.6;
  m.within.diagonal() << 0.9, 1.4;

  auto oracle = [&](const Vector &u, const Vector &v) {
    double llr = 0;
    for (int j = 0; j < 2; ++j) {
      double b = m.between(j, j), w = m.within(j, j), t = b + w;
      double x = u(j) - m.plda_mean(j), y = v(j) - m.plda_mean(j);
      double det = t * t - b * b;
      double lp_same = -std::log(2 * std::numbers::pi) - 0.5 * std::log(det) -
                       0.5 * (t * x * x - 2 * b * x * y + t * y * y) / det;
      double lp_ind = -std::log(2 * std::numbers::pi) - std::log(t) -
                      0.5 * (x * x + y * y) / t;
      llr += lp_same - lp_ind;
    }
    return llr;
  };

  RandomStream rng(7);
  for (int rep = 0; rep < 25; ++rep) {
    Vector u(2), v(2);
    for (int j = 0; j < 2; ++j) {
      u(j) = 2 * rng.gaussian();
      v(j) = 2 * rng.gaussian();
    }
    CHECK(m.plda_score(u, v) == doctest::Approx(oracle(u, v)).epsilon(1e-6));
  }
}

TEST_CASE("EM log-likelihood never decreases") {
  backend::EmbeddingSet e = make_clusters(8, 15, 6, 1.5, 0.6, 8);
  backend::PldaFitStats stats;
  backend::fit_plda(e.rows, e.labels, &stats);
  REQUIRE(stats.iterations >= 10);
  REQUIRE(stats.loglik_per_iter.size() ==
          static_cast<size_t>(stats.iterations));
  for (size_t i = 1; i < stats.loglik_per_iter.size(); ++i)
    CHECK(stats.loglik_per_iter[i] >= stats.loglik_per_iter[i - 1] - 1e-8);
}

TEST_CASE("EM recovers known generating covariances") {
  // 200 classes x 50 samples drawn from diagonal between/within covariances;
  // many classes keep the between-class trace estimate well inside 10%.
  RandomStream rng(9);
  const int classes = 200, per_class = 50, d = 4;
  Vector b_true(d), w_true(d);
  b_true << 2.0, 1.2, 0.7, 0.4;
  w_true << 0.5, 0.8, 0.3, 1.0;
  Matrix rows(classes * per_class, d);
  std::vector<int> labels;
  int r = 0;
  for (int c = 0; c < classes; ++c) {
    Vector mean(d);
    for (int j = 0; j < d; ++j)
      mean(j) = std::sqrt(b_true(j)) * rng.gaussian();
    for (int i = 0; i < per_class; ++i, ++r) {
      for (int j = 0; j < d; ++j)
        rows(r, j) = mean(j) + std::sqrt(w_true(j)) * rng.gaussian();
      labels.push_back(c);
    }
  }
  backend::PldaParams p = backend::fit_plda(rows, labels);
  CHECK(p.between.trace() ==
        doctest::Approx(b_true.sum()).epsilon(0.10));
  CHECK(p.within.trace() == doctest::Approx(w_true.sum()).epsilon(0.10));
  CHECK(p.mean.cwiseAbs().maxCoeff() < 0.5);
}

TEST_CASE("well-separated classes give a wide score margin") {
  backend::EmbeddingSet e = make_clusters(2, 30, 2, 4.0, 0.3, 10);
  backend::BackendModel m = backend::fit_backend(e, 1);
  std::vector<double> same, diff;
  for (int i = 0; i < 20; ++i)
    for (int j = i + 1; j < 20; ++j) {
      Vector u = m.transform(e.rows.row(3 * i).transpose());
      Vector v = m.transform(e.rows.row(3 * j).transpose());
      double s = m.plda_score(u, v);
      (e.labels[3 * i] == e.labels[3 * j] ? same : diff).push_back(s);
    }
  auto mean_of = [](const std::vector<double> &v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto sd_of = [&](const std::vector<double> &v, double mu) {
    double s = 0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size()));
  };
  double mu_s = mean_of(same), mu_d = mean_of(diff);
  double sd = std::max(sd_of(same, mu_s), sd_of(diff, mu_d));
  CHECK(mu_s - mu_d > 5 * sd);
}

TEST_CASE("trial error rate is invariant to rotating the embedding space") {
  backend::EmbeddingSet e = make_clusters(6, 20, 8, 1.5, 0.8, 11);
  // Build a random orthogonal matrix from a QR factorization.
  RandomStream rng(12);
  Matrix a(8, 8);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng.gaussian();
  Matrix q = Eigen::HouseholderQR<Matrix>(a).householderQ();
  backend::EmbeddingSet rot = e;
  rot.rows = e.rows * q.transpose();

  auto trial_eer = [](const backend::EmbeddingSet &set) {
    backend::BackendModel m = backend::fit_backend(set, 4);
    metrics::ScoreSet scores;
    for (int i = 0; i < set.rows.rows(); i += 3)
      for (int j = i + 1; j < set.rows.rows(); j += 7) {
        double s = m.plda_score(m.transform(set.rows.row(i).transpose()),
                                m.transform(set.rows.row(j).transpose()));
        (set.labels[i] == set.labels[j] ? scores.target : scores.nontarget)
            .push_back(s);
      }
    return metrics::eer(scores);
  };
  CHECK(trial_eer(e) == doctest::Approx(trial_eer(rot)).epsilon(1e-9));
}

TEST_CASE("backend files round-trip") {
  backend::EmbeddingSet e = make_clusters(5, 10, 6, 2.0, 0.5, 13);
  backend::BackendModel m = backend::fit_backend(e, 3);
  fs::path path = fs::temp_directory_path() /
                  ("deaan_backend_model_" + std::to_string(::getpid()) + ".bk");
  m.save(path);
  backend::BackendModel r = backend::BackendModel::load(path);
  CHECK((r.mean - m.mean).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.projection - m.projection).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.plda_mean - m.plda_mean).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.between - m.between).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.within - m.within).cwiseAbs().maxCoeff() == 0.0);
  Vector u = m.transform(e.rows.row(0).transpose());
  Vector v = m.transform(e.rows.row(17).transpose());
  CHECK(r.plda_score(u, v) == m.plda_score(u, v));
}
