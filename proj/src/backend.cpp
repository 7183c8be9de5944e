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

#include "deaan/backend.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "deaan/io.hpp"

namespace deaan::backend {

using nlohmann::json;
namespace fs = std::filesystem;

void EmbeddingSet::validate() const {
  size_t n = static_cast<size_t>(rows.rows());
  if (labels.size() != n || utts.size() != n || domains.size() != n)
    throw DataError("embedding set: metadata length mismatch");
  if (!rows.allFinite()) throw NumericError("embedding set has non-finite entries");
}

void write_embedding_set(const fs::path &prefix, const EmbeddingSet &e) {
  e.validate();
  write_feature_matrix(fs::path(prefix.string() + ".fm"), e.rows);
  write_atomic(fs::path(prefix.string() + ".tsv"), [&](std::ostream &os) {
    for (size_t i = 0; i < e.utts.size(); ++i)
      os << e.utts[i] << '\t' << e.labels[i] << '\t'
         << corpus::domain_name(e.domains[i]) << '\n';
  });
}

EmbeddingSet read_embedding_set(const fs::path &prefix) {
  EmbeddingSet e;
  e.rows = read_feature_matrix(fs::path(prefix.string() + ".fm"));
  std::ifstream is(fs::path(prefix.string() + ".tsv"));
  if (!is) throw IoError("cannot open " + prefix.string() + ".tsv");
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string utt, spk, dom;
    std::getline(ss, utt, '\t');
    std::getline(ss, spk, '\t');
    std::getline(ss, dom, '\t');
    e.utts.push_back(utt);
    e.labels.push_back(std::stoi(spk));
    e.domains.push_back(corpus::parse_domain(dom));
  }
  e.validate();
  return e;
}

Vector BackendModel::transform(const Vector &e) const {
  if (e.size() != input_dim())
    throw ShapeError("transform: input dim " + std::to_string(e.size()) +
                     " != " + std::to_string(input_dim()));
  Vector z = projection.transpose() * (e - mean);
  double n = z.norm();
  if (n < 1e-12)
    throw NumericError("zero vector after projection (input equals the "
                       "backend mean?)");
  return z / n;
}

void BackendModel::ensure_scorer() const {
  if (scorer_ready_) return;
  Eigen::Index p = between.rows();
  Matrix tot = between + within;
  tot_llt_.compute(tot);
  if (tot_llt_.info() != Eigen::Success)
    throw NumericError("PLDA total covariance not positive definite");
  Matrix joint(2 * p, 2 * p);
  joint << tot, between, between, tot;
  joint_llt_.compute(joint);
  if (joint_llt_.info() != Eigen::Success)
    throw NumericError("PLDA joint covariance not positive definite");
  auto logdet = [](const Eigen::LLT<Matrix> &llt) {
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  };
  tot_logdet_ = logdet(tot_llt_);
  joint_logdet_ = logdet(joint_llt_);
  scorer_ready_ = true;
}

double BackendModel::plda_score(const Vector &enroll, const Vector &test) const {
  Eigen::Index p = between.rows();
  if (enroll.size() != p || test.size() != p)
    throw ShapeError("plda_score: vector dim != " + std::to_string(p));
  ensure_scorer();
  const double log2pi = std::log(2.0 * M_PI);
  Vector du = enroll - plda_mean, dv = test - plda_mean;
  double lp_u = -0.5 * (static_cast<double>(p) * log2pi + tot_logdet_ +
                        du.dot(tot_llt_.solve(du)));
  double lp_v = -0.5 * (static_cast<double>(p) * log2pi + tot_logdet_ +
                        dv.dot(tot_llt_.solve(dv)));
  Vector joint(2 * p);
  joint << du, dv;
  double lp_same = -0.5 * (2.0 * static_cast<double>(p) * log2pi +
                           joint_logdet_ + joint.dot(joint_llt_.solve(joint)));
  return lp_same - (lp_u + lp_v);
}

double cosine_score(const Vector &enroll, const Vector &test) {
  if (enroll.size() != test.size()) throw ShapeError("cosine: dim mismatch");
  double ne = enroll.norm(), nt = test.norm();
  if (ne < 1e-12 || nt < 1e-12) throw NumericError("cosine of zero vector");
  return enroll.dot(test) / (ne * nt);
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

namespace {

struct ClassStats {
  long n = 0;
  Vector sum;
};

double symmetrize_logdet(Eigen::LLT<Matrix> &llt, const Matrix &m,
                         const char *what) {
  llt.compute(m);
  if (llt.info() != Eigen::Success)
    throw NumericError(std::string("matrix not positive definite in PLDA EM: ") +
                       what);
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

}  // namespace

PldaParams fit_plda(const Matrix &z, const std::vector<int> &labels,
                    PldaFitStats *stats) {
  Eigen::Index n = z.rows(), p = z.cols();
  if (labels.size() != static_cast<size_t>(n))
    throw DataError("fit_plda: labels length mismatch");
  std::map<int, std::vector<Eigen::Index>> classes;
  for (Eigen::Index i = 0; i < n; ++i)
    classes[labels[static_cast<size_t>(i)]].push_back(i);
  long k = static_cast<long>(classes.size());
  if (k < 2) throw DataError("PLDA needs >= 2 classes");

  std::vector<ClassStats> cs;
  Matrix xx = Matrix::Zero(p, p);
  for (auto &[label, idx] : classes) {
    ClassStats c;
    c.n = static_cast<long>(idx.size());
    c.sum = Vector::Zero(p);
    for (Eigen::Index i : idx) {
      c.sum += z.row(i).transpose();
      xx += z.row(i).transpose() * z.row(i);
    }
    cs.push_back(std::move(c));
  }

  // Init: global mean; between/within from class means.
  Vector mu = z.colwise().mean().transpose();
  Matrix between = Matrix::Zero(p, p), within = Matrix::Zero(p, p);
  for (auto &c : cs) {
    Vector cm = c.sum / static_cast<double>(c.n);
    between += (cm - mu) * (cm - mu).transpose();
  }
  between /= static_cast<double>(k);
  within = xx / static_cast<double>(n) - mu * mu.transpose() - between;
  auto regularize = [p](Matrix &m) {
    m = 0.5 * (m + m.transpose());
    m += (1e-8 * (std::abs(m.trace()) + 1.0) / static_cast<double>(p)) *
         Matrix::Identity(p, p);
  };
  regularize(between);
  regularize(within);

  const int min_iters = 10, max_iters = 100;
  const double tol = 1e-6;
  double prev_ll = -std::numeric_limits<double>::infinity();
  const double log2pi = std::log(2.0 * M_PI);
  PldaFitStats local_stats;
  for (int iter = 0; iter < max_iters; ++iter) {
    Eigen::LLT<Matrix> bllt, wllt;
    double logdet_b = symmetrize_logdet(bllt, between, "between");
    double logdet_w = symmetrize_logdet(wllt, within, "within");
    Matrix binv = bllt.solve(Matrix::Identity(p, p));
    Matrix winv = wllt.solve(Matrix::Identity(p, p));
    Vector binv_mu = binv * mu;
    double mu_binv_mu = mu.dot(binv_mu);

    double ll = -0.5 * static_cast<double>(n) * static_cast<double>(p) * log2pi -
                0.5 * static_cast<double>(n) * logdet_w -
                0.5 * static_cast<double>(k) * logdet_b -
                0.5 * (winv * xx).trace() -
                0.5 * static_cast<double>(k) * mu_binv_mu;

    Vector mu_new = Vector::Zero(p);
    Matrix b_new = Matrix::Zero(p, p);
    Matrix cross = Matrix::Zero(p, p);
    std::vector<Vector> yhat(cs.size());
    std::map<long, std::pair<Matrix, double>> post_by_count;  // P^-1, log|P|
    for (size_t ci = 0; ci < cs.size(); ++ci) {
      auto &c = cs[ci];
      auto it = post_by_count.find(c.n);
      if (it == post_by_count.end()) {
        Matrix prec = binv + static_cast<double>(c.n) * winv;
        Eigen::LLT<Matrix> pllt;
        double logdet_p = symmetrize_logdet(pllt, prec, "posterior");
        it = post_by_count
                 .emplace(c.n, std::make_pair(pllt.solve(Matrix::Identity(p, p)),
                                              logdet_p))
                 .first;
      }
      const Matrix &cov = it->second.first;
      Vector b = binv_mu + winv * c.sum;
      Vector y = cov * b;
      yhat[ci] = y;
      ll += -0.5 * it->second.second + 0.5 * b.dot(y);
      mu_new += y;
      cross += y * c.sum.transpose() + c.sum * y.transpose() -
               static_cast<double>(c.n) * (y * y.transpose() + cov);
      b_new += cov;
    }
    local_stats.loglik_per_iter.push_back(ll);
    mu_new /= static_cast<double>(k);
    for (size_t ci = 0; ci < cs.size(); ++ci)
      b_new += (yhat[ci] - mu_new) * (yhat[ci] - mu_new).transpose();
    b_new /= static_cast<double>(k);
    Matrix w_new = (xx - cross) / static_cast<double>(n);

    mu = mu_new;
    between = b_new;
    within = w_new;
    regularize(between);
    regularize(within);
    local_stats.iterations = iter + 1;
    if (iter + 1 >= min_iters && ll - prev_ll < tol) break;
    prev_ll = ll;
  }
  if (stats != nullptr) *stats = local_stats;
  return PldaParams{mu, between, within};
}

BackendModel fit_backend(const EmbeddingSet &train, int p, PldaFitStats *stats) {
  train.validate();
  Eigen::Index n = train.rows.rows(), d = train.rows.cols();
  std::map<int, std::vector<Eigen::Index>> classes;
  for (Eigen::Index i = 0; i < n; ++i)
    classes[train.labels[static_cast<size_t>(i)]].push_back(i);
  long k = static_cast<long>(classes.size());
  if (k < 2) throw DataError("backend fit needs >= 2 classes");
  for (auto &[label, idx] : classes)
    if (idx.size() < 2)
      throw DataError("class " + std::to_string(label) +
                      " has a single sample; need >= 2 per class");
  if (p < 1 || p > std::min<long>(d, k - 1))
    throw ShapeError("LDA dim p=" + std::to_string(p) +
                     " must satisfy 1 <= p <= min(d, classes-1) = " +
                     std::to_string(std::min<long>(d, k - 1)));

  BackendModel model;
  model.mean = train.rows.colwise().mean().transpose();

  // Scatter matrices on centered data.
  Matrix sw = Matrix::Zero(d, d), sb = Matrix::Zero(d, d);
  for (auto &[label, idx] : classes) {
    Vector cm = Vector::Zero(d);
    for (Eigen::Index i : idx) cm += train.rows.row(i).transpose();
    cm /= static_cast<double>(idx.size());
    for (Eigen::Index i : idx) {
      Vector dlt = train.rows.row(i).transpose() - cm;
      sw += dlt * dlt.transpose();
    }
    Vector dm = cm - model.mean;
    sb += static_cast<double>(idx.size()) * dm * dm.transpose();
  }
  sw /= static_cast<double>(n);
  sb /= static_cast<double>(n);
  sw += (1e-6 * sw.trace() / static_cast<double>(d)) * Matrix::Identity(d, d);

  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(sb, sw);
  if (ges.info() != Eigen::Success)
    throw NumericError("LDA generalized eigenproblem failed");
  // Top-p eigenvectors (Eigen sorts ascending); sign fixed for determinism.
  model.projection = Matrix(d, p);
  for (int j = 0; j < p; ++j) {
    Vector v = ges.eigenvectors().col(d - 1 - j);
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0) v = -v;
    model.projection.col(j) = v;
  }

  // Project + length-normalize the training set, then EM for the
  // two-covariance PLDA.
  Matrix z(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector zi = model.projection.transpose() *
                (train.rows.row(i).transpose() - model.mean);
    double nn = zi.norm();
    if (nn < 1e-12) throw NumericError("degenerate training embedding");
    z.row(i) = (zi / nn).transpose();
  }

  PldaParams plda = fit_plda(z, train.labels, stats);
  model.plda_mean = plda.mean;
  model.between = plda.between;
  model.within = plda.within;
  return model;
}

// ---------------------------------------------------------------------------
// Serialization: "DEAANBK1", u64 JSON header length, header, float64 payload.
// ---------------------------------------------------------------------------

void BackendModel::save(const fs::path &path) const {
  json header;
  header["format"] = "DEAANBK1";
  header["d"] = input_dim();
  header["p"] = out_dim();
  write_atomic(path, [&](std::ostream &os) {
    std::string hs = header.dump();
    os.write("DEAANBK1", 8);
    uint64_t len = hs.size();
    os.write(reinterpret_cast<const char *>(&len), 8);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    auto put = [&os](const Matrix &m) {
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        os.write(reinterpret_cast<const char *>(m.col(c).eval().data()),
                 static_cast<std::streamsize>(sizeof(double)) * m.rows());
    };
    put(mean);
    put(projection);
    put(plda_mean);
    put(between);
    put(within);
  });
}

BackendModel BackendModel::load(const fs::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open backend model: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != "DEAANBK1")
    throw IoError("not a backend model file: " + path.string());
  uint64_t len = 0;
  is.read(reinterpret_cast<char *>(&len), 8);
  std::string hs(len, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(len));
  json header = json::parse(hs);
  Eigen::Index d = header.at("d").get<Eigen::Index>();
  Eigen::Index p = header.at("p").get<Eigen::Index>();
  BackendModel m;
  auto get = [&is, &path](Matrix &mat, Eigen::Index rows, Eigen::Index cols) {
    mat.resize(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      is.read(reinterpret_cast<char *>(mat.col(c).data()),
              static_cast<std::streamsize>(sizeof(double)) * rows);
    if (!is) throw IoError("truncated backend model: " + path.string());
  };
  Matrix tmp;
  get(tmp, d, 1);
  m.mean = tmp.col(0);
  get(m.projection, d, p);
  get(tmp, p, 1);
  m.plda_mean = tmp.col(0);
  get(m.between, p, p);
  get(m.within, p, p);
  return m;
}

}  // namespace deaan::backend
