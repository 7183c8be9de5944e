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

#include "deaan/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "deaan/io.hpp"

namespace deaan::corpus {

namespace fs = std::filesystem;

std::string domain_name(Domain d) {
  return d == Domain::kSource ? "source" : "target";
}

Domain parse_domain(const std::string &s) {
  if (s == "source") return Domain::kSource;
  if (s == "target") return Domain::kTarget;
  throw DataError("unknown domain tag: " + s);
}

int Manifest::num_speakers() const {
  int mx = -1;
  for (const auto &u : utts) mx = std::max(mx, u.speaker);
  return mx + 1;
}

void write_manifest(const fs::path &path, const Manifest &m) {
  write_atomic(path, [&](std::ostream &os) {
    for (const auto &u : m.utts)
      os << u.utt_id << '\t' << u.speaker << '\t' << domain_name(u.domain)
         << '\t' << u.num_frames << '\t' << u.feature_path << '\n';
  });
}

Manifest read_manifest(const fs::path &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path.string());
  Manifest m;
  m.dir = path.parent_path();
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    UtteranceRecord rec;
    std::string dom, field;
    std::getline(ss, rec.utt_id, '\t');
    std::getline(ss, field, '\t');
    rec.speaker = std::stoi(field);
    std::getline(ss, dom, '\t');
    rec.domain = parse_domain(dom);
    std::getline(ss, field, '\t');
    rec.num_frames = std::stol(field);
    std::getline(ss, rec.feature_path, '\t');
    if (rec.speaker < 0 || rec.num_frames <= 0 || rec.feature_path.empty())
      throw DataError("bad manifest line: " + line);
    m.utts.push_back(std::move(rec));
  }
  return m;
}

void SynthConfig::validate() const {
  if (num_speakers_source <= 0 || num_speakers_target <= 0)
    throw ConfigError("speaker counts must be > 0");
  if (utts_per_speaker <= 0) throw ConfigError("utts_per_speaker must be > 0");
  if (frames_per_utt < 384)
    throw ConfigError("frames_per_utt must be >= the 384-frame training crop");
  if (domain_shift < 0 || noise_scale < 0)
    throw ConfigError("domain_shift and noise_scale must be >= 0");
  if (n_mels <= 0) throw ConfigError("n_mels must be > 0");
}

namespace {

struct SpeakerProto {
  Vector base;
  // Slow sinusoidal trajectory components so frames within an utterance vary.
  std::vector<double> amp, freq, phase;
  std::vector<Vector> dir;
};

SpeakerProto make_speaker(const SynthConfig &cfg, Domain dom, int spk) {
  RandomStream rng(derive_seed(
      cfg.seed, "speaker/" + domain_name(dom) + "/" + std::to_string(spk)));
  SpeakerProto p;
  p.base = Vector::Zero(cfg.n_mels);
  for (int i = 0; i < cfg.n_mels; ++i) p.base[i] = 2.0 * rng.gaussian();
  const int kComponents = 4;
  for (int kidx = 0; kidx < kComponents; ++kidx) {
    p.amp.push_back(rng.uniform(0.3, 1.0));
    p.freq.push_back(rng.uniform(1.0, 6.0));
    p.phase.push_back(rng.uniform(0.0, 2.0 * M_PI));
    Vector d(cfg.n_mels);
    for (int i = 0; i < cfg.n_mels; ++i) d[i] = rng.gaussian();
    d /= std::sqrt(static_cast<double>(cfg.n_mels));
    p.dir.push_back(d);
  }
  return p;
}

}  // namespace

CorpusSummary generate_corpus(const SynthConfig &cfg, const fs::path &out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "feats" / "source", ec);
  fs::create_directories(out_dir / "feats" / "target", ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  // Fixed target-domain channel: x -> (I + shift*M) x + shift*v.
  RandomStream chan_rng(derive_seed(cfg.seed, "channel"));
  Matrix mix(cfg.n_mels, cfg.n_mels);
  for (int r = 0; r < cfg.n_mels; ++r)
    for (int c = 0; c < cfg.n_mels; ++c)
      mix(r, c) = chan_rng.gaussian() / std::sqrt(static_cast<double>(cfg.n_mels));
  Vector offset(cfg.n_mels);
  for (int i = 0; i < cfg.n_mels; ++i) offset[i] = chan_rng.gaussian();

  CorpusSummary summary;
  for (Domain dom : {Domain::kSource, Domain::kTarget}) {
    int n_spk = dom == Domain::kSource ? cfg.num_speakers_source
                                       : cfg.num_speakers_target;
    Manifest man;
    man.dir = out_dir;
    for (int spk = 0; spk < n_spk; ++spk) {
      SpeakerProto proto = make_speaker(cfg, dom, spk);
      for (int u = 0; u < cfg.utts_per_speaker; ++u) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%c_spk%03d_utt%03d",
                      dom == Domain::kSource ? 's' : 't', spk, u);
        std::string utt_id(buf);
        RandomStream rng(derive_seed(cfg.seed, "utt/" + utt_id));
        double utt_phase = rng.uniform(0.0, 2.0 * M_PI);
        long T = cfg.frames_per_utt;
        Matrix feats(T, cfg.n_mels);
        for (long ti = 0; ti < T; ++ti) {
          Vector x = proto.base;
          double pos = static_cast<double>(ti) / static_cast<double>(T);
          for (size_t kidx = 0; kidx < proto.dir.size(); ++kidx)
            x += proto.amp[kidx] *
                 std::sin(2.0 * M_PI * proto.freq[kidx] * pos +
                          proto.phase[kidx] + utt_phase) *
                 proto.dir[kidx];
          if (dom == Domain::kTarget && cfg.domain_shift > 0.0)
            x = x + cfg.domain_shift * (mix * x + offset);
          for (int i = 0; i < cfg.n_mels; ++i)
            x[i] += cfg.noise_scale * rng.gaussian();
          feats.row(ti) = x.transpose();
        }
        std::string rel = "feats/" + domain_name(dom) + "/" + utt_id + ".fm";
        write_feature_matrix(out_dir / rel, feats);
        UtteranceRecord rec;
        rec.utt_id = utt_id;
        rec.speaker = spk;
        rec.domain = dom;
        rec.num_frames = T;
        rec.feature_path = rel;
        man.utts.push_back(std::move(rec));
      }
    }
    write_manifest(out_dir / ("manifest_" + domain_name(dom) + ".tsv"), man);
    if (dom == Domain::kSource) {
      summary.source_utts = static_cast<int>(man.utts.size());
      summary.source_speakers = n_spk;
    } else {
      summary.target_utts = static_cast<int>(man.utts.size());
      summary.target_speakers = n_spk;
    }
  }
  return summary;
}

namespace {

void fft_radix2(std::vector<std::complex<double>> &a) {
  size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (size_t j = 0; j < len / 2; ++j) {
        auto u = a[i + j], v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

Matrix mel_filterbank(double sample_rate, int n_mels, size_t nfft) {
  size_t nbins = nfft / 2 + 1;
  double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<size_t>(n_mels) + 2);
  for (size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(n_mels + 1));
  Matrix fb = Matrix::Zero(n_mels, static_cast<Eigen::Index>(nbins));
  for (int m = 0; m < n_mels; ++m) {
    double lo = edges[static_cast<size_t>(m)], mid = edges[static_cast<size_t>(m) + 1],
           hi = edges[static_cast<size_t>(m) + 2];
    for (size_t kbin = 0; kbin < nbins; ++kbin) {
      double f = static_cast<double>(kbin) * sample_rate / static_cast<double>(nfft);
      if (f > lo && f < mid)
        fb(m, static_cast<Eigen::Index>(kbin)) = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        fb(m, static_cast<Eigen::Index>(kbin)) = (hi - f) / (hi - mid);
    }
  }
  return fb;
}

}  // namespace

std::vector<double> mel_center_frequencies(double sample_rate, int n_mels) {
  double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers(static_cast<size_t>(n_mels));
  for (int m = 0; m < n_mels; ++m)
    centers[static_cast<size_t>(m)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(m + 1) /
                               static_cast<double>(n_mels + 1));
  return centers;
}

Matrix logmel(const std::vector<double> &waveform, double sample_rate,
              double frame_len_s, double hop_s, int n_mels) {
  if (sample_rate <= 0) throw ConfigError("sample_rate must be > 0");
  long frame = std::lround(frame_len_s * sample_rate);
  long hop = std::lround(hop_s * sample_rate);
  if (frame < 1 || hop < 1) throw ConfigError("degenerate frame/hop");
  if (static_cast<long>(waveform.size()) < frame)
    throw LengthError("waveform shorter than one frame (" +
                      std::to_string(waveform.size()) + " < " +
                      std::to_string(frame) + " samples)");
  long n_frames = (static_cast<long>(waveform.size()) - frame) / hop + 1;
  size_t nfft = 1;
  while (nfft < static_cast<size_t>(frame)) nfft <<= 1;

  std::vector<double> window(static_cast<size_t>(frame));
  for (long i = 0; i < frame; ++i)
    window[static_cast<size_t>(i)] =
        0.54 - 0.46 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                               static_cast<double>(frame - 1));

  Matrix fb = mel_filterbank(sample_rate, n_mels, nfft);
  Matrix out(n_frames, n_mels);
  std::vector<std::complex<double>> buf(nfft);
  Vector power(static_cast<Eigen::Index>(nfft / 2 + 1));
  const double eps = 1e-10;
  for (long fidx = 0; fidx < n_frames; ++fidx) {
    for (size_t i = 0; i < nfft; ++i) buf[i] = 0.0;
    for (long i = 0; i < frame; ++i)
      buf[static_cast<size_t>(i)] =
          waveform[static_cast<size_t>(fidx * hop + i)] *
          window[static_cast<size_t>(i)];
    fft_radix2(buf);
    for (size_t kbin = 0; kbin <= nfft / 2; ++kbin)
      power[static_cast<Eigen::Index>(kbin)] = std::norm(buf[kbin]);
    Vector energies = fb * power;
    for (int m = 0; m < n_mels; ++m) out(fidx, m) = std::log(energies[m] + eps);
  }
  return out;
}

Matrix cmn_sliding(const Matrix &chunk, int window_frames) {
  if (window_frames < 1) throw ConfigError("cmn window must be >= 1 frame");
  long T = chunk.rows();
  Matrix out(T, chunk.cols());
  long w = std::min<long>(window_frames, T);
  for (long ti = 0; ti < T; ++ti) {
    // Centered w-frame window, shifted (not shrunk) at the edges so that a
    // window covering the whole utterance reduces to global CMN.
    long start = ti - (w - 1) / 2;
    start = std::max<long>(0, std::min(start, T - w));
    Eigen::RowVectorXd mean =
        chunk.middleRows(start, w).colwise().mean();
    out.row(ti) = chunk.row(ti) - mean;
  }
  return out;
}

std::vector<bool> energy_vad(const Matrix &chunk, double threshold_offset) {
  long T = chunk.rows();
  if (T < 1) throw ShapeError("energy_vad: empty chunk");
  Vector energy = chunk.rowwise().mean();
  std::vector<double> sorted(energy.data(), energy.data() + T);
  std::sort(sorted.begin(), sorted.end());
  double median = (T % 2 == 1)
                      ? sorted[static_cast<size_t>(T / 2)]
                      : 0.5 * (sorted[static_cast<size_t>(T / 2 - 1)] +
                               sorted[static_cast<size_t>(T / 2)]);
  std::vector<bool> keep(static_cast<size_t>(T));
  Eigen::Index loudest = 0;
  energy.maxCoeff(&loudest);
  for (long ti = 0; ti < T; ++ti)
    keep[static_cast<size_t>(ti)] = energy[ti] > median + threshold_offset;
  keep[static_cast<size_t>(loudest)] = true;
  return keep;
}

Matrix wrap_pad(const Matrix &feats, long target_frames) {
  if (feats.rows() == 0) throw ShapeError("wrap_pad: empty input");
  if (feats.rows() >= target_frames) return feats.topRows(target_frames);
  Matrix out(target_frames, feats.cols());
  for (long ti = 0; ti < target_frames; ++ti)
    out.row(ti) = feats.row(ti % feats.rows());
  return out;
}

Matrix random_crop(const Matrix &feats, long len, RandomStream &rng) {
  if (len < 1) throw ConfigError("crop length must be >= 1");
  if (feats.rows() < len) {
    std::cerr << "warning: wrap-padding " << feats.rows() << "-frame utterance to "
              << len << " frames\n";
    return wrap_pad(feats, len);
  }
  long start = rng.randint(0, feats.rows() - len);
  return feats.middleRows(start, len);
}

Matrix load_features(const Manifest &m, const UtteranceRecord &rec) {
  Matrix feats = read_feature_matrix(m.dir / rec.feature_path);
  if (feats.rows() != rec.num_frames)
    throw DataError("manifest frame count mismatch for " + rec.utt_id);
  return feats;
}

}  // namespace deaan::corpus
