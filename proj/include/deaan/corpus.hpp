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

#ifndef DEAAN_CORPUS_HPP_
#define DEAAN_CORPUS_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "deaan/common.hpp"

namespace deaan::corpus {

enum class Domain { kSource, kTarget };

std::string domain_name(Domain d);
Domain parse_domain(const std::string &s);

struct UtteranceRecord {
  std::string utt_id;
  int speaker = 0;  // label within its domain's manifest
  Domain domain = Domain::kSource;
  long num_frames = 0;
  std::string feature_path;  // relative to the manifest's directory
};

struct Manifest {
  std::filesystem::path dir;  // directory feature paths are relative to
  std::vector<UtteranceRecord> utts;
  int num_speakers() const;
};

// One line per utterance: utt_id \t speaker \t domain \t num_frames \t path
void write_manifest(const std::filesystem::path &path, const Manifest &m);
Manifest read_manifest(const std::filesystem::path &path);

struct SynthConfig {
  int num_speakers_source = 8;
  int num_speakers_target = 8;
  int utts_per_speaker = 50;
  int frames_per_utt = 384;
  double domain_shift = 1.0;  // strength of the target channel transform
  double noise_scale = 1.0;
  uint64_t seed = 0;
  int n_mels = 64;

  void validate() const;
};

struct CorpusSummary {
  int source_utts = 0, target_utts = 0;
  int source_speakers = 0, target_speakers = 0;
};

// Writes manifest_source.tsv / manifest_target.tsv plus per-utterance feature
// files under out_dir. Each utterance is a per-speaker prototype trajectory,
// run through a fixed per-domain linear channel transform, plus additive
// noise. Deterministic given cfg.seed: every utterance draws from its own
// sub-seed derived from (seed, utt_id).
CorpusSummary generate_corpus(const SynthConfig &cfg,
                              const std::filesystem::path &out_dir);

// Log-mel filterbank energies: 25 ms frames at 10 ms shift by default,
// Hamming window, HTK mel scale, triangular filters spanning 0..Nyquist,
// log floor 1e-10.
Matrix logmel(const std::vector<double> &waveform, double sample_rate,
              double frame_len_s = 0.025, double hop_s = 0.010, int n_mels = 64);

// Center frequencies (Hz) of the mel filters used by logmel.
std::vector<double> mel_center_frequencies(double sample_rate, int n_mels);

// Per-bin mean subtraction over a centered window (truncated at the edges).
Matrix cmn_sliding(const Matrix &chunk, int window_frames);

// Frame kept iff mean log-energy > median frame energy + offset. The loudest
// frame is always kept.
std::vector<bool> energy_vad(const Matrix &chunk, double threshold_offset);

// Repeats the matrix from the start until it has target_frames rows.
Matrix wrap_pad(const Matrix &feats, long target_frames);

// Contiguous crop of exactly len frames at a uniform random start; inputs
// shorter than len are wrap-padded instead of failing.
Matrix random_crop(const Matrix &feats, long len, RandomStream &rng);

Matrix load_features(const Manifest &m, const UtteranceRecord &rec);

}  // namespace deaan::corpus

#endif  // DEAAN_CORPUS_HPP_
