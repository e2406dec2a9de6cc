#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vcwn/dsp.hpp"

namespace vcwn {

struct ManifestEntry {
  std::string speaker;
  std::string split;  // "train" or "test"
  std::string path;   // relative to the manifest directory unless absolute
  std::string utterance_id() const;
};

// Line-oriented corpus listing: "speaker split path" per line, '#' comments.
struct CorpusManifest {
  std::vector<std::string> speakers;  // first-appearance order
  std::vector<ManifestEntry> entries;
  std::string root;  // directory relative paths resolve against

  std::vector<ManifestEntry> select(const std::string& speaker, const std::string& split) const;
  std::string resolve(const ManifestEntry& entry) const;
  // Disjoint splits, unique paths, known split names, >= 1 speaker.
  void validate() const;

  std::string serialize() const;
  static CorpusManifest parse(const std::string& text, const std::string& root);
  void save(const std::string& path) const;
  static CorpusManifest load(const std::string& path);
};

struct ToyCorpusConfig {
  std::uint64_t seed = 1;
  std::size_t n_speakers = 4;
  std::size_t train_utts = 20;
  std::size_t test_utts = 5;
  double utt_seconds = 1.0;
  int sample_rate = 16000;
};

// Parametric source-filter voice.
struct ToyVoice {
  std::string id;
  double f0_hz = 120.0;        // centre of the speaker's f0 range
  double formant_scale = 1.0;  // vocal-tract length factor
  double tilt = 0.5;           // one-pole glottal lowpass coefficient
  double rate = 1.0;           // speaking-rate factor
};

std::vector<ToyVoice> toy_voices(const ToyCorpusConfig& config);

// Sentence `sentence` spoken by `voice`. Content (vowel sequence and
// intonation) depends only on (seed, sentence), so every speaker reads the
// same sentences with their own timing.
Waveform synthesize_toy_utterance(const ToyCorpusConfig& config, const ToyVoice& voice,
                                  std::size_t sentence);

// Writes wav/<speaker>/<speaker>_<split>_<nn>.wav and manifest.txt under
// out_dir. Train sentences are 0..train_utts-1, test sentences follow.
CorpusManifest make_toy_corpus(const ToyCorpusConfig& config, const std::string& out_dir);

}  // namespace vcwn
