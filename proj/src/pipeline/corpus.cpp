#include "vcwn/corpus.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>
#include <sstream>

#include "vcwn/binary_io.hpp"
#include "vcwn/error.hpp"
#include "vcwn/rng.hpp"

namespace vcwn {

namespace fs = std::filesystem;

std::string ManifestEntry::utterance_id() const { return fs::path(path).stem().string(); }

std::vector<ManifestEntry> CorpusManifest::select(const std::string& speaker,
                                                  const std::string& split) const {
  std::vector<ManifestEntry> out;
  for (const ManifestEntry& e : entries)
    if (e.speaker == speaker && e.split == split) out.push_back(e);
  return out;
}

std::string CorpusManifest::resolve(const ManifestEntry& entry) const {
  const fs::path p(entry.path);
  if (p.is_absolute() || root.empty()) return p.string();
  return (fs::path(root) / p).string();
}

void CorpusManifest::validate() const {
  require(!speakers.empty(), ErrorCode::kConfig, "manifest: no speakers");
  std::set<std::string> seen;
  for (const ManifestEntry& e : entries) {
    require(e.split == "train" || e.split == "test", ErrorCode::kConfig,
            "manifest: unknown split '" + e.split + "' for " + e.path);
    require(std::find(speakers.begin(), speakers.end(), e.speaker) != speakers.end(),
            ErrorCode::kConfig, "manifest: unlisted speaker '" + e.speaker + "'");
    // A path listed twice would either duplicate data or sit in both splits.
    require(seen.insert(e.path).second, ErrorCode::kConfig,
            "manifest: utterance listed more than once: " + e.path);
  }
}

std::string CorpusManifest::serialize() const {
  std::ostringstream os;
  os << "# speaker split path\n";
  for (const ManifestEntry& e : entries) os << e.speaker << ' ' << e.split << ' ' << e.path << '\n';
  return os.str();
}

CorpusManifest CorpusManifest::parse(const std::string& text, const std::string& root) {
  CorpusManifest m;
  m.root = root;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.speaker)) continue;
    std::string extra;
    if (!(ls >> e.split >> e.path) || (ls >> extra))
      fail(ErrorCode::kFormat,
           "manifest line " + std::to_string(lineno) + ": expected 'speaker split path'");
    if (std::find(m.speakers.begin(), m.speakers.end(), e.speaker) == m.speakers.end())
      m.speakers.push_back(e.speaker);
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

void CorpusManifest::save(const std::string& path) const {
  const std::string text = serialize();
  write_file_bytes(path, std::vector<char>(text.begin(), text.end()));
}

CorpusManifest CorpusManifest::load(const std::string& path) {
  const std::vector<char> bytes = read_file_bytes(path);
  return parse(std::string(bytes.begin(), bytes.end()),
               fs::path(path).parent_path().string());
}

// --- generator --------------------------------------------------------------

namespace {

struct Vowel {
  double f[3];
  double bw[3];
};

// Adult-male reference formants; scaled per voice.
constexpr Vowel kVowels[] = {
    {{730, 1090, 2440}, {90, 110, 160}},  // a
    {{270, 2290, 3010}, {60, 100, 170}},  // i
    {{300, 870, 2240}, {60, 90, 150}},    // u
    {{530, 1840, 2480}, {70, 100, 160}},  // e
    {{570, 840, 2410}, {80, 90, 150}},    // o
};
constexpr std::size_t kNumVowels = sizeof(kVowels) / sizeof(kVowels[0]);

struct Segment {
  std::size_t vowel;
  double seconds;
  bool pause_after;
  double pitch_offset;  // log-f0 offset of the segment target
};

// Two-pole resonator with unit gain at DC.
struct Resonator {
  double y1 = 0.0, y2 = 0.0;
  double step(double x, double freq, double bw, int sr) {
    const double r = std::exp(-std::numbers::pi * bw / sr);
    const double a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * freq / sr);
    const double a2 = -r * r;
    const double g = 1.0 - a1 - a2;
    const double y = g * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

}  // namespace

std::vector<ToyVoice> toy_voices(const ToyCorpusConfig& config) {
  require(config.n_speakers >= 2, ErrorCode::kConfig, "toy corpus needs at least 2 speakers");
  std::vector<ToyVoice> voices;
  Rng rng = Rng(config.seed).fork(100);
  const std::size_t n = config.n_speakers;
  for (std::size_t s = 0; s < n; ++s) {
    ToyVoice v;
    char id[32];
    std::snprintf(id, sizeof(id), "spk%02zu", s + 1);
    v.id = id;
    // Log-f0 centres spaced 0.25 apart keep speakers separable.
    const double u = n > 1 ? static_cast<double>(s) / static_cast<double>(n - 1) : 0.0;
    v.f0_hz = 100.0 * std::exp(0.25 * static_cast<double>(s)) * std::exp(rng.uniform(-0.03, 0.03));
    v.formant_scale = 0.88 + 0.3 * u + rng.uniform(-0.02, 0.02);
    v.tilt = 0.35 + 0.4 * ((s * 7919) % n) / static_cast<double>(n) + rng.uniform(-0.03, 0.03);
    v.rate = 0.9 + 0.2 * rng.uniform();
    voices.push_back(v);
  }
  return voices;
}

Waveform synthesize_toy_utterance(const ToyCorpusConfig& config, const ToyVoice& voice,
                                  std::size_t sentence) {
  require(config.sample_rate >= 8000, ErrorCode::kConfig, "toy corpus: sample rate too low");
  require(config.utt_seconds > 0.2, ErrorCode::kConfig, "toy corpus: utterances too short");
  const int sr = config.sample_rate;

  // Content shared across speakers.
  Rng content = Rng(mix_seed(config.seed, 0x5e57e9ce)).fork(sentence);
  std::vector<Segment> segments;
  double total = 0.0;
  const double speech = config.utt_seconds - 0.12;
  while (total < speech) {
    Segment seg;
    seg.vowel = content.index(kNumVowels);
    seg.seconds = content.uniform(0.12, 0.22);
    seg.pause_after = content.uniform() < 0.15;
    seg.pitch_offset = content.uniform(-0.08, 0.08);
    total += seg.seconds + (seg.pause_after ? 0.05 : 0.0);
    segments.push_back(seg);
  }
  const double declination = content.uniform(0.05, 0.15);

  // Speaker-specific timing and noise.
  Rng local = Rng(mix_seed(config.seed, fnv1a(voice.id))).fork(sentence);
  std::vector<double> dur(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i)
    dur[i] = segments[i].seconds * voice.rate * std::exp(local.uniform(-0.1, 0.1));

  const double lead = 0.06 * std::exp(local.uniform(-0.2, 0.2));
  double speech_len = 0.0;
  for (std::size_t i = 0; i < segments.size(); ++i)
    speech_len += dur[i] + (segments[i].pause_after ? 0.05 : 0.0);
  const auto raw_n = static_cast<std::size_t>((lead + speech_len + 0.06) * sr);
  // Whole number of 5 ms frames, so analysis frames tile the waveform exactly.
  const std::size_t frame = frame_shift_samples(5.0, sr);
  const std::size_t n = (raw_n + frame - 1) / frame * frame;

  // Per-sample targets: vowel index blend, voicing gate, log-f0.
  std::vector<double> gate(n, 0.0), lf0(n, std::log(voice.f0_hz));
  std::vector<std::array<double, 6>> formant(n);
  const auto ramp = static_cast<std::size_t>(0.015 * sr);
  double t0 = lead;
  const Vowel* prev = &kVowels[segments.front().vowel];
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const Vowel& v = kVowels[segments[i].vowel];
    const auto b = static_cast<std::size_t>(t0 * sr);
    const auto e = std::min(n, static_cast<std::size_t>((t0 + dur[i]) * sr));
    const auto trans = static_cast<std::size_t>(0.03 * sr);
    for (std::size_t k = b; k < e; ++k) {
      const double w = std::min(1.0, static_cast<double>(k - b) / static_cast<double>(trans));
      for (int f = 0; f < 3; ++f) {
        formant[k][f] = ((1.0 - w) * prev->f[f] + w * v.f[f]) * voice.formant_scale;
        formant[k][3 + f] = ((1.0 - w) * prev->bw[f] + w * v.bw[f]) * voice.formant_scale;
      }
      const double up = std::min(1.0, static_cast<double>(k - b) / ramp);
      const double down = std::min(1.0, static_cast<double>(e - k) / ramp);
      gate[k] = std::min(up, segments[i].pause_after ? down : 1.0);
      const double pos = static_cast<double>(k) / static_cast<double>(n);
      lf0[k] = std::log(voice.f0_hz) + segments[i].pitch_offset - declination * pos;
    }
    prev = &v;
    t0 += dur[i] + (segments[i].pause_after ? 0.05 : 0.0);
    if (segments[i].pause_after) {
      const auto pe = std::min(n, static_cast<std::size_t>(t0 * sr));
      for (std::size_t k = e; k < pe; ++k) {
        for (int f = 0; f < 6; ++f) formant[k][f] = formant[e > 0 ? e - 1 : 0][f];
      }
    }
  }
  // Final fade-out of the last segment.
  const auto speech_end = std::min(n, static_cast<std::size_t>(t0 * sr));
  for (std::size_t k = speech_end > ramp ? speech_end - ramp : 0; k < speech_end; ++k)
    gate[k] = std::min(gate[k], static_cast<double>(speech_end - k) / ramp);
  for (std::size_t k = 0; k < n; ++k)
    if (formant[k][0] == 0.0)
      for (int f = 0; f < 3; ++f) {
        formant[k][f] = kVowels[0].f[f] * voice.formant_scale;
        formant[k][3 + f] = kVowels[0].bw[f] * voice.formant_scale;
      }

  // Smooth the f0 contour so segment boundaries glide.
  const double smooth = std::exp(-1.0 / (0.02 * sr));
  for (std::size_t k = 1; k < n; ++k) lf0[k] = smooth * lf0[k - 1] + (1.0 - smooth) * lf0[k];

  Waveform wave;
  wave.sample_rate = sr;
  wave.samples.assign(n, 0.0);
  Resonator res[3];
  double phase = 0.0, glottal = 0.0, prev_pulse = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double f0 = std::exp(lf0[k]) * (1.0 + 0.005 * local.normal());
    phase += f0 / sr;
    double pulse = 0.0;
    if (phase >= 1.0) {
      phase -= 1.0;
      // Split the impulse over two samples by its fractional position.
      const double frac = phase * sr / f0;
      pulse = 1.0 - frac;
      prev_pulse = frac;
    } else {
      pulse = prev_pulse;
      prev_pulse = 0.0;
    }
    glottal = voice.tilt * glottal + (1.0 - voice.tilt) * pulse;
    double x = gate[k] * (glottal * std::sqrt(static_cast<double>(sr) / f0) +
                          0.005 * local.normal());
    for (int f = 0; f < 3; ++f) x = res[f].step(x, formant[k][f], formant[k][3 + f], sr);
    wave.samples[k] = x;
  }
  double peak = 0.0;
  for (double s : wave.samples) peak = std::max(peak, std::abs(s));
  const double gain = peak > 0.0 ? 0.5 / peak : 1.0;
  for (double& s : wave.samples) s = s * gain + 1e-4 * local.normal();
  return wave;
}

CorpusManifest make_toy_corpus(const ToyCorpusConfig& config, const std::string& out_dir) {
  require(config.train_utts >= 1, ErrorCode::kConfig, "toy corpus: need training utterances");
  const std::vector<ToyVoice> voices = toy_voices(config);
  CorpusManifest m;
  m.root = out_dir;
  for (const ToyVoice& v : voices) {
    m.speakers.push_back(v.id);
    for (std::size_t u = 0; u < config.train_utts + config.test_utts; ++u) {
      const bool train = u < config.train_utts;
      const std::size_t index = train ? u : u - config.train_utts;
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%s_%02zu.wav", v.id.c_str(), train ? "train" : "test",
                    index + 1);
      ManifestEntry e{v.id, train ? "train" : "test", "wav/" + v.id + "/" + name};
      write_wav(m.resolve(e), synthesize_toy_utterance(config, v, u));
      m.entries.push_back(std::move(e));
    }
  }
  m.validate();
  m.save((fs::path(out_dir) / "manifest.txt").string());
  return m;
}

}  // namespace vcwn
