#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vcwn/dsp.hpp"
#include "vcwn/vae.hpp"
#include "vcwn/wavenet.hpp"

namespace vcwn {

using GvVector = std::array<double, kShapeDims>;  // MCC dims 1..34

// Smallest log-f0 standard deviation a profile may carry.
inline constexpr double kLf0StdFloor = 1e-3;

struct SpeakerProfile {
  std::string id;
  std::size_t code_index = 0;
  double lf0_mean = 0.0;
  double lf0_std = kLf0StdFloor;
  GvVector gv{};
  std::vector<std::string> utterances;
};

// Population variance of each shape dim over the utterance's frames.
GvVector utterance_gv(const FeatureTrack& track);

// Log-f0 statistics over voiced frames of all tracks (std floored at
// kLf0StdFloor); GV = mean over tracks of utterance_gv.
SpeakerProfile build_profile(const std::string& id, std::size_t code_index,
                             std::span<const FeatureTrack* const> tracks,
                             std::vector<std::string> utterances = {});

// Mean-variance mapping of log-f0 from source to target statistics.
double transform_log_f0(double log_f0, const SpeakerProfile& source, const SpeakerProfile& target);
// Applies it to voiced frames; unvoiced frames keep log_f0 = 0.
FeatureTrack transform_f0(const FeatureTrack& track, const SpeakerProfile& source,
                          const SpeakerProfile& target);

// Copies the source's per-frame energy and MCC dim 0 into the converted
// track; dims 1..34, f0 and voicing stay as converted.
FeatureTrack compensate_energy(const FeatureTrack& converted, const FeatureTrack& source);

// Variance scaling of each shape dim so its utterance variance equals
// target_gv. Dims with variance < 1e-12 are left alone. A single-frame track
// is returned unchanged with a warning.
FeatureTrack gv_postfilter(const FeatureTrack& track, std::span<const double> target_gv);

enum class AdaptingKind : std::uint8_t { kNone, kNatural, kReconstructed, kReconstructedGV };
enum class VocoderKind : std::uint8_t { kParametric, kWaveNet };

const char* to_string(AdaptingKind kind);

struct AdaptationPair {
  FeatureTrack track;
  const Waveform* wave = nullptr;
  std::string speaker;
  std::string utterance;
};

// Pairs of (features, waveform) for fine-tuning on one target speaker.
// Natural: the analysis tracks unchanged. Reconstructed: VAE forward with
// the target's own code; the GV variant also runs the postfilter with the
// target's GV. Frame counts are never altered.
std::vector<AdaptationPair> build_adaptation_set(const VaeModel& vae, const SpeakerProfile& target,
                                                 std::span<const FeatureTrack* const> natural,
                                                 std::span<const Waveform* const> waves,
                                                 AdaptingKind kind,
                                                 std::span<const std::string> utterances = {});

std::vector<VocoderPair> vocoder_pairs(std::span<const AdaptationPair> set);

struct SystemSpec {
  std::string id;
  VocoderKind vocoder = VocoderKind::kParametric;
  bool gv_postfilter = false;
  AdaptingKind adapting = AdaptingKind::kNone;
  bool convert = true;  // false only for the upper bound
};

// B1, B2, B3, B4, P1, P2, UB in that order.
const std::vector<SystemSpec>& system_specs();
const SystemSpec& system_spec(const std::string& id);

// Fine-tuned vocoders by adapting feature; any may be absent.
struct SystemModels {
  const VaeModel* vae = nullptr;
  const WaveNetModel* wavenet_natural = nullptr;
  const WaveNetModel* wavenet_reconstructed = nullptr;
  const WaveNetModel* wavenet_reconstructed_gv = nullptr;

  // Throws kMissingModel naming the checkpoint the spec needs.
  const WaveNetModel& vocoder_for(const SystemSpec& spec) const;
};

struct SystemOutput {
  Waveform wave;
  FeatureTrack natural;      // analysis of the input
  FeatureTrack converted;    // VAE output (empty for UB)
  FeatureTrack compensated;  // after energy compensation
  FeatureTrack final;        // vocoder input
};

struct RunOptions {
  std::uint64_t seed = 1;
  int sample_rate = 16000;
};

// analyze -> VAE convert -> energy compensation -> optional GV postfilter
// -> f0 transform -> vocoder. The upper bound resynthesizes the input's
// natural features with the natural-adapted WaveNet.
SystemOutput run_system(const SystemSpec& spec, const Waveform& input, const SpeakerProfile& source,
                        const SpeakerProfile& target, const SystemModels& models,
                        const RunOptions& options = {});
// Same chain from an already analysed input track.
SystemOutput run_system(const SystemSpec& spec, const FeatureTrack& natural,
                        const SpeakerProfile& source, const SpeakerProfile& target,
                        const SystemModels& models, const RunOptions& options = {});

// Zero-pads a waveform to a whole number of frames so analysis frames tile
// it exactly (frames x samples per frame = samples).
Waveform pad_to_frames(Waveform wave, double frame_shift_ms = 5.0);

}  // namespace vcwn
