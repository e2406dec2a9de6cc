#include "vcwn/pipeline.hpp"

#include <cmath>

#include "vcwn/error.hpp"
#include "vcwn/log.hpp"

namespace vcwn {

GvVector utterance_gv(const FeatureTrack& track) {
  GvVector gv{};
  const std::size_t n = track.frames();
  if (n == 0) return gv;
  for (std::size_t d = 0; d < kShapeDims; ++d) {
    double mean = 0.0;
    for (std::size_t t = 0; t < n; ++t) mean += track.frame(t)[d + 1];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double e = track.frame(t)[d + 1] - mean;
      var += e * e;
    }
    gv[d] = var / static_cast<double>(n);
  }
  return gv;
}

SpeakerProfile build_profile(const std::string& id, std::size_t code_index,
                             std::span<const FeatureTrack* const> tracks,
                             std::vector<std::string> utterances) {
  require(!tracks.empty(), ErrorCode::kInvalidArgument, "build_profile(" + id + "): no utterances");
  SpeakerProfile p;
  p.id = id;
  p.code_index = code_index;
  p.utterances = std::move(utterances);
  double sum = 0.0;
  std::size_t voiced = 0;
  for (const FeatureTrack* t : tracks) {
    t->validate();
    for (std::size_t i = 0; i < t->frames(); ++i)
      if (t->voiced[i]) {
        sum += t->log_f0[i];
        ++voiced;
      }
  }
  require(voiced > 0, ErrorCode::kPrecondition,
          "build_profile(" + id + "): no voiced frames in the corpus");
  p.lf0_mean = sum / static_cast<double>(voiced);
  double ss = 0.0;
  for (const FeatureTrack* t : tracks)
    for (std::size_t i = 0; i < t->frames(); ++i)
      if (t->voiced[i]) ss += (t->log_f0[i] - p.lf0_mean) * (t->log_f0[i] - p.lf0_mean);
  p.lf0_std = std::max(std::sqrt(ss / static_cast<double>(voiced)), kLf0StdFloor);
  for (const FeatureTrack* t : tracks) {
    const GvVector g = utterance_gv(*t);
    for (std::size_t d = 0; d < kShapeDims; ++d) p.gv[d] += g[d];
  }
  for (double& g : p.gv) g /= static_cast<double>(tracks.size());
  return p;
}

double transform_log_f0(double log_f0, const SpeakerProfile& source, const SpeakerProfile& target) {
  require(std::isfinite(source.lf0_std) && source.lf0_std >= kLf0StdFloor,
          ErrorCode::kInvalidArgument,
          "transform_f0: degenerate log-f0 std for source '" + source.id + "'");
  return (log_f0 - source.lf0_mean) / source.lf0_std * target.lf0_std + target.lf0_mean;
}

FeatureTrack transform_f0(const FeatureTrack& track, const SpeakerProfile& source,
                          const SpeakerProfile& target) {
  FeatureTrack out = track;
  for (std::size_t i = 0; i < out.frames(); ++i)
    if (out.voiced[i]) out.log_f0[i] = transform_log_f0(out.log_f0[i], source, target);
  return out;
}

FeatureTrack compensate_energy(const FeatureTrack& converted, const FeatureTrack& source) {
  require(converted.frames() == source.frames(), ErrorCode::kInvalidArgument,
          "compensate_energy: converted track has " + std::to_string(converted.frames()) +
              " frames, source has " + std::to_string(source.frames()));
  FeatureTrack out = converted;
  for (std::size_t t = 0; t < out.frames(); ++t) {
    out.energy[t] = source.energy[t];
    out.frame(t)[0] = source.frame(t)[0];
  }
  return out;
}

FeatureTrack gv_postfilter(const FeatureTrack& track, std::span<const double> target_gv) {
  require(target_gv.size() == kShapeDims, ErrorCode::kInvalidArgument,
          "gv_postfilter: target GV must have " + std::to_string(kShapeDims) + " dims");
  FeatureTrack out = track;
  const std::size_t n = track.frames();
  if (n < 2) {
    log_warning("gv_postfilter: track with " + std::to_string(n) + " frame(s) left unchanged");
    return out;
  }
  for (std::size_t d = 0; d < kShapeDims; ++d) {
    require(std::isfinite(target_gv[d]) && target_gv[d] >= 0.0, ErrorCode::kInvalidArgument,
            "gv_postfilter: target GV must be finite and non-negative");
    double mean = 0.0;
    for (std::size_t t = 0; t < n; ++t) mean += track.frame(t)[d + 1];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double e = track.frame(t)[d + 1] - mean;
      var += e * e;
    }
    var /= static_cast<double>(n);
    if (var < 1e-12) continue;
    const double scale = std::sqrt(target_gv[d] / var);
    for (std::size_t t = 0; t < n; ++t) {
      double& x = out.frame(t)[d + 1];
      x = mean + scale * (x - mean);
    }
  }
  return out;
}

const char* to_string(AdaptingKind kind) {
  switch (kind) {
    case AdaptingKind::kNone: return "none";
    case AdaptingKind::kNatural: return "natural";
    case AdaptingKind::kReconstructed: return "reconstructed";
    case AdaptingKind::kReconstructedGV: return "reconstructed+GV";
  }
  return "unknown";
}

std::vector<AdaptationPair> build_adaptation_set(const VaeModel& vae, const SpeakerProfile& target,
                                                 std::span<const FeatureTrack* const> natural,
                                                 std::span<const Waveform* const> waves,
                                                 AdaptingKind kind,
                                                 std::span<const std::string> utterances) {
  require(natural.size() == waves.size(), ErrorCode::kInvalidArgument,
          "build_adaptation_set: track and waveform counts differ");
  require(utterances.empty() || utterances.size() == natural.size(), ErrorCode::kInvalidArgument,
          "build_adaptation_set: utterance name count differs");
  require(kind != AdaptingKind::kNone, ErrorCode::kInvalidArgument,
          "build_adaptation_set: adapting kind 'none' has no features");
  std::vector<AdaptationPair> out;
  out.reserve(natural.size());
  for (std::size_t i = 0; i < natural.size(); ++i) {
    AdaptationPair p;
    p.wave = waves[i];
    p.speaker = target.id;
    p.utterance = utterances.empty() ? std::to_string(i) : utterances[i];
    if (kind == AdaptingKind::kNatural) {
      p.track = *natural[i];
    } else {
      p.track = vae.forward(*natural[i], vae.code_for(target.id), ForwardMode::kReconstruct);
      if (kind == AdaptingKind::kReconstructedGV) p.track = gv_postfilter(p.track, target.gv);
    }
    // Frame counts come straight from the analysis; nothing is re-timed.
    const std::size_t spf = frame_shift_samples(p.track.frame_shift_ms, p.wave->sample_rate);
    require(p.track.frames() == natural[i]->frames() &&
                p.track.frames() * spf == p.wave->samples.size(),
            ErrorCode::kInvalidArgument,
            "build_adaptation_set: utterance '" + p.utterance +
                "' waveform length is not frames x samples per frame");
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<VocoderPair> vocoder_pairs(std::span<const AdaptationPair> set) {
  std::vector<VocoderPair> out;
  out.reserve(set.size());
  for (const AdaptationPair& p : set) out.push_back({&p.track, p.wave, p.speaker, p.utterance});
  return out;
}

const std::vector<SystemSpec>& system_specs() {
  static const std::vector<SystemSpec> specs = {
      {"B1", VocoderKind::kParametric, false, AdaptingKind::kNone, true},
      {"B2", VocoderKind::kParametric, true, AdaptingKind::kNone, true},
      {"B3", VocoderKind::kWaveNet, false, AdaptingKind::kNatural, true},
      {"B4", VocoderKind::kWaveNet, true, AdaptingKind::kNatural, true},
      {"P1", VocoderKind::kWaveNet, false, AdaptingKind::kReconstructed, true},
      {"P2", VocoderKind::kWaveNet, true, AdaptingKind::kReconstructedGV, true},
      {"UB", VocoderKind::kWaveNet, false, AdaptingKind::kNatural, false},
  };
  return specs;
}

const SystemSpec& system_spec(const std::string& id) {
  for (const SystemSpec& s : system_specs())
    if (s.id == id) return s;
  fail(ErrorCode::kInvalidArgument,
       "unknown system '" + id + "' (expected B1, B2, B3, B4, P1, P2 or UB)");
}

const WaveNetModel& SystemModels::vocoder_for(const SystemSpec& spec) const {
  const WaveNetModel* m = nullptr;
  const char* name = "";
  switch (spec.adapting) {
    case AdaptingKind::kNatural:
      m = wavenet_natural;
      name = "finetuned-natural";
      break;
    case AdaptingKind::kReconstructed:
      m = wavenet_reconstructed;
      name = "finetuned-reconstructed";
      break;
    case AdaptingKind::kReconstructedGV:
      m = wavenet_reconstructed_gv;
      name = "finetuned-reconstructed-GV";
      break;
    case AdaptingKind::kNone:
      fail(ErrorCode::kInvalidArgument, "system " + spec.id + " has no WaveNet vocoder");
  }
  require(m != nullptr, ErrorCode::kMissingModel,
          "system " + spec.id + " needs the " + std::string(name) + " WaveNet checkpoint");
  return *m;
}

SystemOutput run_system(const SystemSpec& spec, const Waveform& input, const SpeakerProfile& source,
                        const SpeakerProfile& target, const SystemModels& models,
                        const RunOptions& options) {
  require(input.sample_rate == options.sample_rate, ErrorCode::kInvalidArgument,
          "run_system: input rate " + std::to_string(input.sample_rate) + " Hz, expected " +
              std::to_string(options.sample_rate));
  return run_system(spec, analyze(input).track, source, target, models, options);
}

SystemOutput run_system(const SystemSpec& spec, const FeatureTrack& natural,
                        const SpeakerProfile& source, const SpeakerProfile& target,
                        const SystemModels& models, const RunOptions& options) {
  SystemOutput out;
  out.natural = natural;
  // Resolve every model before doing any work.
  const WaveNetModel* wavenet =
      spec.vocoder == VocoderKind::kWaveNet ? &models.vocoder_for(spec) : nullptr;
  if (spec.convert) {
    require(models.vae != nullptr, ErrorCode::kMissingModel,
            "system " + spec.id + " needs the VAE checkpoint");
    out.converted = models.vae->forward(natural, models.vae->code_for(target.id),
                                        ForwardMode::kConvert);
    out.compensated = compensate_energy(out.converted, natural);
    FeatureTrack shaped = spec.gv_postfilter ? gv_postfilter(out.compensated, target.gv)
                                             : out.compensated;
    out.final = transform_f0(shaped, source, target);
  } else {
    out.compensated = natural;
    out.final = natural;
  }
  if (spec.vocoder == VocoderKind::kParametric) {
    SynthesisConfig sc;
    sc.sample_rate = options.sample_rate;
    sc.seed = options.seed;
    out.wave = baseline_synthesize(out.final, sc);
  } else {
    out.wave = sample(*wavenet, upsample_conditioning(out.final, options.sample_rate),
                      options.seed, options.sample_rate);
  }
  return out;
}

Waveform pad_to_frames(Waveform wave, double frame_shift_ms) {
  const std::size_t spf = frame_shift_samples(frame_shift_ms, wave.sample_rate);
  const std::size_t n = (wave.samples.size() + spf - 1) / spf * spf;
  wave.samples.resize(std::max(n, spf), 0.0);
  return wave;
}

}  // namespace vcwn
