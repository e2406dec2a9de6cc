#include "vcwn.h"

#include <cmath>
#include <memory>
#include <new>
#include <string>

#include "vcwn/analysis.hpp"
#include "vcwn/dsp.hpp"
#include "vcwn/error.hpp"
#include "vcwn/experiment.hpp"
#include "vcwn/log.hpp"
#include "vcwn/vae.hpp"
#include "vcwn/wavenet.hpp"

struct vcwn_wave {
  vcwn::Waveform w;
};
struct vcwn_track {
  vcwn::FeatureTrack t;
};
struct vcwn_vae {
  vcwn::VaeModel m;
};
struct vcwn_wavenet {
  vcwn::WaveNetModel m;
};
struct vcwn_experiment {
  vcwn::ExperimentConfig config;
  std::string scratch;
  vcwn_message_fn progress = nullptr;
  void* progress_user = nullptr;
};

namespace {

thread_local std::string g_last_error;

vcwn_status set_error(vcwn_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

vcwn_status status_of(vcwn::ErrorCode c) {
  return static_cast<vcwn_status>(static_cast<int>(c));
}

// Runs fn, translating exceptions into status codes.
template <class F>
vcwn_status guarded(F&& fn) {
  try {
    fn();
    return VCWN_OK;
  } catch (const vcwn::Error& e) {
    return set_error(status_of(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(VCWN_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(VCWN_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(VCWN_ERR_INTERNAL, "unknown error");
  }
}

#define VCWN_NEED(ptr) \
  if (!(ptr)) return set_error(VCWN_ERR_INVALID_ARGUMENT, #ptr " must not be NULL")

}  // namespace

extern "C" {

const char* vcwn_version(void) { return "1.0.0"; }
const char* vcwn_last_error(void) { return g_last_error.c_str(); }

const char* vcwn_status_name(vcwn_status s) {
  switch (s) {
    case VCWN_OK: return "ok";
    case VCWN_ERR_INVALID_ARGUMENT: return "invalid argument";
    case VCWN_ERR_CONFIG: return "configuration error";
    case VCWN_ERR_IO: return "i/o error";
    case VCWN_ERR_FORMAT: return "format error";
    case VCWN_ERR_MISSING_MODEL: return "missing model";
    case VCWN_ERR_NON_FINITE: return "non-finite value";
    case VCWN_ERR_PRECONDITION: return "precondition failed";
    case VCWN_ERR_DIVERGENCE: return "training diverged";
    case VCWN_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void vcwn_set_warning_handler(vcwn_message_fn fn, void* user) {
  if (!fn) {
    vcwn::set_warning_sink({});
    return;
  }
  vcwn::set_warning_sink([fn, user](std::string_view m) { fn(std::string(m).c_str(), user); });
}

// ---- waveforms ----

vcwn_status vcwn_wave_create(const double* samples, size_t length, int sample_rate, vcwn_wave** out) {
  VCWN_NEED(out);
  if (length > 0) VCWN_NEED(samples);
  if (sample_rate <= 0) return set_error(VCWN_ERR_INVALID_ARGUMENT, "sample_rate must be positive");
  return guarded([&] {
    auto w = std::make_unique<vcwn_wave>();
    w->w.samples.assign(samples, samples + length);
    w->w.sample_rate = sample_rate;
    *out = w.release();
  });
}

vcwn_status vcwn_wave_read(const char* path, vcwn_wave** out) {
  VCWN_NEED(path);
  VCWN_NEED(out);
  return guarded([&] { *out = new vcwn_wave{vcwn::read_wav(path)}; });
}

vcwn_status vcwn_wave_write(const vcwn_wave* wave, const char* path) {
  VCWN_NEED(wave);
  VCWN_NEED(path);
  return guarded([&] { vcwn::write_wav(path, wave->w); });
}

size_t vcwn_wave_length(const vcwn_wave* wave) { return wave ? wave->w.samples.size() : 0; }
int vcwn_wave_sample_rate(const vcwn_wave* wave) { return wave ? wave->w.sample_rate : 0; }
const double* vcwn_wave_samples(const vcwn_wave* wave) {
  return wave ? wave->w.samples.data() : nullptr;
}
void vcwn_wave_free(vcwn_wave* wave) { delete wave; }

int vcwn_mu_law_encode(double x) { return vcwn::mu_law_encode(x); }
double vcwn_mu_law_decode(int code) { return vcwn::mu_law_decode(code); }

// ---- tracks ----

vcwn_status vcwn_analyze(const vcwn_wave* wave, vcwn_track** out) {
  VCWN_NEED(wave);
  VCWN_NEED(out);
  return guarded([&] { *out = new vcwn_track{vcwn::analyze(wave->w).track}; });
}

vcwn_status vcwn_track_read(const char* path, vcwn_track** out) {
  VCWN_NEED(path);
  VCWN_NEED(out);
  return guarded([&] { *out = new vcwn_track{vcwn::read_feature_track(path)}; });
}

vcwn_status vcwn_track_write(const vcwn_track* track, const char* path) {
  VCWN_NEED(track);
  VCWN_NEED(path);
  return guarded([&] { vcwn::write_feature_track(path, track->t); });
}

size_t vcwn_track_frames(const vcwn_track* track) { return track ? track->t.frames() : 0; }
size_t vcwn_track_dims(void) { return vcwn::kMccDim; }

vcwn_status vcwn_track_mcc(const vcwn_track* track, size_t frame, double* out) {
  VCWN_NEED(track);
  VCWN_NEED(out);
  if (frame >= track->t.frames()) return set_error(VCWN_ERR_INVALID_ARGUMENT, "frame out of range");
  const auto f = track->t.frame(frame);
  std::copy(f.begin(), f.end(), out);
  return VCWN_OK;
}

vcwn_status vcwn_track_frame_info(const vcwn_track* track, size_t frame, int* voiced,
                                  double* log_f0, double* energy) {
  VCWN_NEED(track);
  if (frame >= track->t.frames()) return set_error(VCWN_ERR_INVALID_ARGUMENT, "frame out of range");
  if (voiced) *voiced = track->t.voiced[frame] ? 1 : 0;
  if (log_f0) *log_f0 = track->t.log_f0[frame];
  if (energy) *energy = track->t.energy[frame];
  return VCWN_OK;
}

vcwn_status vcwn_synthesize(const vcwn_track* track, int sample_rate, uint64_t seed, vcwn_wave** out) {
  VCWN_NEED(track);
  VCWN_NEED(out);
  return guarded([&] {
    vcwn::SynthesisConfig sc;
    sc.sample_rate = sample_rate;
    sc.seed = seed;
    *out = new vcwn_wave{vcwn::baseline_synthesize(track->t, sc)};
  });
}

void vcwn_track_free(vcwn_track* track) { delete track; }

vcwn_status vcwn_mean_mcd(const vcwn_track* a, const vcwn_track* b, int use_dtw, double* out) {
  VCWN_NEED(a);
  VCWN_NEED(b);
  VCWN_NEED(out);
  return guarded([&] {
    *out = vcwn::mean_mcd(a->t, b->t, use_dtw ? vcwn::Alignment::kDtw : vcwn::Alignment::kNone);
  });
}

// ---- models ----

vcwn_status vcwn_vae_load(const char* path, vcwn_vae** out) {
  VCWN_NEED(path);
  VCWN_NEED(out);
  return guarded([&] {
    *out = new vcwn_vae{vcwn::VaeModel::from_checkpoint(vcwn::Checkpoint::load(path))};
  });
}

vcwn_status vcwn_vae_forward(const vcwn_vae* vae, const vcwn_track* track, const char* speaker,
                             int reconstruct, vcwn_track** out) {
  VCWN_NEED(vae);
  VCWN_NEED(track);
  VCWN_NEED(speaker);
  VCWN_NEED(out);
  return guarded([&] {
    const auto mode = reconstruct ? vcwn::ForwardMode::kReconstruct : vcwn::ForwardMode::kConvert;
    *out = new vcwn_track{vae->m.forward(track->t, vae->m.code_for(speaker), mode)};
  });
}

size_t vcwn_vae_speaker_count(const vcwn_vae* vae) { return vae ? vae->m.speakers().size() : 0; }
const char* vcwn_vae_speaker(const vcwn_vae* vae, size_t index) {
  if (!vae || index >= vae->m.speakers().size()) return nullptr;
  return vae->m.speakers()[index].c_str();
}
void vcwn_vae_free(vcwn_vae* vae) { delete vae; }

vcwn_status vcwn_wavenet_load(const char* path, vcwn_wavenet** out) {
  VCWN_NEED(path);
  VCWN_NEED(out);
  return guarded([&] {
    *out = new vcwn_wavenet{vcwn::WaveNetModel::from_checkpoint(vcwn::Checkpoint::load(path))};
  });
}

size_t vcwn_wavenet_receptive_field(const vcwn_wavenet* net) {
  return net ? net->m.config().receptive_field() : 0;
}

const char* vcwn_wavenet_provenance(const vcwn_wavenet* net) {
  return net ? vcwn::to_string(net->m.provenance()) : nullptr;
}

vcwn_status vcwn_wavenet_nll(const vcwn_wavenet* net, const vcwn_wave* wave, const vcwn_track* track,
                             double* out) {
  VCWN_NEED(net);
  VCWN_NEED(wave);
  VCWN_NEED(track);
  VCWN_NEED(out);
  return guarded([&] {
    *out = vcwn::teacher_forced_nll(net->m, wave->w,
                                    vcwn::upsample_conditioning(track->t, wave->w.sample_rate));
  });
}

vcwn_status vcwn_wavenet_generate(const vcwn_wavenet* net, const vcwn_track* track, int sample_rate,
                                  uint64_t seed, vcwn_wave** out) {
  VCWN_NEED(net);
  VCWN_NEED(track);
  VCWN_NEED(out);
  return guarded([&] {
    *out = new vcwn_wave{vcwn::sample(net->m, vcwn::upsample_conditioning(track->t, sample_rate),
                                      seed, sample_rate)};
  });
}

void vcwn_wavenet_free(vcwn_wavenet* net) { delete net; }

// ---- experiments ----

size_t vcwn_stage_count(void) { return vcwn::stage_names().size(); }
const char* vcwn_stage_name(size_t index) {
  const auto& s = vcwn::stage_names();
  return index < s.size() ? s[index].c_str() : nullptr;
}

size_t vcwn_config_key_count(void) { return vcwn::ExperimentConfig::keys().size(); }
const char* vcwn_config_key_name(size_t index) {
  const auto& k = vcwn::ExperimentConfig::keys();
  return index < k.size() ? k[index].name : nullptr;
}
const char* vcwn_config_key_default(size_t index) {
  const auto& k = vcwn::ExperimentConfig::keys();
  return index < k.size() ? k[index].default_value : nullptr;
}
const char* vcwn_config_key_help(size_t index) {
  const auto& k = vcwn::ExperimentConfig::keys();
  return index < k.size() ? k[index].help : nullptr;
}
const char* vcwn_config_env_prefix(void) { return "VCWN_"; }

vcwn_status vcwn_experiment_create(vcwn_experiment** out) {
  VCWN_NEED(out);
  return guarded([&] { *out = new vcwn_experiment(); });
}

vcwn_status vcwn_experiment_load_config(vcwn_experiment* exp, const char* path) {
  VCWN_NEED(exp);
  VCWN_NEED(path);
  return guarded([&] { exp->config.merge_file(path); });
}

vcwn_status vcwn_experiment_apply_environment(vcwn_experiment* exp) {
  VCWN_NEED(exp);
  return guarded([&] { exp->config.apply_environment(); });
}

vcwn_status vcwn_experiment_set(vcwn_experiment* exp, const char* key, const char* value) {
  VCWN_NEED(exp);
  VCWN_NEED(key);
  VCWN_NEED(value);
  return guarded([&] { exp->config.set(key, value); });
}

const char* vcwn_experiment_get(vcwn_experiment* exp, const char* key) {
  if (!exp || !key) return "";
  exp->scratch = exp->config.get(key);
  return exp->scratch.c_str();
}

vcwn_status vcwn_experiment_validate(const vcwn_experiment* exp) {
  VCWN_NEED(exp);
  return guarded([&] { exp->config.require_valid(); });
}

const char* vcwn_experiment_config_hash(vcwn_experiment* exp) {
  if (!exp) return "";
  exp->scratch = exp->config.hash();
  return exp->scratch.c_str();
}

void vcwn_experiment_set_progress(vcwn_experiment* exp, vcwn_message_fn fn, void* user) {
  if (!exp) return;
  exp->progress = fn;
  exp->progress_user = user;
}

vcwn_status vcwn_experiment_run(vcwn_experiment* exp, const char* stage) {
  VCWN_NEED(exp);
  VCWN_NEED(stage);
  return guarded([&] {
    vcwn::Experiment e(exp->config);
    if (exp->progress) {
      auto fn = exp->progress;
      void* user = exp->progress_user;
      e.set_progress_sink([fn, user](std::string_view s) { fn(std::string(s).c_str(), user); });
    }
    e.run(stage);
  });
}

void vcwn_experiment_free(vcwn_experiment* exp) { delete exp; }

}  // extern "C"
