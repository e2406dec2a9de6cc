#ifndef VCWN_H
#define VCWN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define VCWN_API __declspec(dllexport)
#else
#define VCWN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every fallible call returns a status; on failure vcwn_last_error() holds
   the message for the calling thread until its next failing call. */
typedef enum vcwn_status {
  VCWN_OK = 0,
  VCWN_ERR_INVALID_ARGUMENT = 1,
  VCWN_ERR_CONFIG = 2,
  VCWN_ERR_IO = 3,
  VCWN_ERR_FORMAT = 4,
  VCWN_ERR_MISSING_MODEL = 5,
  VCWN_ERR_NON_FINITE = 6,
  VCWN_ERR_PRECONDITION = 7,
  VCWN_ERR_DIVERGENCE = 8,
  VCWN_ERR_INTERNAL = 99
} vcwn_status;

VCWN_API const char* vcwn_version(void);
VCWN_API const char* vcwn_last_error(void);
VCWN_API const char* vcwn_status_name(vcwn_status status);

/* Library warnings (e.g. postfilter no-ops); NULL restores stderr. */
typedef void (*vcwn_message_fn)(const char* message, void* user);
VCWN_API void vcwn_set_warning_handler(vcwn_message_fn fn, void* user);

/* ---- waveforms ---- */
typedef struct vcwn_wave vcwn_wave;

VCWN_API vcwn_status vcwn_wave_create(const double* samples, size_t length, int sample_rate,
                                      vcwn_wave** out);
VCWN_API vcwn_status vcwn_wave_read(const char* path, vcwn_wave** out);
VCWN_API vcwn_status vcwn_wave_write(const vcwn_wave* wave, const char* path);
VCWN_API size_t vcwn_wave_length(const vcwn_wave* wave);
VCWN_API int vcwn_wave_sample_rate(const vcwn_wave* wave);
VCWN_API const double* vcwn_wave_samples(const vcwn_wave* wave);
VCWN_API void vcwn_wave_free(vcwn_wave* wave);

VCWN_API int vcwn_mu_law_encode(double x);
VCWN_API double vcwn_mu_law_decode(int code);

/* ---- feature tracks: 35 MCCs, log-f0, voicing, energy per 5 ms frame ---- */
typedef struct vcwn_track vcwn_track;

VCWN_API vcwn_status vcwn_analyze(const vcwn_wave* wave, vcwn_track** out);
VCWN_API vcwn_status vcwn_track_read(const char* path, vcwn_track** out);
VCWN_API vcwn_status vcwn_track_write(const vcwn_track* track, const char* path);
VCWN_API size_t vcwn_track_frames(const vcwn_track* track);
VCWN_API size_t vcwn_track_dims(void);
/* Copies the vcwn_track_dims() coefficients of one frame into out. */
VCWN_API vcwn_status vcwn_track_mcc(const vcwn_track* track, size_t frame, double* out);
VCWN_API vcwn_status vcwn_track_frame_info(const vcwn_track* track, size_t frame, int* voiced,
                                           double* log_f0, double* energy);
VCWN_API vcwn_status vcwn_synthesize(const vcwn_track* track, int sample_rate, uint64_t seed,
                                     vcwn_wave** out);
VCWN_API void vcwn_track_free(vcwn_track* track);

/* Mean mel-cepstral distortion in dB over dims 1..34; use_dtw = 0 needs
   equal lengths. */
VCWN_API vcwn_status vcwn_mean_mcd(const vcwn_track* a, const vcwn_track* b, int use_dtw,
                                   double* out);

/* ---- models ---- */
typedef struct vcwn_vae vcwn_vae;

VCWN_API vcwn_status vcwn_vae_load(const char* path, vcwn_vae** out);
/* reconstruct != 0 uses the track's own speaker (pass it as speaker). */
VCWN_API vcwn_status vcwn_vae_forward(const vcwn_vae* vae, const vcwn_track* track,
                                      const char* speaker, int reconstruct, vcwn_track** out);
VCWN_API size_t vcwn_vae_speaker_count(const vcwn_vae* vae);
VCWN_API const char* vcwn_vae_speaker(const vcwn_vae* vae, size_t index);
VCWN_API void vcwn_vae_free(vcwn_vae* vae);

typedef struct vcwn_wavenet vcwn_wavenet;

VCWN_API vcwn_status vcwn_wavenet_load(const char* path, vcwn_wavenet** out);
VCWN_API size_t vcwn_wavenet_receptive_field(const vcwn_wavenet* net);
/* "untrained", "SI", "finetuned-natural", "finetuned-reconstructed",
   "finetuned-reconstructed-GV". */
VCWN_API const char* vcwn_wavenet_provenance(const vcwn_wavenet* net);
/* Teacher-forced mean NLL in nats per sample. */
VCWN_API vcwn_status vcwn_wavenet_nll(const vcwn_wavenet* net, const vcwn_wave* wave,
                                      const vcwn_track* track, double* out);
VCWN_API vcwn_status vcwn_wavenet_generate(const vcwn_wavenet* net, const vcwn_track* track,
                                           int sample_rate, uint64_t seed, vcwn_wave** out);
VCWN_API void vcwn_wavenet_free(vcwn_wavenet* net);

/* ---- experiments ---- */
typedef struct vcwn_experiment vcwn_experiment;

VCWN_API size_t vcwn_stage_count(void);
VCWN_API const char* vcwn_stage_name(size_t index);
VCWN_API size_t vcwn_config_key_count(void);
VCWN_API const char* vcwn_config_key_name(size_t index);
VCWN_API const char* vcwn_config_key_default(size_t index);
VCWN_API const char* vcwn_config_key_help(size_t index);
VCWN_API const char* vcwn_config_env_prefix(void);

/* Starts from the built-in defaults. */
VCWN_API vcwn_status vcwn_experiment_create(vcwn_experiment** out);
VCWN_API vcwn_status vcwn_experiment_load_config(vcwn_experiment* exp, const char* path);
VCWN_API vcwn_status vcwn_experiment_apply_environment(vcwn_experiment* exp);
VCWN_API vcwn_status vcwn_experiment_set(vcwn_experiment* exp, const char* key, const char* value);
/* Value of a key, "" if unset; owned by exp until the next call on it. */
VCWN_API const char* vcwn_experiment_get(vcwn_experiment* exp, const char* key);
/* VCWN_ERR_CONFIG with one problem per line in vcwn_last_error(). */
VCWN_API vcwn_status vcwn_experiment_validate(const vcwn_experiment* exp);
VCWN_API const char* vcwn_experiment_config_hash(vcwn_experiment* exp);
VCWN_API void vcwn_experiment_set_progress(vcwn_experiment* exp, vcwn_message_fn fn, void* user);
/* A stage name or "full-run". */
VCWN_API vcwn_status vcwn_experiment_run(vcwn_experiment* exp, const char* stage);
VCWN_API void vcwn_experiment_free(vcwn_experiment* exp);

#ifdef __cplusplus
}
#endif

#endif
