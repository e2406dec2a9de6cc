#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vcwn {

// Mel-cepstrum layout: dim 0 is the cepstral energy term, dims 1..34 are the
// spectral shape the VAE models.
inline constexpr std::size_t kMccOrder = 34;
inline constexpr std::size_t kMccDim = kMccOrder + 1;
inline constexpr std::size_t kShapeDims = kMccOrder;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class FeatureKind : std::uint8_t {
  kNatural = 0,
  kReconstructed = 1,
  kConverted = 2,
};

const char* to_string(FeatureKind kind);

// Frame-level acoustic features.
//
// `mcc` is row-major [frames x 35]. `log_f0` is natural-log Hz on voiced
// frames and 0 on unvoiced frames. `energy` holds the positive unit-sum
// normalizer taken out of each spectral envelope.
struct FeatureTrack {
  std::vector<double> mcc;
  std::vector<double> log_f0;
  std::vector<std::uint8_t> voiced;
  std::vector<double> energy;
  double frame_shift_ms = 5.0;
  FeatureKind kind = FeatureKind::kNatural;

  std::size_t frames() const { return energy.size(); }
  std::span<double> frame(std::size_t i) { return {mcc.data() + i * kMccDim, kMccDim}; }
  std::span<const double> frame(std::size_t i) const {
    return {mcc.data() + i * kMccDim, kMccDim};
  }

  void resize(std::size_t frames);
  // Throws kInvalidArgument naming the first violated invariant.
  void validate() const;
};

// Non-negative power envelope over fft_size/2 + 1 bins.
struct SpectralFrame {
  std::vector<double> sp;
};

double default_warp_alpha(int sample_rate);

struct AnalysisConfig {
  double frame_shift_ms = 5.0;
  std::size_t fft_size = 512;
  double f0_floor = 70.0;
  double f0_ceil = 400.0;
  double voicing_threshold = 0.3;
  // Width of the power-domain moving average applied before liftering.
  double smoothing_hz = 400.0;
  // <= 0 selects default_warp_alpha(sample_rate).
  double warp_alpha = 0.0;
  double energy_floor = 1e-10;
  double log_floor = 1e-10;
};

struct AnalysisResult {
  FeatureTrack track;
  std::vector<SpectralFrame> frames;  // unnormalized envelopes
};

// Simplified analysis chain: Hann-windowed short-time power spectrum,
// smoothed across frequency and cepstrally liftered for the envelope;
// normalized autocorrelation for f0.
// Frame i is centred on sample i * shift; frame count = ceil(samples / shift).
AnalysisResult analyze(const Waveform& wave, const AnalysisConfig& config = {});

struct PitchEstimate {
  double f0 = 0.0;
  double confidence = 0.0;
};

// Normalized cross-correlation pitch estimate on samples centred at `center`
// with parabolic refinement of the chosen lag.
PitchEstimate estimate_pitch(std::span<const double> samples, std::size_t center,
                             int sample_rate, double f0_floor, double f0_ceil);

struct NormalizedFrame {
  SpectralFrame frame;
  double energy_factor = 0.0;
  bool degenerate = false;
};

// Divides a frame by its bin sum. Frames whose sum does not exceed `floor`
// become uniform with energy_factor = floor and degenerate = true.
NormalizedFrame unit_sum_normalize(const SpectralFrame& frame, double floor = 1e-10);

// Mel-cepstrum of a power envelope: the log spectrum, viewed on the
// first-order all-pass warped frequency axis, is fitted with
//   log S(w~) = c0 + 2 * sum_{m=1..order} c_m cos(m w~)
// by least squares weighted with trapezoid quadrature in warped frequency.
// With warp_alpha = 0 this is the plain truncated cepstrum; any envelope
// produced by mcc_to_sp of the same order is recovered exactly.
std::vector<double> sp_to_mcc(const SpectralFrame& frame, double warp_alpha,
                              std::size_t order = kMccOrder, double log_floor = 1e-10);

SpectralFrame mcc_to_sp(std::span<const double> mcc, std::size_t fft_size,
                        double warp_alpha);

// Warped frequency of a linear frequency in [0, pi].
double warp_frequency(double omega, double alpha);

struct SynthesisConfig {
  int sample_rate = 16000;
  std::size_t fft_size = 512;
  double warp_alpha = 0.0;  // <= 0: default for the rate
  double energy_floor = 1e-10;
  std::uint64_t seed = 1;
};

// Pulse/noise excitation shaped per frame by the envelope (minimum phase)
// and overlap-added with a Hann window at the frame shift. Frames whose
// energy does not exceed the floor are silent. Output length is
// frames * shift, clamped to [-1, 1].
Waveform baseline_synthesize(const FeatureTrack& track, const SynthesisConfig& config = {});

std::size_t frame_shift_samples(double frame_shift_ms, int sample_rate);

// --- codecs -----------------------------------------------------------------

// Mu-law companding onto codes 0..mu. Inputs outside [-1, 1] are clamped
// and counted (see mu_law_clamp_count).
int mu_law_encode(double x, int mu = 255);
double mu_law_decode(int code, int mu = 255);
std::size_t mu_law_clamp_count();

// 16-bit PCM mono RIFF/WAVE.
std::vector<char> encode_wav(const Waveform& wave);
Waveform decode_wav(const std::vector<char>& bytes);
void write_wav(const std::string& path, const Waveform& wave);
Waveform read_wav(const std::string& path);

// "VCFT" feature file:
//   "VCFT" | u32 version | u32 frames | u32 dims | f32 frame_shift_ms
//   | u8 kind | frames x dims f32 mcc | frames f32 energy
//   | frames f32 log_f0 | frames u8 voiced
// Little-endian. Values are stored as 32-bit floats.
std::vector<char> encode_feature_track(const FeatureTrack& track);
FeatureTrack decode_feature_track(const std::vector<char>& bytes);
void write_feature_track(const std::string& path, const FeatureTrack& track);
FeatureTrack read_feature_track(const std::string& path);

}  // namespace vcwn
