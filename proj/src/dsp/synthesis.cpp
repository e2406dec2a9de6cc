#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "vcwn/dsp.hpp"
#include "vcwn/error.hpp"
#include "vcwn/fft.hpp"
#include "vcwn/rng.hpp"

namespace vcwn {

Waveform baseline_synthesize(const FeatureTrack& track, const SynthesisConfig& config) {
  track.validate();
  const int sr = config.sample_rate;
  const double alpha = config.warp_alpha > 0.0 ? config.warp_alpha : default_warp_alpha(sr);
  const std::size_t shift = frame_shift_samples(track.frame_shift_ms, sr);
  const std::size_t frames = track.frames();
  const std::size_t total = frames * shift;
  const std::size_t fft = config.fft_size;
  const std::size_t bins = fft / 2 + 1;
  const std::size_t seg = 2 * shift;
  require(is_power_of_two(fft) && seg <= fft, ErrorCode::kInvalidArgument,
          "baseline_synthesize: fft size must be a power of two >= 2 * shift");

  Waveform out;
  out.sample_rate = sr;
  out.samples.assign(total, 0.0);
  if (frames == 0) return out;

  // Pulse train of unit average power on voiced frames, unit-variance noise
  // elsewhere.
  Rng rng(config.seed);
  std::vector<double> excitation(total, 0.0);
  double phase = 0.0;
  for (std::size_t n = 0; n < total; ++n) {
    const std::size_t f = std::min(frames - 1, (n + shift / 2) / shift);
    if (track.voiced[f]) {
      const double f0 = std::exp(track.log_f0[f]);
      phase += f0 / sr;
      if (phase >= 1.0) {
        phase -= std::floor(phase);
        excitation[n] = std::sqrt(sr / f0);
      }
    } else {
      excitation[n] = rng.normal();
    }
  }

  // Power of the analysis window (Hann over fft/2 samples); the envelope is
  // a windowed power spectrum, so the filter gain divides it back out.
  const std::size_t analysis_win = fft / 2;
  double window_power = 0.0;
  for (std::size_t i = 0; i < analysis_win; ++i) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 0.5) / analysis_win);
    window_power += w * w;
  }
  std::vector<double> synth_window(seg);
  for (std::size_t i = 0; i < seg; ++i)
    synth_window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / seg);

  RealFft transform(fft);
  std::vector<double> buf(fft), ceps;
  std::vector<std::complex<double>> log_amp(bins), spec;
  std::vector<std::complex<double>> response(bins);
  for (std::size_t f = 0; f < frames; ++f) {
    if (track.energy[f] <= config.energy_floor) continue;
    const SpectralFrame env = mcc_to_sp(track.frame(f), fft, alpha);
    const double gain = track.energy[f] / window_power;
    for (std::size_t k = 0; k < bins; ++k) log_amp[k] = 0.5 * std::log(env.sp[k] * gain);
    // Minimum-phase response from the folded real cepstrum.
    transform.inverse(log_amp, ceps);
    for (std::size_t q = 1; q < fft / 2; ++q) ceps[q] *= 2.0;
    for (std::size_t q = fft / 2 + 1; q < fft; ++q) ceps[q] = 0.0;
    transform.forward(ceps, spec);
    for (std::size_t k = 0; k < bins; ++k) response[k] = std::exp(spec[k]);

    const auto begin = static_cast<std::ptrdiff_t>(f * shift) - static_cast<std::ptrdiff_t>(shift);
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t i = 0; i < seg; ++i) {
      const std::ptrdiff_t j = begin + static_cast<std::ptrdiff_t>(i);
      if (j >= 0 && j < static_cast<std::ptrdiff_t>(total)) buf[i] = excitation[j] * synth_window[i];
    }
    transform.forward(buf, spec);
    for (std::size_t k = 0; k < bins; ++k) spec[k] *= response[k];
    transform.inverse(spec, buf);
    for (std::size_t i = 0; i < fft; ++i) {
      const std::ptrdiff_t j = begin + static_cast<std::ptrdiff_t>(i);
      if (j >= 0 && j < static_cast<std::ptrdiff_t>(total)) out.samples[j] += buf[i];
    }
  }
  for (double& s : out.samples) s = std::clamp(s, -1.0, 1.0);
  return out;
}

}  // namespace vcwn
