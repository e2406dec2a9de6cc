#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "vcwn/dsp.hpp"
#include "vcwn/error.hpp"
#include "vcwn/fft.hpp"

namespace vcwn {

const char* to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kNatural: return "natural";
    case FeatureKind::kReconstructed: return "reconstructed";
    case FeatureKind::kConverted: return "converted";
  }
  return "unknown";
}

void FeatureTrack::resize(std::size_t frames) {
  mcc.assign(frames * kMccDim, 0.0);
  log_f0.assign(frames, 0.0);
  voiced.assign(frames, 0);
  energy.assign(frames, 1.0);
}

void FeatureTrack::validate() const {
  const std::size_t n = energy.size();
  require(mcc.size() == n * kMccDim && log_f0.size() == n && voiced.size() == n,
          ErrorCode::kInvalidArgument, "feature track: per-frame sequences differ in length");
  require(frame_shift_ms > 0.0, ErrorCode::kInvalidArgument,
          "feature track: frame shift must be positive");
  for (std::size_t i = 0; i < n; ++i) {
    require(std::isfinite(energy[i]) && energy[i] > 0.0, ErrorCode::kInvalidArgument,
            "feature track: energy factor must be positive at frame " + std::to_string(i));
    require(!voiced[i] || std::isfinite(log_f0[i]), ErrorCode::kInvalidArgument,
            "feature track: voiced frame without finite log-f0 at frame " + std::to_string(i));
    require(voiced[i] || log_f0[i] == 0.0, ErrorCode::kInvalidArgument,
            "feature track: unvoiced frame carries log-f0 at frame " + std::to_string(i));
  }
  for (double v : mcc)
    require(std::isfinite(v), ErrorCode::kInvalidArgument, "feature track: non-finite mcc");
}

std::size_t frame_shift_samples(double frame_shift_ms, int sample_rate) {
  const auto shift = static_cast<std::size_t>(std::lround(frame_shift_ms * sample_rate / 1000.0));
  require(shift >= 1, ErrorCode::kInvalidArgument, "frame shift shorter than one sample");
  return shift;
}

NormalizedFrame unit_sum_normalize(const SpectralFrame& frame, double floor) {
  NormalizedFrame out;
  double sum = 0.0;
  for (double v : frame.sp) {
    require(std::isfinite(v) && v >= 0.0, ErrorCode::kInvalidArgument,
            "unit_sum_normalize: bins must be finite and non-negative");
    sum += v;
  }
  const std::size_t bins = frame.sp.size();
  require(bins > 0, ErrorCode::kInvalidArgument, "unit_sum_normalize: empty frame");
  out.frame.sp.resize(bins);
  if (!(sum > floor)) {
    std::fill(out.frame.sp.begin(), out.frame.sp.end(), 1.0 / static_cast<double>(bins));
    out.energy_factor = floor;
    out.degenerate = true;
    return out;
  }
  for (std::size_t k = 0; k < bins; ++k) out.frame.sp[k] = frame.sp[k] / sum;
  out.energy_factor = sum;
  return out;
}

PitchEstimate estimate_pitch(std::span<const double> samples, std::size_t center,
                             int sample_rate, double f0_floor, double f0_ceil) {
  const auto lag_min = static_cast<std::ptrdiff_t>(std::floor(sample_rate / f0_ceil));
  const auto lag_max = static_cast<std::ptrdiff_t>(std::ceil(sample_rate / f0_floor));
  const std::ptrdiff_t width = lag_max;
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
  const std::ptrdiff_t span_len = width + lag_max + 2;
  // Edge frames reuse the nearest segment that lies inside the signal.
  std::ptrdiff_t start = static_cast<std::ptrdiff_t>(center) - (width + lag_max) / 2;
  start = std::max<std::ptrdiff_t>(0, std::min(start, n - span_len));
  auto at = [&](std::ptrdiff_t i) {
    const std::ptrdiff_t j = start + i;
    return (j >= 0 && j < n) ? samples[static_cast<std::size_t>(j)] : 0.0;
  };
  std::vector<double> seg(static_cast<std::size_t>(span_len));
  for (std::size_t i = 0; i < seg.size(); ++i) seg[i] = at(static_cast<std::ptrdiff_t>(i));

  double e0 = 0.0;
  for (std::ptrdiff_t i = 0; i < width; ++i) e0 += seg[i] * seg[i];
  PitchEstimate best;
  if (e0 <= 1e-20) return best;

  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(1, lag_min - 1);
  const std::ptrdiff_t hi = lag_max + 1;
  std::vector<double> r(static_cast<std::size_t>(hi + 1), 0.0);
  double et = 0.0;
  for (std::ptrdiff_t i = 0; i < width; ++i) et += seg[lo + i] * seg[lo + i];
  for (std::ptrdiff_t lag = lo; lag <= hi; ++lag) {
    if (lag > lo) {
      et += seg[lag + width - 1] * seg[lag + width - 1] - seg[lag - 1] * seg[lag - 1];
      et = std::max(et, 0.0);
    }
    double acc = 0.0;
    for (std::ptrdiff_t i = 0; i < width; ++i) acc += seg[i] * seg[i + lag];
    const double denom = std::sqrt(e0 * et);
    r[lag] = denom > 1e-20 ? acc / denom : 0.0;
  }

  double r_max = 0.0;
  for (std::ptrdiff_t lag = lag_min; lag <= lag_max; ++lag) r_max = std::max(r_max, r[lag]);
  if (r_max <= 0.0) return best;
  // First local peak close to the global maximum avoids period doubling.
  std::ptrdiff_t chosen = -1;
  for (std::ptrdiff_t lag = lag_min; lag <= lag_max; ++lag) {
    if (r[lag] >= 0.85 * r_max && r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1]) {
      chosen = lag;
      break;
    }
  }
  if (chosen < 0) return best;
  const double ym = r[chosen - 1], y0 = r[chosen], yp = r[chosen + 1];
  const double curvature = ym - 2.0 * y0 + yp;
  double offset = 0.0;
  if (curvature < 0.0) offset = std::clamp(0.5 * (ym - yp) / curvature, -0.5, 0.5);
  best.f0 = sample_rate / (static_cast<double>(chosen) + offset);
  best.confidence = y0;
  return best;
}

AnalysisResult analyze(const Waveform& wave, const AnalysisConfig& config) {
  require(!wave.samples.empty(), ErrorCode::kInvalidArgument, "analyze: empty waveform");
  require(is_power_of_two(config.fft_size), ErrorCode::kInvalidArgument,
          "analyze: fft size must be a power of two");
  for (double s : wave.samples)
    require(std::isfinite(s), ErrorCode::kInvalidArgument, "analyze: non-finite sample");
  const int sr = wave.sample_rate;
  const double alpha = config.warp_alpha > 0.0 ? config.warp_alpha : default_warp_alpha(sr);
  const std::size_t shift = frame_shift_samples(config.frame_shift_ms, sr);
  const std::size_t n = wave.samples.size();
  const std::size_t frames = (n + shift - 1) / shift;
  const std::size_t fft = config.fft_size;
  const std::size_t win = fft / 2;
  const std::size_t bins = fft / 2 + 1;
  // Cepstral lifter below the shortest pitch period keeps the envelope free
  // of harmonic ripple.
  const auto lifter = static_cast<std::size_t>(std::floor(0.8 * sr / config.f0_ceil));

  const double bin_hz = static_cast<double>(sr) / static_cast<double>(fft);
  const auto smooth_half =
      static_cast<std::size_t>(std::lround(0.5 * config.smoothing_hz / bin_hz));
  std::vector<double> smoothed(bins);

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 0.5) / win);

  RealFft transform(fft);
  std::vector<double> buf(fft), ceps;
  std::vector<std::complex<double>> spec, log_spec(bins);

  AnalysisResult result;
  FeatureTrack& track = result.track;
  track.frame_shift_ms = config.frame_shift_ms;
  track.kind = FeatureKind::kNatural;
  track.resize(frames);
  result.frames.resize(frames);

  for (std::size_t f = 0; f < frames; ++f) {
    const auto center = static_cast<std::ptrdiff_t>(f * shift);
    const std::ptrdiff_t begin = center - static_cast<std::ptrdiff_t>(win / 2);
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t i = 0; i < win; ++i) {
      const std::ptrdiff_t j = begin + static_cast<std::ptrdiff_t>(i);
      if (j >= 0 && j < static_cast<std::ptrdiff_t>(n)) buf[i] = wave.samples[j] * window[i];
    }
    transform.forward(buf, spec);
    std::vector<double>& sp = result.frames[f].sp;
    sp.assign(bins, 0.0);
    double peak = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      sp[k] = std::norm(spec[k]);
      peak = std::max(peak, sp[k]);
    }
    if (peak > 0.0) {
      // Power-domain smoothing across harmonics before liftering keeps the
      // log-periodogram bias of noisy frames small.
      const auto half = static_cast<std::ptrdiff_t>(smooth_half);
      const auto nb = static_cast<std::ptrdiff_t>(bins);
      for (std::ptrdiff_t k = 0; k < nb; ++k) {
        double acc = 0.0;
        for (std::ptrdiff_t j = k - half; j <= k + half; ++j) {
          std::ptrdiff_t m = j < 0 ? -j : j;
          if (m >= nb) m = 2 * (nb - 1) - m;
          acc += sp[static_cast<std::size_t>(m)];
        }
        smoothed[static_cast<std::size_t>(k)] = acc / static_cast<double>(2 * half + 1);
      }
      const double floor = peak * config.log_floor;
      for (std::size_t k = 0; k < bins; ++k) log_spec[k] = std::log(std::max(smoothed[k], floor));
      transform.inverse(log_spec, ceps);
      for (std::size_t q = lifter + 1; q + lifter < fft; ++q) ceps[q] = 0.0;
      transform.forward(ceps, spec);
      for (std::size_t k = 0; k < bins; ++k) sp[k] = std::exp(spec[k].real());
    }

    const NormalizedFrame norm = unit_sum_normalize(result.frames[f], config.energy_floor);
    const std::vector<double> c = sp_to_mcc(norm.frame, alpha, kMccOrder, config.log_floor);
    std::copy(c.begin(), c.end(), track.frame(f).begin());
    track.energy[f] = norm.energy_factor;

    const PitchEstimate pitch =
        estimate_pitch(wave.samples, f * shift, sr, config.f0_floor, config.f0_ceil);
    if (!norm.degenerate && pitch.f0 > 0.0 && pitch.confidence >= config.voicing_threshold) {
      track.voiced[f] = 1;
      track.log_f0[f] = std::log(pitch.f0);
    }
  }
  return result;
}

}  // namespace vcwn
