#include "vcwn/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <mutex>

#include "vcwn/error.hpp"

namespace vcwn {

namespace {
// FFTW's planner is not thread-safe.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

bool is_power_of_two(std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

RealFft::RealFft(std::size_t n) : n_(n) {
  require(is_power_of_two(n), ErrorCode::kInvalidArgument,
          "fft size must be a power of two, got " + std::to_string(n));
  std::lock_guard<std::mutex> lock(planner_mutex());
  real_ = fftw_alloc_real(n);
  auto* cx = fftw_alloc_complex(n / 2 + 1);
  complex_ = cx;
  const int size = static_cast<int>(n);
  plan_fwd_ = fftw_plan_dft_r2c_1d(size, real_, cx, FFTW_ESTIMATE);
  plan_inv_ = fftw_plan_dft_c2r_1d(size, cx, real_, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
  fftw_destroy_plan(static_cast<fftw_plan>(plan_inv_));
  fftw_free(real_);
  fftw_free(static_cast<fftw_complex*>(complex_));
}

void RealFft::forward(std::span<const double> in, std::vector<std::complex<double>>& out) {
  require(in.size() <= n_, ErrorCode::kInvalidArgument, "fft input longer than size");
  std::fill(real_, real_ + n_, 0.0);
  std::copy(in.begin(), in.end(), real_);
  fftw_execute(static_cast<fftw_plan>(plan_fwd_));
  auto* cx = static_cast<fftw_complex*>(complex_);
  out.resize(bins());
  for (std::size_t k = 0; k < bins(); ++k) out[k] = {cx[k][0], cx[k][1]};
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::vector<double>& out) {
  require(in.size() == bins(), ErrorCode::kInvalidArgument, "ifft expects n/2+1 bins");
  auto* cx = static_cast<fftw_complex*>(complex_);
  for (std::size_t k = 0; k < bins(); ++k) {
    cx[k][0] = in[k].real();
    cx[k][1] = in[k].imag();
  }
  fftw_execute(static_cast<fftw_plan>(plan_inv_));
  out.resize(n_);
  const double scale = 1.0 / static_cast<double>(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = real_[i] * scale;
}

}  // namespace vcwn
