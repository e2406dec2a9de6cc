#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace vcwn {

// Real-input FFT of fixed power-of-two size backed by FFTW plans.
// forward: n reals -> n/2+1 bins. inverse: n/2+1 bins -> n reals, scaled by
// 1/n so inverse(forward(x)) == x.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  void forward(std::span<const double> in, std::vector<std::complex<double>>& out);
  void inverse(std::span<const std::complex<double>> in, std::vector<double>& out);

 private:
  std::size_t n_;
  double* real_ = nullptr;
  void* complex_ = nullptr;
  void* plan_fwd_ = nullptr;
  void* plan_inv_ = nullptr;
};

bool is_power_of_two(std::size_t n);

}  // namespace vcwn
