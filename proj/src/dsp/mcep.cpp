#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <tuple>

#include "vcwn/dsp.hpp"
#include "vcwn/error.hpp"

namespace vcwn {

namespace {

struct MelBasis {
  Eigen::MatrixXd design;    // bins x (order+1)
  Eigen::MatrixXd analysis;  // (order+1) x bins, weighted least-squares solve
};

using BasisKey = std::tuple<std::size_t, std::uint64_t, std::size_t>;

std::shared_ptr<const MelBasis> build_basis(std::size_t bins, double alpha, std::size_t order) {
  auto basis = std::make_shared<MelBasis>();
  const auto n = static_cast<Eigen::Index>(bins);
  const auto m = static_cast<Eigen::Index>(order + 1);
  basis->design.resize(n, m);
  Eigen::VectorXd sqrt_w(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double omega = std::numbers::pi * static_cast<double>(k) / static_cast<double>(n - 1);
    const double warped = warp_frequency(omega, alpha);
    basis->design(k, 0) = 1.0;
    for (Eigen::Index j = 1; j < m; ++j)
      basis->design(k, j) = 2.0 * std::cos(static_cast<double>(j) * warped);
    // Trapezoid weight times d(warped)/d(omega).
    const double trap = (k == 0 || k == n - 1) ? 0.5 : 1.0;
    const double jac =
        (1.0 - alpha * alpha) / (1.0 - 2.0 * alpha * std::cos(omega) + alpha * alpha);
    sqrt_w(k) = std::sqrt(trap * jac);
  }
  const Eigen::MatrixXd weighted = sqrt_w.asDiagonal() * basis->design;
  const Eigen::MatrixXd solve =
      weighted.colPivHouseholderQr().solve(Eigen::MatrixXd(sqrt_w.asDiagonal()));
  basis->analysis = solve;
  return basis;
}

std::shared_ptr<const MelBasis> basis_for(std::size_t bins, double alpha, std::size_t order) {
  static std::mutex mutex;
  static std::map<BasisKey, std::shared_ptr<const MelBasis>> cache;
  std::uint64_t alpha_bits;
  std::memcpy(&alpha_bits, &alpha, sizeof alpha);
  const BasisKey key{bins, alpha_bits, order};
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto basis = build_basis(bins, alpha, order);
  cache.emplace(key, basis);
  return basis;
}

}  // namespace

double warp_frequency(double omega, double alpha) {
  return omega + 2.0 * std::atan2(alpha * std::sin(omega), 1.0 - alpha * std::cos(omega));
}

double default_warp_alpha(int sample_rate) {
  if (sample_rate >= 22050) return 0.455;
  return 0.42;
}

std::vector<double> sp_to_mcc(const SpectralFrame& frame, double warp_alpha, std::size_t order,
                              double log_floor) {
  const std::size_t bins = frame.sp.size();
  require(bins >= 2 && order + 1 <= bins, ErrorCode::kInvalidArgument,
          "sp_to_mcc: order " + std::to_string(order) + " needs at least order+1 bins, got " +
              std::to_string(bins));
  require(std::abs(warp_alpha) < 1.0, ErrorCode::kInvalidArgument,
          "sp_to_mcc: warp alpha must be in (-1, 1)");
  const auto basis = basis_for(bins, warp_alpha, order);
  Eigen::VectorXd log_sp(static_cast<Eigen::Index>(bins));
  for (std::size_t k = 0; k < bins; ++k) {
    const double v = frame.sp[k];
    require(std::isfinite(v) && v >= 0.0, ErrorCode::kInvalidArgument,
            "sp_to_mcc: envelope bins must be finite and non-negative");
    log_sp(static_cast<Eigen::Index>(k)) = std::log(std::max(v, log_floor));
  }
  const Eigen::VectorXd c = basis->analysis * log_sp;
  return std::vector<double>(c.data(), c.data() + c.size());
}

SpectralFrame mcc_to_sp(std::span<const double> mcc, std::size_t fft_size, double warp_alpha) {
  require(!mcc.empty(), ErrorCode::kInvalidArgument, "mcc_to_sp: empty mcc");
  const std::size_t bins = fft_size / 2 + 1;
  const std::size_t order = mcc.size() - 1;
  require(order + 1 <= bins, ErrorCode::kInvalidArgument, "mcc_to_sp: fft size too small");
  for (double v : mcc)
    require(std::isfinite(v), ErrorCode::kInvalidArgument, "mcc_to_sp: non-finite mcc");
  const auto basis = basis_for(bins, warp_alpha, order);
  const Eigen::Map<const Eigen::VectorXd> c(mcc.data(), static_cast<Eigen::Index>(mcc.size()));
  const Eigen::VectorXd log_sp = basis->design * c;
  SpectralFrame out;
  out.sp.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) out.sp[k] = std::exp(log_sp(static_cast<Eigen::Index>(k)));
  return out;
}

}  // namespace vcwn
