#include "vcwn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vcwn/error.hpp"

namespace vcwn {

namespace {

std::vector<std::size_t> pick_coordinates(std::size_t n, std::size_t limit) {
  std::vector<std::size_t> out;
  if (limit == 0 || limit >= n) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  for (std::size_t k = 0; k < limit; ++k) out.push_back(k * n / limit);
  return out;
}

// Shared driver: `eval(i, x)` evaluates the function with coordinate i set
// to x; `analytic` holds the reverse-mode gradient.
template <class Eval>
GradCheckReport compare(const Tensor& analytic, const Tensor& point, Eval eval,
                        const GradCheckOptions& opt) {
  require(opt.step > 0.0, ErrorCode::kInvalidArgument, "grad_check: step must be > 0");
  GradCheckReport report;
  for (std::size_t i : pick_coordinates(point.size(), opt.max_coordinates)) {
    const double x0 = point[i];
    const double f0 = eval(i, x0);
    const double fp = eval(i, x0 + opt.step);
    const double fm = eval(i, x0 - opt.step);
    if (!std::isfinite(f0) || !std::isfinite(fp) || !std::isfinite(fm))
      fail(ErrorCode::kNonFinite, "grad_check: non-finite evaluation at coordinate " +
                                      std::to_string(i));
    GradCheckCoordinate c;
    c.index = i;
    c.analytic = analytic[i];
    c.numeric = (fp - fm) / (2.0 * opt.step);
    const double right = (fp - f0) / opt.step;
    const double left = (f0 - fm) / opt.step;
    const double slope_scale = std::max({std::abs(right), std::abs(left), 1.0});
    if (std::abs(right - left) > opt.kink_threshold * slope_scale) {
      c.non_differentiable = true;
      ++report.excluded;
    } else {
      const double denom =
          std::max({std::abs(c.analytic), std::abs(c.numeric), opt.magnitude_floor});
      c.relative_error = std::abs(c.analytic - c.numeric) / denom;
      report.max_relative_error = std::max(report.max_relative_error, c.relative_error);
    }
    report.coordinates.push_back(c);
  }
  report.passed = report.max_relative_error <= opt.tolerance;
  return report;
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& fn, const Tensor& point,
                           const GradCheckOptions& options) {
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.input(point);
    Var y = fn(tape, x);
    tape.backward(y);
    analytic = tape.gradient(x);
  }
  Tensor probe = point;
  auto eval = [&](std::size_t i, double xi) {
    probe[i] = xi;
    Tape tape;
    const double v = fn(tape, tape.constant(probe)).value().item();
    probe[i] = point[i];
    return v;
  };
  return compare(analytic, point, eval, options);
}

GradCheckReport grad_check_parameter(ParameterSet& params, const std::string& name,
                                     const std::function<Var(Tape&)>& loss,
                                     const GradCheckOptions& options) {
  Parameter& p = params.get(name);
  params.zero_grad();
  {
    Tape tape;
    Var y = loss(tape);
    tape.backward(y);
  }
  const Tensor analytic = p.grad;
  const Tensor point = p.value;
  auto eval = [&](std::size_t i, double xi) {
    p.value[i] = xi;
    Tape tape;
    const double v = loss(tape).value().item();
    p.value[i] = point[i];
    return v;
  };
  GradCheckReport report = compare(analytic, point, eval, options);
  params.zero_grad();
  return report;
}

}  // namespace vcwn
