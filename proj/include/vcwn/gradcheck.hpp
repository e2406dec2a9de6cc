#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "vcwn/autodiff.hpp"

namespace vcwn {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error; keeps coordinates whose true
  // gradient is ~0 from being judged on pure rounding noise.
  double magnitude_floor = 1e-6;
  // One-sided slopes disagreeing by more than this flag a kink.
  double kink_threshold = 1e-2;
  // 0 checks every coordinate; otherwise an evenly strided subset.
  std::size_t max_coordinates = 0;
};

struct GradCheckCoordinate {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
  bool non_differentiable = false;
};

struct GradCheckReport {
  std::vector<GradCheckCoordinate> coordinates;
  double max_relative_error = 0.0;
  std::size_t excluded = 0;
  bool passed = true;
};

// Builds a scalar from the input var on the given tape.
using ScalarFunction = std::function<Var(Tape&, Var)>;

// Compares the reverse-mode gradient of `fn` at `point` with central
// differences. Coordinates sitting on a kink (one-sided slopes disagree)
// are flagged and excluded from pass/fail.
GradCheckReport grad_check(const ScalarFunction& fn, const Tensor& point,
                           const GradCheckOptions& options = {});

// Same check over the coordinates of one parameter inside a set; `loss`
// rebuilds the full graph from the current parameter values.
GradCheckReport grad_check_parameter(ParameterSet& params, const std::string& name,
                                     const std::function<Var(Tape&)>& loss,
                                     const GradCheckOptions& options = {});

}  // namespace vcwn
