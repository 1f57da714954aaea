#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fpliif/tensor.hpp"

namespace fpliif {

struct GradCheckOptions {
  double step = 1e-5;  // central-difference step h
  // A coordinate whose +-h stencil straddles a ReLU kink disagrees at one step
  // but not at a smaller one. A failing coordinate is re-measured at
  // step * retry_factor^k for k = 1..retries and the smallest error kept.
  double retry_factor = 0.1;
  int retries = 2;
  double retry_above = 1e-5;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, abs_floor),
  // so gradients that are zero up to rounding do not count as failures.
  double abs_floor = 1e-6;
  std::vector<Index> coordinates;  // empty: every coordinate of the point
};

/// Largest relative error between the reverse-mode gradient of the scalar
/// function f at point and central differences, in 64-bit arithmetic.
double grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& point,
                  const GradCheckOptions& options = {});

struct ParamCoordinate {
  std::size_t tensor = 0;
  Index element = 0;
};

/// Same check against existing leaf tensors (for example model parameters):
/// loss() is re-evaluated with each selected element nudged by +-h.
double grad_check_params(const std::function<TensorD()>& loss, std::span<TensorD> params,
                         std::span<const ParamCoordinate> coordinates,
                         const GradCheckOptions& options = {});

}  // namespace fpliif
