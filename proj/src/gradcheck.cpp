#include "fpliif/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "fpliif/errors.hpp"

namespace fpliif {

namespace {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

double grad_check_params(const std::function<TensorD()>& loss, std::span<TensorD> params,
                         std::span<const ParamCoordinate> coordinates,
                         const GradCheckOptions& options) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  TensorD l = loss();
  l.backward();

  double worst = 0.0;
  NoGradGuard no_grad;
  for (const auto& c : coordinates) {
    if (c.tensor >= params.size() || c.element < 0 || c.element >= params[c.tensor].size()) {
      throw ParameterError("grad_check: coordinate out of range");
    }
    TensorD& p = params[c.tensor];
    const double analytic = p.has_grad() ? p.grad()(c.element) : 0.0;
    const double saved = p.data()(c.element);
    auto measure = [&](double h) {
      p.data()(c.element) = saved + h;
      const double plus = loss().item();
      p.data()(c.element) = saved - h;
      const double minus = loss().item();
      p.data()(c.element) = saved;
      return relative_error(analytic, (plus - minus) / (2.0 * h), options.abs_floor);
    };
    double err = measure(options.step);
    double h = options.step;
    for (int k = 0; k < options.retries && err > options.retry_above; ++k) {
      h *= options.retry_factor;
      err = std::min(err, measure(h));
    }
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& point,
                  const GradCheckOptions& options) {
  TensorD x = point.clone();
  x.set_requires_grad(true);
  std::vector<ParamCoordinate> coords;
  if (options.coordinates.empty()) {
    for (Index i = 0; i < x.size(); ++i) coords.push_back({0, i});
  } else {
    for (Index i : options.coordinates) coords.push_back({0, i});
  }
  std::vector<TensorD> params{x};
  return grad_check_params([&] { return f(params[0]); }, params, coords, options);
}

}  // namespace fpliif
