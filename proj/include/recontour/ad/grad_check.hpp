#pragma once

#include <cmath>
#include <functional>

#include "recontour/ad/array.hpp"

namespace recontour::ad {

// Compares reverse-mode gradients of a scalar-valued composite against
// central finite differences, evaluated in double precision. Returns the
// max over components of |analytic - numeric| / max(1, |analytic|).
// f is called with a detached copy for the difference probes, so it must
// build its graph from the array it is handed.
inline double grad_check(const std::function<ArrayT<double>(const ArrayT<double>&)>& f,
                         const ArrayT<double>& x, double eps) {
  TapeT<double> tape;
  ArrayT<double> xw = tape.leaf(x);
  ArrayT<double> y = f(xw);
  check(y.numel() == 1, "grad_check: composite must be scalar-valued");
  if (!std::isfinite(y[0])) throw std::runtime_error("grad_check: non-finite forward value");
  tape.backward(y);
  std::vector<double> analytic = xw.grad();

  double worst = 0.0;
  for (int i = 0; i < x.numel(); ++i) {
    ArrayT<double> xp = x;
    xp.val = std::make_shared<std::vector<double>>(*x.val);
    (*xp.val)[static_cast<size_t>(i)] += eps;
    ArrayT<double> xm = x;
    xm.val = std::make_shared<std::vector<double>>(*x.val);
    (*xm.val)[static_cast<size_t>(i)] -= eps;
    const double fp = f(xp.detached())[0];
    const double fm = f(xm.detached())[0];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("grad_check: non-finite probe value");
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[static_cast<size_t>(i)];
    if (!std::isfinite(a)) throw std::runtime_error("grad_check: non-finite analytic gradient");
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace recontour::ad
