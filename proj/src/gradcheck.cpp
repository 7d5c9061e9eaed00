#include "hat/gradcheck.hpp"

#include <cmath>
#include <limits>

#include "hat/errors.hpp"

namespace hat {

Tensor finite_diff(const ScalarFn& f, const Tensor& x, double h) {
  Tensor probe = x;
  Tensor out(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double keep = probe[k];
    probe[k] = keep + h;
    const double up = f(probe);
    probe[k] = keep - h;
    const double down = f(probe);
    probe[k] = keep;
    out[k] = (up - down) / (2.0 * h);
  }
  return out;
}

double relative_error(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kDimension, "relative_error of " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  const double denom = std::max(std::sqrt(na) + std::sqrt(nb), std::numeric_limits<double>::min());
  return std::sqrt(diff) / denom;
}

}  // namespace hat
