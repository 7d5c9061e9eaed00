#pragma once

// Central finite differences, kept independent of the tape so it can
// serve as an oracle for it.

#include <functional>

#include "hat/tensor.hpp"

namespace hat {

using ScalarFn = std::function<double(const Tensor&)>;

/// (f(x + h e_k) - f(x - h e_k)) / 2h for every coordinate k.
Tensor finite_diff(const ScalarFn& f, const Tensor& x, double h = 1e-5);

/// ||a - b|| / max(||a|| + ||b||, tiny), Euclidean norms over all entries.
double relative_error(const Tensor& a, const Tensor& b);

}  // namespace hat
