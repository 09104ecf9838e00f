#pragma once

#include <cmath>

#include "maefuse/rng.hpp"
#include "maefuse/tensor.hpp"

namespace maefuse {

// Truncated normal (+-2 sigma), the transformer weight initializer.
template <typename T>
TensorT<T> trunc_normal(Shape shape, double sigma, Rng& rng) {
    auto t = TensorT<T>::zeros(std::move(shape));
    for (T& x : t.data()) x = static_cast<T>(rng.truncated_normal(sigma));
    return t;
}

// He-uniform for conv kernels [K,C,kh,kw]: U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
TensorT<T> kaiming_uniform(Shape shape, Rng& rng) {
    long fan_in = 1;
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    auto t = TensorT<T>::zeros(std::move(shape));
    for (T& x : t.data()) x = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

} // namespace maefuse
