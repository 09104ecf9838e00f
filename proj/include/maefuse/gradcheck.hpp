#pragma once

#include <functional>
#include <vector>

#include "maefuse/tensor.hpp"

namespace maefuse {

struct GradCheckResult {
    bool pass = false;
    double max_rel_err = 0.0;
};

// Compares a reverse-mode gradient with central finite differences on a
// scalar-valued computation. Meant to run in 64-bit; FD is unreliable in
// 32-bit. rel err = |a - n| / max(|a|, |n|, 1e-8).
inline GradCheckResult grad_check(
    const std::function<TensorT<double>(const std::vector<TensorT<double>>&)>& fn,
    std::vector<TensorT<double>> inputs, double tol = 1e-4, double h = 1e-5) {
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad(); // inputs may be reused across checks
    }
    auto out = fn(inputs);
    if (out.numel() != 1) throw ContractError("grad_check: computation must be scalar-valued");
    out.backward();

    GradCheckResult res;
    res.max_rel_err = 0.0;
    for (auto& in : inputs) {
        const std::vector<double> analytic =
            in.has_grad() ? in.grad() : std::vector<double>(in.data().size(), 0.0);
        for (size_t i = 0; i < in.data().size(); ++i) {
            const double orig = in.data()[i];
            in.data()[i] = orig + h;
            const double fp = fn(inputs).item();
            in.data()[i] = orig - h;
            const double fm = fn(inputs).item();
            in.data()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
            res.max_rel_err = std::max(res.max_rel_err, std::abs(analytic[i] - numeric) / denom);
        }
    }
    res.pass = res.max_rel_err < tol;
    return res;
}

} // namespace maefuse
