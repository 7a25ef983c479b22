#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "splitfed/rng.hpp"
#include "splitfed/tensor.hpp"

namespace testsupport {

// Relative error convention used by every gradient check:
// |a - b| / max(1, |a|, |b|).
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline splitfed::Tensor random_tensor(splitfed::Shape shape, splitfed::rng::Xoshiro256pp& gen,
                                      double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
    splitfed::Tensor t = splitfed::Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t.data()) v = gen.uniform(lo, hi);
    return t;
}

/// Central finite-difference gradient check. `forward` must rebuild the
/// scalar loss from the current contents of `inputs` every call (graph
/// construction is disabled while probing). Returns the max relative
/// error between analytic and numeric gradients over all coordinates of
/// all inputs.
inline double max_grad_error(const std::function<splitfed::Tensor()>& forward,
                             const std::vector<splitfed::Tensor>& inputs, double h = 1e-5) {
    splitfed::Tensor loss = forward();
    loss.backward();

    double worst = 0.0;
    for (const splitfed::Tensor& input : inputs) {
        splitfed::Tensor t = input;  // shared storage; mutation is visible to forward()
        for (std::size_t i = 0; i < t.data().size(); ++i) {
            const double orig = t.data()[i];
            double fp, fm;
            {
                splitfed::NoGradGuard ng;
                t.data()[i] = orig + h;
                fp = forward().item();
                t.data()[i] = orig - h;
                fm = forward().item();
                t.data()[i] = orig;
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
            worst = std::max(worst, rel_err(analytic, numeric));
        }
    }
    return worst;
}

}  // namespace testsupport
