#pragma once

#include <cmath>
#include <vector>

#include "splitfed/model.hpp"
#include "splitfed/tensor.hpp"

namespace splitfed {

/// Standard Adam with bias correction over a fixed list of named
/// parameters. One step() consumes the gradients currently stored on the
/// tensors; a parameter without a populated gradient counts as zero.
class Adam {
public:
    explicit Adam(std::vector<NamedParam> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        slots_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            slots_[i].m.assign(params_[i].tensor.size(), 0.0);
            slots_[i].v.assign(params_[i].tensor.size(), 0.0);
        }
    }

    long step_count() const { return t_; }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i].tensor;
            if (!p.has_grad()) continue;  // no gradient accumulated: g = 0, nothing moves at t=1
            const std::vector<double>& g = p.grad();
            for (std::size_t k = 0; k < g.size(); ++k) {
                if (!std::isfinite(g[k])) {
                    throw nonfinite_error(params_[i].name,
                                          "adam_step: non-finite gradient for parameter '" +
                                              params_[i].name + "'");
                }
            }
            auto& m = slots_[i].m;
            auto& v = slots_[i].v;
            auto& x = p.data();
            for (std::size_t k = 0; k < g.size(); ++k) {
                m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
                v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
                const double m_hat = m[k] / bc1;
                const double v_hat = v[k] / bc2;
                x[k] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
            }
        }
    }

private:
    struct Slot {
        std::vector<double> m, v;
    };
    std::vector<NamedParam> params_;
    std::vector<Slot> slots_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace splitfed
