#pragma once

#include <cmath>
#include <vector>

#include "grft/tensor.hpp"

namespace grft {

// Adam with bias correction; update order is fixed by the parameter list.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void init(const std::vector<Tensor*>& params) {
        m_.clear();
        v_.clear();
        for (const Tensor* p : params) {
            m_.push_back(Tensor::zeros(p->shape));
            v_.push_back(Tensor::zeros(p->shape));
        }
        t_ = 0;
    }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        if (params.size() != m_.size() || grads.size() != params.size())
            throw ValidationError("Adam::step: parameter/gradient count mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = grads[i];
            if (!p.same_shape(g)) throw ValidationError("Adam::step: gradient shape mismatch");
            for (size_t j = 0; j < p.data.size(); ++j) {
                double& m = m_[i].data[j];
                double& v = v_[i].data[j];
                m = beta1_ * m + (1.0 - beta1_) * g.data[j];
                v = beta2_ * v + (1.0 - beta2_) * g.data[j] * g.data[j];
                p.data[j] -= lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace grft
