#pragma once

#include "cocktail/tensor.hpp"

namespace cocktail {

enum class OptimizerMode { Adam, Sgd };

template <typename Real>
struct OptimizerConfig {
    OptimizerMode mode = OptimizerMode::Adam;
    Real lr = Real(1e-3);
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.999);
    Real eps = Real(1e-8);
};

// Holds bias-corrected first/second moment buffers per parameter, or acts as
// plain gradient descent in Sgd mode. The step counter strictly increases.
template <typename Real>
class Optimizer {
public:
    Optimizer(std::vector<Tensor<Real>> params, OptimizerConfig<Real> cfg)
        : params_(std::move(params)), cfg_(cfg) {
        if (cfg_.mode == OptimizerMode::Adam) {
            m_.reserve(params_.size());
            v_.reserve(params_.size());
            for (auto& p : params_) {
                m_.push_back(Tensor<Real>::zeros(p.shape()));
                v_.push_back(Tensor<Real>::zeros(p.shape()));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        ++step_;
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi];
            if (!p.has_grad()) continue;  // zero gradient leaves the parameter unchanged
            const auto& g = p.grad_view();
            Real* w = p.data();
            if (cfg_.mode == OptimizerMode::Sgd) {
                for (std::size_t i = 0; i < g.size(); ++i) w[i] -= cfg_.lr * g[i];
                continue;
            }
            Real* m = m_[pi].data();
            Real* v = v_[pi].data();
            const Real c1 = Real(1) - std::pow(cfg_.beta1, Real(step_));
            const Real c2 = Real(1) - std::pow(cfg_.beta2, Real(step_));
            for (std::size_t i = 0; i < g.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (Real(1) - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (Real(1) - cfg_.beta2) * g[i] * g[i];
                const Real mhat = m[i] / c1;
                const Real vhat = v[i] / c2;
                w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    std::size_t step_count() const { return step_; }
    void set_step_count(std::size_t s) { step_ = s; }

    const std::vector<Tensor<Real>>& params() const { return params_; }
    // Moment buffers in parameter order; empty in Sgd mode.
    std::vector<Tensor<Real>>& first_moments() { return m_; }
    std::vector<Tensor<Real>>& second_moments() { return v_; }
    const OptimizerConfig<Real>& config() const { return cfg_; }
    void set_lr(Real lr) { cfg_.lr = lr; }

private:
    std::vector<Tensor<Real>> params_;
    OptimizerConfig<Real> cfg_;
    std::vector<Tensor<Real>> m_, v_;
    std::size_t step_ = 0;
};

}  // namespace cocktail
