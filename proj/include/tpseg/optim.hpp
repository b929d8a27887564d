#pragma once

#include <cmath>
#include <vector>

#include "tpseg/tensor.hpp"

namespace tpseg {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

template <typename S>
struct AdamState {
    std::vector<S> m;
    std::vector<S> v;
    long step = 0;
};

// One decoupled-weight-decay Adam update on a flat parameter buffer.
// Deterministic: pure function of (param, grad, state, hyperparameters).
template <typename S>
void adamw_step(std::vector<S>& param, const std::vector<S>& grad, AdamState<S>& state,
                double lr, double beta1, double beta2, double eps, double weight_decay) {
    if (param.size() != grad.size())
        throw ShapeError("adamw_step: param/grad size mismatch");
    if (state.m.empty()) {
        state.m.assign(param.size(), S(0));
        state.v.assign(param.size(), S(0));
    }
    if (state.m.size() != param.size())
        throw ShapeError("adamw_step: state size mismatch");
    state.step += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        double g = static_cast<double>(grad[i]);
        double m = beta1 * static_cast<double>(state.m[i]) + (1.0 - beta1) * g;
        double v = beta2 * static_cast<double>(state.v[i]) + (1.0 - beta2) * g * g;
        state.m[i] = static_cast<S>(m);
        state.v[i] = static_cast<S>(v);
        double mhat = m / bc1;
        double vhat = v / bc2;
        double p = static_cast<double>(param[i]);
        p -= lr * weight_decay * p;
        p -= lr * mhat / (std::sqrt(vhat) + eps);
        param[i] = static_cast<S>(p);
    }
}

// Optimizer over a fixed list of trainable tensors; slot order is the
// list order, so updates replay identically run to run.
template <typename S>
class AdamW {
public:
    AdamW(std::vector<Tensor<S>*> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg), states_(params_.size()) {}

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor<S>* p = params_[i];
            if (p->grad() == nullptr)
                throw ValidationError("AdamW: parameter without grad buffer");
            adamw_step(p->values(), *p->grad(), states_[i], cfg_.lr, cfg_.beta1, cfg_.beta2,
                       cfg_.eps, cfg_.weight_decay);
        }
    }

    void zero_grad() {
        for (Tensor<S>* p : params_) p->zero_grad();
    }

    const AdamWConfig& config() const { return cfg_; }

private:
    std::vector<Tensor<S>*> params_;
    AdamWConfig cfg_;
    std::vector<AdamState<S>> states_;
};

} // namespace tpseg
