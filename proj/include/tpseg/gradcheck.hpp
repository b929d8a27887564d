#pragma once

// Central finite differences as the universal gradient oracle. The
// numeric side never touches the tape, so it stays independent of the
// backward rules it checks.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tpseg/rng.hpp"
#include "tpseg/tensor.hpp"

namespace tpseg {

// |analytic - numeric| / max(|analytic|, |numeric|, 1): relative error
// with a unit floor, so near-zero gradients compare absolutely.
inline double grad_rel_error(double analytic, double numeric) {
    double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1.0});
    return std::fabs(analytic - numeric) / denom;
}

// fn() must rebuild the scalar loss from the current contents of
// `inputs` each call. Every listed input must require grad. When
// max_probes > 0, only that many randomly chosen elements per input are
// perturbed (seeded, reproducible); 0 means every element.
template <typename S, typename Fn>
double finite_difference_gradcheck(Fn&& fn, const std::vector<Tensor<S>*>& inputs, double h,
                                   Index max_probes = 0, std::uint64_t probe_seed = 17) {
    for (Tensor<S>* t : inputs) {
        if (!t->requires_grad() || t->grad() == nullptr)
            throw ValidationError("gradcheck: every input must require grad");
        t->zero_grad();
    }

    Tape<S> tape;
    {
        TapeScope<S> scope(tape);
        Tensor<S> loss = fn();
        tape.backward(loss);
    }
    std::vector<std::vector<S>> analytic;
    analytic.reserve(inputs.size());
    for (Tensor<S>* t : inputs) analytic.push_back(*t->grad());

    SplitMix64 rng(probe_seed);
    double worst = 0.0;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor<S>* t = inputs[ti];
        std::vector<S>& data = t->values();
        Index n = static_cast<Index>(data.size());
        std::vector<Index> probes;
        if (max_probes <= 0 || max_probes >= n) {
            probes.resize(static_cast<std::size_t>(n));
            for (Index i = 0; i < n; ++i) probes[static_cast<std::size_t>(i)] = i;
        } else {
            for (Index i = 0; i < max_probes; ++i)
                probes.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
        }
        for (Index i : probes) {
            S saved = data[static_cast<std::size_t>(i)];
            data[static_cast<std::size_t>(i)] = saved + static_cast<S>(h);
            double up = static_cast<double>(fn().item());
            data[static_cast<std::size_t>(i)] = saved - static_cast<S>(h);
            double down = static_cast<double>(fn().item());
            data[static_cast<std::size_t>(i)] = saved;
            double numeric = (up - down) / (2.0 * h);
            double a = static_cast<double>(analytic[ti][static_cast<std::size_t>(i)]);
            worst = std::max(worst, grad_rel_error(a, numeric));
        }
    }
    for (Tensor<S>* t : inputs) t->zero_grad();
    return worst;
}

struct GradCheckRow {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    bool pass = false;
};

} // namespace tpseg
