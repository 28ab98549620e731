#pragma once

#include <functional>

#include "cocktail/rng.hpp"
#include "cocktail/tensor.hpp"

// Central-difference gradient verification. The oracle only reuses the
// forward evaluation of the function under test; the backward rules it
// checks are never consulted for the numeric side.

namespace cocktail {

struct GradCheckOptions {
    double denom_floor = 1e-8;      // rel err denominator: max(|a|,|n|,floor)
    bool negate_analytic = false;   // fault-injection hook for the selfcheck mutation test
};

namespace detail {

template <typename Real>
inline double rel_err(Real analytic, Real numeric, double floor_value) {
    const double a = static_cast<double>(analytic), n = static_cast<double>(numeric);
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor_value});
}

template <typename Real>
inline std::vector<std::vector<Real>> analytic_grads(const std::function<Tensor<Real>()>& f,
                                                     std::vector<Tensor<Real>>& params) {
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tape<Real> tape;
    {
        TapeScope<Real> scope(tape);
        Tensor<Real> loss = f();
        tape.backward(loss);
    }
    std::vector<std::vector<Real>> grads;
    grads.reserve(params.size());
    for (auto& p : params) grads.push_back(p.grad());
    return grads;
}

template <typename Real>
inline Real central_difference(const std::function<Tensor<Real>()>& f, Tensor<Real>& param, std::size_t i,
                               Real eps) {
    const Real saved = param.data()[i];
    param.data()[i] = saved + eps;
    const Real up = f().item();
    param.data()[i] = saved - eps;
    const Real down = f().item();
    param.data()[i] = saved;
    return (up - down) / (Real(2) * eps);
}

}  // namespace detail

// Checks every coordinate of every parameter; returns the max relative error.
template <typename Real>
double finite_diff_check(const std::function<Tensor<Real>()>& f, std::vector<Tensor<Real>> params, Real eps,
                         const GradCheckOptions& opt = {}) {
    auto grads = detail::analytic_grads(f, params);
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::size_t i = 0; i < params[pi].numel(); ++i) {
            const Real numeric = detail::central_difference(f, params[pi], i, eps);
            Real analytic = grads[pi][i];
            if (opt.negate_analytic && analytic != Real(0)) analytic = -analytic;
            worst = std::max(worst, detail::rel_err(analytic, numeric, opt.denom_floor));
        }
    }
    return worst;
}

// Spot check on a handful of randomly chosen parameter coordinates; intended
// for composite blocks where a full sweep is too slow. Coordinates whose
// analytic gradient is below dead_fraction of the largest one are skipped:
// at 32-bit their central difference is dominated by rounding noise and
// carries no information about the backward rules (the 64-bit full sweep
// covers exactness).
template <typename Real>
double finite_diff_spot_check(const std::function<Tensor<Real>()>& f, std::vector<Tensor<Real>> params,
                              std::size_t n_probes, Real eps, Rng& rng, const GradCheckOptions& opt = {},
                              double dead_fraction = 1e-3) {
    auto grads = detail::analytic_grads(f, params);
    double gmax = 0.0;
    for (const auto& g : grads)
        for (Real v : g) gmax = std::max(gmax, std::abs(static_cast<double>(v)));

    double worst = 0.0;
    std::size_t done = 0, attempts = 0;
    while (done < n_probes && attempts < n_probes * 64) {
        ++attempts;
        const std::size_t pi = rng.index(params.size());
        if (params[pi].numel() == 0) continue;
        const std::size_t i = rng.index(params[pi].numel());
        Real analytic = grads[pi][i];
        if (std::abs(static_cast<double>(analytic)) < dead_fraction * gmax) continue;
        const Real numeric = detail::central_difference(f, params[pi], i, eps);
        if (opt.negate_analytic && analytic != Real(0)) analytic = -analytic;
        worst = std::max(worst, detail::rel_err(analytic, numeric, opt.denom_floor));
        ++done;
    }
    return worst;
}

}  // namespace cocktail
