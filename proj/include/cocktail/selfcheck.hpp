#pragma once

#include <iostream>

#include "cocktail/gradcheck.hpp"
#include "cocktail/extractor.hpp"
#include "cocktail/objectives.hpp"

// Built-in verification suite: gradient checks at 64-bit, the exhaustive
// permutation oracle, the max-pool dominance inequality and softmax
// stability. The CLI exposes it as `selfcheck`; tests drive the fault
// injection hook to confirm a broken backward rule is actually caught.

namespace cocktail {

struct SelfcheckOptions {
    bool flip_backward_sign = false;  // pretend a backward rule has the wrong sign
    std::ostream* out = &std::cout;
};

struct SelfcheckResult {
    bool passed = true;
    std::vector<std::pair<std::string, bool>> checks;

    void record(std::ostream* out, const std::string& name, bool ok) {
        checks.emplace_back(name, ok);
        passed = passed && ok;
        if (out) *out << (ok ? "[ok]   " : "[FAIL] ") << name << "\n";
    }
};

inline SelfcheckResult run_selfcheck(const SelfcheckOptions& opt = {}) {
    using Real = double;
    SelfcheckResult result;
    GradCheckOptions gopt;
    gopt.negate_analytic = opt.flip_backward_sign;
    Rng rng(20240);

    // Gradient checks against central differences.
    {
        Tensor<Real> x = Tensor<Real>::random_uniform({2, 9, 11}, -1.0, 1.0, rng);
        Tensor<Real> k = Tensor<Real>::random_uniform({3, 2, 3, 3}, -0.5, 0.5, rng);
        Tensor<Real> b = Tensor<Real>::random_uniform({3}, -0.5, 0.5, rng);
        Conv2dGeometry g;
        g.same_padding = true;
        g.dilation_h = g.dilation_w = 2;
        auto f = [&]() { return reduce_sum(tanh_(conv2d(x, k, b, g))); };
        const double err = finite_diff_check<Real>(f, {x, k, b}, 1e-5, gopt);
        result.record(opt.out, "gradcheck conv2d(dilation=2)", err < 1e-6);
    }
    {
        Tensor<Real> x = Tensor<Real>::random_uniform({3, 5}, -1.0, 1.0, rng);
        Tensor<Real> w = Tensor<Real>::random_uniform({5, 4}, -1.0, 1.0, rng);
        Tensor<Real> b = Tensor<Real>::random_uniform({4}, -1.0, 1.0, rng);
        auto f = [&]() { return reduce_mean(sigmoid(affine(x, w, b))); };
        const double err = finite_diff_check<Real>(f, {x, w, b}, 1e-5, gopt);
        result.record(opt.out, "gradcheck affine+sigmoid", err < 1e-6);
    }
    {
        Tensor<Real> x = Tensor<Real>::random_uniform({4, 6}, -2.0, 2.0, rng);
        auto f = [&]() { return reduce_sum(mul(softmax(x, 1), softplus(x))); };
        const double err = finite_diff_check<Real>(f, {x}, 1e-5, gopt);
        result.record(opt.out, "gradcheck softmax*softplus", err < 1e-6);
    }
    {
        Tensor<Real> x = Tensor<Real>::random_uniform({3, 7}, 0.05, 1.0, rng);
        auto f = [&]() { return reduce_sum(clamped_log(channel_max(x))); };
        const double err = finite_diff_check<Real>(f, {x}, 1e-6, gopt);
        result.record(opt.out, "gradcheck channel_max+log", err < 1e-6);
    }
    {
        Tensor<Real> x = Tensor<Real>::random_uniform({2, 8, 8}, -1.0, 1.0, rng);
        auto f = [&]() {
            return reduce_mean(upsample2x(pool2d(relu(x), PoolMode::Avg, 2)));
        };
        const double err = finite_diff_check<Real>(f, {x}, 1e-5, gopt);
        result.record(opt.out, "gradcheck pool+upsample", err < 1e-6);
    }

    // Exhaustive permutation oracle on random instances.
    {
        bool ok = true;
        for (int trial = 0; trial < 30 && ok; ++trial) {
            const std::size_t n = 2 + trial % 3;
            std::vector<Tensor<Real>> est, ref;
            for (std::size_t i = 0; i < n; ++i) {
                est.push_back(Tensor<Real>::random_uniform({5, 6}, 0.0, 2.0, rng));
                ref.push_back(Tensor<Real>::random_uniform({5, 6}, 0.0, 2.0, rng));
            }
            auto pit = pit_mse(est, ref);
            // inline enumeration over all assignments
            std::vector<std::size_t> perm(n);
            std::iota(perm.begin(), perm.end(), 0);
            Real best = Real(0);
            std::vector<std::size_t> best_perm = perm;
            bool first = true;
            do {
                Real total = Real(0);
                for (std::size_t i = 0; i < n; ++i) {
                    Real acc = Real(0);
                    for (std::size_t e = 0; e < ref[i].numel(); ++e) {
                        const Real d = ref[i].data()[e] - est[perm[i]].data()[e];
                        acc += d * d;
                    }
                    total += acc / Real(ref[i].numel());
                }
                if (first || total < best) {
                    best = total;
                    best_perm = perm;
                    first = false;
                }
            } while (std::next_permutation(perm.begin(), perm.end()));
            ok = ok && pit.assignment == best_perm && pit.loss.item() == best / Real(n);
        }
        result.record(opt.out, "pit_mse permutation oracle", ok);
    }

    // Dominance: max-pool CCE never exceeds any assigned cross entropy.
    {
        bool ok = true;
        for (int trial = 0; trial < 200 && ok; ++trial) {
            const std::size_t speakers = 8, channels = 2;
            Tensor<Real> logits = Tensor<Real>::random_uniform({channels, speakers}, -3.0, 3.0, rng);
            PredictionMatrix<Real> pm{softmax(logits, 1)};
            std::vector<int> indicator(speakers, 0);
            std::vector<std::size_t> chosen;
            while (chosen.size() < channels) {
                const std::size_t s = rng.index(speakers);
                if (std::find(chosen.begin(), chosen.end(), s) == chosen.end()) chosen.push_back(s);
            }
            for (std::size_t s : chosen) indicator[s] = 1;
            const Real pooled = maxpool_cce(pm, indicator).item();
            Real assigned = Real(0);
            for (std::size_t i = 0; i < chosen.size(); ++i)
                assigned -= std::log(std::max(pm.value(chosen[i], i % channels), Real(1e-12)));
            ok = ok && pooled <= assigned + Real(1e-12);
        }
        result.record(opt.out, "max-pool dominance inequality", ok);
    }

    // Softmax stays stochastic for inputs up to 1e3 in magnitude.
    {
        bool ok = true;
        for (int trial = 0; trial < 50 && ok; ++trial) {
            Tensor<Real> x = Tensor<Real>::random_uniform({4, 9}, -1e3, 1e3, rng);
            Tensor<Real> y = softmax(x, 1);
            for (std::size_t r = 0; r < 4; ++r) {
                Real s = Real(0);
                for (std::size_t c = 0; c < 9; ++c) s += y.data()[r * 9 + c];
                ok = ok && std::abs(s - Real(1)) < Real(1e-6);
            }
        }
        result.record(opt.out, "softmax stability", ok);
    }

    if (opt.out) *opt.out << (result.passed ? "selfcheck: all checks passed" : "selfcheck: FAILURES") << "\n";
    return result;
}

}  // namespace cocktail
