#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "cocktail/classifier.hpp"
#include "cocktail/tensor.hpp"

// Losses and metrics: permutation-invariant MSE over the reconstructed
// source spectrograms, channel-max-pooled categorical cross entropy, their
// weighted joint combination, and M-of-N identification accuracy.

namespace cocktail {

template <typename Real>
struct PitResult {
    Tensor<Real> loss;                        // scalar, differentiable through the chosen assignment only
    std::vector<std::size_t> assignment;      // source i -> channel assignment[i]
    std::vector<std::vector<Real>> pair_mse;  // [source][channel] mean squared error
};

namespace detail {

// Mean squared error between two equal-shaped value vectors, accumulated in
// row-major order. The brute-force oracle in the tests reproduces exactly
// this accumulation, so equality can be asserted bitwise.
template <typename Real>
inline Real mse_value(const std::vector<Real>& a, const std::vector<Real>& b) {
    Real acc = Real(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Real d = a[i] - b[i];
        acc += d * d;
    }
    return acc / Real(a.size());
}

}  // namespace detail

// Exhaustive minimum over all channel-to-source assignments (n <= 4).
// The loss is the per-element mean squared error averaged over sources, so
// its magnitude is comparable across frame counts. Assignments are
// enumerated in lexicographic order; the first strict minimum wins.
template <typename Real>
PitResult<Real> pit_mse(const std::vector<Tensor<Real>>& estimates,
                        const std::vector<Tensor<Real>>& references) {
    const std::size_t n = references.size();
    if (estimates.size() != n) throw std::invalid_argument("pit_mse: estimate/reference count mismatch");
    if (n == 0 || n > 4) throw std::invalid_argument("pit_mse: source count must be in [1,4]");
    for (std::size_t i = 0; i < n; ++i) {
        check_same_shape(references[i], estimates[0], "pit_mse");
        check_same_shape(estimates[i], estimates[0], "pit_mse");
    }

    PitResult<Real> result;
    result.pair_mse.assign(n, std::vector<Real>(n, Real(0)));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < n; ++c)
            result.pair_mse[i][c] = detail::mse_value(references[i].values(), estimates[c].values());

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<std::size_t> best = perm;
    Real best_total = Real(0);
    bool first = true;
    do {
        Real total = Real(0);
        for (std::size_t i = 0; i < n; ++i) total += result.pair_mse[i][perm[i]];
        if (first || total < best_total) {
            best_total = total;
            best = perm;
            first = false;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    result.assignment = best;

    // Differentiable path through the selected assignment only.
    Tensor<Real> acc;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor<Real> d = sub(references[i], estimates[best[i]]);
        Tensor<Real> m = reduce_mean(mul(d, d));
        acc = acc.defined() ? add(acc, m) : m;
    }
    result.loss = div_scalar(acc, Real(n));
    return result;
}

// Eq-style channel-max cross entropy: -sum over target speakers of
// log(max_c y_hat[i,c]). The log is clamped below at 1e-12; gradient flows
// only to each target row's argmax channel.
template <typename Real>
Tensor<Real> maxpool_cce(const PredictionMatrix<Real>& pred, const std::vector<int>& indicator) {
    if (indicator.size() != pred.n_speakers())
        throw std::invalid_argument("maxpool_cce: indicator length mismatch");
    std::size_t targets = 0;
    for (int y : indicator) targets += y != 0 ? 1 : 0;
    if (targets == 0) throw std::invalid_argument("maxpool_cce: empty target set");

    Tensor<Real> pooled = channel_max(pred.probs);  // [n_speakers]
    Tensor<Real> lg = clamped_log(pooled, Real(1e-12));
    Tensor<Real> mask = Tensor<Real>::zeros({pred.n_speakers()});
    for (std::size_t i = 0; i < indicator.size(); ++i) mask.data()[i] = indicator[i] != 0 ? Real(1) : Real(0);
    return neg(reduce_sum(mul(lg, mask)));
}

// L = alpha * MSE + CCE.
template <typename Real>
Tensor<Real> joint_loss(const Tensor<Real>& mse, const Tensor<Real>& cce, Real alpha) {
    if (!(alpha > Real(0))) throw std::invalid_argument("joint_loss: alpha must be positive");
    return add(mul_scalar(mse, alpha), cce);
}

inline double default_alpha(std::size_t n_sources) { return n_sources >= 3 ? 300.0 : 20.0; }

// One evaluated mixture: pooled per-speaker scores and the target set.
struct MnSample {
    std::vector<double> pooled;
    std::vector<int> targets;
};

// Percentage of samples whose top-N pooled predictions contain at least M of
// the N target speakers. Ties in the top-N selection resolve to the lower
// speaker index.
inline double mn_accuracy(const std::vector<MnSample>& samples, std::size_t m, std::size_t n) {
    if (m > n) throw std::invalid_argument("mn_accuracy: M cannot exceed N");
    if (samples.empty()) throw std::invalid_argument("mn_accuracy: empty sample set");
    std::size_t hits = 0;
    for (const auto& s : samples) {
        std::vector<std::size_t> order(s.pooled.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (s.pooled[a] != s.pooled[b]) return s.pooled[a] > s.pooled[b];
            return a < b;
        });
        std::size_t correct = 0;
        for (std::size_t k = 0; k < n && k < order.size(); ++k)
            if (std::find(s.targets.begin(), s.targets.end(), int(order[k])) != s.targets.end()) ++correct;
        if (correct >= m) ++hits;
    }
    return 100.0 * double(hits) / double(samples.size());
}

}  // namespace cocktail
