#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cocktail/extractor.hpp"

// Siamese per-channel speaker classifiers: a syllable-level bidirectional
// recurrent variant and a residual-convolutional variant behind one
// interface. The same parameters are applied independently to every
// extracted channel, so the prediction matrix is channel-equivariant by
// construction.

namespace cocktail {

enum class ClassifierVariant { Recurrent, Conv };

struct ClassifierConfig {
    ClassifierVariant variant = ClassifierVariant::Conv;
    std::size_t n_speakers = 8;

    // Recurrent variant. 312.5 ms chunks at the 16 ms hop are 20 frames; the
    // 15.6 ms shift is one frame.
    std::size_t chunk_frames = 20;
    std::size_t chunk_shift = 1;
    std::size_t lstm_hidden = 200;
    std::size_t lstm_layers = 3;
    std::size_t fc_hidden = 800;

    // Convolutional variant.
    std::string conv_preset = "desk10";  // "desk10" (10 layers) or "reference34"
    PoolMode global_pool = PoolMode::Avg;

    void validate() const {
        if (n_speakers < 2) throw std::invalid_argument("classifier: need at least 2 speakers");
        if (chunk_frames < 1 || chunk_shift < 1)
            throw std::invalid_argument("classifier: chunk geometry must be positive");
        if (conv_preset != "desk10" && conv_preset != "reference34")
            throw std::invalid_argument("classifier: unknown conv preset " + conv_preset);
    }

    static ClassifierConfig desk(std::size_t n_speakers, ClassifierVariant variant) {
        ClassifierConfig c;
        c.variant = variant;
        c.n_speakers = n_speakers;
        c.chunk_shift = 8;
        c.lstm_hidden = 32;
        c.fc_hidden = 64;
        c.conv_preset = "desk10";
        return c;
    }

    static ClassifierConfig reference(std::size_t n_speakers, ClassifierVariant variant) {
        ClassifierConfig c;
        c.variant = variant;
        c.n_speakers = n_speakers;
        c.chunk_shift = 1;
        c.lstm_hidden = 200;
        c.fc_hidden = 800;
        c.conv_preset = "reference34";
        return c;
    }
};

// Sliding chunk windows over the frame axis; count = (frames-chunk)/shift + 1.
template <typename Real>
std::vector<Tensor<Real>> chunk(const Tensor<Real>& x, std::size_t chunk_frames, std::size_t shift) {
    if (x.rank() != 2) throw std::invalid_argument("chunk: expected [bins,frames]");
    const std::size_t frames = x.size(1);
    if (frames < chunk_frames) throw std::invalid_argument("chunk: spectrogram shorter than one chunk");
    std::vector<Tensor<Real>> out;
    for (std::size_t start = 0; start + chunk_frames <= frames; start += shift)
        out.push_back(slice(x, 1, start, chunk_frames));
    return out;
}

// Probability columns from the Siamese heads: storage is channel-major
// [n_channels, n_speakers]; value(i, c) reads speaker i in channel c. Each
// channel's softmax row sums to 1.
template <typename Real>
struct PredictionMatrix {
    Tensor<Real> probs;  // [n_channels, n_speakers]

    std::size_t n_channels() const { return probs.size(0); }
    std::size_t n_speakers() const { return probs.size(1); }
    Real value(std::size_t speaker, std::size_t channel) const {
        return probs.at(channel * n_speakers() + speaker);
    }

    // p_i = max_c y_hat[i,c], the pooled per-speaker score.
    std::vector<Real> pooled() const {
        std::vector<Real> p(n_speakers(), Real(0));
        for (std::size_t i = 0; i < n_speakers(); ++i) {
            Real best = value(i, 0);
            for (std::size_t c = 1; c < n_channels(); ++c) best = std::max(best, value(i, c));
            p[i] = best;
        }
        return p;
    }
};

template <typename Real>
class ChannelClassifier {
public:
    virtual ~ChannelClassifier() = default;
    // [bins, frames] compressed spectrogram -> [n_speakers] probabilities.
    virtual Tensor<Real> classify(const Tensor<Real>& x) const = 0;
    virtual ParamList<Real> params() const = 0;
    virtual const ClassifierConfig& config() const = 0;
};

// ---------------------------------------------------------------------------
// Recurrent variant
// ---------------------------------------------------------------------------

namespace detail {

template <typename Real>
struct LstmCellParams {
    Tensor<Real> w_x, w_h, b;  // [D,4H], [H,4H], [4H]; gate order i,f,o,g

    LstmCellParams() = default;
    LstmCellParams(std::size_t d_in, std::size_t hidden, Rng& rng) {
        w_x = Tensor<Real>::init_uniform({d_in, 4 * hidden}, d_in, rng);
        w_h = Tensor<Real>::init_uniform({hidden, 4 * hidden}, hidden, rng);
        b = Tensor<Real>::zeros({4 * hidden});
        // forget gate bias starts at 1
        for (std::size_t i = hidden; i < 2 * hidden; ++i) b.data()[i] = Real(1);
    }

    void collect(ParamList<Real>& out, const std::string& prefix) const {
        out.add(prefix + ".wx", w_x);
        out.add(prefix + ".wh", w_h);
        out.add(prefix + ".b", b);
    }
};

// One direction over a sequence of [1,D] inputs; returns per-step hidden
// states plus the final (h, c).
template <typename Real>
std::vector<Tensor<Real>> lstm_run(const LstmCellParams<Real>& p, const std::vector<Tensor<Real>>& inputs,
                                   std::size_t hidden, Tensor<Real>* final_h) {
    Tensor<Real> h = Tensor<Real>::zeros({1, hidden});
    Tensor<Real> c = Tensor<Real>::zeros({1, hidden});
    std::vector<Tensor<Real>> states;
    states.reserve(inputs.size());
    for (const auto& x : inputs) {
        Tensor<Real> z = add(affine(x, p.w_x, p.b), affine(h, p.w_h, Tensor<Real>()));
        Tensor<Real> gi = sigmoid(slice(z, 1, 0, hidden));
        Tensor<Real> gf = sigmoid(slice(z, 1, hidden, hidden));
        Tensor<Real> go = sigmoid(slice(z, 1, 2 * hidden, hidden));
        Tensor<Real> gg = tanh_(slice(z, 1, 3 * hidden, hidden));
        c = add(mul(gf, c), mul(gi, gg));
        h = mul(go, tanh_(c));
        states.push_back(h);
    }
    if (final_h) *final_h = h;
    return states;
}

}  // namespace detail

// Syllable-level classifier: per chunk, a 3-layer bidirectional recurrent
// pass over the frame columns; the final forward and backward states are
// concatenated and fed to a 3-layer fully connected head with softmax. The
// chunk softmax vectors are averaged over the whole signal.
template <typename Real>
class RecurrentClassifier : public ChannelClassifier<Real> {
public:
    RecurrentClassifier(ClassifierConfig cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t h = cfg_.lstm_hidden;
        std::size_t d_in = kSpectrogramBins;
        for (std::size_t l = 0; l < cfg_.lstm_layers; ++l) {
            fw_.emplace_back(d_in, h, rng);
            bw_.emplace_back(d_in, h, rng);
            d_in = 2 * h;
        }
        fc1_w = Tensor<Real>::init_uniform({2 * h, cfg_.fc_hidden}, 2 * h, rng);
        fc1_b = Tensor<Real>::zeros({cfg_.fc_hidden});
        fc2_w = Tensor<Real>::init_uniform({cfg_.fc_hidden, cfg_.fc_hidden}, cfg_.fc_hidden, rng);
        fc2_b = Tensor<Real>::zeros({cfg_.fc_hidden});
        fc3_w = Tensor<Real>::init_uniform({cfg_.fc_hidden, cfg_.n_speakers}, cfg_.fc_hidden, rng);
        fc3_b = Tensor<Real>::zeros({cfg_.n_speakers});
    }

    Tensor<Real> classify(const Tensor<Real>& x) const override {
        auto chunks = chunk(x, cfg_.chunk_frames, cfg_.chunk_shift);
        Tensor<Real> acc;
        for (const auto& ck : chunks) {
            Tensor<Real> probs = classify_chunk(ck);
            acc = acc.defined() ? add(acc, probs) : probs;
        }
        return reshape(div_scalar(acc, Real(chunks.size())), {cfg_.n_speakers});
    }

    Tensor<Real> classify_chunk(const Tensor<Real>& ck) const {
        const std::size_t frames = ck.size(1);
        std::vector<Tensor<Real>> seq;
        seq.reserve(frames);
        for (std::size_t t = 0; t < frames; ++t)
            seq.push_back(reshape(slice(ck, 1, t, 1), {1, ck.size(0)}));

        Tensor<Real> fw_final, bw_final;
        for (std::size_t l = 0; l < cfg_.lstm_layers; ++l) {
            auto fwd = detail::lstm_run(fw_[l], seq, cfg_.lstm_hidden, &fw_final);
            std::vector<Tensor<Real>> rev(seq.rbegin(), seq.rend());
            auto bwd = detail::lstm_run(bw_[l], rev, cfg_.lstm_hidden, &bw_final);
            std::vector<Tensor<Real>> next;
            next.reserve(frames);
            for (std::size_t t = 0; t < frames; ++t)
                next.push_back(concat<Real>({fwd[t], bwd[frames - 1 - t]}, 1));
            seq = std::move(next);
        }
        Tensor<Real> feat = concat<Real>({fw_final, bw_final}, 1);
        Tensor<Real> h = relu(affine(feat, fc1_w, fc1_b));
        h = relu(affine(h, fc2_w, fc2_b));
        Tensor<Real> logits = affine(h, fc3_w, fc3_b);
        return softmax(logits, 1);
    }

    ParamList<Real> params() const override {
        ParamList<Real> out;
        for (std::size_t l = 0; l < fw_.size(); ++l) {
            fw_[l].collect(out, "cls.l" + std::to_string(l) + ".fw");
            bw_[l].collect(out, "cls.l" + std::to_string(l) + ".bw");
        }
        out.add("cls.fc1.w", fc1_w);
        out.add("cls.fc1.b", fc1_b);
        out.add("cls.fc2.w", fc2_w);
        out.add("cls.fc2.b", fc2_b);
        out.add("cls.fc3.w", fc3_w);
        out.add("cls.fc3.b", fc3_b);
        return out;
    }

    const ClassifierConfig& config() const override { return cfg_; }

private:
    ClassifierConfig cfg_;
    std::vector<detail::LstmCellParams<Real>> fw_, bw_;
    Tensor<Real> fc1_w, fc1_b, fc2_w, fc2_b, fc3_w, fc3_b;
};

// ---------------------------------------------------------------------------
// Convolutional variant
// ---------------------------------------------------------------------------

// Residual-convolutional stack -> global pooling -> affine -> softmax.
// "desk10": stride-2 stem + 4 residual blocks (8/8/16/32/64 channels),
// 10 weighted layers. "reference34": the standard 34-layer arrangement
// (7x7 stem, 3/4/6/3 blocks at 64/128/256/512).
template <typename Real>
class ConvClassifier : public ChannelClassifier<Real> {
public:
    ConvClassifier(ClassifierConfig cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        if (cfg_.conv_preset == "desk10") {
            stem_ = Conv2dLayer<Real>(1, 8, 3, 3, conv_geom(2, 1), rng);
            stem_pool_ = false;
            blocks_.emplace_back(8, 8, 1, rng);
            blocks_.emplace_back(8, 16, 2, rng);
            blocks_.emplace_back(16, 32, 2, rng);
            blocks_.emplace_back(32, 64, 2, rng);
            fc_w = Tensor<Real>::init_uniform({64, cfg_.n_speakers}, 64, rng);
        } else {
            stem_ = Conv2dLayer<Real>(1, 64, 7, 7, conv_geom(2, 3), rng);
            stem_pool_ = true;
            const std::size_t stage_blocks[4] = {3, 4, 6, 3};
            const std::size_t stage_ch[4] = {64, 128, 256, 512};
            std::size_t c_in = 64;
            for (std::size_t s = 0; s < 4; ++s) {
                for (std::size_t b = 0; b < stage_blocks[s]; ++b) {
                    const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
                    blocks_.emplace_back(c_in, stage_ch[s], stride, rng);
                    c_in = stage_ch[s];
                }
            }
            fc_w = Tensor<Real>::init_uniform({512, cfg_.n_speakers}, 512, rng);
        }
        fc_b = Tensor<Real>::zeros({cfg_.n_speakers});
    }

    Tensor<Real> classify(const Tensor<Real>& x) const override {
        if (x.rank() != 2) throw std::invalid_argument("classifier: expected [bins,frames]");
        Tensor<Real> h = reshape(x, {1, x.size(0), x.size(1)});
        h = relu(stem_.forward(h));
        if (stem_pool_) h = pool2d(h, PoolMode::Max, 3, 2);
        for (const auto& b : blocks_) h = relu(b.forward(h));
        Tensor<Real> feat = reshape(global_pool2d(h, cfg_.global_pool), {1, h.size(0)});
        Tensor<Real> logits = affine(feat, fc_w, fc_b);
        return reshape(softmax(logits, 1), {cfg_.n_speakers});
    }

    ParamList<Real> params() const override {
        ParamList<Real> out;
        stem_.collect(out, "cls.stem");
        for (std::size_t b = 0; b < blocks_.size(); ++b)
            blocks_[b].collect(out, "cls.rb" + std::to_string(b));
        out.add("cls.fc.w", fc_w);
        out.add("cls.fc.b", fc_b);
        return out;
    }

    const ClassifierConfig& config() const override { return cfg_; }

private:
    ClassifierConfig cfg_;
    Conv2dLayer<Real> stem_;
    bool stem_pool_ = false;
    std::vector<ResidualBlock<Real>> blocks_;
    Tensor<Real> fc_w, fc_b;
};

template <typename Real>
std::unique_ptr<ChannelClassifier<Real>> make_classifier(const ClassifierConfig& cfg, Rng& rng) {
    if (cfg.variant == ClassifierVariant::Recurrent)
        return std::make_unique<RecurrentClassifier<Real>>(cfg, rng);
    return std::make_unique<ConvClassifier<Real>>(cfg, rng);
}

// Applies the shared-weight classifier to each channel independently;
// column c of the result is classify(channels[c]).
template <typename Real>
PredictionMatrix<Real> siamese_apply(const std::vector<Tensor<Real>>& channels,
                                     const ChannelClassifier<Real>& classifier) {
    if (channels.empty()) throw std::invalid_argument("siamese_apply: no channels");
    std::vector<Tensor<Real>> rows;
    rows.reserve(channels.size());
    for (const auto& ch : channels)
        rows.push_back(reshape(classifier.classify(ch), {std::size_t(1), classifier.config().n_speakers}));
    PredictionMatrix<Real> pm;
    pm.probs = concat<Real>(rows, 0);
    return pm;
}

}  // namespace cocktail
