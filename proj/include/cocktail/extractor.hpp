#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cocktail/dsp.hpp"
#include "cocktail/nn_ops.hpp"
#include "cocktail/rng.hpp"

// Source extractor: residual attention stages bracketing a stack of dilated
// convolution blocks, ending in a softplus head that emits one estimated
// compressed spectrogram per source.

namespace cocktail {

template <typename Real>
struct ParamList {
    std::vector<std::pair<std::string, Tensor<Real>>> items;

    void add(const std::string& name, const Tensor<Real>& t) { items.emplace_back(name, t); }

    std::vector<Tensor<Real>> tensors() const {
        std::vector<Tensor<Real>> out;
        out.reserve(items.size());
        for (const auto& [name, t] : items) out.push_back(t);
        return out;
    }
};

template <typename Real>
struct Conv2dLayer {
    Tensor<Real> kernel, bias;
    Conv2dGeometry geom;

    Conv2dLayer() = default;

    Conv2dLayer(std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw, Conv2dGeometry g,
                Rng& rng)
        : geom(g) {
        kernel = Tensor<Real>::init_uniform({c_out, c_in, kh, kw}, c_in * kh * kw, rng);
        bias = Tensor<Real>::init_uniform({c_out}, c_in * kh * kw, rng);
    }

    Tensor<Real> forward(const Tensor<Real>& x) const { return conv2d(x, kernel, bias, geom); }

    void collect(ParamList<Real>& out, const std::string& prefix) const {
        out.add(prefix + ".k", kernel);
        out.add(prefix + ".b", bias);
    }
};

inline Conv2dGeometry conv_geom_same() {
    Conv2dGeometry g;
    g.same_padding = true;
    return g;
}

inline Conv2dGeometry conv_geom(std::size_t stride, std::size_t pad, std::size_t dilation = 1) {
    Conv2dGeometry g;
    g.stride_h = g.stride_w = stride;
    g.pad_h = g.pad_w = pad;
    g.dilation_h = g.dilation_w = dilation;
    return g;
}

// x + F(x) with F = conv3x3 -> relu -> conv3x3. A 1x1 projection joins the
// skip path when the channel count or stride changes.
template <typename Real>
struct ResidualBlock {
    Conv2dLayer<Real> conv1, conv2;
    std::optional<Conv2dLayer<Real>> proj;

    ResidualBlock() = default;

    ResidualBlock(std::size_t c_in, std::size_t c_out, std::size_t stride, Rng& rng) {
        conv1 = Conv2dLayer<Real>(c_in, c_out, 3, 3, conv_geom(stride, 1), rng);
        conv2 = Conv2dLayer<Real>(c_out, c_out, 3, 3, conv_geom(1, 1), rng);
        if (c_in != c_out || stride != 1)
            proj = Conv2dLayer<Real>(c_in, c_out, 1, 1, conv_geom(stride, 0), rng);
    }

    Tensor<Real> forward(const Tensor<Real>& x) const {
        Tensor<Real> h = conv2.forward(relu(conv1.forward(x)));
        Tensor<Real> skip = proj ? proj->forward(x) : x;
        return add(skip, h);
    }

    void collect(ParamList<Real>& out, const std::string& prefix) const {
        conv1.collect(out, prefix + ".c1");
        conv2.collect(out, prefix + ".c2");
        if (proj) proj->collect(out, prefix + ".proj");
    }
};

// U-shaped mask branch: `depth` max-pool stages with residual blocks on the
// way down, symmetric nearest-neighbor upsampling with elementwise skip
// additions on the way up, then 1x1 conv + sigmoid. Requires both spatial
// extents divisible by 2^depth; output shape equals input shape, values in
// (0,1).
template <typename Real>
struct Hourglass {
    std::size_t depth = 3;
    std::vector<ResidualBlock<Real>> down;  // depth blocks
    std::vector<ResidualBlock<Real>> up;    // depth-1 blocks
    Conv2dLayer<Real> head;

    Hourglass() = default;

    Hourglass(std::size_t channels, std::size_t depth_, Rng& rng) : depth(depth_) {
        if (depth < 1) throw std::invalid_argument("hourglass: depth must be >= 1");
        for (std::size_t d = 0; d < depth; ++d) down.emplace_back(channels, channels, 1, rng);
        for (std::size_t d = 0; d + 1 < depth; ++d) up.emplace_back(channels, channels, 1, rng);
        head = Conv2dLayer<Real>(channels, channels, 1, 1, conv_geom(1, 0), rng);
    }

    Tensor<Real> forward(const Tensor<Real>& x) const {
        const std::size_t div = std::size_t(1) << depth;
        if (x.size(1) % div != 0 || x.size(2) % div != 0)
            throw std::invalid_argument("hourglass: spatial dims must be divisible by " + std::to_string(div));
        std::vector<Tensor<Real>> skips;
        Tensor<Real> cur = x;
        for (std::size_t d = 0; d < depth; ++d) {
            skips.push_back(cur);
            cur = pool2d(cur, PoolMode::Max, 2);
            cur = down[d].forward(cur);
        }
        for (std::size_t d = depth; d-- > 0;) {
            cur = upsample2x(cur);
            cur = add(cur, skips[d]);
            if (d > 0) cur = up[d - 1].forward(cur);
        }
        return sigmoid(head.forward(cur));
    }

    void collect(ParamList<Real>& out, const std::string& prefix) const {
        for (std::size_t d = 0; d < down.size(); ++d) down[d].collect(out, prefix + ".down" + std::to_string(d));
        for (std::size_t d = 0; d < up.size(); ++d) up[d].collect(out, prefix + ".up" + std::to_string(d));
        head.collect(out, prefix + ".head");
    }
};

// (1 + M(X)) ⊙ T(X), exposed so tests can inject a fixed mask.
template <typename Real>
Tensor<Real> attention_combine(const Tensor<Real>& mask, const Tensor<Real>& trunk) {
    return mul(add_scalar(mask, Real(1)), trunk);
}

template <typename Real>
struct ResidualAttention {
    ResidualBlock<Real> trunk1, trunk2;
    Hourglass<Real> mask_branch;

    ResidualAttention() = default;

    ResidualAttention(std::size_t channels, std::size_t depth, Rng& rng)
        : trunk1(channels, channels, 1, rng), trunk2(channels, channels, 1, rng),
          mask_branch(channels, depth, rng) {}

    Tensor<Real> trunk(const Tensor<Real>& x) const { return trunk2.forward(trunk1.forward(x)); }
    Tensor<Real> mask(const Tensor<Real>& x) const { return mask_branch.forward(x); }

    Tensor<Real> forward(const Tensor<Real>& x) const { return attention_combine(mask(x), trunk(x)); }

    void collect(ParamList<Real>& out, const std::string& prefix) const {
        trunk1.collect(out, prefix + ".t1");
        trunk2.collect(out, prefix + ".t2");
        mask_branch.collect(out, prefix + ".mask");
    }
};

inline std::vector<std::size_t> dilation_schedule(std::size_t layers) {
    std::vector<std::size_t> d(layers);
    for (std::size_t n = 0; n < layers; ++n) d[n] = std::size_t(1) << n;  // 2^(n-1) for 1-based n
    return d;
}

// Six 3x3 same-padded convolutions with dilations 1,2,4,8,16,32 and a skip
// addition after every third layer. Time-axis receptive field of one block:
// 2*(1+2+4+8+16+32)+1 = 127 frames.
template <typename Real>
struct DilatedBlock {
    std::vector<Conv2dLayer<Real>> layers;

    DilatedBlock() = default;

    DilatedBlock(std::size_t channels, std::size_t n_layers, Rng& rng) {
        if (n_layers % 3 != 0)
            throw std::invalid_argument("dilated block: layer count must be divisible by 3");
        const auto dil = dilation_schedule(n_layers);
        for (std::size_t n = 0; n < n_layers; ++n) {
            Conv2dGeometry g;
            g.same_padding = true;
            g.dilation_h = g.dilation_w = dil[n];
            layers.emplace_back(channels, channels, 3, 3, g, rng);
        }
    }

    Tensor<Real> forward(const Tensor<Real>& x) const {
        Tensor<Real> junction = x;
        Tensor<Real> h = x;
        for (std::size_t n = 0; n < layers.size(); ++n) {
            h = relu(layers[n].forward(h));
            if ((n + 1) % 3 == 0) {
                h = add(h, junction);
                junction = h;
            }
        }
        return h;
    }

    void collect(ParamList<Real>& out, const std::string& prefix) const {
        for (std::size_t n = 0; n < layers.size(); ++n) layers[n].collect(out, prefix + ".l" + std::to_string(n));
    }
};

struct ExtractorConfig {
    std::size_t n_sources = 2;
    std::size_t attention_channels = 16;
    std::size_t hourglass_depth = 3;  // 2^3 = 8x downsample-upsample ratio
    std::size_t dilated_blocks = 2;
    std::size_t layers_per_block = 6;
    std::size_t dilated_channels_per_source = 16;
    bool ablation = false;  // attention stages replaced by equal-width dilated blocks

    std::size_t dilated_channels() const { return dilated_channels_per_source * n_sources; }

    void validate() const {
        if (hourglass_depth < 1) throw std::invalid_argument("extractor: hourglass_depth must be >= 1");
        if (layers_per_block % 3 != 0)
            throw std::invalid_argument("extractor: layers_per_block must be divisible by 3");
        if (dilated_channels() < n_sources)
            throw std::invalid_argument("extractor: dilated channels below n_sources");
        if (n_sources < 1 || n_sources > 4)
            throw std::invalid_argument("extractor: n_sources must be in [1,4]");
    }

    static ExtractorConfig desk(std::size_t n_sources, bool ablation = false) {
        ExtractorConfig c;
        c.n_sources = n_sources;
        c.attention_channels = 16;
        c.dilated_channels_per_source = 16;
        c.dilated_blocks = 2;
        c.ablation = ablation;
        return c;
    }

    static ExtractorConfig reference(std::size_t n_sources, bool ablation = false) {
        ExtractorConfig c;
        c.n_sources = n_sources;
        c.attention_channels = 128;
        c.dilated_channels_per_source = 32;
        c.dilated_blocks = 3;
        c.ablation = ablation;
        return c;
    }
};

template <typename Real>
struct Extractor {
    ExtractorConfig cfg;
    Conv2dLayer<Real> stem;
    std::optional<ResidualAttention<Real>> attn_in, attn_out;
    std::optional<DilatedBlock<Real>> abl_in, abl_out;  // ablation variant stages
    Conv2dLayer<Real> to_dilated, from_dilated, head;
    std::vector<DilatedBlock<Real>> dilated;

    Extractor() = default;

    Extractor(ExtractorConfig config, Rng& rng) : cfg(config) {
        cfg.validate();
        const std::size_t a = cfg.attention_channels;
        const std::size_t d = cfg.dilated_channels();
        stem = Conv2dLayer<Real>(1, a, 3, 3, conv_geom_same(), rng);
        if (!cfg.ablation) {
            attn_in.emplace(a, cfg.hourglass_depth, rng);
        } else {
            abl_in.emplace(a, cfg.layers_per_block, rng);
        }
        to_dilated = Conv2dLayer<Real>(a, d, 1, 1, conv_geom(1, 0), rng);
        for (std::size_t b = 0; b < cfg.dilated_blocks; ++b) dilated.emplace_back(d, cfg.layers_per_block, rng);
        from_dilated = Conv2dLayer<Real>(d, a, 1, 1, conv_geom(1, 0), rng);
        if (!cfg.ablation) {
            attn_out.emplace(a, cfg.hourglass_depth, rng);
        } else {
            abl_out.emplace(a, cfg.layers_per_block, rng);
        }
        head = Conv2dLayer<Real>(a, cfg.n_sources, 1, 1, conv_geom(1, 0), rng);
    }

    // Input [1, bins, T], compressed domain. Frames are zero-padded up to a
    // multiple of 2^depth for the hourglass and cropped again on output.
    std::vector<Tensor<Real>> forward(const Tensor<Real>& x) const {
        if (x.rank() != 3 || x.size(0) != 1)
            throw std::invalid_argument("extractor: expected [1,bins,frames] input");
        const std::size_t frames = x.size(2);
        const std::size_t div = std::size_t(1) << cfg.hourglass_depth;
        const std::size_t padded = (frames + div - 1) / div * div;

        Tensor<Real> h = x;
        if (padded != frames) {
            Tensor<Real> pad = Tensor<Real>::zeros({1, x.size(1), padded - frames});
            h = concat<Real>({h, pad}, 2);
        }
        h = stem.forward(h);
        h = attn_in ? attn_in->forward(h) : abl_in->forward(h);
        h = to_dilated.forward(h);
        for (const auto& block : dilated) h = block.forward(h);
        h = from_dilated.forward(h);
        h = attn_out ? attn_out->forward(h) : abl_out->forward(h);
        Tensor<Real> y = softplus(head.forward(h));
        if (padded != frames) y = slice(y, 2, 0, frames);

        std::vector<Tensor<Real>> channels;
        channels.reserve(cfg.n_sources);
        for (std::size_t c = 0; c < cfg.n_sources; ++c)
            channels.push_back(reshape(slice(y, 0, c, 1), {x.size(1), frames}));
        return channels;
    }

    std::vector<Tensor<Real>> forward(const Spectrogram<Real>& s) const {
        if (s.domain != SpectrogramDomain::Compressed)
            throw std::invalid_argument("extractor: input spectrogram must be compressed");
        return forward(spectrogram_to_tensor(s));
    }

    ParamList<Real> params() const {
        ParamList<Real> out;
        stem.collect(out, "ext.stem");
        if (attn_in) attn_in->collect(out, "ext.attn_in");
        if (abl_in) abl_in->collect(out, "ext.abl_in");
        to_dilated.collect(out, "ext.to_dil");
        for (std::size_t b = 0; b < dilated.size(); ++b)
            dilated[b].collect(out, "ext.dil" + std::to_string(b));
        from_dilated.collect(out, "ext.from_dil");
        if (attn_out) attn_out->collect(out, "ext.attn_out");
        if (abl_out) abl_out->collect(out, "ext.abl_out");
        head.collect(out, "ext.head");
        return out;
    }

    std::string variant() const { return cfg.ablation ? "ablation" : "attention"; }
};

}  // namespace cocktail
