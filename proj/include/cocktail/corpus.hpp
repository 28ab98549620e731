#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cocktail/dsp.hpp"
#include "cocktail/rng.hpp"

namespace cocktail {

// Deterministic synthetic multi-speaker corpus. Each speaker is a small
// formant synthesizer: voiced spans (impulse train at a wandering F0 through
// parallel resonators) alternate with unvoiced spans (resonator-filtered
// noise) and short silences. Everything is a pure function of
// (global seed, speaker_id, segment_id).

struct Formant {
    double hz = 0.0;
    double bandwidth_hz = 0.0;
};

struct SpeakerProfile {
    int speaker_id = 0;
    double base_pitch_hz = 0.0;
    double pitch_wander_hz = 0.0;
    Formant formants[3];
    double voiced_ms = 180.0;    // mean voiced span
    double unvoiced_ms = 80.0;   // mean unvoiced span
    double silence_ms = 30.0;    // mean silence span
    double unvoiced_prob = 0.4;  // chance a cycle carries an unvoiced span
    std::uint64_t seed = 0;
};

struct SegmentRef {
    int speaker = 0;
    int segment = 0;
};

struct CorpusConfig {
    std::uint64_t seed = 1234;
    std::size_t n_speakers = 8;
    std::size_t segments_per_speaker = 400;
    double ratios[3] = {0.8, 0.1, 0.1};
    std::string scale = "desk";  // "desk" or "reference"
};

enum class Split { Train, Val, Test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

struct SplitManifest {
    std::uint64_t global_seed = 0;
    std::vector<SegmentRef> train, val, test;

    const std::vector<SegmentRef>& list(Split s) const {
        switch (s) {
            case Split::Train: return train;
            case Split::Val: return val;
            case Split::Test: return test;
        }
        return train;
    }
};

template <typename Real>
struct MixtureSample {
    Spectrogram<Real> mixture;                // compressed
    std::vector<Spectrogram<Real>> references;  // compressed, one per source
    std::vector<int> target_speakers;         // distinct, aligned with references
    std::vector<SegmentRef> provenance;
    std::size_t n_speakers = 0;

    // Indicator y_i over the known speakers.
    std::vector<int> indicator() const {
        std::vector<int> y(n_speakers, 0);
        for (int s : target_speakers) y[static_cast<std::size_t>(s)] = 1;
        return y;
    }
};

// ---------------------------------------------------------------------------
// Speaker profiles
// ---------------------------------------------------------------------------

inline SpeakerProfile make_speaker_profile(std::uint64_t corpus_seed, int speaker_id,
                                           std::size_t n_speakers) {
    Rng rng(corpus_seed, 0x5eedu, static_cast<std::uint64_t>(speaker_id));
    SpeakerProfile p;
    p.speaker_id = speaker_id;
    // Base pitches spaced at least ~9 Hz apart across the roster.
    const double spacing =
        n_speakers > 1 ? std::min(22.0, std::max(9.2, 175.0 / double(n_speakers - 1))) : 22.0;
    p.base_pitch_hz = 85.0 + spacing * speaker_id + rng.uniform(-0.5, 0.5);
    p.pitch_wander_hz = rng.uniform(2.0, 5.0);
    p.formants[0] = {rng.uniform(280.0, 780.0), rng.uniform(70.0, 140.0)};
    p.formants[1] = {rng.uniform(950.0, 2100.0), rng.uniform(80.0, 160.0)};
    p.formants[2] = {rng.uniform(2300.0, 3300.0), rng.uniform(100.0, 180.0)};
    p.voiced_ms = rng.uniform(150.0, 220.0);
    p.unvoiced_ms = rng.uniform(60.0, 110.0);
    p.silence_ms = rng.uniform(22.0, 34.0);
    p.unvoiced_prob = rng.uniform(0.3, 0.5);
    p.seed = mix_keys(corpus_seed, 0xabcdu, static_cast<std::uint64_t>(speaker_id));
    return p;
}

// ---------------------------------------------------------------------------
// Segment synthesis
// ---------------------------------------------------------------------------

namespace detail {

// Two-pole resonator, unity-ish peak gain for narrow bandwidths.
struct Resonator {
    double a1 = 0.0, a2 = 0.0, b0 = 1.0;
    double y1 = 0.0, y2 = 0.0;

    void configure(double hz, double bw_hz, double fs) {
        const double r = std::exp(-3.14159265358979323846 * bw_hz / fs);
        const double theta = 2.0 * 3.14159265358979323846 * hz / fs;
        a1 = 2.0 * r * std::cos(theta);
        a2 = -r * r;
        b0 = (1.0 - r);
    }

    double tick(double x) {
        const double y = b0 * x + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        return y;
    }
};

struct OnePole {
    double a = 0.85;
    double y = 0.0;
    double tick(double x) {
        y = a * y + (1.0 - a) * x;
        return y;
    }
};

}  // namespace detail

inline constexpr std::size_t kSegmentSamples = 16000;  // 2 s at 8 kHz

// Int16 round trip applied to every synthesized segment so that in-memory
// segments match the persisted PCM files exactly.
inline void quantize_int16(Waveform& w) {
    for (double& v : w.samples) {
        double c = std::max(-1.0, std::min(1.0, v));
        const long q = std::lround(c * 32767.0);
        v = double(q) / 32767.0;
    }
}

inline Waveform synth_segment(const SpeakerProfile& p, int segment_id) {
    Rng rng(p.seed, static_cast<std::uint64_t>(segment_id));
    Waveform w;
    w.samples.assign(kSegmentSamples, 0.0);

    detail::Resonator res[3];
    for (int k = 0; k < 3; ++k) res[k].configure(p.formants[k].hz, p.formants[k].bandwidth_hz, double(kSampleRate));
    detail::OnePole lp1, lp2;  // source rolloff keeps the fundamental dominant
    const double fgain[3] = {0.9, 0.55, 0.35};

    const double wander_rate = rng.uniform(1.5, 3.5);   // Hz
    const double wander_phase = rng.uniform(0.0, 6.28);
    double drift = 0.0;

    auto ms_to_samples = [](double ms) { return static_cast<std::size_t>(ms * double(kSampleRate) / 1000.0); };

    std::size_t pos = 0;
    double pulse_phase = 1.0;  // fire immediately at voiced onset
    int cycle = 0;
    while (pos < kSegmentSamples) {
        // One pseudo-syllable cycle: voiced, optionally unvoiced, silence.
        const std::size_t voiced_len = ms_to_samples(p.voiced_ms * rng.uniform(0.7, 1.4));
        const bool with_unvoiced = rng.unit() < p.unvoiced_prob;
        const std::size_t unvoiced_len = with_unvoiced ? ms_to_samples(p.unvoiced_ms * rng.uniform(0.6, 1.5)) : 0;
        const std::size_t silence_len = ms_to_samples(p.silence_ms * rng.uniform(0.5, 2.0));
        drift = std::max(-6.0, std::min(6.0, drift + rng.uniform(-1.5, 1.5)));
        // Per-syllable vowel color: wobble the formant targets.
        for (int k = 0; k < 3; ++k) {
            const double hz = std::max(200.0, std::min(3500.0, p.formants[k].hz * rng.uniform(0.9, 1.1)));
            res[k].configure(hz, p.formants[k].bandwidth_hz, double(kSampleRate));
        }

        const std::size_t attack = ms_to_samples(12.0), release = ms_to_samples(18.0);
        for (std::size_t i = 0; i < voiced_len && pos < kSegmentSamples; ++i, ++pos) {
            const double t = double(pos) / double(kSampleRate);
            const double f0 = p.base_pitch_hz + drift +
                              p.pitch_wander_hz * std::sin(6.283185307179586 * wander_rate * t + wander_phase);
            pulse_phase += f0 / double(kSampleRate);
            double exc = 0.0;
            if (pulse_phase >= 1.0) {
                pulse_phase -= 1.0;
                exc = 1.0;
            }
            double src = lp2.tick(lp1.tick(exc));
            double env = 1.0;
            if (i < attack) env = double(i) / double(attack);
            else if (i + release > voiced_len) env = double(voiced_len - i) / double(release);
            double y = src;
            for (int k = 0; k < 3; ++k) y += fgain[k] * res[k].tick(src);
            w.samples[pos] = env * y;
        }
        for (std::size_t i = 0; i < unvoiced_len && pos < kSegmentSamples; ++i, ++pos) {
            const double noise = rng.uniform(-1.0, 1.0) * 0.02;
            double env = 1.0;
            if (i < attack) env = double(i) / double(attack);
            else if (i + release > unvoiced_len) env = double(unvoiced_len - i) / double(release);
            double y = 0.15 * noise;
            for (int k = 1; k < 3; ++k) y += fgain[k] * res[k].tick(noise);
            w.samples[pos] = env * y;
        }
        for (std::size_t i = 0; i < silence_len && pos < kSegmentSamples; ++i, ++pos) w.samples[pos] = 0.0;
        ++cycle;
    }

    // Normalize to a fixed peak, then snap to the int16 grid.
    double peak = 0.0;
    for (double v : w.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.0) {
        const double scale = 0.5 / peak;
        for (double& v : w.samples) v *= scale;
    }
    quantize_int16(w);
    return w;
}

// Fraction of non-overlapping 16 ms frames whose RMS sits below
// `threshold_db` relative to the loudest frame. An all-zero waveform counts
// as fully silent.
inline double measure_silence_fraction(const Waveform& w, double threshold_db = -30.0) {
    const std::size_t frame = kHopSamples;
    const std::size_t n_frames = w.size() / frame;
    if (n_frames == 0) return 1.0;
    std::vector<double> rms(n_frames, 0.0);
    double peak = 0.0;
    for (std::size_t f = 0; f < n_frames; ++f) {
        double acc = 0.0;
        for (std::size_t i = 0; i < frame; ++i) {
            const double v = w.samples[f * frame + i];
            acc += v * v;
        }
        rms[f] = std::sqrt(acc / double(frame));
        peak = std::max(peak, rms[f]);
    }
    if (peak == 0.0) return 1.0;
    const double cutoff = peak * std::pow(10.0, threshold_db / 20.0);
    std::size_t silent = 0;
    for (double r : rms)
        if (r < cutoff) ++silent;
    return double(silent) / double(n_frames);
}

// ---------------------------------------------------------------------------
// Split construction
// ---------------------------------------------------------------------------

// Deterministic per-speaker partition; the split lists interleave speakers
// round-robin so any prefix of an epoch is speaker-balanced.
inline SplitManifest build_split(std::size_t n_speakers, std::size_t segments_per_speaker,
                                 const double ratios[3], std::uint64_t seed) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("build_split: ratios must sum to 1");
    const std::size_t n_train = static_cast<std::size_t>(ratios[0] * double(segments_per_speaker) + 0.5);
    const std::size_t n_val = static_cast<std::size_t>(ratios[1] * double(segments_per_speaker) + 0.5);
    if (n_train + n_val > segments_per_speaker)
        throw std::invalid_argument("build_split: ratios overflow the segment count");
    const std::size_t n_test = segments_per_speaker - n_train - n_val;
    if (n_train == 0 || n_val == 0 || n_test == 0)
        throw std::invalid_argument("build_split: a split would be empty");

    SplitManifest m;
    m.global_seed = seed;
    for (std::size_t k = 0; k < n_train; ++k)
        for (std::size_t s = 0; s < n_speakers; ++s)
            m.train.push_back({int(s), int(k)});
    for (std::size_t k = 0; k < n_val; ++k)
        for (std::size_t s = 0; s < n_speakers; ++s)
            m.val.push_back({int(s), int(n_train + k)});
    for (std::size_t k = 0; k < n_test; ++k)
        for (std::size_t s = 0; s < n_speakers; ++s)
            m.test.push_back({int(s), int(n_train + n_val + k)});
    return m;
}

// ---------------------------------------------------------------------------
// Corpus handle
// ---------------------------------------------------------------------------

class Corpus {
public:
    static Corpus generate(const CorpusConfig& cfg) {
        Corpus c;
        c.cfg_ = cfg;
        for (std::size_t s = 0; s < cfg.n_speakers; ++s)
            c.speakers_.push_back(make_speaker_profile(cfg.seed, int(s), cfg.n_speakers));
        c.splits_ = build_split(cfg.n_speakers, cfg.segments_per_speaker, cfg.ratios, cfg.seed);
        return c;
    }

    const CorpusConfig& config() const { return cfg_; }
    const std::vector<SpeakerProfile>& speakers() const { return speakers_; }
    const SplitManifest& splits() const { return splits_; }
    const std::string& dir() const { return dir_; }
    void set_dir(std::string dir) { dir_ = std::move(dir); }

    // Per-speaker segment list of a split (segment ids only).
    std::vector<int> split_segments(Split split, int speaker) const {
        std::vector<int> out;
        for (const auto& e : splits_.list(split))
            if (e.speaker == speaker) out.push_back(e.segment);
        return out;
    }

    const Waveform& segment(int speaker, int seg) const {
        const std::uint64_t key =
            (static_cast<std::uint64_t>(speaker) << 32) | static_cast<std::uint32_t>(seg);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        Waveform w;
        if (!dir_.empty()) {
            w = read_pcm(segment_path(dir_, speaker, seg));
        } else {
            w = synth_segment(speakers_.at(static_cast<std::size_t>(speaker)), seg);
        }
        return cache_.emplace(key, std::move(w)).first->second;
    }

    static std::string segment_path(const std::string& dir, int speaker, int seg) {
        char name[64];
        std::snprintf(name, sizeof(name), "spk%d_seg%d.pcm", speaker, seg);
        return (std::filesystem::path(dir) / name).string();
    }

    static Waveform read_pcm(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("corpus: cannot open " + path);
        in.seekg(0, std::ios::end);
        const std::streamoff bytes = in.tellg();
        in.seekg(0);
        if (bytes % 2 != 0) throw std::runtime_error("corpus: truncated PCM " + path);
        std::vector<std::int16_t> raw(static_cast<std::size_t>(bytes) / 2);
        in.read(reinterpret_cast<char*>(raw.data()), bytes);
        if (!in) throw std::runtime_error("corpus: short read on " + path);
        Waveform w;
        w.samples.resize(raw.size());
        for (std::size_t i = 0; i < raw.size(); ++i) w.samples[i] = double(raw[i]) / 32767.0;
        return w;
    }

    static void write_pcm(const Waveform& w, const std::string& path) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("corpus: cannot write " + path);
        std::vector<std::int16_t> raw(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double c = std::max(-1.0, std::min(1.0, w.samples[i]));
            raw[i] = static_cast<std::int16_t>(std::lround(c * 32767.0));
        }
        out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 2));
        if (!out) throw std::runtime_error("corpus: write failed for " + path);
    }

private:
    CorpusConfig cfg_;
    std::vector<SpeakerProfile> speakers_;
    SplitManifest splits_;
    std::string dir_;
    mutable std::map<std::uint64_t, Waveform> cache_;
};

// ---------------------------------------------------------------------------
// Mixture construction
// ---------------------------------------------------------------------------

// First source iterates the split deterministically; partners are drawn from
// other speakers' segments of the same split, seeded by (seed, split, index).
template <typename Real>
MixtureSample<Real> make_mixture(const Corpus& corpus, Split split, std::size_t index,
                                 std::size_t n_sources, std::uint64_t seed) {
    const auto& list = corpus.splits().list(split);
    if (index >= list.size()) throw std::out_of_range("make_mixture: index out of range");
    if (n_sources > corpus.config().n_speakers)
        throw std::invalid_argument("make_mixture: more sources than speakers");
    if (n_sources < 1 || n_sources > 4)
        throw std::invalid_argument("make_mixture: n_sources must be in [1,4]");

    Rng rng(seed, static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(index));
    std::vector<SegmentRef> chosen{list[index]};
    std::vector<int> used{list[index].speaker};
    while (chosen.size() < n_sources) {
        int speaker;
        do {
            speaker = int(rng.index(corpus.config().n_speakers));
        } while (std::find(used.begin(), used.end(), speaker) != used.end());
        const auto segs = corpus.split_segments(split, speaker);
        const int seg = segs.at(rng.index(segs.size()));
        chosen.push_back({speaker, seg});
        used.push_back(speaker);
    }

    std::vector<Waveform> waves;
    waves.reserve(n_sources);
    for (const auto& ref : chosen) waves.push_back(corpus.segment(ref.speaker, ref.segment));

    MixtureSample<Real> sample;
    sample.n_speakers = corpus.config().n_speakers;
    sample.provenance = chosen;
    for (const auto& ref : chosen) sample.target_speakers.push_back(ref.speaker);
    sample.mixture = compress(stft_magnitude<Real>(mix(waves)));
    for (const auto& w : waves) sample.references.push_back(compress(stft_magnitude<Real>(w)));
    return sample;
}

}  // namespace cocktail
