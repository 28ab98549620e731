#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "cocktail/tensor.hpp"

// Waveform-to-spectrogram front end. Fixed analysis geometry: 8 kHz input,
// 256-sample (32 ms) Hann window, 128-sample (16 ms) hop, 256-point
// transform. 129 magnitude bins are computed and the DC bin dropped, which
// leaves the 128 frequency rows used everywhere downstream.

namespace cocktail {

inline constexpr std::size_t kSampleRate = 8000;
inline constexpr std::size_t kWindowSamples = 256;
inline constexpr std::size_t kHopSamples = 128;
inline constexpr std::size_t kSpectrogramBins = 128;

struct Waveform {
    std::vector<double> samples;  // nominal range [-1, 1]

    std::size_t size() const { return samples.size(); }
};

enum class SpectrogramDomain { Linear, Compressed };

template <typename Real>
struct Spectrogram {
    SpectrogramDomain domain = SpectrogramDomain::Linear;
    std::size_t bins = 0;
    std::size_t frames = 0;
    std::vector<Real> values;  // row-major [bins][frames]

    Real& at(std::size_t bin, std::size_t frame) { return values[bin * frames + frame]; }
    Real at(std::size_t bin, std::size_t frame) const { return values[bin * frames + frame]; }
};

inline std::size_t stft_frame_count(std::size_t samples) {
    return samples < kWindowSamples ? 0 : (samples - kWindowSamples) / kHopSamples + 1;
}

namespace detail {

struct DftTables {
    // cos/sin for bins 1..128 over the Hann-windowed 256-sample frame.
    std::vector<double> cos_t, sin_t, window;

    DftTables() {
        cos_t.resize(kSpectrogramBins * kWindowSamples);
        sin_t.resize(kSpectrogramBins * kWindowSamples);
        window.resize(kWindowSamples);
        const double two_pi = 6.283185307179586476925286766559;
        for (std::size_t n = 0; n < kWindowSamples; ++n)
            window[n] = 0.5 - 0.5 * std::cos(two_pi * double(n) / double(kWindowSamples));
        for (std::size_t b = 0; b < kSpectrogramBins; ++b) {
            const double w = two_pi * double(b + 1) / double(kWindowSamples);
            for (std::size_t n = 0; n < kWindowSamples; ++n) {
                cos_t[b * kWindowSamples + n] = std::cos(w * double(n));
                sin_t[b * kWindowSamples + n] = std::sin(w * double(n));
            }
        }
    }
};

inline const DftTables& dft_tables() {
    static const DftTables tables;
    return tables;
}

}  // namespace detail

// Magnitude STFT; frame count T = floor((len - 256)/128) + 1, no padding.
template <typename Real>
Spectrogram<Real> stft_magnitude(const Waveform& w) {
    if (w.size() < kWindowSamples)
        throw std::invalid_argument("stft_magnitude: waveform shorter than one window");
    const std::size_t frames = stft_frame_count(w.size());
    Spectrogram<Real> s;
    s.domain = SpectrogramDomain::Linear;
    s.bins = kSpectrogramBins;
    s.frames = frames;
    s.values.assign(kSpectrogramBins * frames, Real(0));

    const auto& tb = detail::dft_tables();
    std::vector<double> frame(kWindowSamples);
    for (std::size_t t = 0; t < frames; ++t) {
        const double* src = w.samples.data() + t * kHopSamples;
        for (std::size_t n = 0; n < kWindowSamples; ++n) frame[n] = src[n] * tb.window[n];
        for (std::size_t b = 0; b < kSpectrogramBins; ++b) {
            const double* ct = tb.cos_t.data() + b * kWindowSamples;
            const double* st = tb.sin_t.data() + b * kWindowSamples;
            double re = 0.0, im = 0.0;
            for (std::size_t n = 0; n < kWindowSamples; ++n) {
                re += frame[n] * ct[n];
                im -= frame[n] * st[n];
            }
            s.values[b * frames + t] = static_cast<Real>(std::sqrt(re * re + im * im));
        }
    }
    return s;
}

// X = log(1 + S).
template <typename Real>
Spectrogram<Real> compress(const Spectrogram<Real>& s) {
    if (s.domain != SpectrogramDomain::Linear)
        throw std::invalid_argument("compress: input is already compressed");
    Spectrogram<Real> out = s;
    out.domain = SpectrogramDomain::Compressed;
    for (auto& v : out.values) v = std::log1p(v);
    return out;
}

// Samplewise sum at unit gains.
inline Waveform mix(const std::vector<Waveform>& waves) {
    if (waves.empty()) throw std::invalid_argument("mix: no inputs");
    const std::size_t n = waves[0].size();
    for (const auto& w : waves)
        if (w.size() != n) throw std::invalid_argument("mix: length mismatch");
    Waveform out;
    out.samples.assign(n, 0.0);
    for (const auto& w : waves)
        for (std::size_t i = 0; i < n; ++i) out.samples[i] += w.samples[i];
    return out;
}

template <typename Real>
Tensor<Real> spectrogram_to_tensor(const Spectrogram<Real>& s) {
    return Tensor<Real>::from({1, s.bins, s.frames}, s.values);
}

template <typename Real>
Spectrogram<Real> tensor_to_spectrogram(const Tensor<Real>& t, SpectrogramDomain domain) {
    Spectrogram<Real> s;
    if (t.rank() == 2) {
        s.bins = t.size(0);
        s.frames = t.size(1);
    } else if (t.rank() == 3 && t.size(0) == 1) {
        s.bins = t.size(1);
        s.frames = t.size(2);
    } else {
        throw std::invalid_argument("tensor_to_spectrogram: expected [bins,frames] or [1,bins,frames]");
    }
    s.domain = domain;
    s.values = t.values();
    return s;
}

// Writes <path_prefix>.pgm (8-bit P5, low frequency at the bottom, linear
// [0,max] -> [0,255]) and <path_prefix>.csv with the raw values, one row per
// bin in ascending bin order.
template <typename Real>
void export_image(const Spectrogram<Real>& s, const std::string& path_prefix) {
    Real maxv = Real(0);
    for (Real v : s.values) maxv = std::max(maxv, v);

    {
        std::ofstream pgm(path_prefix + ".pgm", std::ios::binary);
        if (!pgm) throw std::runtime_error("export_image: cannot write " + path_prefix + ".pgm");
        pgm << "P5\n" << s.frames << " " << s.bins << "\n255\n";
        std::vector<unsigned char> row(s.frames);
        for (std::size_t r = 0; r < s.bins; ++r) {
            const std::size_t bin = s.bins - 1 - r;
            for (std::size_t t = 0; t < s.frames; ++t) {
                const double scaled = maxv > Real(0) ? double(s.at(bin, t)) / double(maxv) * 255.0 : 0.0;
                row[t] = static_cast<unsigned char>(scaled + 0.5);
            }
            pgm.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
        }
        if (!pgm) throw std::runtime_error("export_image: write failed for " + path_prefix + ".pgm");
    }
    {
        std::ofstream csv(path_prefix + ".csv");
        if (!csv) throw std::runtime_error("export_image: cannot write " + path_prefix + ".csv");
        char buf[40];
        for (std::size_t bin = 0; bin < s.bins; ++bin) {
            for (std::size_t t = 0; t < s.frames; ++t) {
                std::snprintf(buf, sizeof(buf), "%.9g", double(s.at(bin, t)));
                csv << buf << (t + 1 == s.frames ? "" : ",");
            }
            csv << "\n";
        }
        if (!csv) throw std::runtime_error("export_image: write failed for " + path_prefix + ".csv");
    }
}

// Parses a CSV produced by export_image; used by tests and tools.
template <typename Real>
Spectrogram<Real> import_csv(const std::string& path, SpectrogramDomain domain) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("import_csv: cannot open " + path);
    Spectrogram<Real> s;
    s.domain = domain;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t pos = 0, count = 0;
        while (pos <= line.size()) {
            std::size_t next = line.find(',', pos);
            if (next == std::string::npos) next = line.size();
            s.values.push_back(static_cast<Real>(std::strtod(line.c_str() + pos, nullptr)));
            ++count;
            pos = next + 1;
        }
        if (s.frames == 0) s.frames = count;
        else if (count != s.frames) throw std::runtime_error("import_csv: ragged rows in " + path);
        ++s.bins;
    }
    return s;
}

}  // namespace cocktail
