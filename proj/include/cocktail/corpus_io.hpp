#pragma once

#include <filesystem>

#include "cocktail/checkpoint.hpp"
#include "cocktail/corpus.hpp"

// Corpus persistence: one directory with manifest.json plus per-segment
// 16-bit little-endian PCM files named spk{S}_seg{K}.pcm.

namespace cocktail {

inline Json corpus_manifest_json(const Corpus& corpus) {
    const CorpusConfig& cfg = corpus.config();
    Json j;
    j["format"] = "cocktail-corpus-v1";
    j["global_seed"] = cfg.seed;
    j["sample_rate"] = kSampleRate;
    j["segment_samples"] = kSegmentSamples;
    j["n_speakers"] = cfg.n_speakers;
    j["segments_per_speaker"] = cfg.segments_per_speaker;
    j["ratios"] = {cfg.ratios[0], cfg.ratios[1], cfg.ratios[2]};
    j["scale"] = cfg.scale;

    Json speakers = Json::array();
    for (const auto& p : corpus.speakers()) {
        Json s;
        s["id"] = p.speaker_id;
        s["base_pitch_hz"] = p.base_pitch_hz;
        s["pitch_wander_hz"] = p.pitch_wander_hz;
        Json formants = Json::array();
        for (int k = 0; k < 3; ++k) formants.push_back({{"hz", p.formants[k].hz}, {"bw", p.formants[k].bandwidth_hz}});
        s["formants"] = formants;
        s["voiced_ms"] = p.voiced_ms;
        s["unvoiced_ms"] = p.unvoiced_ms;
        s["silence_ms"] = p.silence_ms;
        s["unvoiced_prob"] = p.unvoiced_prob;
        s["seed"] = p.seed;
        speakers.push_back(s);
    }
    j["speakers"] = speakers;

    auto split_json = [](const std::vector<SegmentRef>& list) {
        Json arr = Json::array();
        for (const auto& e : list) arr.push_back({e.speaker, e.segment});
        return arr;
    };
    j["splits"] = {{"train", split_json(corpus.splits().train)},
                   {"val", split_json(corpus.splits().val)},
                   {"test", split_json(corpus.splits().test)}};
    j["counts"] = {{"train", corpus.splits().train.size()},
                   {"val", corpus.splits().val.size()},
                   {"test", corpus.splits().test.size()}};
    // Full-scale split sizes of the corpus this generator stands in for.
    if (cfg.scale == "reference")
        j["reference_counts"] = {{"train", 38424}, {"val", 4803}, {"test", 4886}};
    return j;
}

inline std::string corpus_hash(const Corpus& corpus) { return json_hash(corpus_manifest_json(corpus)); }

// Writes manifest + all PCM segments. Refuses a non-empty directory unless
// `force` is set. Regenerating with the same config is bit-identical.
inline void write_corpus_dir(const Corpus& corpus, const std::string& dir, bool force) {
    namespace fs = std::filesystem;
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw std::runtime_error("corpus: output directory " + dir + " is not empty (use --force)");
    fs::create_directories(dir);
    {
        std::ofstream mf(fs::path(dir) / "manifest.json");
        if (!mf) throw std::runtime_error("corpus: cannot write manifest in " + dir);
        mf << corpus_manifest_json(corpus).dump(2) << "\n";
    }
    for (const auto& p : corpus.speakers())
        for (std::size_t k = 0; k < corpus.config().segments_per_speaker; ++k)
            Corpus::write_pcm(synth_segment(p, int(k)), Corpus::segment_path(dir, p.speaker_id, int(k)));
}

inline Corpus load_corpus_dir(const std::string& dir) {
    std::ifstream mf(std::filesystem::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("corpus: missing manifest.json in " + dir);
    Json j;
    mf >> j;
    if (j.value("format", "") != "cocktail-corpus-v1")
        throw std::runtime_error("corpus: unknown manifest format in " + dir);

    CorpusConfig cfg;
    cfg.seed = j.value("global_seed", std::uint64_t(0));
    cfg.n_speakers = j.value("n_speakers", std::size_t(0));
    cfg.segments_per_speaker = j.value("segments_per_speaker", std::size_t(0));
    const auto ratios = j.value("ratios", std::vector<double>{0.8, 0.1, 0.1});
    for (int i = 0; i < 3; ++i) cfg.ratios[i] = ratios.at(static_cast<std::size_t>(i));
    cfg.scale = j.value("scale", "desk");

    Corpus corpus = Corpus::generate(cfg);
    corpus.set_dir(dir);
    return corpus;
}

// Digest over manifest bytes and every PCM file; identical reruns produce
// identical digests.
inline std::string corpus_dir_digest(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    std::string acc;
    for (const auto& name : names) {
        std::ifstream in(fs::path(dir) / name, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        acc += name + ":" + fnv1a_hex(name + bytes) + ";";
    }
    return fnv1a_hex(acc);
}

}  // namespace cocktail
