#pragma once

#include <string>

#include "cocktail/checkpoint.hpp"
#include "cocktail/classifier.hpp"
#include "cocktail/corpus.hpp"

// Run configuration: one JSON document covering corpus, mixture protocol,
// both models and the trainer. Unknown keys are rejected; the resolved
// config (with every preset expanded to concrete numbers) is echoed into
// every artifact together with its hash.

namespace cocktail {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::uint64_t seed = 1234;
    int threads = 0;  // 0 = leave library defaults

    struct CorpusSection {
        std::string dir = "corpus";
        std::size_t n_speakers = 8;
        std::size_t segments_per_speaker = 400;
        std::vector<double> ratios = {0.8, 0.1, 0.1};
        std::string scale = "desk";  // desk | reference
    } corpus;

    struct MixtureSection {
        std::size_t n_sources = 2;
        std::uint64_t mix_seed = 9001;
        std::size_t eval_passes = 4;  // passes over the split when evaluating
    } mixture;

    struct ExtractorSection {
        std::string preset = "desk";  // desk | reference
        std::string variant = "attention";  // attention | ablation
        std::size_t attention_channels = 16;
        std::size_t hourglass_depth = 3;
        std::size_t dilated_blocks = 2;
        std::size_t dilated_channels_per_source = 16;
        std::size_t layers_per_block = 6;
    } extractor;

    struct ClassifierSection {
        std::string variant = "conv";  // conv | recurrent
        std::string preset = "desk";   // desk | reference
        std::size_t chunk_frames = 20;
        std::size_t chunk_shift = 8;
        std::size_t lstm_hidden = 32;
        std::size_t lstm_layers = 3;
        std::size_t fc_hidden = 64;
        std::string conv_preset = "desk10";
        std::string global_pool = "avg";  // avg | max
    } classifier;

    struct TrainSection {
        double lr_pretrain = 1e-3;
        double lr_joint = 1e-4;
        std::size_t batch = 16;
        std::size_t epochs_extractor = 4;
        std::size_t epochs_classifier = 4;
        std::size_t epochs_joint = 2;
        double alpha = 0.0;  // 0 = pick by n_sources (20 for 2, 300 for 3+)
        std::size_t patience = 5;
        std::size_t val_subset = 64;  // mixtures per validation pass during training; 0 = full split
        std::string optimizer = "adam";  // adam | sgd
        std::string out_dir = "runs";
    } train;

    // ---- resolved model/corpus configs -------------------------------------

    CorpusConfig corpus_config() const {
        CorpusConfig c;
        c.seed = seed;
        c.n_speakers = corpus.n_speakers;
        c.segments_per_speaker = corpus.segments_per_speaker;
        if (corpus.ratios.size() != 3) throw ConfigError("corpus.ratios must have 3 entries");
        for (int i = 0; i < 3; ++i) c.ratios[i] = corpus.ratios[i];
        c.scale = corpus.scale;
        return c;
    }

    ExtractorConfig extractor_config() const {
        ExtractorConfig e;
        e.n_sources = mixture.n_sources;
        e.attention_channels = extractor.attention_channels;
        e.hourglass_depth = extractor.hourglass_depth;
        e.dilated_blocks = extractor.dilated_blocks;
        e.dilated_channels_per_source = extractor.dilated_channels_per_source;
        e.layers_per_block = extractor.layers_per_block;
        e.ablation = extractor.variant == "ablation";
        e.validate();
        return e;
    }

    ClassifierConfig classifier_config() const {
        ClassifierConfig c;
        c.variant = classifier.variant == "recurrent" ? ClassifierVariant::Recurrent : ClassifierVariant::Conv;
        c.n_speakers = corpus.n_speakers;
        c.chunk_frames = classifier.chunk_frames;
        c.chunk_shift = classifier.chunk_shift;
        c.lstm_hidden = classifier.lstm_hidden;
        c.lstm_layers = classifier.lstm_layers;
        c.fc_hidden = classifier.fc_hidden;
        c.conv_preset = classifier.conv_preset;
        c.global_pool = classifier.global_pool == "max" ? PoolMode::Max : PoolMode::Avg;
        c.validate();
        return c;
    }

    double resolved_alpha() const { return train.alpha > 0.0 ? train.alpha : default_alpha(mixture.n_sources); }

    // ---- JSON ---------------------------------------------------------------

    Json to_json() const {
        Json j;
        j["seed"] = seed;
        j["threads"] = threads;
        j["corpus"] = {{"dir", corpus.dir},
                       {"n_speakers", corpus.n_speakers},
                       {"segments_per_speaker", corpus.segments_per_speaker},
                       {"ratios", corpus.ratios},
                       {"scale", corpus.scale}};
        j["mixture"] = {{"n_sources", mixture.n_sources},
                        {"mix_seed", mixture.mix_seed},
                        {"eval_passes", mixture.eval_passes}};
        j["extractor"] = {{"preset", extractor.preset},
                          {"variant", extractor.variant},
                          {"attention_channels", extractor.attention_channels},
                          {"hourglass_depth", extractor.hourglass_depth},
                          {"dilated_blocks", extractor.dilated_blocks},
                          {"dilated_channels_per_source", extractor.dilated_channels_per_source},
                          {"layers_per_block", extractor.layers_per_block}};
        j["classifier"] = {{"variant", classifier.variant},
                           {"preset", classifier.preset},
                           {"chunk_frames", classifier.chunk_frames},
                           {"chunk_shift", classifier.chunk_shift},
                           {"lstm_hidden", classifier.lstm_hidden},
                           {"lstm_layers", classifier.lstm_layers},
                           {"fc_hidden", classifier.fc_hidden},
                           {"conv_preset", classifier.conv_preset},
                           {"global_pool", classifier.global_pool}};
        j["train"] = {{"lr_pretrain", train.lr_pretrain},
                      {"lr_joint", train.lr_joint},
                      {"batch", train.batch},
                      {"epochs_extractor", train.epochs_extractor},
                      {"epochs_classifier", train.epochs_classifier},
                      {"epochs_joint", train.epochs_joint},
                      {"alpha", train.alpha},
                      {"patience", train.patience},
                      {"val_subset", train.val_subset},
                      {"optimizer", train.optimizer},
                      {"out_dir", train.out_dir}};
        return j;
    }

    std::string hash() const { return json_hash(to_json()); }

    static RunConfig from_json(const Json& j);
    static RunConfig from_file(const std::string& path);
};

namespace detail {

// Every key in `given` must exist in `reference`; nested objects recurse.
inline void reject_unknown_keys(const Json& given, const Json& reference, const std::string& prefix) {
    if (!given.is_object()) return;
    for (auto it = given.begin(); it != given.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!reference.contains(it.key())) throw ConfigError("unknown config key: " + path);
        if (it.value().is_object()) reject_unknown_keys(it.value(), reference.at(it.key()), path);
    }
}

template <typename T>
void read_if(const Json& j, const char* key, T& out, const std::string& prefix) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const std::exception&) {
        throw ConfigError("bad value for config key " + prefix + "." + key);
    }
}

}  // namespace detail

inline void apply_preset_defaults(RunConfig& cfg) {
    if (cfg.extractor.preset == "reference") {
        cfg.extractor.attention_channels = 128;
        cfg.extractor.dilated_channels_per_source = 32;
        cfg.extractor.dilated_blocks = 3;
    } else if (cfg.extractor.preset == "desk") {
        cfg.extractor.attention_channels = 16;
        cfg.extractor.dilated_channels_per_source = 16;
        cfg.extractor.dilated_blocks = 2;
    } else {
        throw ConfigError("extractor.preset must be desk or reference");
    }
    if (cfg.classifier.preset == "reference") {
        cfg.classifier.chunk_shift = 1;
        cfg.classifier.lstm_hidden = 200;
        cfg.classifier.fc_hidden = 800;
        cfg.classifier.conv_preset = "reference34";
    } else if (cfg.classifier.preset == "desk") {
        cfg.classifier.chunk_shift = 8;
        cfg.classifier.lstm_hidden = 32;
        cfg.classifier.fc_hidden = 64;
        cfg.classifier.conv_preset = "desk10";
    } else {
        throw ConfigError("classifier.preset must be desk or reference");
    }
    if (cfg.corpus.scale == "reference") {
        cfg.corpus.n_speakers = 20;
    } else if (cfg.corpus.scale != "desk") {
        throw ConfigError("corpus.scale must be desk or reference");
    }
}

inline RunConfig RunConfig::from_json(const Json& j) {
    RunConfig cfg;
    detail::reject_unknown_keys(j, cfg.to_json(), "");

    // Presets first, explicit values afterwards.
    if (j.contains("corpus")) detail::read_if(j["corpus"], "scale", cfg.corpus.scale, "corpus");
    if (j.contains("extractor")) detail::read_if(j["extractor"], "preset", cfg.extractor.preset, "extractor");
    if (j.contains("classifier")) detail::read_if(j["classifier"], "preset", cfg.classifier.preset, "classifier");
    apply_preset_defaults(cfg);

    detail::read_if(j, "seed", cfg.seed, "");
    detail::read_if(j, "threads", cfg.threads, "");
    if (j.contains("corpus")) {
        const Json& c = j["corpus"];
        detail::read_if(c, "dir", cfg.corpus.dir, "corpus");
        detail::read_if(c, "n_speakers", cfg.corpus.n_speakers, "corpus");
        detail::read_if(c, "segments_per_speaker", cfg.corpus.segments_per_speaker, "corpus");
        detail::read_if(c, "ratios", cfg.corpus.ratios, "corpus");
    }
    if (j.contains("mixture")) {
        const Json& m = j["mixture"];
        detail::read_if(m, "n_sources", cfg.mixture.n_sources, "mixture");
        detail::read_if(m, "mix_seed", cfg.mixture.mix_seed, "mixture");
        detail::read_if(m, "eval_passes", cfg.mixture.eval_passes, "mixture");
    }
    if (j.contains("extractor")) {
        const Json& e = j["extractor"];
        detail::read_if(e, "variant", cfg.extractor.variant, "extractor");
        detail::read_if(e, "attention_channels", cfg.extractor.attention_channels, "extractor");
        detail::read_if(e, "hourglass_depth", cfg.extractor.hourglass_depth, "extractor");
        detail::read_if(e, "dilated_blocks", cfg.extractor.dilated_blocks, "extractor");
        detail::read_if(e, "dilated_channels_per_source", cfg.extractor.dilated_channels_per_source,
                        "extractor");
        detail::read_if(e, "layers_per_block", cfg.extractor.layers_per_block, "extractor");
    }
    if (j.contains("classifier")) {
        const Json& c = j["classifier"];
        detail::read_if(c, "variant", cfg.classifier.variant, "classifier");
        detail::read_if(c, "chunk_frames", cfg.classifier.chunk_frames, "classifier");
        detail::read_if(c, "chunk_shift", cfg.classifier.chunk_shift, "classifier");
        detail::read_if(c, "lstm_hidden", cfg.classifier.lstm_hidden, "classifier");
        detail::read_if(c, "lstm_layers", cfg.classifier.lstm_layers, "classifier");
        detail::read_if(c, "fc_hidden", cfg.classifier.fc_hidden, "classifier");
        detail::read_if(c, "conv_preset", cfg.classifier.conv_preset, "classifier");
        detail::read_if(c, "global_pool", cfg.classifier.global_pool, "classifier");
    }
    if (j.contains("train")) {
        const Json& t = j["train"];
        detail::read_if(t, "lr_pretrain", cfg.train.lr_pretrain, "train");
        detail::read_if(t, "lr_joint", cfg.train.lr_joint, "train");
        detail::read_if(t, "batch", cfg.train.batch, "train");
        detail::read_if(t, "epochs_extractor", cfg.train.epochs_extractor, "train");
        detail::read_if(t, "epochs_classifier", cfg.train.epochs_classifier, "train");
        detail::read_if(t, "epochs_joint", cfg.train.epochs_joint, "train");
        detail::read_if(t, "alpha", cfg.train.alpha, "train");
        detail::read_if(t, "patience", cfg.train.patience, "train");
        detail::read_if(t, "val_subset", cfg.train.val_subset, "train");
        detail::read_if(t, "optimizer", cfg.train.optimizer, "train");
        detail::read_if(t, "out_dir", cfg.train.out_dir, "train");
    }

    if (cfg.train.batch < 1) throw ConfigError("train.batch must be >= 1");
    if (cfg.extractor.variant != "attention" && cfg.extractor.variant != "ablation")
        throw ConfigError("extractor.variant must be attention or ablation");
    if (cfg.classifier.variant != "conv" && cfg.classifier.variant != "recurrent")
        throw ConfigError("classifier.variant must be conv or recurrent");
    if (cfg.classifier.global_pool != "avg" && cfg.classifier.global_pool != "max")
        throw ConfigError("classifier.global_pool must be avg or max");
    if (cfg.train.optimizer != "adam" && cfg.train.optimizer != "sgd")
        throw ConfigError("train.optimizer must be adam or sgd");
    if (cfg.mixture.n_sources < 1 || cfg.mixture.n_sources > 4)
        throw ConfigError("mixture.n_sources must be in [1,4]");
    return cfg;
}

inline RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    Json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return from_json(j);
}

}  // namespace cocktail
