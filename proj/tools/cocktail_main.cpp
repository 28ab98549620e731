// Command-line surface: corpus generation, the three training stages,
// evaluation, spectrogram export and the built-in selfcheck.
//
// Exit codes: 0 success, 2 config error, 3 missing prerequisite,
// 4 numerical failure.

#include <CLI11.hpp>

#include <Eigen/Core>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cocktail/selfcheck.hpp"
#include "cocktail/trainer.hpp"

namespace fs = std::filesystem;
using namespace cocktail;

using Real = float;

namespace {

void apply_threads(const RunConfig& cfg) {
    int threads = cfg.threads;
    if (const char* env = std::getenv("COCKTAIL_THREADS")) threads = std::atoi(env);
    if (threads > 0) {
        Eigen::setNbThreads(threads);
#ifdef _OPENMP
        omp_set_num_threads(threads);
#endif
    }
}

RunConfig load_config(const std::string& path, std::uint64_t seed_override, bool has_seed) {
    RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::from_file(path);
    if (has_seed) cfg.seed = seed_override;
    return cfg;
}

Corpus open_corpus(const RunConfig& cfg) {
    const fs::path manifest = fs::path(cfg.corpus.dir) / "manifest.json";
    if (!fs::exists(manifest))
        throw MissingPrerequisite("corpus not found at " + cfg.corpus.dir + " (run gen-corpus first)");
    return load_corpus_dir(cfg.corpus.dir);
}

int cmd_gen_corpus(const RunConfig& cfg, const std::string& out, bool force) {
    Corpus corpus = Corpus::generate(cfg.corpus_config());
    write_corpus_dir(corpus, out, force);
    // Silence statistic over a sample of the generated segments.
    Corpus reader = load_corpus_dir(out);
    double silence = 0.0;
    std::size_t counted = 0;
    for (std::size_t s = 0; s < cfg.corpus.n_speakers && counted < 200; ++s)
        for (std::size_t k = 0; k < cfg.corpus.segments_per_speaker && counted < 200; ++k, ++counted)
            silence += measure_silence_fraction(reader.segment(int(s), int(k)));
    silence /= double(counted);
    std::cout << "corpus written to " << out << "\n"
              << "speakers: " << cfg.corpus.n_speakers
              << ", segments/speaker: " << cfg.corpus.segments_per_speaker << "\n"
              << "splits: " << corpus.splits().train.size() << "/" << corpus.splits().val.size() << "/"
              << corpus.splits().test.size() << "\n"
              << "mean silence fraction (-30 dB): " << silence << "\n";
    return 0;
}

int cmd_train(RunConfig cfg, const std::string& stage, const std::string& from, bool resume,
              bool ablation) {
    if (ablation) cfg.extractor.variant = "ablation";
    apply_threads(cfg);
    Corpus corpus = open_corpus(cfg);
    Trainer<Real> trainer(cfg, corpus);
    const fs::path out_root = cfg.train.out_dir;
    fs::create_directories(out_root);

    auto stage_dir = [&](const char* name) { return (out_root / name).string(); };
    std::string best;
    if (stage == "pretrain_extractor") {
        fs::create_directories(stage_dir("stage1"));
        TrainLog log(stage_dir("stage1") + "/train_log.jsonl");
        best = trainer.pretrain_extractor(stage_dir("stage1"), log, &std::cerr,
                                          resume ? stage_dir("stage1") + "/last" : "");
    } else if (stage == "pretrain_classifier") {
        const std::string ext_ckpt = from.empty() ? stage_dir("stage1") + "/best" : from;
        if (!fs::exists(fs::path(ext_ckpt) / "manifest.json"))
            throw MissingPrerequisite("missing extractor checkpoint " + ext_ckpt +
                                      " (run --stage pretrain_extractor first)");
        fs::create_directories(stage_dir("stage2"));
        TrainLog log(stage_dir("stage2") + "/train_log.jsonl");
        best = trainer.pretrain_classifier(ext_ckpt, stage_dir("stage2"), log, &std::cerr,
                                           resume ? stage_dir("stage2") + "/last" : "");
    } else if (stage == "joint") {
        const std::string prev = from.empty() ? stage_dir("stage2") + "/best" : from;
        if (!fs::exists(fs::path(prev) / "manifest.json"))
            throw MissingPrerequisite("missing classifier checkpoint " + prev +
                                      " (run --stage pretrain_classifier first)");
        fs::create_directories(stage_dir("joint"));
        TrainLog log(stage_dir("joint") + "/train_log.jsonl");
        best = trainer.train_joint(prev, stage_dir("joint"), log, &std::cerr,
                                   resume ? stage_dir("joint") + "/last" : "");
    } else {
        throw ConfigError("unknown stage " + stage +
                          " (expected pretrain_extractor | pretrain_classifier | joint)");
    }
    std::cout << "best checkpoint: " << best << "\n";
    return 0;
}

RunConfig config_from_checkpoint(const std::string& ckpt, const std::string& config_path) {
    if (!config_path.empty()) return RunConfig::from_file(config_path);
    if (!fs::exists(fs::path(ckpt) / "manifest.json"))
        throw MissingPrerequisite("missing checkpoint " + ckpt);
    const auto loaded = load_checkpoint<Real>(ckpt);
    return RunConfig::from_json(loaded.meta.config);
}

int cmd_eval(const std::string& ckpt, const std::string& split_str, int n_sources,
             const std::string& config_path, const std::string& corpus_dir, const std::string& out) {
    RunConfig cfg = config_from_checkpoint(ckpt, config_path);
    if (!corpus_dir.empty()) cfg.corpus.dir = corpus_dir;
    if (n_sources > 0) cfg.mixture.n_sources = std::size_t(n_sources);
    apply_threads(cfg);
    Split split = Split::Test;
    if (split_str == "val") split = Split::Val;
    else if (split_str == "train") split = Split::Train;
    else if (split_str != "test") throw ConfigError("unknown split " + split_str);

    Corpus corpus = open_corpus(cfg);
    Trainer<Real> trainer(cfg, corpus);
    EvalReport report = trainer.evaluate(ckpt, split);

    const fs::path out_dir = out.empty() ? fs::path(ckpt) : fs::path(out);
    fs::create_directories(out_dir);
    {
        std::ofstream jf(out_dir / ("eval_" + report.split + ".json"));
        jf << report.to_json().dump(2) << "\n";
    }
    {
        std::ofstream tf(out_dir / ("eval_" + report.split + ".txt"));
        tf << report.table();
    }
    std::cout << report.table();
    return 0;
}

int cmd_export(const std::string& ckpt, const std::string& split_str, std::size_t index,
               const std::string& out, const std::string& config_path, const std::string& corpus_dir) {
    RunConfig cfg = config_from_checkpoint(ckpt, config_path);
    if (!corpus_dir.empty()) cfg.corpus.dir = corpus_dir;
    apply_threads(cfg);
    Split split = Split::Test;
    if (split_str == "val") split = Split::Val;
    else if (split_str == "train") split = Split::Train;

    Corpus corpus = open_corpus(cfg);
    Trainer<Real> trainer(cfg, corpus);
    Pipeline<Real> pipe = trainer.load_pipeline(ckpt, true, false);

    const auto& list = corpus.splits().list(split);
    if (index >= list.size()) throw ConfigError("index out of range for split " + split_str);
    auto sample = make_mixture<Real>(corpus, split, index, cfg.mixture.n_sources, trainer.eval_seed(0));
    auto est = pipe.extractor.forward(sample.mixture);

    fs::create_directories(out);
    export_image(sample.mixture, (fs::path(out) / "mixture").string());
    for (std::size_t i = 0; i < sample.references.size(); ++i)
        export_image(sample.references[i], (fs::path(out) / ("source" + std::to_string(i))).string());
    for (std::size_t c = 0; c < est.size(); ++c)
        export_image(tensor_to_spectrogram(est[c], SpectrogramDomain::Compressed),
                     (fs::path(out) / ("estimate_ch" + std::to_string(c))).string());
    std::cout << "wrote " << (1 + sample.references.size() + est.size()) << " images to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"co-channel speaker identification pipeline"};
    app.require_subcommand(0, 1);

    bool print_config = false;
    std::string root_config;
    app.add_flag("--print-config", print_config, "print the resolved config as JSON and exit");
    app.add_option("--config", root_config, "config file for --print-config");

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "synthesize the deterministic corpus");
    std::string gen_config, gen_out;
    bool gen_force = false;
    gen->add_option("--config", gen_config, "config JSON");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_flag("--force", gen_force, "overwrite a non-empty directory");

    // train
    auto* train = app.add_subcommand("train", "run one training stage");
    std::string tr_stage, tr_config, tr_from;
    bool tr_resume = false, tr_ablation = false;
    std::uint64_t tr_seed = 0;
    train->add_option("--stage", tr_stage, "pretrain_extractor | pretrain_classifier | joint")->required();
    train->add_option("--config", tr_config, "config JSON");
    train->add_option("--from", tr_from, "input checkpoint for stage 2/3");
    train->add_option("--seed", tr_seed, "override config seed");
    train->add_flag("--resume", tr_resume, "resume from this stage's last checkpoint");
    train->add_flag("--ablation", tr_ablation, "use the ablation extractor variant");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string ev_ckpt, ev_split = "test", ev_config, ev_corpus, ev_out;
    int ev_sources = 0;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint directory")->required();
    ev->add_option("--split", ev_split, "train | val | test");
    ev->add_option("--n-sources", ev_sources, "override mixture size");
    ev->add_option("--config", ev_config, "config JSON (default: embedded in checkpoint)");
    ev->add_option("--corpus", ev_corpus, "corpus directory override");
    ev->add_option("--out", ev_out, "report output directory (default: checkpoint dir)");

    // export-spectrograms
    auto* ex = app.add_subcommand("export-spectrograms", "write mixture/reference/estimate images");
    std::string ex_ckpt, ex_split = "test", ex_out = "spectrograms", ex_config, ex_corpus;
    std::size_t ex_index = 0;
    ex->add_option("--checkpoint", ex_ckpt, "checkpoint directory")->required();
    ex->add_option("--split", ex_split, "train | val | test");
    ex->add_option("--index", ex_index, "mixture index within the split");
    ex->add_option("--out", ex_out, "output directory");
    ex->add_option("--config", ex_config, "config JSON (default: embedded in checkpoint)");
    ex->add_option("--corpus", ex_corpus, "corpus directory override");

    // selfcheck
    auto* sc = app.add_subcommand("selfcheck", "run the built-in verification suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (print_config) {
            RunConfig cfg = load_config(root_config, 0, false);
            std::cout << cfg.to_json().dump(2) << "\n";
            return 0;
        }
        if (gen->parsed()) {
            RunConfig cfg = load_config(gen_config, 0, false);
            return cmd_gen_corpus(cfg, gen_out, gen_force);
        }
        if (train->parsed()) {
            RunConfig cfg = load_config(tr_config, tr_seed, train->count("--seed") > 0);
            return cmd_train(cfg, tr_stage, tr_from, tr_resume, tr_ablation);
        }
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_split, ev_sources, ev_config, ev_corpus, ev_out);
        if (ex->parsed()) return cmd_export(ex_ckpt, ex_split, ex_index, ex_out, ex_config, ex_corpus);
        if (sc->parsed()) {
            finite_checks() = true;
            return run_selfcheck().passed ? 0 : 1;
        }
        std::cout << app.help();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MissingPrerequisite& e) {
        std::cerr << "missing prerequisite: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
