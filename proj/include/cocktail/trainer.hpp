#pragma once

#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "cocktail/config.hpp"
#include "cocktail/corpus_io.hpp"
#include "cocktail/objectives.hpp"
#include "cocktail/optimizer.hpp"
#include "cocktail/trainer_log.hpp"

// Three-stage schedule: extractor pretraining on permutation-invariant MSE,
// classifier pretraining on extracted spectrograms with channel-max CCE
// (extractor frozen), then joint fine-tuning of everything on
// alpha*MSE + CCE. Evaluation pools predictions by channel max and reports
// M-of-N accuracies plus the mean reconstruction MSE.

namespace cocktail {

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingPrerequisite : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Hash over the model-relevant part of the config: training schedule knobs
// and output paths do not participate, so a checkpoint stays loadable when
// only those change.
inline Json model_json(const RunConfig& cfg) {
    Json full = cfg.to_json();
    Json j;
    j["seed"] = full["seed"];
    j["corpus"] = full["corpus"];
    j["corpus"].erase("dir");
    j["mixture"] = {{"n_sources", full["mixture"]["n_sources"]}, {"mix_seed", full["mixture"]["mix_seed"]}};
    j["extractor"] = full["extractor"];
    j["classifier"] = full["classifier"];
    return j;
}

inline std::string model_hash(const RunConfig& cfg) { return json_hash(model_json(cfg)); }

struct EvalReport {
    std::string split;
    std::size_t n_sources = 0;
    std::size_t passes = 1;
    std::size_t sample_count = 0;
    std::vector<std::pair<std::string, double>> accuracy;  // "M/N" -> percent
    double mean_mse = 0.0;
    std::string config_hash, model_hash, corpus_hash, variant, pooling = "channel_max";
    std::uint64_t checkpoint_step = 0;

    Json to_json() const {
        Json j;
        j["split"] = split;
        j["n_sources"] = n_sources;
        j["passes"] = passes;
        j["sample_count"] = sample_count;
        Json acc = Json::object();
        for (const auto& [k, v] : accuracy) acc[k] = v;
        j["accuracy"] = acc;
        j["mean_mse"] = mean_mse;
        j["pooling"] = pooling;
        j["config_hash"] = config_hash;
        j["model_hash"] = model_hash;
        j["corpus_hash"] = corpus_hash;
        j["variant"] = variant;
        j["checkpoint_step"] = checkpoint_step;
        return j;
    }

    double accuracy_for(const std::string& key) const {
        for (const auto& [k, v] : accuracy)
            if (k == key) return v;
        throw std::out_of_range("eval report: no column " + key);
    }

    // Text table mirroring the results-table layout: one row per variant,
    // one column per M/N plus MSE and sample count.
    std::string table() const {
        std::ostringstream os;
        os << std::left << std::setw(12) << "variant";
        for (const auto& [k, v] : accuracy) os << std::right << std::setw(9) << k;
        os << std::right << std::setw(10) << "mse" << std::setw(10) << "samples" << "\n";
        os << std::left << std::setw(12) << variant;
        os << std::fixed << std::setprecision(2);
        for (const auto& [k, v] : accuracy) os << std::right << std::setw(9) << v;
        os << std::setprecision(4) << std::right << std::setw(10) << mean_mse;
        os << std::right << std::setw(10) << sample_count << "\n";
        return os.str();
    }
};

template <typename Real>
struct Pipeline {
    RunConfig cfg;
    Extractor<Real> extractor;
    std::unique_ptr<ChannelClassifier<Real>> classifier;  // may be null before stage 2

    ParamList<Real> all_params(bool include_classifier) const {
        ParamList<Real> out = extractor.params();
        if (include_classifier && classifier) {
            ParamList<Real> c = classifier->params();
            for (auto& item : c.items) out.items.push_back(std::move(item));
        }
        return out;
    }
};

template <typename Real>
Pipeline<Real> build_pipeline(const RunConfig& cfg, bool with_classifier) {
    Pipeline<Real> p;
    p.cfg = cfg;
    Rng ext_rng(cfg.seed, 0xE07u);
    p.extractor = Extractor<Real>(cfg.extractor_config(), ext_rng);
    if (with_classifier) {
        Rng cls_rng(cfg.seed, 0xC1a55u);
        p.classifier = make_classifier<Real>(cfg.classifier_config(), cls_rng);
    }
    return p;
}

template <typename Real>
class Trainer {
public:
    Trainer(RunConfig cfg, Corpus corpus) : cfg_(std::move(cfg)), corpus_(std::move(corpus)) {
        corpus_hash_ = corpus_hash(corpus_);
    }

    const RunConfig& config() const { return cfg_; }
    const Corpus& corpus() const { return corpus_; }

    // ---- stage 1 ------------------------------------------------------------

    std::string pretrain_extractor(const std::string& out_dir, TrainLog& log,
                                   std::ostream* progress = nullptr, const std::string& resume_dir = "") {
        Pipeline<Real> pipe = build_pipeline<Real>(cfg_, false);
        ParamList<Real> params = pipe.extractor.params();
        for (auto& [name, t] : params.items) t.set_requires_grad(true);
        Optimizer<Real> opt(params.tensors(), optimizer_config(Real(cfg_.train.lr_pretrain)));
        if (!resume_dir.empty()) restore(resume_dir, params, opt);

        const auto& train_list = corpus_.splits().train;
        double best_val = std::numeric_limits<double>::infinity();
        std::size_t since_best = 0;
        const std::string best_dir = out_dir + "/best";
        for (std::size_t epoch = 0; epoch < cfg_.train.epochs_extractor; ++epoch) {
            run_epoch_extractor(pipe, opt, epoch, train_list.size(), log);
            const Json val = validate(pipe.extractor, nullptr);
            log.val("pretrain_extractor", epoch, val);
            const double val_mse = val["mse"];
            if (progress)
                *progress << "[stage1] epoch " << epoch << " val_mse=" << val_mse << "\n";
            if (val_mse < best_val) {
                best_val = val_mse;
                since_best = 0;
                save(best_dir, pipe, nullptr, opt.step_count(), "pretrain_extractor", epoch);
            } else if (++since_best > cfg_.train.patience) {
                break;
            }
        }
        save_with_optimizer(out_dir + "/last", pipe, nullptr, opt, "pretrain_extractor");
        return best_dir;
    }

    // ---- stage 2 ------------------------------------------------------------

    std::string pretrain_classifier(const std::string& extractor_ckpt, const std::string& out_dir,
                                    TrainLog& log, std::ostream* progress = nullptr,
                                    const std::string& resume_dir = "") {
        Pipeline<Real> pipe = load_pipeline(extractor_ckpt, true, true);
        // Extractor stays frozen this stage: its forward runs outside any
        // tape and its parameters are never handed to the optimizer.
        ParamList<Real> params = pipe.classifier->params();
        for (auto& [name, t] : params.items) t.set_requires_grad(true);
        Optimizer<Real> opt(params.tensors(), optimizer_config(Real(cfg_.train.lr_pretrain)));
        if (!resume_dir.empty()) restore(resume_dir, params, opt);

        const auto& train_list = corpus_.splits().train;
        double best_val = std::numeric_limits<double>::infinity();
        std::size_t since_best = 0;
        const std::string best_dir = out_dir + "/best";
        for (std::size_t epoch = 0; epoch < cfg_.train.epochs_classifier; ++epoch) {
            run_epoch_classifier(pipe, opt, epoch, train_list.size(), log);
            const Json val = validate(pipe.extractor, pipe.classifier.get());
            log.val("pretrain_classifier", epoch, val);
            const double val_cce = val["cce"];
            if (progress)
                *progress << "[stage2] epoch " << epoch << " val_cce=" << val_cce
                          << " val_acc=" << val["accuracy"].dump() << "\n";
            if (val_cce < best_val) {
                best_val = val_cce;
                since_best = 0;
                save(best_dir, pipe, pipe.classifier.get(), opt.step_count(), "pretrain_classifier", epoch);
            } else if (++since_best > cfg_.train.patience) {
                break;
            }
        }
        save_with_optimizer(out_dir + "/last", pipe, pipe.classifier.get(), opt, "pretrain_classifier");
        return best_dir;
    }

    // ---- stage 3 ------------------------------------------------------------

    std::string train_joint(const std::string& prev_ckpt, const std::string& out_dir, TrainLog& log,
                            std::ostream* progress = nullptr, const std::string& resume_dir = "") {
        Pipeline<Real> pipe = load_pipeline(prev_ckpt, true, true);
        if (!load_checkpoint<Real>(prev_ckpt).meta.extra.value("has_classifier", false))
            throw MissingPrerequisite("joint stage needs a classifier checkpoint (run pretrain_classifier)");
        ParamList<Real> params = pipe.all_params(true);
        for (auto& [name, t] : params.items) t.set_requires_grad(true);
        Optimizer<Real> opt(params.tensors(), optimizer_config(Real(cfg_.train.lr_joint)));
        if (!resume_dir.empty()) restore(resume_dir, params, opt);
        const Real alpha = Real(cfg_.resolved_alpha());

        const auto& train_list = corpus_.splits().train;
        double best_val = std::numeric_limits<double>::infinity();
        std::size_t since_best = 0;
        const std::string best_dir = out_dir + "/best";
        for (std::size_t epoch = 0; epoch < cfg_.train.epochs_joint; ++epoch) {
            run_epoch_joint(pipe, opt, epoch, train_list.size(), alpha, log);
            const Json val = validate(pipe.extractor, pipe.classifier.get());
            log.val("joint", epoch, val);
            const double val_total = double(alpha) * double(val["mse"]) + double(val["cce"]);
            if (progress)
                *progress << "[joint] epoch " << epoch << " val_mse=" << val["mse"].dump()
                          << " val_cce=" << val["cce"].dump() << " val_acc=" << val["accuracy"].dump() << "\n";
            if (val_total < best_val) {
                best_val = val_total;
                since_best = 0;
                save(best_dir, pipe, pipe.classifier.get(), opt.step_count(), "joint", epoch);
            } else if (++since_best > cfg_.train.patience) {
                break;
            }
        }
        save_with_optimizer(out_dir + "/last", pipe, pipe.classifier.get(), opt, "joint");
        return best_dir;
    }

    // ---- evaluation ----------------------------------------------------------

    EvalReport evaluate(const std::string& ckpt_dir, Split split) {
        Pipeline<Real> pipe = load_pipeline(ckpt_dir, true, true);
        return evaluate_pipeline(pipe, split, load_checkpoint<Real>(ckpt_dir).meta.step);
    }

    EvalReport evaluate_pipeline(const Pipeline<Real>& pipe, Split split, std::uint64_t step = 0) {
        const auto& list = corpus_.splits().list(split);
        if (list.empty()) throw std::invalid_argument("evaluate: split is empty");
        const std::size_t n = cfg_.mixture.n_sources;

        std::vector<MnSample> samples;
        double mse_acc = 0.0;
        for (std::size_t pass = 0; pass < cfg_.mixture.eval_passes; ++pass) {
            const std::uint64_t seed = eval_seed(pass);
            for (std::size_t idx = 0; idx < list.size(); ++idx) {
                auto sample = make_mixture<Real>(corpus_, split, idx, n, seed);
                auto est = pipe.extractor.forward(sample.mixture);
                auto pm = siamese_apply(est, *pipe.classifier);
                MnSample mn;
                for (Real v : pm.pooled()) mn.pooled.push_back(double(v));
                mn.targets = sample.target_speakers;
                samples.push_back(std::move(mn));
                mse_acc += double(pit_mse(est, reference_tensors(sample)).loss.item());
            }
        }

        EvalReport report;
        report.split = split_name(split);
        report.n_sources = n;
        report.passes = cfg_.mixture.eval_passes;
        report.sample_count = samples.size();
        for (std::size_t m = 1; m <= n; ++m)
            report.accuracy.emplace_back(std::to_string(m) + "/" + std::to_string(n),
                                         mn_accuracy(samples, m, n));
        report.mean_mse = mse_acc / double(samples.size());
        report.config_hash = cfg_.hash();
        report.model_hash = model_hash(cfg_);
        report.corpus_hash = corpus_hash_;
        report.variant = pipe.extractor.variant();
        report.checkpoint_step = step;
        return report;
    }

    // Validation metrics on a deterministic val subset. `cls` may be null
    // (stage 1), in which case only the reconstruction MSE is computed.
    Json validate(const Extractor<Real>& ext, const ChannelClassifier<Real>* cls) {
        const auto& list = corpus_.splits().val;
        const std::size_t count =
            cfg_.train.val_subset == 0 ? list.size() : std::min(cfg_.train.val_subset, list.size());
        const std::size_t n = cfg_.mixture.n_sources;
        double mse_acc = 0.0, cce_acc = 0.0;
        std::vector<MnSample> samples;
        for (std::size_t idx = 0; idx < count; ++idx) {
            auto sample = make_mixture<Real>(corpus_, Split::Val, idx, n, eval_seed(0));
            auto est = ext.forward(sample.mixture);
            mse_acc += double(pit_mse(est, reference_tensors(sample)).loss.item());
            if (cls) {
                auto pm = siamese_apply(est, *cls);
                cce_acc += double(maxpool_cce(pm, sample.indicator()).item());
                MnSample mn;
                for (Real v : pm.pooled()) mn.pooled.push_back(double(v));
                mn.targets = sample.target_speakers;
                samples.push_back(std::move(mn));
            }
        }
        Json out;
        out["mse"] = mse_acc / double(count);
        if (cls) {
            out["cce"] = cce_acc / double(count);
            Json acc = Json::object();
            for (std::size_t m = 1; m <= n; ++m)
                acc[std::to_string(m) + "/" + std::to_string(n)] = mn_accuracy(samples, m, n);
            out["accuracy"] = acc;
        }
        return out;
    }

    // Loads a pipeline checkpoint into freshly built models, verifying the
    // model-relevant config hash and the corpus identity.
    Pipeline<Real> load_pipeline(const std::string& ckpt_dir, bool verify, bool need_classifier) {
        if (!std::filesystem::exists(std::filesystem::path(ckpt_dir) / "manifest.json"))
            throw MissingPrerequisite("missing checkpoint: " + ckpt_dir);
        LoadedCheckpoint<Real> ckpt = load_checkpoint<Real>(ckpt_dir);
        if (verify) {
            const std::string stored = ckpt.meta.extra.value("model_hash", "");
            if (stored != model_hash(cfg_))
                throw std::runtime_error("checkpoint/config mismatch: model hash " + stored + " vs " +
                                         model_hash(cfg_) + " (n_sources or model layout differs)");
            const std::string stored_corpus = ckpt.meta.extra.value("corpus_hash", "");
            if (stored_corpus != corpus_hash_)
                throw std::runtime_error("checkpoint/corpus mismatch: stored " + stored_corpus + " vs " +
                                         corpus_hash_);
        }
        const bool has_classifier = ckpt.meta.extra.value("has_classifier", false);
        Pipeline<Real> pipe = build_pipeline<Real>(cfg_, need_classifier || has_classifier);
        ParamList<Real> ext_params = pipe.extractor.params();
        ckpt.apply_all(ext_params);
        if (has_classifier && pipe.classifier) {
            ParamList<Real> cls_params = pipe.classifier->params();
            ckpt.apply_all(cls_params);
        } else if (need_classifier && !has_classifier) {
            // classifier initialized fresh (stage 2 entry)
        }
        return pipe;
    }

    std::uint64_t eval_seed(std::size_t pass) const {
        return mix_keys(cfg_.mixture.mix_seed, 0xEA1u, static_cast<std::uint64_t>(pass));
    }

    std::uint64_t epoch_seed(std::size_t epoch) const {
        return mix_keys(cfg_.mixture.mix_seed, 0x7741u, static_cast<std::uint64_t>(epoch));
    }

    void save(const std::string& dir, const Pipeline<Real>& pipe, const ChannelClassifier<Real>* cls,
              std::uint64_t step, const std::string& stage, std::size_t epoch) {
        ParamList<Real> named = pipe.extractor.params();
        if (cls) {
            ParamList<Real> c = cls->params();
            for (auto& item : c.items) named.items.push_back(std::move(item));
        }
        CheckpointMeta meta;
        meta.step = step;
        meta.config_hash = cfg_.hash();
        meta.variant = pipe.extractor.variant();
        meta.config = cfg_.to_json();
        meta.extra["stage"] = stage;
        meta.extra["epoch"] = epoch;
        meta.extra["model_hash"] = model_hash(cfg_);
        meta.extra["corpus_hash"] = corpus_hash_;
        meta.extra["has_classifier"] = cls != nullptr;
        save_checkpoint(dir, named, meta);
    }

private:
    // Restores parameters, optimizer moments and the step counter from a
    // "last" checkpoint so training resumes with a monotone step count.
    void restore(const std::string& dir, ParamList<Real>& params, Optimizer<Real>& opt) {
        if (!std::filesystem::exists(std::filesystem::path(dir) / "manifest.json"))
            throw MissingPrerequisite("resume checkpoint not found: " + dir);
        LoadedCheckpoint<Real> ckpt = load_checkpoint<Real>(dir);
        for (auto& [name, t] : params.items) ckpt.apply(name, t);
        if (opt.config().mode == OptimizerMode::Adam && ckpt.meta.extra.contains("optimizer")) {
            for (std::size_t i = 0; i < params.items.size(); ++i) {
                const std::string& base = params.items[i].first;
                if (ckpt.has("opt.m." + base)) ckpt.apply("opt.m." + base, opt.first_moments()[i]);
                if (ckpt.has("opt.v." + base)) ckpt.apply("opt.v." + base, opt.second_moments()[i]);
            }
            opt.set_step_count(ckpt.meta.extra["optimizer"].value("step", std::uint64_t(0)));
        }
    }

    OptimizerConfig<Real> optimizer_config(Real lr) const {
        OptimizerConfig<Real> oc;
        oc.mode = cfg_.train.optimizer == "sgd" ? OptimizerMode::Sgd : OptimizerMode::Adam;
        oc.lr = lr;
        return oc;
    }

    static std::vector<Tensor<Real>> reference_tensors(const MixtureSample<Real>& sample) {
        std::vector<Tensor<Real>> refs;
        refs.reserve(sample.references.size());
        for (const auto& r : sample.references)
            refs.push_back(Tensor<Real>::from({r.bins, r.frames}, r.values));
        return refs;
    }

    void check_finite(double loss, const char* stage) const {
        if (!std::isfinite(loss))
            throw NumericalError(std::string(stage) + ": non-finite loss, aborting");
    }

    void run_epoch_extractor(Pipeline<Real>& pipe, Optimizer<Real>& opt, std::size_t epoch,
                             std::size_t train_size, TrainLog& log) {
        const std::size_t B = cfg_.train.batch;
        std::size_t step_idx = 0;
        for (std::size_t start = 0; start < train_size; start += B, ++step_idx) {
            const std::size_t bsz = std::min(B, train_size - start);
            opt.zero_grad();
            double mse_sum = 0.0;
            for (std::size_t k = 0; k < bsz; ++k) {
                auto sample =
                    make_mixture<Real>(corpus_, Split::Train, start + k, cfg_.mixture.n_sources, epoch_seed(epoch));
                Tape<Real> tape;
                TapeScope<Real> scope(tape);
                auto est = pipe.extractor.forward(sample.mixture);
                auto pit = pit_mse(est, reference_tensors(sample));
                mse_sum += double(pit.loss.item());
                tape.backward(div_scalar(pit.loss, Real(bsz)));
            }
            check_finite(mse_sum, "pretrain_extractor");
            opt.step();
            const double mse = mse_sum / double(bsz);
            log.step("pretrain_extractor", epoch, step_idx, mse, Json(), mse);
        }
    }

    void run_epoch_classifier(Pipeline<Real>& pipe, Optimizer<Real>& opt, std::size_t epoch,
                              std::size_t train_size, TrainLog& log) {
        const std::size_t B = cfg_.train.batch;
        std::size_t step_idx = 0;
        for (std::size_t start = 0; start < train_size; start += B, ++step_idx) {
            const std::size_t bsz = std::min(B, train_size - start);
            opt.zero_grad();
            double cce_sum = 0.0;
            for (std::size_t k = 0; k < bsz; ++k) {
                auto sample =
                    make_mixture<Real>(corpus_, Split::Train, start + k, cfg_.mixture.n_sources, epoch_seed(epoch));
                // Frozen extractor: forward pass recorded on no tape.
                auto est = pipe.extractor.forward(sample.mixture);
                Tape<Real> tape;
                TapeScope<Real> scope(tape);
                auto pm = siamese_apply(est, *pipe.classifier);
                auto cce = maxpool_cce(pm, sample.indicator());
                cce_sum += double(cce.item());
                tape.backward(div_scalar(cce, Real(bsz)));
            }
            check_finite(cce_sum, "pretrain_classifier");
            opt.step();
            const double cce = cce_sum / double(bsz);
            log.step("pretrain_classifier", epoch, step_idx, Json(), cce, cce);
        }
    }

    void run_epoch_joint(Pipeline<Real>& pipe, Optimizer<Real>& opt, std::size_t epoch,
                         std::size_t train_size, Real alpha, TrainLog& log) {
        const std::size_t B = cfg_.train.batch;
        std::size_t step_idx = 0;
        for (std::size_t start = 0; start < train_size; start += B, ++step_idx) {
            const std::size_t bsz = std::min(B, train_size - start);
            opt.zero_grad();
            double mse_sum = 0.0, cce_sum = 0.0;
            for (std::size_t k = 0; k < bsz; ++k) {
                auto sample =
                    make_mixture<Real>(corpus_, Split::Train, start + k, cfg_.mixture.n_sources, epoch_seed(epoch));
                Tape<Real> tape;
                TapeScope<Real> scope(tape);
                auto est = pipe.extractor.forward(sample.mixture);
                auto pit = pit_mse(est, reference_tensors(sample));
                auto pm = siamese_apply(est, *pipe.classifier);
                auto cce = maxpool_cce(pm, sample.indicator());
                auto total = joint_loss(pit.loss, cce, alpha);
                mse_sum += double(pit.loss.item());
                cce_sum += double(cce.item());
                tape.backward(div_scalar(total, Real(bsz)));
            }
            check_finite(mse_sum + cce_sum, "joint");
            opt.step();
            const double mse = mse_sum / double(bsz), cce = cce_sum / double(bsz);
            log.step("joint", epoch, step_idx, mse, cce, double(alpha) * mse + cce);
        }
    }

    void save_with_optimizer(const std::string& dir, const Pipeline<Real>& pipe,
                             const ChannelClassifier<Real>* cls, Optimizer<Real>& opt,
                             const std::string& stage) {
        ParamList<Real> named = pipe.extractor.params();
        if (cls) {
            ParamList<Real> c = cls->params();
            for (auto& item : c.items) named.items.push_back(std::move(item));
        }
        if (opt.config().mode == OptimizerMode::Adam) {
            ParamList<Real> moments;
            for (std::size_t i = 0; i < named.items.size(); ++i) {
                moments.add("opt.m." + named.items[i].first, opt.first_moments()[i]);
                moments.add("opt.v." + named.items[i].first, opt.second_moments()[i]);
            }
            for (auto& item : moments.items) named.items.push_back(std::move(item));
        }
        CheckpointMeta meta;
        meta.step = opt.step_count();
        meta.config_hash = cfg_.hash();
        meta.variant = pipe.extractor.variant();
        meta.config = cfg_.to_json();
        meta.extra["stage"] = stage;
        meta.extra["model_hash"] = model_hash(cfg_);
        meta.extra["corpus_hash"] = corpus_hash_;
        meta.extra["has_classifier"] = cls != nullptr;
        meta.extra["optimizer"] = {{"mode", cfg_.train.optimizer}, {"step", opt.step_count()}};
        save_checkpoint(dir, named, meta);
    }

    RunConfig cfg_;
    Corpus corpus_;
    std::string corpus_hash_;
};

}  // namespace cocktail
