#include "resvit/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "resvit/io.hpp"
#include "resvit/rng.hpp"

namespace resvit {

bool name_in_groups(const std::string& name, const std::vector<std::string>& groups) {
    for (const auto& g : groups) {
        if (name == g) return true;
        if (name.size() > g.size() && name.rfind(g + ".", 0) == 0) return true;
    }
    return false;
}

void Adam::step(const NamedParams& params, const std::vector<std::string>& freeze_groups) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (const auto& [name, var] : params) {
        if (name_in_groups(name, freeze_groups)) continue;
        const Tensor& g = var.grad();
        if (g.v.empty()) continue;
        auto [it, inserted] = moments.try_emplace(name, Tensor::zeros(var.shape()),
                                                  Tensor::zeros(var.shape()));
        Tensor& m = it->second.first;
        Tensor& v = it->second.second;
        Tensor& p = var.value_ref();
        for (i64 i = 0; i < p.numel(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
    zero_grads(params);
}

void Adam::zero_grads(const NamedParams& params) {
    for (const auto& [name, var] : params) {
        (void)name;
        var.zero_grad();
    }
}

void Adam::save_into(Checkpoint& ckpt, const std::string& prefix) const {
    for (const auto& [name, mv] : moments) {
        ckpt.tensors.emplace(prefix + "." + name + ".m", mv.first);
        ckpt.tensors.emplace(prefix + "." + name + ".v", mv.second);
    }
    ckpt.tensors.emplace(prefix + ".step", Tensor::scalar(static_cast<double>(step_count)));
}

void Adam::load_from(const Checkpoint& ckpt, const std::string& prefix) {
    auto it = ckpt.tensors.find(prefix + ".step");
    if (it == ckpt.tensors.end())
        throw DataError("checkpoint: missing optimizer state '" + prefix + ".step'");
    step_count = static_cast<i64>(it->second.item());
    moments.clear();
    const std::string lead = prefix + ".";
    for (const auto& [name, tensor] : ckpt.tensors) {
        if (name.rfind(lead, 0) != 0) continue;
        if (name.size() < lead.size() + 2) continue;
        const std::string tail = name.substr(lead.size());
        if (tail == "step") continue;
        if (tail.size() > 2 && tail.compare(tail.size() - 2, 2, ".m") == 0) {
            const std::string pname = tail.substr(0, tail.size() - 2);
            auto vit = ckpt.tensors.find(lead + pname + ".v");
            if (vit == ckpt.tensors.end())
                throw DataError("checkpoint: optimizer state for '" + pname +
                                "' is missing its second moment");
            moments.emplace(pname, std::make_pair(tensor, vit->second));
        }
    }
}

void PretrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("pretrain: learning rate must be positive");
    if (epochs < 1) throw ConfigError("pretrain: epochs must be >= 1");
    if (batch < 1) throw ConfigError("pretrain: batch must be >= 1");
    if (sequences.size() != mask.a.size())
        throw ConfigError("pretrain: sequences and availability mask length differ");
    for (std::size_t i = 0; i < sequences.size(); ++i)
        for (std::size_t j = i + 1; j < sequences.size(); ++j)
            if (sequences[i] == sequences[j])
                throw ConfigError("pretrain: duplicate sequence in task");
    mask.validate();  // guarantees source != target
    weights.validate();
    if (checkpoint_every < 1) throw ConfigError("pretrain: checkpoint_every must be >= 1");
}

void FinetuneConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("finetune: learning rate must be positive");
    if (epochs < 1) throw ConfigError("finetune: epochs must be >= 1");
    if (batch < 1) throw ConfigError("finetune: batch must be >= 1");
    if (num_classes < 2) throw ConfigError("finetune: needs at least 2 classes");
    if (image_channel < 0) throw ConfigError("finetune: image_channel must be >= 0");
}

std::string RunLog::to_csv() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
    os << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            os << (i ? "," : "");
            if (i == 0) {
                os << static_cast<long long>(row[i]);
            } else {
                os.precision(17);
                os << row[i];
            }
        }
        os << "\n";
    }
    return os.str();
}

nlohmann::json RunLog::to_json() const {
    return {{"seed", seed},
            {"config_digest", config_digest},
            {"columns", columns},
            {"rows", rows},
            {"evals", evals}};
}

std::uint64_t RunLog::loss_digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& row : rows) h = fnv1a(row.data(), row.size() * sizeof(double), h);
    return h;
}

std::vector<PairedSample> build_paired_samples(const DatasetManifest& manifest,
                                               const std::vector<Sequence>& sequences) {
    if (sequences.empty()) throw ConfigError("paired samples: no sequences requested");
    std::map<std::pair<std::string, i64>, std::map<Sequence, const SliceRecord*>> groups;
    for (const auto& r : manifest.records) {
        if (r.provenance != Provenance::real) continue;
        if (r.pixels.px.empty())
            throw DataError("paired samples: record '" + r.case_id +
                            "' has no pixel payload loaded");
        groups[{r.case_id, r.slice_index.value_or(-1)}][r.sequence] = &r;
    }
    std::vector<PairedSample> out;
    std::vector<std::string> incomplete;
    for (const auto& [key, seq_map] : groups) {
        PairedSample s;
        s.case_id = key.first;
        s.slice_index = key.second;
        bool complete = true;
        for (Sequence seq : sequences) {
            auto it = seq_map.find(seq);
            if (it == seq_map.end()) {
                complete = false;
                break;
            }
            s.images.push_back(it->second->pixels);
        }
        if (complete) {
            out.push_back(std::move(s));
        } else {
            incomplete.push_back(key.first + "#" + std::to_string(key.second));
        }
    }
    if (!incomplete.empty()) {
        std::string list;
        for (std::size_t i = 0; i < std::min<std::size_t>(incomplete.size(), 8); ++i)
            list += (i ? ", " : "") + incomplete[i];
        throw DataError("paired samples: " + std::to_string(incomplete.size()) +
                        " slice group(s) missing a sequence: " + list);
    }
    if (out.empty()) throw DataError("paired samples: no complete pairs in manifest");
    return out;
}

Tensor make_sequence_stack(const std::vector<const PairedSample*>& batch) {
    if (batch.empty()) throw DataError("sequence stack: empty batch");
    const i64 n = static_cast<i64>(batch.size());
    const i64 seqs = static_cast<i64>(batch[0]->images.size());
    const i64 h = batch[0]->images[0].h, w = batch[0]->images[0].w;
    Tensor stack({n, seqs, h, w});
    for (i64 b = 0; b < n; ++b) {
        if (static_cast<i64>(batch[static_cast<std::size_t>(b)]->images.size()) != seqs)
            throw DataError("sequence stack: inconsistent sequence counts");
        for (i64 s = 0; s < seqs; ++s) {
            const Image& img = batch[static_cast<std::size_t>(b)]->images[static_cast<std::size_t>(s)];
            if (img.h != h || img.w != w)
                throw DataError("sequence stack: inconsistent image sizes in batch");
            std::copy(img.px.begin(), img.px.end(), stack.data() + ((b * seqs + s) * h * w));
        }
    }
    return stack;
}

Tensor make_classifier_input(const std::vector<const Image*>& batch, i64 in_channels,
                             i64 image_channel) {
    if (batch.empty()) throw DataError("classifier input: empty batch");
    if (image_channel < 0 || image_channel >= in_channels)
        throw ConfigError("classifier input: image_channel outside channel range");
    const i64 n = static_cast<i64>(batch.size());
    const i64 h = batch[0]->h, w = batch[0]->w;
    Tensor x({n, in_channels, h, w});
    for (i64 b = 0; b < n; ++b) {
        const Image& img = *batch[static_cast<std::size_t>(b)];
        if (img.h != h || img.w != w)
            throw DataError("classifier input: inconsistent image sizes in batch");
        std::copy(img.px.begin(), img.px.end(),
                  x.data() + ((b * in_channels + image_channel) * h * w));
    }
    return x;
}

PretrainEngine::PretrainEngine(Generator& gen, Discriminator& disc, PretrainConfig cfg)
    : gen_(gen), disc_(disc), cfg_(std::move(cfg)) {
    cfg_.validate();
    opt_g_.lr = opt_d_.lr = cfg_.lr;
    opt_g_.beta1 = opt_d_.beta1 = cfg_.beta1;
    opt_g_.beta2 = opt_d_.beta2 = cfg_.beta2;
    if (gen_.config().backbone.in_channels != static_cast<i64>(cfg_.sequences.size()))
        throw ConfigError("pretrain: generator channels do not match the sequence count");
    if (disc_.config().in_channels != 2 * static_cast<i64>(cfg_.sequences.size()))
        throw ConfigError("pretrain: discriminator expects source+candidate channel stack");
}

StepRecord PretrainEngine::step(const Tensor& real_stack) {
    const Var real = Var::constant(real_stack);
    const Var x_g = masked_input(real, cfg_.mask);

    // Generator graph is built once; the discriminator update sees the fake
    // detached so no gradient reaches the generator yet.
    Var fake = gen_.forward(x_g);
    Var fake_detached = fake.detach();

    // The previous generator phase backpropagated through D's parameters;
    // each phase must start from clean gradients or its update is polluted.
    Adam::zero_grads(disc_.named_parameters());
    Var d_real = disc_.forward(concat_channels(x_g, real));
    Var d_fake = disc_.forward(concat_channels(x_g, fake_detached));
    Var loss_d = l_adv_d(d_real, d_fake);
    backward(loss_d);
    opt_d_.step(disc_.named_parameters());
    Adam::zero_grads(gen_.named_parameters());

    Var pix = l_pix(fake, real, cfg_.mask);
    Var rec = l_rec(fake, real, cfg_.mask);
    Var adv_g;
    if (cfg_.weights.lambda_adv > 0.0) {
        // Fresh discriminator pass (D just changed) with gradient into G.
        adv_g = l_adv_g(disc_.forward(concat_channels(x_g, fake)));
    } else {
        adv_g = l_adv_g(d_fake);  // recorded for the log; no G gradient needed
    }
    Var total = total_generator_loss(pix, rec, adv_g, cfg_.weights);

    StepRecord record{++global_step_, pix.item(), rec.item(), adv_g.item(), loss_d.item(),
                      total.item()};
    if (!std::isfinite(record.total) || !std::isfinite(record.adv_d)) {
        std::vector<std::pair<std::string, Tensor>> dump;
        for (const auto& [name, var] : gen_.named_parameters()) dump.emplace_back(name, var.val());
        for (const auto& [name, var] : disc_.named_parameters()) dump.emplace_back(name, var.val());
        const fs::path dump_dir =
            fs::temp_directory_path() / ("resvit_dump_step_" + std::to_string(record.step));
        dump_named_tensors(dump_dir, dump);
        std::ostringstream os;
        os << "pretrain step " << record.step << ": non-finite loss (pix=" << record.pix
           << " rec=" << record.rec << " adv_g=" << record.adv_g << " adv_d=" << record.adv_d
           << "); parameters dumped to " << dump_dir.string();
        throw NumericError(os.str());
    }
    backward(total);
    opt_g_.step(gen_.named_parameters());
    return record;
}

FinetuneEngine::FinetuneEngine(Classifier& clf, FinetuneConfig cfg)
    : clf_(clf), cfg_(std::move(cfg)), dropout_rng_(mix_seed(cfg_.seed, 0xD0)) {
    cfg_.validate();
    opt_.lr = cfg_.lr;
    opt_.beta1 = cfg_.beta1;
    opt_.beta2 = cfg_.beta2;
    if (clf_.config().num_classes != cfg_.num_classes)
        throw ConfigError("finetune: classifier head does not match configured class count");
}

void FinetuneEngine::start_epoch(i64 epoch) {
    dropout_rng_ = Rng(mix_seed(mix_seed(cfg_.seed, 0xD0), static_cast<std::uint64_t>(epoch)));
}

double FinetuneEngine::step(const Tensor& input, const std::vector<i64>& labels) {
    Var probs = clf_.forward(Var::constant(input), /*training=*/true, dropout_rng_);
    Var loss = cross_entropy(probs, labels);
    const double value = loss.item();
    if (!std::isfinite(value)) {
        ++global_step_;
        std::vector<std::pair<std::string, Tensor>> dump;
        for (const auto& [name, var] : clf_.named_parameters()) dump.emplace_back(name, var.val());
        const fs::path dump_dir =
            fs::temp_directory_path() / ("resvit_dump_step_" + std::to_string(global_step_));
        dump_named_tensors(dump_dir, dump);
        throw NumericError("finetune step " + std::to_string(global_step_) +
                           ": non-finite cross-entropy; parameters dumped to " +
                           dump_dir.string());
    }
    backward(loss);
    opt_.step(clf_.named_parameters(), cfg_.freeze_groups);
    ++global_step_;
    return value;
}

std::vector<i64> FinetuneEngine::predict(const Tensor& input) const {
    Rng unused(0);
    Var probs = clf_.forward(Var::constant(input), /*training=*/false, unused);
    const auto& s = probs.shape();
    std::vector<i64> out(static_cast<std::size_t>(s[0]));
    for (i64 n = 0; n < s[0]; ++n) {
        i64 best = 0;
        for (i64 k = 1; k < s[1]; ++k)
            if (probs.val()[n * s[1] + k] > probs.val()[n * s[1] + best]) best = k;
        out[static_cast<std::size_t>(n)] = best;
    }
    return out;
}

namespace {

nlohmann::json make_manifest(const std::string& kind, const nlohmann::json& config_json,
                             std::uint64_t seed, i64 step, i64 epochs_done,
                             std::uint64_t loss_digest) {
    return {{"kind", kind},          {"config", config_json},
            {"seed", seed},          {"step", step},
            {"epochs_done", epochs_done}, {"loss_digest", hex64(loss_digest)},
            {"format", "rvckpt-1"}};
}

std::vector<std::vector<i64>> epoch_batches(i64 count, i64 batch, std::uint64_t seed, i64 epoch) {
    std::vector<i64> order(static_cast<std::size_t>(count));
    for (i64 i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(mix_seed(mix_seed(seed, 0xE0), static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    std::vector<std::vector<i64>> batches;
    for (i64 at = 0; at < count; at += batch) {
        const i64 hi = std::min(count, at + batch);
        batches.emplace_back(order.begin() + at, order.begin() + hi);
    }
    return batches;
}

}  // namespace

SynthesisReport evaluate_synthesis(const Generator& gen, const std::vector<PairedSample>& pairs,
                                   const AvailabilityMask& mask, double max_val, i64 batch) {
    if (pairs.empty()) throw DataError("synthesis eval: no pairs");
    mask.validate();
    SynthesisReport report;
    const i64 n = static_cast<i64>(pairs.size());
    for (i64 at = 0; at < n; at += batch) {
        std::vector<const PairedSample*> chunk;
        for (i64 i = at; i < std::min(n, at + batch); ++i)
            chunk.push_back(&pairs[static_cast<std::size_t>(i)]);
        const Tensor stack = make_sequence_stack(chunk);
        Var out = gen.forward(masked_input(Var::constant(stack), mask));
        const auto& s = out.shape();
        const i64 hw = s[2] * s[3];
        for (i64 b = 0; b < s[0]; ++b) {
            for (i64 seq = 0; seq < static_cast<i64>(mask.a.size()); ++seq) {
                if (mask.a[static_cast<std::size_t>(seq)] != 0) continue;  // targets only
                Image ref(s[2], s[3]), cand(s[2], s[3]);
                const double* rp = stack.data() + (b * s[1] + seq) * hw;
                const double* cp = out.val().data() + (b * s[1] + seq) * hw;
                for (i64 i = 0; i < hw; ++i) {
                    ref.px[static_cast<std::size_t>(i)] = (rp[i] + 1.0) / 2.0;
                    cand.px[static_cast<std::size_t>(i)] = (cp[i] + 1.0) / 2.0;
                }
                report.add(mse(ref, cand), psnr(ref, cand, max_val), ssim(ref, cand, max_val));
            }
        }
    }
    report.finalize();
    return report;
}

ClassificationReport evaluate_classifier(const Classifier& clf,
                                         const std::vector<LabeledSlice>& samples,
                                         const FinetuneConfig& cfg) {
    if (samples.empty()) throw DataError("classifier eval: no samples");
    const i64 in_channels = clf.config().backbone.in_channels;
    std::vector<i64> y_true, y_pred;
    Rng unused(0);
    const i64 n = static_cast<i64>(samples.size());
    for (i64 at = 0; at < n; at += cfg.batch) {
        std::vector<const Image*> chunk;
        for (i64 i = at; i < std::min(n, at + cfg.batch); ++i) {
            chunk.push_back(&samples[static_cast<std::size_t>(i)].image);
            y_true.push_back(samples[static_cast<std::size_t>(i)].label);
        }
        const Tensor x = make_classifier_input(chunk, in_channels, cfg.image_channel);
        Var probs = clf.forward(Var::constant(x), /*training=*/false, unused);
        const auto& s = probs.shape();
        for (i64 b = 0; b < s[0]; ++b) {
            i64 best = 0;
            for (i64 k = 1; k < s[1]; ++k)
                if (probs.val()[b * s[1] + k] > probs.val()[b * s[1] + best]) best = k;
            y_pred.push_back(best);
        }
    }
    return classification_report(y_true, y_pred, cfg.num_classes);
}

PretrainRunResult run_pretrain(const std::vector<PairedSample>& train_pairs,
                               const std::vector<PairedSample>& test_pairs,
                               const GeneratorConfig& gen_cfg,
                               const DiscriminatorConfig& disc_cfg, const PretrainConfig& cfg,
                               const nlohmann::json& config_json, const Checkpoint* resume,
                               const fs::path* checkpoint_dir) {
    cfg.validate();
    if (train_pairs.empty()) throw DataError("pretrain: empty training manifest");

    Rng init_g(mix_seed(cfg.seed, 0x6701));
    Rng init_d(mix_seed(cfg.seed, 0x6702));
    Generator gen(gen_cfg, init_g);
    Discriminator disc(disc_cfg, init_d);
    PretrainEngine engine(gen, disc, cfg);

    const std::string config_text = config_json.dump();
    const std::string digest = hex64(fnv1a(config_text.data(), config_text.size()));
    RunLog log;
    log.seed = cfg.seed;
    log.config_digest = digest;
    log.columns = {"step", "l_pix", "l_rec", "l_adv_G", "l_adv_D", "total"};

    i64 start_epoch = 0;
    if (resume) {
        NamedParams all = gen.named_parameters();
        for (auto& p : disc.named_parameters()) all.push_back(p);
        restore_params(*resume, all);
        engine.gen_opt().load_from(*resume, "opt.g");
        engine.disc_opt().load_from(*resume, "opt.d");
        start_epoch = resume->manifest.value("epochs_done", i64{0});
        engine.set_global_step(resume->manifest.value("step", i64{0}));
    }

    auto snapshot_all = [&](i64 epochs_done) {
        NamedParams all = gen.named_parameters();
        for (auto& p : disc.named_parameters()) all.push_back(p);
        Checkpoint ckpt = snapshot_params(
            all, make_manifest("generator", config_json, cfg.seed, engine.global_step(),
                               epochs_done, log.loss_digest()));
        engine.gen_opt().save_into(ckpt, "opt.g");
        engine.disc_opt().save_into(ckpt, "opt.d");
        std::vector<std::string> seq_names;
        for (Sequence s : cfg.sequences) seq_names.push_back(to_string(s));
        ckpt.manifest["sequences"] = seq_names;
        ckpt.manifest["source_mask"] = cfg.mask.a;
        return ckpt;
    };

    const i64 count = static_cast<i64>(train_pairs.size());
    for (i64 epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        for (const auto& batch_idx : epoch_batches(count, cfg.batch, cfg.seed, epoch)) {
            std::vector<const PairedSample*> batch;
            for (i64 i : batch_idx) batch.push_back(&train_pairs[static_cast<std::size_t>(i)]);
            const StepRecord r = engine.step(make_sequence_stack(batch));
            log.rows.push_back({static_cast<double>(r.step), r.pix, r.rec, r.adv_g, r.adv_d,
                                r.total});
        }
        if (checkpoint_dir && ((epoch + 1) % cfg.checkpoint_every == 0)) {
            save_checkpoint(*checkpoint_dir /
                                ("ckpt_epoch_" + std::to_string(epoch + 1) + ".rvckpt"),
                            snapshot_all(epoch + 1));
        }
    }

    PretrainRunResult result{snapshot_all(cfg.epochs), std::move(log), {}};
    if (!test_pairs.empty()) {
        result.eval = evaluate_synthesis(gen, test_pairs, cfg.mask);
        result.log.evals.push_back({{"epoch", cfg.epochs},
                                    {"split", "test"},
                                    {"report", result.eval.to_json()}});
        result.checkpoint.manifest["eval"] = result.eval.to_json();
    }
    return result;
}

FinetuneRunResult run_finetune(const std::vector<LabeledSlice>& train,
                               const std::vector<LabeledSlice>& test,
                               const ClassifierConfig& clf_cfg, const FinetuneConfig& cfg,
                               const nlohmann::json& config_json, const Checkpoint* init_from,
                               const Checkpoint* resume) {
    cfg.validate();
    if (train.empty()) throw DataError("finetune: empty training set");
    for (const auto& s : train)
        if (s.label < 0 || s.label >= cfg.num_classes)
            throw DataError("finetune: label " + std::to_string(s.label) +
                            " outside class set of size " + std::to_string(cfg.num_classes));

    Rng init_rng(mix_seed(cfg.seed, 0x6703));
    Classifier clf(clf_cfg, init_rng);
    if (init_from) transfer_weights(*init_from, clf);

    FinetuneEngine engine(clf, cfg);
    const std::string config_text = config_json.dump();
    const std::string digest = hex64(fnv1a(config_text.data(), config_text.size()));
    RunLog log;
    log.seed = cfg.seed;
    log.config_digest = digest;
    log.columns = {"step", "ce"};

    i64 start_epoch = 0;
    if (resume) {
        restore_params(*resume, clf.named_parameters());
        engine.opt().load_from(*resume, "opt.c");
        start_epoch = resume->manifest.value("epochs_done", i64{0});
        engine.set_global_step(resume->manifest.value("step", i64{0}));
    }

    auto snapshot_model = [&](i64 epochs_done, bool with_opt) {
        Checkpoint ckpt = snapshot_params(
            clf.named_parameters(),
            make_manifest("classifier", config_json, cfg.seed, engine.global_step(), epochs_done,
                          log.loss_digest()));
        if (with_opt) engine.opt().save_into(ckpt, "opt.c");
        ckpt.manifest["num_classes"] = cfg.num_classes;
        ckpt.manifest["image_channel"] = cfg.image_channel;
        return ckpt;
    };

    FinetuneRunResult result;
    const i64 count = static_cast<i64>(train.size());
    double best_acc = -1.0;
    for (i64 epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        engine.start_epoch(epoch);
        for (const auto& batch_idx : epoch_batches(count, cfg.batch, cfg.seed, epoch)) {
            std::vector<const Image*> images;
            std::vector<i64> labels;
            for (i64 i : batch_idx) {
                images.push_back(&train[static_cast<std::size_t>(i)].image);
                labels.push_back(train[static_cast<std::size_t>(i)].label);
            }
            const Tensor x = make_classifier_input(images, clf_cfg.backbone.in_channels,
                                                   cfg.image_channel);
            const double ce = engine.step(x, labels);
            log.rows.push_back({static_cast<double>(engine.global_step()), ce});
        }
        if (!test.empty()) {
            const ClassificationReport report = evaluate_classifier(clf, test, cfg);
            log.evals.push_back({{"epoch", epoch + 1},
                                 {"split", "test"},
                                 {"accuracy", report.accuracy},
                                 {"precision", report.precision},
                                 {"recall", report.recall},
                                 {"f1", report.f1}});
            if (report.accuracy > best_acc) {
                best_acc = report.accuracy;
                result.best = snapshot_model(epoch + 1, /*with_opt=*/false);
                result.best_report = report;
                result.best_epoch = epoch + 1;
            }
        }
    }
    result.log = std::move(log);
    result.final = snapshot_model(cfg.epochs, /*with_opt=*/true);
    result.final.manifest["loss_digest"] = hex64(result.log.loss_digest());
    if (test.empty()) {
        result.best = result.final;
        result.best_epoch = cfg.epochs;
    }
    return result;
}

SliceSynthesizer make_slice_synthesizer(const Generator& gen,
                                        const std::vector<Sequence>& sequences,
                                        const AvailabilityMask& mask, Sequence target) {
    mask.validate();
    if (sequences.size() != mask.a.size())
        throw ConfigError("synthesizer: sequences and mask length differ");
    i64 target_idx = -1;
    for (std::size_t i = 0; i < sequences.size(); ++i)
        if (sequences[i] == target) target_idx = static_cast<i64>(i);
    if (target_idx < 0 || mask.a[static_cast<std::size_t>(target_idx)] != 0)
        throw ConfigError("synthesizer: requested target is not a target sequence of the task");

    return [&gen, sequences, mask, target_idx](const SliceRecord& source) {
        if (source.pixels.px.empty())
            throw DataError("synthesizer: source record '" + source.case_id +
                            "' has no pixels loaded");
        i64 src_idx = -1;
        for (std::size_t i = 0; i < sequences.size(); ++i)
            if (sequences[i] == source.sequence && mask.a[i] == 1) src_idx = static_cast<i64>(i);
        if (src_idx < 0)
            throw DataError("synthesizer: record sequence " + to_string(source.sequence) +
                            " is not a source of the pretrained task");
        const i64 seqs = static_cast<i64>(sequences.size());
        const Image& img = source.pixels;
        Tensor stack({1, seqs, img.h, img.w});
        std::copy(img.px.begin(), img.px.end(), stack.data() + src_idx * img.h * img.w);
        Var out = gen.forward(Var::constant(stack));
        Image synth(img.h, img.w);
        const double* p = out.val().data() + target_idx * img.h * img.w;
        std::copy(p, p + img.h * img.w, synth.px.begin());
        return synth;
    };
}

}  // namespace resvit
