#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "resvit/checkpoint.hpp"
#include "resvit/data.hpp"
#include "resvit/losses.hpp"
#include "resvit/metrics.hpp"
#include "resvit/models.hpp"

namespace resvit {

namespace fs = std::filesystem;

// Returns true when `name` equals a group or lives under `group.`; groups are
// hierarchical prefixes like "encoder", "art.1", "head".
bool name_in_groups(const std::string& name, const std::vector<std::string>& groups);

struct Adam {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    i64 step_count = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments;  // m, v per parameter

    // One update over all non-frozen parameters with accumulated gradients,
    // then gradient reset. Frozen parameters are left bit-identical.
    void step(const NamedParams& params, const std::vector<std::string>& freeze_groups = {});

    static void zero_grads(const NamedParams& params);

    void save_into(Checkpoint& ckpt, const std::string& prefix) const;
    void load_from(const Checkpoint& ckpt, const std::string& prefix);
};

struct PretrainConfig {
    double lr = 1e-4;
    double beta1 = 0.5;  // pix2pix-lineage default for adversarial stability
    double beta2 = 0.999;
    i64 epochs = 100;
    i64 batch = 1;
    std::vector<Sequence> sequences = {Sequence::T1, Sequence::T2};
    AvailabilityMask mask{{1, 0}};  // T1 source -> T2 target
    LossWeights weights{};
    std::uint64_t seed = 0;
    i64 checkpoint_every = 1;  // epochs

    void validate() const;
};

struct FinetuneConfig {
    double lr = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    i64 epochs = 100;
    i64 batch = 16;
    std::vector<std::string> freeze_groups;
    std::uint64_t seed = 0;
    i64 num_classes = 4;
    i64 image_channel = 0;        // input channel carrying the slice
    std::string init = "fresh";   // "fresh" or a generator checkpoint path

    void validate() const;
};

struct RunLog {
    std::uint64_t seed = 0;
    std::string config_digest;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    nlohmann::json evals = nlohmann::json::array();

    std::string to_csv() const;
    nlohmann::json to_json() const;
    std::uint64_t loss_digest() const;
};

struct StepRecord {
    i64 step = 0;
    double pix = 0.0, rec = 0.0, adv_g = 0.0, adv_d = 0.0, total = 0.0;
};

// One image per sequence (config order) for a single (case, slice).
struct PairedSample {
    std::string case_id;
    i64 slice_index = -1;
    std::vector<Image> images;
};

// Groups real records by (case_id, slice_index); every group must cover all
// requested sequences.
std::vector<PairedSample> build_paired_samples(const DatasetManifest& manifest,
                                               const std::vector<Sequence>& sequences);

// (N, I, H, W) stack of the samples' per-sequence images.
Tensor make_sequence_stack(const std::vector<const PairedSample*>& batch);

// (N, C, H, W) with the slice in `image_channel`, remaining channels zero —
// the classifier consumes the same masked layout the pretext stage saw.
Tensor make_classifier_input(const std::vector<const Image*>& batch, i64 in_channels,
                             i64 image_channel);

// Alternating 1:1 GAN engine: one discriminator update (least-squares loss)
// then one generator update per batch.
class PretrainEngine {
public:
    PretrainEngine(Generator& gen, Discriminator& disc, PretrainConfig cfg);

    StepRecord step(const Tensor& real_stack);
    i64 global_step() const { return global_step_; }
    void set_global_step(i64 s) { global_step_ = s; }

    Adam& gen_opt() { return opt_g_; }
    Adam& disc_opt() { return opt_d_; }
    const PretrainConfig& config() const { return cfg_; }

private:
    Generator& gen_;
    Discriminator& disc_;
    PretrainConfig cfg_;
    Adam opt_g_, opt_d_;
    i64 global_step_ = 0;
};

class FinetuneEngine {
public:
    FinetuneEngine(Classifier& clf, FinetuneConfig cfg);

    double step(const Tensor& input, const std::vector<i64>& labels);
    void start_epoch(i64 epoch);  // reseeds the dropout stream deterministically
    std::vector<i64> predict(const Tensor& input) const;

    i64 global_step() const { return global_step_; }
    void set_global_step(i64 s) { global_step_ = s; }
    Adam& opt() { return opt_; }
    const FinetuneConfig& config() const { return cfg_; }

private:
    Classifier& clf_;
    FinetuneConfig cfg_;
    Adam opt_;
    Rng dropout_rng_;
    i64 global_step_ = 0;
};

struct PretrainRunResult {
    Checkpoint checkpoint;  // final epoch, model + optimizer state
    RunLog log;
    SynthesisReport eval;   // held-out pairs, [0,1] dynamic range
};

PretrainRunResult run_pretrain(const std::vector<PairedSample>& train_pairs,
                               const std::vector<PairedSample>& test_pairs,
                               const GeneratorConfig& gen_cfg,
                               const DiscriminatorConfig& disc_cfg, const PretrainConfig& cfg,
                               const nlohmann::json& config_json,
                               const Checkpoint* resume = nullptr,
                               const fs::path* checkpoint_dir = nullptr);

struct LabeledSlice {
    Image image;
    i64 label = 0;
};

struct FinetuneRunResult {
    Checkpoint best;     // highest test accuracy
    Checkpoint final;    // last epoch, model + optimizer state
    RunLog log;
    ClassificationReport best_report;
    i64 best_epoch = -1;
};

FinetuneRunResult run_finetune(const std::vector<LabeledSlice>& train,
                               const std::vector<LabeledSlice>& test,
                               const ClassifierConfig& clf_cfg, const FinetuneConfig& cfg,
                               const nlohmann::json& config_json,
                               const Checkpoint* init_from = nullptr,
                               const Checkpoint* resume = nullptr);

// Evaluates generator synthesis quality on held-out pairs; images are mapped
// from [-1,1] to [0,1] before metric computation, one entry per (sample,
// target sequence).
SynthesisReport evaluate_synthesis(const Generator& gen, const std::vector<PairedSample>& pairs,
                                   const AvailabilityMask& mask, double max_val = 1.0,
                                   i64 batch = 4);

ClassificationReport evaluate_classifier(const Classifier& clf,
                                         const std::vector<LabeledSlice>& samples,
                                         const FinetuneConfig& cfg);

// Adapter for dataset augmentation: runs one source slice through the
// generator and extracts the requested target sequence channel.
SliceSynthesizer make_slice_synthesizer(const Generator& gen,
                                        const std::vector<Sequence>& sequences,
                                        const AvailabilityMask& mask, Sequence target);

}  // namespace resvit
