#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "resvit/data.hpp"
#include "resvit/models.hpp"
#include "resvit/training.hpp"

namespace resvit {

// Declarative experiment configuration. JSON carries every hyperparameter;
// command-line flags carry only paths and seeds. Unknown keys are rejected,
// all at once, so a typo cannot silently fall back to a default.
class ExperimentConfig {
public:
    static ExperimentConfig from_json(const nlohmann::json& user);
    static ExperimentConfig load(const std::filesystem::path& path);
    static nlohmann::json defaults();

    const nlohmann::json& json() const { return merged_; }
    std::string digest() const;  // hash of the normalized document

    // data section
    std::string data_root() const;  // falls back to $RESVIT_DATA_ROOT, then "."
    std::string train_manifest() const;
    std::string test_manifest() const;
    std::vector<Sequence> sequences() const;
    AvailabilityMask source_mask() const;
    std::vector<ClassLabel> classes() const;
    Sequence classify_sequence() const;
    double train_fraction() const;
    i64 tumor_k() const;
    i64 healthy_k() const;
    std::uint64_t data_seed() const;

    // model section
    GeneratorConfig generator() const;
    DiscriminatorConfig discriminator() const;
    ClassifierConfig classifier() const;

    // stage sections
    PretrainConfig pretrain() const;
    FinetuneConfig finetune() const;

    double metrics_max_val() const;
    std::string out_dir() const;
    bool png_export() const;

private:
    nlohmann::json merged_;
};

}  // namespace resvit
