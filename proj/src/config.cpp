#include "resvit/config.hpp"

#include <algorithm>
#include <cstdlib>

#include "resvit/io.hpp"
#include "resvit/rng.hpp"

namespace resvit {

namespace {

const nlohmann::json& schema_defaults() {
    static const nlohmann::json d = {
        {"data",
         {{"root", ""},
          {"train_manifest", "train.json"},
          {"test_manifest", "test.json"},
          {"sequences", {"T1", "T2"}},
          {"sources", {"T1"}},
          {"classes", {"no_tumor", "glioma", "meningioma", "pituitary"}},
          {"classify_sequence", ""},
          {"train_fraction", 0.8},
          {"tumor_k", 5},
          {"healthy_k", 5},
          {"seed", 0}}},
        {"model",
         {{"image_size", 256},
          {"base_width", 64},
          {"vit",
           {{"layers", 12},
            {"heads", 12},
            {"nd", 768},
            {"hidden", 3072},
            {"patch", 16},
            {"downsample", 4},
            {"nc", 0}}},
          {"disc_base_width", 64},
          {"head_hidden", 256},
          {"dropout", 0.5}}},
        {"pretrain",
         {{"lr", 1e-4},
          {"beta1", 0.5},
          {"beta2", 0.999},
          {"epochs", 100},
          {"batch", 1},
          {"lambda_pix", 100.0},
          {"lambda_rec", 100.0},
          {"lambda_adv", 1.0},
          {"seed", 0},
          {"checkpoint_every", 1}}},
        {"finetune",
         {{"lr", 2e-5},
          {"beta1", 0.9},
          {"beta2", 0.999},
          {"epochs", 100},
          {"batch", 16},
          {"freeze", nlohmann::json::array()},
          {"seed", 0},
          {"init", "fresh"}}},
        {"metrics", {{"max_val", 1.0}}},
        {"io", {{"out_dir", "."}, {"png_export", false}}},
    };
    return d;
}

void collect_unknown_keys(const nlohmann::json& user, const nlohmann::json& schema,
                          const std::string& prefix, std::vector<std::string>& unknown) {
    if (!user.is_object()) return;
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!schema.contains(it.key())) {
            unknown.push_back(path);
            continue;
        }
        if (schema.at(it.key()).is_object())
            collect_unknown_keys(it.value(), schema.at(it.key()), path, unknown);
    }
}

void deep_merge(nlohmann::json& base, const nlohmann::json& user) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (base.contains(it.key()) && base.at(it.key()).is_object() && it.value().is_object()) {
            deep_merge(base.at(it.key()), it.value());
        } else {
            base[it.key()] = it.value();
        }
    }
}

}  // namespace

nlohmann::json ExperimentConfig::defaults() { return schema_defaults(); }

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& user) {
    if (!user.is_object()) throw ConfigError("config: document root must be a JSON object");
    std::vector<std::string> unknown;
    collect_unknown_keys(user, schema_defaults(), "", unknown);
    if (!unknown.empty()) {
        std::string list;
        for (std::size_t i = 0; i < unknown.size(); ++i) list += (i ? ", " : "") + unknown[i];
        throw ConfigError("config: unknown key(s): " + list);
    }
    ExperimentConfig cfg;
    cfg.merged_ = schema_defaults();
    deep_merge(cfg.merged_, user);

    // Fail fast on semantic problems; accessors repeat these checks cheaply.
    cfg.sequences();
    cfg.source_mask();
    cfg.classes();
    cfg.classify_sequence();
    cfg.train_fraction();
    cfg.generator().validate();
    cfg.discriminator().validate();
    cfg.classifier().validate();
    cfg.pretrain().validate();
    cfg.finetune().validate();
    if (cfg.metrics_max_val() <= 0.0) throw ConfigError("config: metrics.max_val must be > 0");
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = load_json_file(path);
    } catch (const DataError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return from_json(j);
}

std::string ExperimentConfig::digest() const {
    const std::string text = merged_.dump();
    return hex64(fnv1a(text.data(), text.size()));
}

std::string ExperimentConfig::data_root() const {
    std::string root = merged_.at("data").at("root").get<std::string>();
    if (root.empty()) {
        if (const char* env = std::getenv("RESVIT_DATA_ROOT")) root = env;
    }
    return root.empty() ? "." : root;
}

std::string ExperimentConfig::train_manifest() const {
    return merged_.at("data").at("train_manifest").get<std::string>();
}

std::string ExperimentConfig::test_manifest() const {
    return merged_.at("data").at("test_manifest").get<std::string>();
}

std::vector<Sequence> ExperimentConfig::sequences() const {
    std::vector<Sequence> out;
    for (const auto& s : merged_.at("data").at("sequences"))
        out.push_back(sequence_from_string(s.get<std::string>()));
    if (out.empty()) throw ConfigError("config: data.sequences must not be empty");
    for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = i + 1; j < out.size(); ++j)
            if (out[i] == out[j]) throw ConfigError("config: duplicate entry in data.sequences");
    return out;
}

AvailabilityMask ExperimentConfig::source_mask() const {
    const std::vector<Sequence> seqs = sequences();
    std::vector<Sequence> sources;
    for (const auto& s : merged_.at("data").at("sources"))
        sources.push_back(sequence_from_string(s.get<std::string>()));
    AvailabilityMask mask;
    for (Sequence s : seqs)
        mask.a.push_back(std::find(sources.begin(), sources.end(), s) != sources.end() ? 1 : 0);
    for (Sequence s : sources)
        if (std::find(seqs.begin(), seqs.end(), s) == seqs.end())
            throw ConfigError("config: data.sources contains a sequence not in data.sequences");
    mask.validate();
    return mask;
}

std::vector<ClassLabel> ExperimentConfig::classes() const {
    std::vector<ClassLabel> out;
    for (const auto& c : merged_.at("data").at("classes"))
        out.push_back(class_from_string(c.get<std::string>()));
    if (out.size() < 2) throw ConfigError("config: data.classes needs at least 2 entries");
    for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = i + 1; j < out.size(); ++j)
            if (out[i] == out[j]) throw ConfigError("config: duplicate entry in data.classes");
    return out;
}

Sequence ExperimentConfig::classify_sequence() const {
    const std::string name = merged_.at("data").at("classify_sequence").get<std::string>();
    const std::vector<Sequence> seqs = sequences();
    if (name.empty()) {
        // Default: the first source of the synthesis task. Transfer pairs a
        // classifier with the generator pretrained FROM its sequence (the
        // T1->T2 model feeds the T1 classifier), so the classified slice
        // lands in the channel the pretrained encoder saw content in.
        const AvailabilityMask mask = source_mask();
        for (std::size_t i = 0; i < seqs.size(); ++i)
            if (mask.a[i] == 1) return seqs[i];
        return seqs[0];
    }
    const Sequence s = sequence_from_string(name);
    if (std::find(seqs.begin(), seqs.end(), s) == seqs.end())
        throw ConfigError("config: data.classify_sequence not in data.sequences");
    return s;
}

double ExperimentConfig::train_fraction() const {
    const double f = merged_.at("data").at("train_fraction").get<double>();
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("config: data.train_fraction must be in (0,1)");
    return f;
}

i64 ExperimentConfig::tumor_k() const { return merged_.at("data").at("tumor_k").get<i64>(); }
i64 ExperimentConfig::healthy_k() const { return merged_.at("data").at("healthy_k").get<i64>(); }

std::uint64_t ExperimentConfig::data_seed() const {
    return merged_.at("data").at("seed").get<std::uint64_t>();
}

GeneratorConfig ExperimentConfig::generator() const {
    const auto& m = merged_.at("model");
    GeneratorConfig cfg;
    cfg.backbone.in_channels = static_cast<i64>(sequences().size());
    cfg.backbone.base_width = m.at("base_width").get<i64>();
    cfg.backbone.image_size = m.at("image_size").get<i64>();
    const auto& vit = m.at("vit");
    cfg.backbone.vit.layers = vit.at("layers").get<i64>();
    cfg.backbone.vit.heads = vit.at("heads").get<i64>();
    cfg.backbone.vit.nd = vit.at("nd").get<i64>();
    cfg.backbone.vit.hidden = vit.at("hidden").get<i64>();
    cfg.backbone.vit.patch = vit.at("patch").get<i64>();
    cfg.backbone.vit.downsample_factor = vit.at("downsample").get<i64>();
    cfg.backbone.vit.nc_channels = vit.at("nc").get<i64>();
    cfg.out_channels = cfg.backbone.in_channels;
    return cfg;
}

DiscriminatorConfig ExperimentConfig::discriminator() const {
    DiscriminatorConfig cfg;
    cfg.in_channels = 2 * static_cast<i64>(sequences().size());
    cfg.base_width = merged_.at("model").at("disc_base_width").get<i64>();
    return cfg;
}

ClassifierConfig ExperimentConfig::classifier() const {
    ClassifierConfig cfg;
    cfg.backbone = generator().backbone;
    cfg.num_classes = static_cast<i64>(classes().size());
    cfg.head_hidden = merged_.at("model").at("head_hidden").get<i64>();
    cfg.dropout = merged_.at("model").at("dropout").get<double>();
    return cfg;
}

PretrainConfig ExperimentConfig::pretrain() const {
    const auto& p = merged_.at("pretrain");
    PretrainConfig cfg;
    cfg.lr = p.at("lr").get<double>();
    cfg.beta1 = p.at("beta1").get<double>();
    cfg.beta2 = p.at("beta2").get<double>();
    cfg.epochs = p.at("epochs").get<i64>();
    cfg.batch = p.at("batch").get<i64>();
    cfg.sequences = sequences();
    cfg.mask = source_mask();
    cfg.weights.lambda_pix = p.at("lambda_pix").get<double>();
    cfg.weights.lambda_rec = p.at("lambda_rec").get<double>();
    cfg.weights.lambda_adv = p.at("lambda_adv").get<double>();
    cfg.seed = p.at("seed").get<std::uint64_t>();
    cfg.checkpoint_every = p.at("checkpoint_every").get<i64>();
    return cfg;
}

FinetuneConfig ExperimentConfig::finetune() const {
    const auto& f = merged_.at("finetune");
    FinetuneConfig cfg;
    cfg.lr = f.at("lr").get<double>();
    cfg.beta1 = f.at("beta1").get<double>();
    cfg.beta2 = f.at("beta2").get<double>();
    cfg.epochs = f.at("epochs").get<i64>();
    cfg.batch = f.at("batch").get<i64>();
    for (const auto& g : f.at("freeze")) cfg.freeze_groups.push_back(g.get<std::string>());
    cfg.seed = f.at("seed").get<std::uint64_t>();
    cfg.num_classes = static_cast<i64>(classes().size());
    cfg.init = f.at("init").get<std::string>();
    const std::vector<Sequence> seqs = sequences();
    const Sequence target = classify_sequence();
    for (std::size_t i = 0; i < seqs.size(); ++i)
        if (seqs[i] == target) cfg.image_channel = static_cast<i64>(i);
    return cfg;
}

double ExperimentConfig::metrics_max_val() const {
    return merged_.at("metrics").at("max_val").get<double>();
}

std::string ExperimentConfig::out_dir() const {
    return merged_.at("io").at("out_dir").get<std::string>();
}

bool ExperimentConfig::png_export() const {
    return merged_.at("io").at("png_export").get<bool>();
}

}  // namespace resvit
