#include "resvit/models.hpp"

namespace resvit {

void GeneratorConfig::validate() const {
    backbone.validate();
    if (out_channels < 1) throw ConfigError("generator: out_channels must be >= 1");
}

void ClassifierConfig::validate() const {
    backbone.validate();
    if (num_classes < 2) throw ConfigError("classifier: needs at least 2 classes");
    if (head_hidden < 1) throw ConfigError("classifier: head_hidden must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("classifier: dropout out of range");
}

void DiscriminatorConfig::validate() const {
    if (in_channels < 2) throw ConfigError("discriminator: in_channels must be >= 2");
    if (base_width < 1) throw ConfigError("discriminator: base_width must be >= 1");
}

namespace {

std::vector<ShapeStage> backbone_shape_trace(const BackboneConfig& bb, i64 batch, i64 image_size) {
    if (image_size % 4 != 0) throw ShapeError("shape trace: image size must be a multiple of 4");
    std::vector<ShapeStage> stages;
    i64 h = image_size;
    stages.push_back({"input", {batch, bb.in_channels, h, h}});
    h = conv_out_dim(h, 7, 1, 3);
    stages.push_back({"encoder.conv1", {batch, bb.base_width, h, h}});
    h = conv_out_dim(h, 3, 2, 1);
    stages.push_back({"encoder.conv2", {batch, 2 * bb.base_width, h, h}});
    h = conv_out_dim(h, 3, 2, 1);
    stages.push_back({"encoder.conv3", {batch, 4 * bb.base_width, h, h}});
    const i64 nc_in = 4 * bb.base_width;
    const i64 m = bb.vit.downsample_factor;
    for (int slot = 1; slot <= 9; ++slot) {
        if (kArtTransformerSlots[static_cast<std::size_t>(slot - 1)]) {
            if (h % m != 0)
                throw ShapeError("shape trace: art." + std::to_string(slot) +
                                 " spatial size " + std::to_string(h) +
                                 " not divisible by M=" + std::to_string(m));
            i64 dh = h / m;
            const i64 nc = bb.vit.nc_channels > 0 ? bb.vit.nc_channels : nc_in / m;
            stages.push_back(
                {"art." + std::to_string(slot) + ".down", {batch, nc, dh, dh}});
            if (dh % bb.vit.patch != 0)
                throw ShapeError("shape trace: downsampled size not divisible by patch");
            const i64 np = (dh / bb.vit.patch) * (dh / bb.vit.patch);
            stages.push_back(
                {"art." + std::to_string(slot) + ".tokens", {batch, np, bb.vit.nd}});
            i64 uh = dh;
            for (i64 stage = 0; (i64{1} << stage) < m; ++stage) uh = tconv_out_dim(uh, 3, 2, 1, 1);
            if (uh != h)
                throw ShapeError("shape trace: upsampler does not restore bottleneck dims");
            stages.push_back({"art." + std::to_string(slot) + ".up", {batch, nc_in, h, h}});
        }
        stages.push_back({"art." + std::to_string(slot), {batch, nc_in, h, h}});
    }
    return stages;
}

}  // namespace

std::vector<ShapeStage> generator_shape_trace(const GeneratorConfig& cfg, i64 batch,
                                              i64 image_size) {
    auto stages = backbone_shape_trace(cfg.backbone, batch, image_size);
    i64 h = stages.back().shape[2];
    i64 c = stages.back().shape[1];
    h = tconv_out_dim(h, 3, 2, 1, 1);
    stages.push_back({"decoder.tconv1", {batch, c / 2, h, h}});
    h = tconv_out_dim(h, 3, 2, 1, 1);
    stages.push_back({"decoder.tconv2", {batch, c / 4, h, h}});
    h = conv_out_dim(h, 7, 1, 3);
    stages.push_back({"decoder.proj", {batch, cfg.out_channels, h, h}});
    return stages;
}

std::vector<ShapeStage> discriminator_shape_trace(const DiscriminatorConfig& cfg, i64 batch,
                                                  i64 image_size) {
    std::vector<ShapeStage> stages;
    i64 h = image_size;
    stages.push_back({"input", {batch, cfg.in_channels, h, h}});
    const i64 w = cfg.base_width;
    const i64 widths[4] = {w, 2 * w, 4 * w, 8 * w};
    const i64 strides[4] = {2, 2, 2, 1};
    for (int i = 0; i < 4; ++i) {
        h = conv_out_dim(h, 4, strides[i], 1);
        stages.push_back({"disc.conv" + std::to_string(i + 1), {batch, widths[i], h, h}});
    }
    h = conv_out_dim(h, 4, 1, 1);
    stages.push_back({"disc.score", {batch, 1, h, h}});
    return stages;
}

Generator::Generator(GeneratorConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    encoder = Encoder(cfg_.backbone.in_channels, cfg_.backbone.base_width, rng);
    art.reserve(9);
    for (int slot = 0; slot < 9; ++slot)
        art.emplace_back(cfg_.backbone, kArtTransformerSlots[static_cast<std::size_t>(slot)], rng);
    decoder = Decoder(cfg_.backbone.bottleneck_channels(), cfg_.out_channels, rng);
}

Var Generator::encode(const Var& x) const { return encoder.forward(x); }

Var Generator::bottleneck(const Var& x) const {
    Var f = encoder.forward(x);
    for (const auto& block : art) f = block.forward(f);
    return f;
}

Var Generator::forward(const Var& x) const { return decoder.forward(bottleneck(x)); }

NamedParams Generator::named_parameters() const {
    NamedParams out;
    encoder.collect(out, "encoder");
    for (std::size_t i = 0; i < art.size(); ++i)
        art[i].collect(out, "art." + std::to_string(i + 1));
    decoder.collect(out, "decoder");
    return out;
}

Discriminator::Discriminator(DiscriminatorConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const i64 w = cfg_.base_width;
    convs.emplace_back(cfg_.in_channels, w, 4, 2, 1, PadMode::zero, rng);
    convs.emplace_back(w, 2 * w, 4, 2, 1, PadMode::zero, rng);
    convs.emplace_back(2 * w, 4 * w, 4, 2, 1, PadMode::zero, rng);
    convs.emplace_back(4 * w, 8 * w, 4, 1, 1, PadMode::zero, rng);
    convs.emplace_back(8 * w, 1, 4, 1, 1, PadMode::zero, rng);
    norms.emplace_back(2 * w);
    norms.emplace_back(4 * w);
    norms.emplace_back(8 * w);
}

Var Discriminator::forward(const Var& pair) const {
    const auto& s = pair.shape();
    if (s.size() != 4 || s[1] != cfg_.in_channels)
        throw ShapeError("discriminator: expected (N," + std::to_string(cfg_.in_channels) +
                         ",H,W), got " + shape_str(s));
    Var y = leaky_relu(convs[0].forward(pair), 0.2);
    for (int i = 1; i <= 3; ++i)
        y = leaky_relu(norms[static_cast<std::size_t>(i - 1)].forward(
                           convs[static_cast<std::size_t>(i)].forward(y)),
                       0.2);
    return convs[4].forward(y);
}

NamedParams Discriminator::named_parameters() const {
    NamedParams out;
    for (std::size_t i = 0; i < convs.size(); ++i)
        convs[i].collect(out, "disc.conv" + std::to_string(i + 1));
    for (std::size_t i = 0; i < norms.size(); ++i)
        norms[i].collect(out, "disc.norm" + std::to_string(i + 2));
    return out;
}

Classifier::Classifier(ClassifierConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    encoder = Encoder(cfg_.backbone.in_channels, cfg_.backbone.base_width, rng);
    art.reserve(9);
    for (int slot = 0; slot < 9; ++slot)
        art.emplace_back(cfg_.backbone, kArtTransformerSlots[static_cast<std::size_t>(slot)], rng);
    head = MlpHead(cfg_.backbone.bottleneck_channels(), cfg_.head_hidden, cfg_.num_classes,
                   cfg_.dropout, rng);
}

Var Classifier::bottleneck(const Var& x) const {
    Var f = encoder.forward(x);
    for (const auto& block : art) f = block.forward(f);
    return f;
}

Var Classifier::forward(const Var& x, bool training, Rng& rng) const {
    return head.forward(bottleneck(x), training, rng);
}

NamedParams Classifier::named_parameters() const {
    NamedParams out;
    encoder.collect(out, "encoder");
    for (std::size_t i = 0; i < art.size(); ++i)
        art[i].collect(out, "art." + std::to_string(i + 1));
    head.collect(out, "head");
    return out;
}

}  // namespace resvit
