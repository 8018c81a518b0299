#pragma once

#include <array>
#include <string>
#include <vector>

#include "resvit/nn.hpp"

namespace resvit {

// Transformer modules sit in ART slots 1 and 6 (1-indexed).
constexpr std::array<bool, 9> kArtTransformerSlots = {true, false, false, false, false,
                                                      true, false, false, false};

struct GeneratorConfig {
    BackboneConfig backbone{};
    i64 out_channels = 3;
    void validate() const;
};

struct ClassifierConfig {
    BackboneConfig backbone{};
    i64 num_classes = 4;
    i64 head_hidden = 256;
    double dropout = 0.5;
    void validate() const;
};

struct DiscriminatorConfig {
    i64 in_channels = 6;  // conditional pair: source stack + candidate stack
    i64 base_width = 64;
    void validate() const;
};

// One named stage of a symbolic forward pass; used to shape-check large
// configurations without allocating their parameters.
struct ShapeStage {
    std::string name;
    std::vector<i64> shape;
};

std::vector<ShapeStage> generator_shape_trace(const GeneratorConfig& cfg, i64 batch,
                                              i64 image_size);
std::vector<ShapeStage> discriminator_shape_trace(const DiscriminatorConfig& cfg, i64 batch,
                                                  i64 image_size);

class Generator {
public:
    Generator(GeneratorConfig cfg, Rng& rng);

    // Maps a source stack in [-1,1] to a synthetic stack in [-1,1]; shape
    // preserving for any spatial size the config family admits.
    Var forward(const Var& x) const;
    Var encode(const Var& x) const;      // encoder only
    Var bottleneck(const Var& x) const;  // encoder + all ART blocks

    NamedParams named_parameters() const;
    const GeneratorConfig& config() const { return cfg_; }

    Encoder encoder;
    std::vector<ArtBlock> art;  // exactly 9
    Decoder decoder;

private:
    GeneratorConfig cfg_;
};

// PatchGAN: four conv stages (three stride-2, one stride-1) and a stride-1
// projection to a 1-channel score map; 70x70 receptive field at default depth.
class Discriminator {
public:
    Discriminator(DiscriminatorConfig cfg, Rng& rng);

    Var forward(const Var& pair) const;  // (N,in_c,S,S) -> (N,1,hp,wp)

    NamedParams named_parameters() const;
    const DiscriminatorConfig& config() const { return cfg_; }

    std::vector<Conv2dLayer> convs;
    std::vector<InstanceNorm2dLayer> norms;  // stages 2..4

private:
    DiscriminatorConfig cfg_;
};

class Classifier {
public:
    Classifier(ClassifierConfig cfg, Rng& rng);

    Var forward(const Var& x, bool training, Rng& rng) const;  // (N,K) row-stochastic
    Var bottleneck(const Var& x) const;

    NamedParams named_parameters() const;
    const ClassifierConfig& config() const { return cfg_; }

    Encoder encoder;
    std::vector<ArtBlock> art;
    MlpHead head;

private:
    ClassifierConfig cfg_;
};

}  // namespace resvit
