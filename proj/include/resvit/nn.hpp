#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "resvit/autograd.hpp"

namespace resvit {

using NamedParams = std::vector<std::pair<std::string, Var>>;

struct TransformerConfig {
    i64 layers = 12;
    i64 heads = 12;
    i64 nd = 768;
    i64 hidden = 3072;
    i64 patch = 16;
    i64 downsample_factor = 4;  // M; realized as log2(M) stride-2 stages
    i64 nc_channels = 0;        // downsampled width; 0 means Nc/M
};

// Shared trunk geometry for the generator and the classifier; weight transfer
// is total over encoder + ART groups exactly when these match.
struct BackboneConfig {
    i64 in_channels = 3;
    i64 base_width = 64;  // encoder widths: base, 2*base, 4*base
    i64 image_size = 256;
    TransformerConfig vit{};

    i64 bottleneck_channels() const { return 4 * base_width; }
    i64 bottleneck_hw() const { return image_size / 4; }
    void validate() const;  // throws ConfigError on inconsistent geometry
};

// Stride arithmetic helpers, usable symbolically (no allocation) so large
// configurations can be shape-checked without instantiating parameters.
i64 conv_out_dim(i64 in, i64 kernel, i64 stride, i64 pad);
i64 tconv_out_dim(i64 in, i64 kernel, i64 stride, i64 pad, i64 output_pad);

constexpr double kInitStd = 0.02;
constexpr double kInstanceNormEps = 1e-5;
constexpr double kLayerNormEps = 1e-6;

// ---- primitive layers ----

struct Conv2dLayer {
    Var w, b;
    i64 in_c = 0, out_c = 0, kernel = 0, stride = 1, pad = 0;
    PadMode pad_mode = PadMode::zero;

    Conv2dLayer() = default;
    Conv2dLayer(i64 in_channels, i64 out_channels, i64 k, i64 s, i64 p, PadMode mode, Rng& rng);
    Var forward(const Var& x) const;
    void collect(NamedParams& out, const std::string& prefix) const;
};

struct ConvTranspose2dLayer {
    Var w, b;
    i64 in_c = 0, out_c = 0, kernel = 0, stride = 1, pad = 0, output_pad = 0;

    ConvTranspose2dLayer() = default;
    ConvTranspose2dLayer(i64 in_channels, i64 out_channels, i64 k, i64 s, i64 p, i64 op, Rng& rng);
    Var forward(const Var& x) const;
    void collect(NamedParams& out, const std::string& prefix) const;
};

struct InstanceNorm2dLayer {
    Var gamma, beta;
    InstanceNorm2dLayer() = default;
    explicit InstanceNorm2dLayer(i64 channels);
    Var forward(const Var& x) const { return instance_norm(x, gamma, beta, kInstanceNormEps); }
    void collect(NamedParams& out, const std::string& prefix) const;
};

struct LayerNormLayer {
    Var gamma, beta;
    LayerNormLayer() = default;
    explicit LayerNormLayer(i64 dim);
    Var forward(const Var& x) const { return layer_norm(x, gamma, beta, kLayerNormEps); }
    void collect(NamedParams& out, const std::string& prefix) const;
};

struct LinearLayer {
    Var w, b;
    i64 in_d = 0, out_d = 0;
    LinearLayer() = default;
    LinearLayer(i64 in_dim, i64 out_dim, Rng& rng);
    Var forward(const Var& x) const { return linear(x, w, b); }
    void collect(NamedParams& out, const std::string& prefix) const;
};

// ---- blocks ----

// y = x + conv/norm/relu/conv/norm (shape-preserving local path).
struct ResidualBlock {
    Conv2dLayer conv1, conv2;
    InstanceNorm2dLayer norm1, norm2;

    ResidualBlock() = default;
    ResidualBlock(i64 channels, Rng& rng);
    Var forward(const Var& x) const;
    void collect(NamedParams& out, const std::string& prefix) const;
};

// Three conv stages: k7/s1 reflect, then two k3/s2. Spatial /4, widths
// base -> 2*base -> 4*base.
struct Encoder {
    Conv2dLayer conv1, conv2, conv3;
    InstanceNorm2dLayer norm1, norm2, norm3;

    Encoder() = default;
    Encoder(i64 in_channels, i64 base_width, Rng& rng);
    Var forward(const Var& x) const;
    void collect(NamedParams& out, const std::string& prefix) const;
};

// Inverse of the encoder: two k3/s2 transposed stages then a k7 projection
// with tanh output head.
struct Decoder {
    ConvTranspose2dLayer tconv1, tconv2;
    InstanceNorm2dLayer norm1, norm2;
    Conv2dLayer proj;

    Decoder() = default;
    Decoder(i64 bottleneck_channels, i64 out_channels, Rng& rng);
    Var forward(const Var& f) const;
    void collect(NamedParams& out, const std::string& prefix) const;
};

// log2(M) stride-2 conv stages; channels fall geometrically to Nc/M so the
// default matches nc = Nc/M, h = H/M, w = W/M.
struct Downsampler {
    std::vector<Conv2dLayer> convs;
    std::vector<InstanceNorm2dLayer> norms;
    i64 factor = 4;

    Downsampler() = default;
    // nc_target <= 0 selects the default Nc/M output width.
    Downsampler(i64 channels, i64 factor, i64 nc_target, Rng& rng);
    Var forward(const Var& f) const;
    void collect(NamedParams& out, const std::string& prefix) const;
};

// Non-overlapping P x P patches, shared linear projection to ND, learnable
// positional encoding.
struct PatchEmbed {
    LinearLayer proj;
    Var pos;
    i64 patch = 16, channels = 0, grid_h = 0, grid_w = 0, nd = 0;

    PatchEmbed() = default;
    PatchEmbed(i64 channels, i64 h, i64 w, i64 patch_size, i64 nd_dim, Rng& rng);
    Var forward(const Var& f) const;
    void collect(NamedParams& out, const std::string& prefix) const;
};

// Pre-norm transformer encoder layer: z' = MSA(LN(z)) + z, out = MLP(LN(z')) + z'.
struct TransformerLayer {
    LayerNormLayer ln1, ln2;
    LinearLayer wq, wk, wv, wo, fc1, fc2;
    i64 heads = 0, nd = 0;

    // Set to capture per-head attention rows for diagnostics/tests.
    mutable bool capture_attention = false;
    mutable Tensor last_attention;  // (N*heads, T, T)

    TransformerLayer() = default;
    TransformerLayer(i64 nd_dim, i64 head_count, i64 hidden, Rng& rng);
    Var forward(const Var& z) const;
    void collect(NamedParams& out, const std::string& prefix) const;
};

// Linear de-projection to patch contents, inverse patch arrangement, then
// log2(M) stride-2 transposed stages back to (Nc, H, W).
struct TokenUpsampler {
    LinearLayer deproj;
    std::vector<ConvTranspose2dLayer> tconvs;
    std::vector<InstanceNorm2dLayer> norms;
    i64 patch = 16, channels = 0, grid_h = 0, grid_w = 0;

    TokenUpsampler() = default;
    TokenUpsampler(i64 nd_dim, i64 nc, i64 h, i64 w, i64 patch_size, i64 out_channels, i64 factor,
                   Rng& rng);
    Var forward(const Var& z) const;
    void collect(NamedParams& out, const std::string& prefix) const;
};

// concat(g, f) on channels followed by a 1x1 compression conv; no norm or
// activation so an [I | 0] kernel reproduces g exactly.
struct FuseCompress {
    Conv2dLayer conv;

    FuseCompress() = default;
    FuseCompress(i64 channels, Rng& rng);
    Var forward(const Var& g, const Var& f) const;
    void collect(NamedParams& out, const std::string& prefix) const;
};

// Aggregated residual transformer block. With a transformer module:
// downsample -> patch embed -> L transformer layers -> deflatten/upsample ->
// fuse/compress -> residual block; otherwise the residual block alone.
struct ArtBlock {
    bool has_transformer = false;
    std::optional<Downsampler> down;
    std::optional<PatchEmbed> embed;
    std::vector<TransformerLayer> tx;
    std::optional<TokenUpsampler> up;
    std::optional<FuseCompress> fuse;
    ResidualBlock res;

    ArtBlock() = default;
    ArtBlock(const BackboneConfig& cfg, bool with_transformer, Rng& rng);
    Var forward(const Var& f) const;
    void collect(NamedParams& out, const std::string& prefix) const;
};

// Classification head: global average pool -> dense -> layer norm ->
// dropout -> dense -> softmax.
struct MlpHead {
    LinearLayer fc1, fc2;
    LayerNormLayer norm;
    double dropout_p = 0.5;

    MlpHead() = default;
    MlpHead(i64 in_channels, i64 hidden, i64 classes, double dropout, Rng& rng);
    Var forward(const Var& f, bool training, Rng& rng) const;
    void collect(NamedParams& out, const std::string& prefix) const;
};

}  // namespace resvit
