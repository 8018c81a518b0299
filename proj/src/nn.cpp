#include "resvit/nn.hpp"

#include <cmath>

namespace resvit {

i64 conv_out_dim(i64 in, i64 kernel, i64 stride, i64 pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

i64 tconv_out_dim(i64 in, i64 kernel, i64 stride, i64 pad, i64 output_pad) {
    return (in - 1) * stride - 2 * pad + kernel + output_pad;
}

namespace {

bool is_pow2(i64 x) { return x >= 1 && (x & (x - 1)) == 0; }

i64 stages_for(i64 factor) {
    i64 s = 0;
    while ((i64{1} << s) < factor) ++s;
    return s;
}

}  // namespace

void BackboneConfig::validate() const {
    if (in_channels < 1) throw ConfigError("backbone: in_channels must be >= 1");
    if (vit.nc_channels < 0) throw ConfigError("backbone: vit nc width must be >= 0");
    if (base_width < 1) throw ConfigError("backbone: base_width must be >= 1");
    if (image_size < 4 || image_size % 4 != 0)
        throw ConfigError("backbone: image_size must be a positive multiple of 4");
    if (vit.layers < 1) throw ConfigError("backbone: transformer needs >= 1 layer");
    if (vit.heads < 1 || vit.nd % vit.heads != 0)
        throw ConfigError("backbone: nd must be divisible by head count");
    if (vit.hidden < 1) throw ConfigError("backbone: transformer hidden width must be >= 1");
    if (!is_pow2(vit.downsample_factor))
        throw ConfigError("backbone: downsample factor must be a power of two");
    if (vit.nc_channels == 0 && bottleneck_channels() % vit.downsample_factor != 0)
        throw ConfigError("backbone: bottleneck channels not divisible by downsample factor");
    const i64 hw = bottleneck_hw();
    if (hw % vit.downsample_factor != 0)
        throw ConfigError("backbone: bottleneck spatial size " + std::to_string(hw) +
                          " not divisible by downsample factor " +
                          std::to_string(vit.downsample_factor));
    const i64 dhw = hw / vit.downsample_factor;
    if (vit.patch < 1 || dhw % vit.patch != 0)
        throw ConfigError("backbone: downsampled size " + std::to_string(dhw) +
                          " not divisible by patch size " + std::to_string(vit.patch));
}

// ---- primitive layers ----

Conv2dLayer::Conv2dLayer(i64 in_channels, i64 out_channels, i64 k, i64 s, i64 p, PadMode mode,
                         Rng& rng)
    : in_c(in_channels), out_c(out_channels), kernel(k), stride(s), pad(p), pad_mode(mode) {
    w = Var::param(rng.normal_tensor({out_c, in_c, kernel, kernel}, 0.0, kInitStd));
    b = Var::param(Tensor::zeros({out_c}));
}

Var Conv2dLayer::forward(const Var& x) const {
    return conv2d(pad2d(x, pad, pad_mode), w, b, stride);
}

void Conv2dLayer::collect(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

ConvTranspose2dLayer::ConvTranspose2dLayer(i64 in_channels, i64 out_channels, i64 k, i64 s, i64 p,
                                           i64 op, Rng& rng)
    : in_c(in_channels), out_c(out_channels), kernel(k), stride(s), pad(p), output_pad(op) {
    w = Var::param(rng.normal_tensor({in_c, out_c, kernel, kernel}, 0.0, kInitStd));
    b = Var::param(Tensor::zeros({out_c}));
}

Var ConvTranspose2dLayer::forward(const Var& x) const {
    return conv_transpose2d(x, w, b, stride, pad, output_pad);
}

void ConvTranspose2dLayer::collect(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

InstanceNorm2dLayer::InstanceNorm2dLayer(i64 channels) {
    gamma = Var::param(Tensor::full({channels}, 1.0));
    beta = Var::param(Tensor::zeros({channels}));
}

void InstanceNorm2dLayer::collect(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

LayerNormLayer::LayerNormLayer(i64 dim) {
    gamma = Var::param(Tensor::full({dim}, 1.0));
    beta = Var::param(Tensor::zeros({dim}));
}

void LayerNormLayer::collect(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

LinearLayer::LinearLayer(i64 in_dim, i64 out_dim, Rng& rng) : in_d(in_dim), out_d(out_dim) {
    w = Var::param(rng.normal_tensor({in_d, out_d}, 0.0, kInitStd));
    b = Var::param(Tensor::zeros({out_d}));
}

void LinearLayer::collect(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

// ---- blocks ----

ResidualBlock::ResidualBlock(i64 channels, Rng& rng)
    : conv1(channels, channels, 3, 1, 1, PadMode::zero, rng),
      conv2(channels, channels, 3, 1, 1, PadMode::zero, rng),
      norm1(channels),
      norm2(channels) {}

Var ResidualBlock::forward(const Var& x) const {
    Var f = relu(norm1.forward(conv1.forward(x)));
    f = norm2.forward(conv2.forward(f));
    return add(x, f);
}

void ResidualBlock::collect(NamedParams& out, const std::string& prefix) const {
    conv1.collect(out, prefix + ".conv1");
    norm1.collect(out, prefix + ".norm1");
    conv2.collect(out, prefix + ".conv2");
    norm2.collect(out, prefix + ".norm2");
}

Encoder::Encoder(i64 in_channels, i64 base_width, Rng& rng)
    : conv1(in_channels, base_width, 7, 1, 3, PadMode::reflect, rng),
      conv2(base_width, 2 * base_width, 3, 2, 1, PadMode::zero, rng),
      conv3(2 * base_width, 4 * base_width, 3, 2, 1, PadMode::zero, rng),
      norm1(base_width),
      norm2(2 * base_width),
      norm3(4 * base_width) {}

Var Encoder::forward(const Var& x) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != conv1.in_c || s[2] % 4 != 0 || s[3] % 4 != 0 || s[2] < 8 ||
        s[3] < 8)
        throw ShapeError("encoder: expected (N," + std::to_string(conv1.in_c) +
                         ",H,W) with H,W multiples of 4, got " + shape_str(s));
    Var f = relu(norm1.forward(conv1.forward(x)));
    f = relu(norm2.forward(conv2.forward(f)));
    f = relu(norm3.forward(conv3.forward(f)));
    return f;
}

void Encoder::collect(NamedParams& out, const std::string& prefix) const {
    conv1.collect(out, prefix + ".conv1");
    norm1.collect(out, prefix + ".norm1");
    conv2.collect(out, prefix + ".conv2");
    norm2.collect(out, prefix + ".norm2");
    conv3.collect(out, prefix + ".conv3");
    norm3.collect(out, prefix + ".norm3");
}

Decoder::Decoder(i64 bottleneck_channels, i64 out_channels, Rng& rng)
    : tconv1(bottleneck_channels, bottleneck_channels / 2, 3, 2, 1, 1, rng),
      tconv2(bottleneck_channels / 2, bottleneck_channels / 4, 3, 2, 1, 1, rng),
      norm1(bottleneck_channels / 2),
      norm2(bottleneck_channels / 4),
      proj(bottleneck_channels / 4, out_channels, 7, 1, 3, PadMode::reflect, rng) {}

Var Decoder::forward(const Var& f) const {
    const auto& s = f.shape();
    if (s.size() != 4 || s[1] != tconv1.in_c)
        throw ShapeError("decoder: expected bottleneck with " + std::to_string(tconv1.in_c) +
                         " channels, got " + shape_str(s));
    Var y = relu(norm1.forward(tconv1.forward(f)));
    y = relu(norm2.forward(tconv2.forward(y)));
    return tanh_op(proj.forward(y));
}

void Decoder::collect(NamedParams& out, const std::string& prefix) const {
    tconv1.collect(out, prefix + ".tconv1");
    norm1.collect(out, prefix + ".norm1");
    tconv2.collect(out, prefix + ".tconv2");
    norm2.collect(out, prefix + ".norm2");
    proj.collect(out, prefix + ".proj");
}

Downsampler::Downsampler(i64 channels, i64 factor_, i64 nc_target, Rng& rng)
    : factor(factor_) {
    if (!is_pow2(factor)) throw ConfigError("downsampler: factor must be a power of two");
    const i64 n = stages_for(factor);
    const i64 nc = nc_target > 0 ? nc_target : channels / factor;
    if (nc < 1) throw ConfigError("downsampler: output width must be >= 1");
    i64 c = channels;
    for (i64 i = 0; i < n; ++i) {
        const i64 next = (i + 1 == n) ? nc : c / 2;
        convs.emplace_back(c, next, 3, 2, 1, PadMode::zero, rng);
        norms.emplace_back(next);
        c = next;
    }
}

Var Downsampler::forward(const Var& f) const {
    const auto& s = f.shape();
    if (s.size() != 4 || s[2] % factor != 0 || s[3] % factor != 0)
        throw ShapeError("downsampler: spatial dims of " + shape_str(s) +
                         " not divisible by factor " + std::to_string(factor));
    Var y = f;
    for (std::size_t i = 0; i < convs.size(); ++i)
        y = relu(norms[i].forward(convs[i].forward(y)));
    return y;
}

void Downsampler::collect(NamedParams& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < convs.size(); ++i) {
        convs[i].collect(out, prefix + ".conv" + std::to_string(i + 1));
        norms[i].collect(out, prefix + ".norm" + std::to_string(i + 1));
    }
}

PatchEmbed::PatchEmbed(i64 channels_, i64 h, i64 w, i64 patch_size, i64 nd_dim, Rng& rng)
    : patch(patch_size), channels(channels_), grid_h(h / patch_size), grid_w(w / patch_size),
      nd(nd_dim) {
    if (h % patch != 0 || w % patch != 0)
        throw ConfigError("patch embed: grid " + std::to_string(h) + "x" + std::to_string(w) +
                          " not divisible by patch " + std::to_string(patch));
    proj = LinearLayer(channels * patch * patch, nd, rng);
    pos = Var::param(rng.normal_tensor({grid_h * grid_w, nd}, 0.0, kInitStd));
}

Var PatchEmbed::forward(const Var& f) const {
    const auto& s = f.shape();
    if (s.size() != 4 || s[1] != channels || s[2] != grid_h * patch || s[3] != grid_w * patch)
        throw ShapeError("patch embed: expected (N," + std::to_string(channels) + "," +
                         std::to_string(grid_h * patch) + "," + std::to_string(grid_w * patch) +
                         "), got " + shape_str(s));
    const i64 n = s[0], np = grid_h * grid_w, d = channels * patch * patch;
    Var tokens = patchify(f, patch);                       // (N,NP,d)
    tokens = reshape(tokens, {n * np, d});
    tokens = proj.forward(tokens);                         // (N*NP,ND)
    tokens = reshape(tokens, {n, np, nd});
    return add_tokenwise(tokens, pos);
}

void PatchEmbed::collect(NamedParams& out, const std::string& prefix) const {
    proj.collect(out, prefix + ".proj");
    out.emplace_back(prefix + ".pos", pos);
}

TransformerLayer::TransformerLayer(i64 nd_dim, i64 head_count, i64 hidden, Rng& rng)
    : ln1(nd_dim),
      ln2(nd_dim),
      wq(nd_dim, nd_dim, rng),
      wk(nd_dim, nd_dim, rng),
      wv(nd_dim, nd_dim, rng),
      wo(nd_dim, nd_dim, rng),
      fc1(nd_dim, hidden, rng),
      fc2(hidden, nd_dim, rng),
      heads(head_count),
      nd(nd_dim) {
    if (nd % heads != 0) throw ConfigError("transformer: nd not divisible by heads");
}

Var TransformerLayer::forward(const Var& z) const {
    const auto& s = z.shape();
    if (s.size() != 3 || s[2] != nd)
        throw ShapeError("transformer layer: expected (N,T," + std::to_string(nd) + "), got " +
                         shape_str(s));
    const i64 n = s[0], t = s[1];
    const i64 dh = nd / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Var u = ln1.forward(z);
    Var rows = reshape(u, {n * t, nd});
    Var q = split_heads(reshape(wq.forward(rows), {n, t, nd}), heads);
    Var k = split_heads(reshape(wk.forward(rows), {n, t, nd}), heads);
    Var v = split_heads(reshape(wv.forward(rows), {n, t, nd}), heads);
    Var scores = scale(bmm(q, transpose_last2(k)), att_scale);  // (N*h,T,T)
    Var attn = softmax_lastdim(scores);
    if (capture_attention) last_attention = attn.val();
    Var ctx = merge_heads(bmm(attn, v), heads);                 // (N,T,ND)
    Var msa = reshape(wo.forward(reshape(ctx, {n * t, nd})), {n, t, nd});
    Var z1 = add(msa, z);

    Var m = reshape(ln2.forward(z1), {n * t, nd});
    m = fc2.forward(gelu(fc1.forward(m)));
    return add(reshape(m, {n, t, nd}), z1);
}

void TransformerLayer::collect(NamedParams& out, const std::string& prefix) const {
    ln1.collect(out, prefix + ".ln1");
    wq.collect(out, prefix + ".wq");
    wk.collect(out, prefix + ".wk");
    wv.collect(out, prefix + ".wv");
    wo.collect(out, prefix + ".wo");
    ln2.collect(out, prefix + ".ln2");
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
}

TokenUpsampler::TokenUpsampler(i64 nd_dim, i64 nc, i64 h, i64 w, i64 patch_size, i64 out_channels,
                               i64 factor, Rng& rng)
    : patch(patch_size), channels(nc), grid_h(h / patch_size), grid_w(w / patch_size) {
    deproj = LinearLayer(nd_dim, nc * patch * patch, rng);
    const i64 n = stages_for(factor);
    i64 c = nc;
    for (i64 i = 0; i < n; ++i) {
        i64 next = std::min(c * 2, out_channels);
        if (i + 1 == n) next = out_channels;
        tconvs.emplace_back(c, next, 3, 2, 1, 1, rng);
        norms.emplace_back(next);
        c = next;
    }
}

Var TokenUpsampler::forward(const Var& z) const {
    const auto& s = z.shape();
    const i64 np = grid_h * grid_w;
    if (s.size() != 3 || s[1] != np || s[2] != deproj.in_d)
        throw ShapeError("token upsampler: expected (N," + std::to_string(np) + "," +
                         std::to_string(deproj.in_d) + "), got " + shape_str(s));
    const i64 n = s[0];
    Var y = deproj.forward(reshape(z, {n * np, deproj.in_d}));
    y = unpatchify(reshape(y, {n, np, channels * patch * patch}), channels, grid_h * patch,
                   grid_w * patch, patch);
    for (std::size_t i = 0; i < tconvs.size(); ++i)
        y = relu(norms[i].forward(tconvs[i].forward(y)));
    return y;
}

void TokenUpsampler::collect(NamedParams& out, const std::string& prefix) const {
    deproj.collect(out, prefix + ".deproj");
    for (std::size_t i = 0; i < tconvs.size(); ++i) {
        tconvs[i].collect(out, prefix + ".tconv" + std::to_string(i + 1));
        norms[i].collect(out, prefix + ".norm" + std::to_string(i + 1));
    }
}

FuseCompress::FuseCompress(i64 channels, Rng& rng)
    : conv(2 * channels, channels, 1, 1, 0, PadMode::zero, rng) {}

Var FuseCompress::forward(const Var& g, const Var& f) const {
    const auto& sg = g.shape();
    const auto& sf = f.shape();
    if (sg.size() != 4 || sf.size() != 4 || sg[2] != sf[2] || sg[3] != sf[3])
        throw ShapeError("fuse: spatial mismatch " + shape_str(sg) + " vs " + shape_str(sf));
    return conv.forward(concat_channels(g, f));
}

void FuseCompress::collect(NamedParams& out, const std::string& prefix) const {
    conv.collect(out, prefix + ".conv");
}

ArtBlock::ArtBlock(const BackboneConfig& cfg, bool with_transformer, Rng& rng)
    : has_transformer(with_transformer), res(cfg.bottleneck_channels(), rng) {
    if (!has_transformer) return;
    const i64 nc_in = cfg.bottleneck_channels();
    const i64 hw = cfg.bottleneck_hw();
    const i64 m = cfg.vit.downsample_factor;
    const i64 nc = cfg.vit.nc_channels > 0 ? cfg.vit.nc_channels : nc_in / m;
    down.emplace(nc_in, m, cfg.vit.nc_channels, rng);
    embed.emplace(nc, hw / m, hw / m, cfg.vit.patch, cfg.vit.nd, rng);
    for (i64 l = 0; l < cfg.vit.layers; ++l)
        tx.emplace_back(cfg.vit.nd, cfg.vit.heads, cfg.vit.hidden, rng);
    up.emplace(cfg.vit.nd, nc, hw / m, hw / m, cfg.vit.patch, nc_in, m, rng);
    fuse.emplace(nc_in, rng);
}

Var ArtBlock::forward(const Var& f) const {
    if (!has_transformer) return res.forward(f);
    Var z = embed->forward(down->forward(f));
    for (const auto& layer : tx) z = layer.forward(z);
    Var g = up->forward(z);
    return res.forward(fuse->forward(g, f));
}

void ArtBlock::collect(NamedParams& out, const std::string& prefix) const {
    if (has_transformer) {
        down->collect(out, prefix + ".down");
        embed->collect(out, prefix + ".embed");
        for (std::size_t l = 0; l < tx.size(); ++l)
            tx[l].collect(out, prefix + ".tx" + std::to_string(l + 1));
        up->collect(out, prefix + ".up");
        fuse->collect(out, prefix + ".fuse");
    }
    res.collect(out, prefix + ".res");
}

MlpHead::MlpHead(i64 in_channels, i64 hidden, i64 classes, double dropout, Rng& rng)
    : fc1(in_channels, hidden, rng), fc2(hidden, classes, rng), norm(hidden), dropout_p(dropout) {}

Var MlpHead::forward(const Var& f, bool training, Rng& rng) const {
    const auto& s = f.shape();
    if (s.size() != 4 || s[1] != fc1.in_d)
        throw ShapeError("mlp head: expected (N," + std::to_string(fc1.in_d) + ",H,W), got " +
                         shape_str(s));
    Var y = global_avg_pool(f);            // (N,C)
    y = norm.forward(fc1.forward(y));
    y = dropout(y, dropout_p, rng, training);
    return softmax_lastdim(fc2.forward(y));
}

void MlpHead::collect(NamedParams& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    norm.collect(out, prefix + ".norm");
    fc2.collect(out, prefix + ".fc2");
}

}  // namespace resvit
