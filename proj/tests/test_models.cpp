#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "resvit/checkpoint.hpp"
#include "resvit/models.hpp"

using namespace resvit;

namespace {

Tensor random_tensor(std::vector<i64> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.v) x = rng.uniform(-scale, scale);
    return t;
}

GeneratorConfig toy_generator_config(i64 image = 32, i64 in_ch = 2, i64 base = 2) {
    GeneratorConfig cfg;
    cfg.backbone.in_channels = in_ch;
    cfg.backbone.base_width = base;
    cfg.backbone.image_size = image;
    cfg.backbone.vit = TransformerConfig{2, 2, 8, 16, 1, 4};
    cfg.out_channels = in_ch;
    return cfg;
}

ClassifierConfig toy_classifier_config(i64 image = 32, i64 in_ch = 2, i64 base = 2,
                                       i64 classes = 4) {
    ClassifierConfig cfg;
    cfg.backbone = toy_generator_config(image, in_ch, base).backbone;
    cfg.num_classes = classes;
    cfg.head_hidden = 8;
    cfg.dropout = 0.5;
    return cfg;
}

// Stride-arithmetic oracle for the PatchGAN stack: three k4/s2/p1 stages, one
// k4/s1/p1 stage, then the k4/s1/p1 score projection.
i64 patchgan_spatial_ref(i64 s) {
    auto conv = [](i64 n, i64 k, i64 st, i64 p) { return (n + 2 * p - k) / st + 1; };
    i64 h = s;
    h = conv(h, 4, 2, 1);
    h = conv(h, 4, 2, 1);
    h = conv(h, 4, 2, 1);
    h = conv(h, 4, 1, 1);
    h = conv(h, 4, 1, 1);
    return h;
}

}  // namespace

TEST_CASE("generator structure: nine ART slots, transformers at 1 and 6") {
    Rng rng(1);
    Generator gen(toy_generator_config(), rng);
    REQUIRE(gen.art.size() == 9);
    for (int slot = 1; slot <= 9; ++slot) {
        const bool expect = (slot == 1 || slot == 6);
        CHECK(gen.art[static_cast<std::size_t>(slot - 1)].has_transformer == expect);
    }
}

TEST_CASE("generator forward: shape preserved, tanh range") {
    Rng rng(2);
    for (i64 s : {32, 64}) {
        Generator gen(toy_generator_config(s), rng);
        Tensor x = random_tensor({2, 2, s, s}, rng);
        Var out = gen.forward(Var::constant(x));
        CHECK(out.shape() == std::vector<i64>{2, 2, s, s});
        for (double v : out.val().v) {
            CHECK(v <= 1.0);
            CHECK(v >= -1.0);
        }
    }
}

TEST_CASE("default 256 configuration shape-checked symbolically") {
    GeneratorConfig cfg;  // 3 channels, base 64, ViT-B, 256
    cfg.validate();
    auto stages = generator_shape_trace(cfg, 4, 256);
    CHECK(stages.front().shape == std::vector<i64>{4, 3, 256, 256});
    CHECK(stages.back().shape == std::vector<i64>{4, 3, 256, 256});
    bool saw_bottleneck = false, saw_tokens = false;
    for (const auto& st : stages) {
        if (st.name == "encoder.conv3") {
            CHECK(st.shape == std::vector<i64>{4, 256, 64, 64});
            saw_bottleneck = true;
        }
        if (st.name == "art.1.down") CHECK(st.shape == std::vector<i64>{4, 64, 16, 16});
        if (st.name == "art.1.tokens") {
            CHECK(st.shape == std::vector<i64>{4, 1, 768});
            saw_tokens = true;
        }
    }
    CHECK(saw_bottleneck);
    CHECK(saw_tokens);
}

TEST_CASE("generator equals manual encoder -> ART x9 -> decoder composition") {
    Rng rng(3);
    Generator gen(toy_generator_config(), rng);
    Tensor x = random_tensor({1, 2, 32, 32}, rng);
    Var manual = gen.encoder.forward(Var::constant(x));
    for (const auto& block : gen.art) manual = block.forward(manual);
    manual = gen.decoder.forward(manual);
    Var whole = gen.forward(Var::constant(x));
    CHECK(whole.val().v == manual.val().v);
}

TEST_CASE("discriminator spatial arithmetic matches the stride oracle") {
    Rng rng(4);
    SUBCASE("symbolic: 256 gives 30x30, 128 gives 14x14") {
        DiscriminatorConfig cfg;
        for (i64 s : {256, 128, 64}) {
            auto stages = discriminator_shape_trace(cfg, 1, s);
            CHECK(stages.back().shape ==
                  std::vector<i64>{1, 1, patchgan_spatial_ref(s), patchgan_spatial_ref(s)});
        }
        CHECK(patchgan_spatial_ref(256) == 30);
        CHECK(patchgan_spatial_ref(64) == 6);
    }
    SUBCASE("numeric toy runs for 64 and 128") {
        for (i64 s : {64, 128}) {
            DiscriminatorConfig cfg;
            cfg.in_channels = 4;
            cfg.base_width = 2;
            Discriminator disc(cfg, rng);
            Tensor pair = random_tensor({1, 4, s, s}, rng);
            Var score = disc.forward(Var::constant(pair));
            const i64 expect = patchgan_spatial_ref(s);
            CHECK(score.shape() == std::vector<i64>{1, 1, expect, expect});
        }
    }
    SUBCASE("zero weights give an all-zero score map") {
        DiscriminatorConfig cfg;
        cfg.in_channels = 4;
        cfg.base_width = 2;
        Discriminator disc(cfg, rng);
        for (const auto& [name, var] : disc.named_parameters()) var.value_ref().fill(0.0);
        Tensor pair = random_tensor({1, 4, 64, 64}, rng);
        Var score = disc.forward(Var::constant(pair));
        for (double v : score.val().v) CHECK(v == 0.0);
    }
    SUBCASE("channel mismatch rejected") {
        DiscriminatorConfig cfg;
        cfg.in_channels = 6;
        cfg.base_width = 2;
        Discriminator disc(cfg, rng);
        CHECK_THROWS_AS(disc.forward(Var::constant(Tensor({1, 4, 64, 64}))), ShapeError);
    }
}

TEST_CASE("classifier forward: row-stochastic, deterministic in eval") {
    Rng rng(5);
    Classifier clf(toy_classifier_config(), rng);
    Tensor x = random_tensor({3, 2, 32, 32}, rng);
    Rng u1(0), u2(7);
    Var p1 = clf.forward(Var::constant(x), false, u1);
    Var p2 = clf.forward(Var::constant(x), false, u2);
    REQUIRE(p1.shape() == std::vector<i64>{3, 4});
    CHECK(p1.val().v == p2.val().v);
    for (i64 r = 0; r < 3; ++r) {
        double s = 0;
        for (i64 c = 0; c < 4; ++c) s += p1.val()[r * 4 + c];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }

    // composition oracle: encoder -> ART x9 -> head
    Rng u3(0);
    Var manual = clf.encoder.forward(Var::constant(x));
    for (const auto& block : clf.art) manual = block.forward(manual);
    manual = clf.head.forward(manual, false, u3);
    CHECK(p1.val().v == manual.val().v);
}

TEST_CASE("classifier supports a 3-class head") {
    Rng rng(6);
    Classifier clf(toy_classifier_config(32, 2, 2, 3), rng);
    Tensor x = random_tensor({2, 2, 32, 32}, rng);
    Rng unused(0);
    CHECK(clf.forward(Var::constant(x), false, unused).shape() == std::vector<i64>{2, 3});
}

TEST_CASE("generator and classifier trunks agree exactly (transfer totality)") {
    Rng rng(7);
    Generator gen(toy_generator_config(), rng);
    Classifier clf(toy_classifier_config(), rng);
    std::map<std::string, std::vector<i64>> gen_trunk, clf_trunk;
    for (const auto& [name, var] : gen.named_parameters())
        if (name.rfind("encoder.", 0) == 0 || name.rfind("art.", 0) == 0)
            gen_trunk[name] = var.shape();
    for (const auto& [name, var] : clf.named_parameters())
        if (name.rfind("encoder.", 0) == 0 || name.rfind("art.", 0) == 0)
            clf_trunk[name] = var.shape();
    CHECK(gen_trunk == clf_trunk);
    CHECK(!gen_trunk.empty());
}

TEST_CASE("checkpoint round trip is bit-identical") {
    Rng rng(8);
    Generator gen(toy_generator_config(), rng);
    Checkpoint ckpt = snapshot_params(gen.named_parameters(),
                                      {{"kind", "generator"}, {"seed", 123}, {"step", 7}});
    const auto tmp = std::filesystem::temp_directory_path() / "resvit_test_ckpt.rvckpt";
    save_checkpoint(tmp, ckpt);
    Checkpoint loaded = load_checkpoint(tmp);
    REQUIRE(loaded.tensors.size() == ckpt.tensors.size());
    for (const auto& [name, tensor] : ckpt.tensors) {
        REQUIRE(loaded.tensors.count(name) == 1);
        CHECK(loaded.tensors.at(name).shape == tensor.shape);
        CHECK(loaded.tensors.at(name).v == tensor.v);  // bit-exact doubles
    }
    CHECK(loaded.manifest.at("seed").get<int>() == 123);
    CHECK(loaded.manifest.at("step").get<int>() == 7);
    std::filesystem::remove(tmp);
}

TEST_CASE("corrupt checkpoint reports the offending section") {
    Rng rng(9);
    Generator gen(toy_generator_config(), rng);
    Checkpoint ckpt = snapshot_params(gen.named_parameters(), {{"kind", "generator"}});
    const auto tmp = std::filesystem::temp_directory_path() / "resvit_test_corrupt.rvckpt";
    save_checkpoint(tmp, ckpt);

    SUBCASE("truncated file") {
        auto size = std::filesystem::file_size(tmp);
        std::filesystem::resize_file(tmp, size / 2);
        CHECK_THROWS_AS(load_checkpoint(tmp), DataError);
    }
    SUBCASE("flipped payload byte fails the digest") {
        std::fstream f(tmp, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(200);
        char c;
        f.seekg(200);
        f.get(c);
        f.seekp(200);
        f.put(static_cast<char>(c ^ 0x40));
        f.close();
        CHECK_THROWS_WITH_AS(load_checkpoint(tmp), doctest::Contains("digest"), DataError);
    }
    std::filesystem::remove(tmp);
}

TEST_CASE("cross-config load reports a shape mismatch") {
    Rng rng(10);
    Generator small(toy_generator_config(32, 2, 2), rng);
    Generator wide(toy_generator_config(32, 2, 4), rng);
    Checkpoint ckpt = snapshot_params(small.named_parameters(), {});
    CHECK_THROWS_WITH_AS(restore_params(ckpt, wide.named_parameters()),
                         doctest::Contains("shape mismatch"), DataError);
}

TEST_CASE("weight transfer") {
    Rng rng(11);
    Generator gen(toy_generator_config(), rng);
    Classifier clf(toy_classifier_config(), rng);
    Checkpoint src = snapshot_params(gen.named_parameters(), {{"kind", "generator"}});

    SUBCASE("trunk tensors copied bit-identically; head left fresh") {
        NamedParams before = clf.named_parameters();
        std::map<std::string, Tensor> head_before;
        for (const auto& [name, var] : before)
            if (name.rfind("head.", 0) == 0) head_before[name] = var.val();

        TransferReport report = transfer_weights(src, clf);

        std::uint64_t src_sum = 0, dst_sum = 0;
        for (const auto& [name, tensor] : src.tensors)
            if (name.rfind("encoder.", 0) == 0 || name.rfind("art.", 0) == 0)
                src_sum ^= tensor_digest(tensor) * fnv1a(name.data(), name.size());
        for (const auto& [name, var] : clf.named_parameters())
            if (name.rfind("encoder.", 0) == 0 || name.rfind("art.", 0) == 0)
                dst_sum ^= tensor_digest(var.val()) * fnv1a(name.data(), name.size());
        CHECK(src_sum == dst_sum);

        for (const auto& [name, var] : clf.named_parameters())
            if (name.rfind("head.", 0) == 0) CHECK(var.val().v == head_before.at(name).v);

        i64 expect_transferred = 0, expect_skipped = 0;
        for (const auto& [name, tensor] : src.tensors) {
            if (name.rfind("encoder.", 0) == 0 || name.rfind("art.", 0) == 0)
                ++expect_transferred;
            else
                ++expect_skipped;  // decoder.*
        }
        CHECK(static_cast<i64>(report.transferred.size()) == expect_transferred);
        CHECK(static_cast<i64>(report.skipped.size()) == expect_skipped);
        for (const auto& name : report.skipped) CHECK(name.rfind("decoder.", 0) == 0);
        for (const auto& name : report.fresh) CHECK(name.rfind("head.", 0) == 0);
    }

    SUBCASE("shared-trunk activations agree after transfer") {
        transfer_weights(src, clf);
        Tensor x = random_tensor({1, 2, 32, 32}, rng);
        Var a = gen.bottleneck(Var::constant(x));
        Var b = clf.bottleneck(Var::constant(x));
        REQUIRE(a.shape() == b.shape());
        for (i64 i = 0; i < a.val().numel(); ++i)
            CHECK(a.val()[i] == doctest::Approx(b.val()[i]).epsilon(1e-9));
    }

    SUBCASE("transfer is idempotent") {
        transfer_weights(src, clf);
        std::map<std::string, Tensor> once;
        for (const auto& [name, var] : clf.named_parameters()) once[name] = var.val();
        transfer_weights(src, clf);
        for (const auto& [name, var] : clf.named_parameters())
            CHECK(var.val().v == once.at(name).v);
    }

    SUBCASE("missing trunk tensor aborts before any copy") {
        Checkpoint broken = src;
        broken.tensors.erase(broken.tensors.find("art.3.res.conv1.w"));
        std::map<std::string, Tensor> before;
        for (const auto& [name, var] : clf.named_parameters()) before[name] = var.val();
        CHECK_THROWS_WITH_AS(transfer_weights(broken, clf),
                             doctest::Contains("art.3.res.conv1.w"), DataError);
        for (const auto& [name, var] : clf.named_parameters())
            CHECK(var.val().v == before.at(name).v);  // no partial transfer
    }

    SUBCASE("config mismatch is a named shape error") {
        Classifier wide(toy_classifier_config(32, 2, 4), rng);
        CHECK_THROWS_WITH_AS(transfer_weights(src, wide), doctest::Contains("shape mismatch"),
                             DataError);
    }
}
