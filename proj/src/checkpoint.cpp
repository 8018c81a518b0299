#include "resvit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "resvit/rng.hpp"

namespace resvit {

namespace {

constexpr char kMagic[8] = {'R', 'V', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint8_t kDtypeF64 = 1;

void put_u64(std::string& out, std::uint64_t x) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    std::string where{};

    void need(std::size_t n, const std::string& section) {
        where = section;
        if (pos + n > buf.size())
            throw DataError("checkpoint: truncated file in section '" + section + "'");
    }
    std::uint64_t u64(const std::string& section) {
        need(8, section);
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i)
            x |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return x;
    }
    std::uint32_t u32(const std::string& section) {
        need(4, section);
        std::uint32_t x = 0;
        for (int i = 0; i < 4; ++i)
            x |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return x;
    }
    std::uint8_t u8(const std::string& section) {
        need(1, section);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::string bytes(std::size_t n, const std::string& section) {
        need(n, section);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

std::uint64_t tensor_digest(const Tensor& t) {
    std::uint64_t h = fnv1a(t.shape.data(), t.shape.size() * sizeof(i64));
    return fnv1a(t.v.data(), t.v.size() * sizeof(double), h);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::string out;
    out.append(kMagic, sizeof kMagic);
    const std::string manifest = ckpt.manifest.dump();
    put_u64(out, manifest.size());
    out += manifest;
    put_u64(out, ckpt.tensors.size());
    std::uint64_t digest = 0xcbf29ce484222325ULL;
    for (const auto& [name, tensor] : ckpt.tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(kDtypeF64));
        out.push_back(static_cast<char>(tensor.shape.size()));
        for (i64 d : tensor.shape) put_u64(out, static_cast<std::uint64_t>(d));
        for (double x : tensor.v) put_f64(out, x);
        digest = fnv1a(name.data(), name.size(), digest);
        digest = fnv1a(tensor.v.data(), tensor.v.size() * sizeof(double), digest);
    }
    put_u64(out, digest);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("checkpoint: cannot open '" + path.string() + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("checkpoint: write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open '" + path.string() + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf};
    const std::string magic = r.bytes(sizeof kMagic, "magic");
    if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0)
        throw DataError("checkpoint: bad magic in '" + path.string() + "'");

    Checkpoint ckpt;
    const std::uint64_t mlen = r.u64("manifest length");
    const std::string mjson = r.bytes(mlen, "manifest");
    ckpt.manifest = nlohmann::json::parse(mjson, nullptr, false);
    if (ckpt.manifest.is_discarded())
        throw DataError("checkpoint: corrupt manifest JSON in '" + path.string() + "'");

    const std::uint64_t count = r.u64("tensor count");
    std::uint64_t digest = 0xcbf29ce484222325ULL;
    for (std::uint64_t t = 0; t < count; ++t) {
        const std::uint32_t nlen = r.u32("tensor name length");
        const std::string name = r.bytes(nlen, "tensor name");
        const std::uint8_t dtype = r.u8("tensor '" + name + "' dtype");
        if (dtype != kDtypeF64)
            throw DataError("checkpoint: unsupported dtype for tensor '" + name + "'");
        const std::uint8_t ndim = r.u8("tensor '" + name + "' rank");
        std::vector<i64> shape(ndim);
        for (auto& d : shape) d = static_cast<i64>(r.u64("tensor '" + name + "' shape"));
        Tensor tensor(shape);
        const std::string section = "tensor '" + name + "' data";
        r.need(tensor.v.size() * 8, section);
        for (double& x : tensor.v) {
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i)
                bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[r.pos + i]))
                        << (8 * i);
            r.pos += 8;
            x = std::bit_cast<double>(bits);
        }
        digest = fnv1a(name.data(), name.size(), digest);
        digest = fnv1a(tensor.v.data(), tensor.v.size() * sizeof(double), digest);
        ckpt.tensors.emplace(name, std::move(tensor));
    }
    const std::uint64_t stored = r.u64("digest");
    if (stored != digest)
        throw DataError("checkpoint: digest mismatch in '" + path.string() +
                        "' (payload corrupted)");
    return ckpt;
}

Checkpoint snapshot_params(const NamedParams& params, nlohmann::json manifest) {
    Checkpoint ckpt;
    ckpt.manifest = std::move(manifest);
    for (const auto& [name, var] : params) {
        auto [it, inserted] = ckpt.tensors.emplace(name, var.val());
        if (!inserted) throw DataError("checkpoint: duplicate parameter name '" + name + "'");
    }
    return ckpt;
}

void restore_params(const Checkpoint& ckpt, const NamedParams& params) {
    for (const auto& [name, var] : params) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end())
            throw DataError("checkpoint: missing tensor '" + name + "'");
        if (it->second.shape != var.shape())
            throw DataError("checkpoint: shape mismatch for '" + name + "': file has " +
                            shape_str(it->second.shape) + ", model expects " +
                            shape_str(var.shape()));
    }
    for (const auto& [name, var] : params)
        var.value_ref() = ckpt.tensors.at(name);
}

TransferReport transfer_weights(const Checkpoint& src, Classifier& dst) {
    const NamedParams params = dst.named_parameters();

    auto is_trunk = [](const std::string& name) {
        return name.rfind("encoder.", 0) == 0 || name.rfind("art.", 0) == 0;
    };

    // Validate the whole trunk before touching anything.
    for (const auto& [name, var] : params) {
        if (!is_trunk(name)) continue;
        auto it = src.tensors.find(name);
        if (it == src.tensors.end())
            throw DataError("transfer: checkpoint is missing tensor '" + name + "'");
        if (it->second.shape != var.shape())
            throw DataError("transfer: shape mismatch for '" + name + "': checkpoint has " +
                            shape_str(it->second.shape) + ", classifier expects " +
                            shape_str(var.shape()));
    }

    TransferReport report;
    for (const auto& [name, var] : params) {
        if (is_trunk(name)) {
            var.value_ref() = src.tensors.at(name);
            report.transferred.push_back(name);
        } else {
            report.fresh.push_back(name);
        }
    }
    for (const auto& [name, tensor] : src.tensors) {
        (void)tensor;
        if (is_trunk(name)) continue;
        if (name.rfind("opt.", 0) == 0) continue;  // optimizer state, not a model tensor
        report.skipped.push_back(name);
    }
    return report;
}

}  // namespace resvit
