#include "resvit/io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace resvit {

namespace {

std::string read_file_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path.string() + "'");
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file_bytes(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write failed for '" + path.string() + "'");
}

template <typename T>
std::string pack_le(const std::vector<T>& values) {
    static_assert(sizeof(T) == 4);
    std::string out;
    out.reserve(values.size() * 4);
    for (T v : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
    return out;
}

template <typename T>
std::vector<T> unpack_le(const std::string& bytes, const fs::path& path) {
    static_assert(sizeof(T) == 4);
    if (bytes.size() % 4 != 0)
        throw DataError("file '" + path.string() + "' is not a whole number of 4-byte values");
    std::vector<T> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + k]))
                    << (8 * k);
        std::memcpy(&out[i], &bits, 4);
    }
    return out;
}

}  // namespace

void write_f32(const fs::path& path, const std::vector<float>& values) {
    write_file_bytes(path, pack_le(values));
}

std::vector<float> read_f32(const fs::path& path) {
    return unpack_le<float>(read_file_bytes(path), path);
}

void write_i32(const fs::path& path, const std::vector<std::int32_t>& values) {
    write_file_bytes(path, pack_le(values));
}

std::vector<std::int32_t> read_i32(const fs::path& path) {
    return unpack_le<std::int32_t>(read_file_bytes(path), path);
}

nlohmann::json load_json_file(const fs::path& path) {
    auto j = nlohmann::json::parse(read_file_bytes(path), nullptr, false);
    if (j.is_discarded()) throw DataError("malformed JSON in '" + path.string() + "'");
    return j;
}

void save_json_file(const fs::path& path, const nlohmann::json& j) {
    write_file_bytes(path, j.dump(2) + "\n");
}

void write_volume(const fs::path& sidecar_path, const VolumeRecord& volume) {
    volume.validate();
    fs::path voxel_path = sidecar_path;
    voxel_path.replace_extension(".f32");
    std::vector<float> raw(volume.voxels.voxels.begin(), volume.voxels.voxels.end());
    write_f32(voxel_path, raw);

    nlohmann::json sidecar = {
        {"case_id", volume.case_id},
        {"sequence", to_string(volume.sequence)},
        {"shape", {volume.voxels.nx, volume.voxels.ny, volume.voxels.nz}},
        {"class_label", to_string(volume.class_label)},
    };
    if (volume.seg) {
        const std::string seg_name = sidecar_path.stem().string() + "_seg.i32";
        sidecar["seg_path"] = seg_name;
        write_i32(sidecar_path.parent_path() / seg_name, volume.seg->labels);
    }
    save_json_file(sidecar_path, sidecar);
}

VolumeRecord read_volume(const fs::path& sidecar_path) {
    nlohmann::json sidecar;
    try {
        sidecar = load_json_file(sidecar_path);
    } catch (const DataError& e) {
        throw DataError("volume sidecar '" + sidecar_path.string() + "': " + e.what());
    }
    for (const char* key : {"case_id", "sequence", "shape", "class_label"})
        if (!sidecar.contains(key))
            throw DataError("volume sidecar '" + sidecar_path.string() + "': missing field '" +
                            key + "'");
    VolumeRecord rec;
    rec.case_id = sidecar.at("case_id").get<std::string>();
    rec.sequence = sequence_from_string(sidecar.at("sequence").get<std::string>());
    rec.class_label = class_from_string(sidecar.at("class_label").get<std::string>());
    const auto shape = sidecar.at("shape");
    if (!shape.is_array() || shape.size() != 3)
        throw DataError("volume sidecar '" + sidecar_path.string() + "': shape must be [X,Y,Z]");
    rec.voxels.nx = shape[0].get<i64>();
    rec.voxels.ny = shape[1].get<i64>();
    rec.voxels.nz = shape[2].get<i64>();

    fs::path voxel_path = sidecar_path;
    voxel_path.replace_extension(".f32");
    rec.voxels.voxels = read_f32(voxel_path);
    if (static_cast<i64>(rec.voxels.voxels.size()) != rec.voxels.numel())
        throw DataError("volume '" + voxel_path.string() + "': voxel count " +
                        std::to_string(rec.voxels.voxels.size()) + " does not match shape");

    if (sidecar.contains("seg_path")) {
        SegVolume seg;
        seg.nx = rec.voxels.nx;
        seg.ny = rec.voxels.ny;
        seg.nz = rec.voxels.nz;
        const fs::path seg_path =
            sidecar_path.parent_path() / sidecar.at("seg_path").get<std::string>();
        seg.labels = read_i32(seg_path);
        if (static_cast<i64>(seg.labels.size()) != seg.numel())
            throw DataError("segmentation '" + seg_path.string() +
                            "': label count does not match volume shape");
        rec.seg = std::move(seg);
    }
    rec.validate();
    return rec;
}

void write_slice_pixels(const fs::path& path, const Image& img) {
    std::vector<float> raw(img.px.begin(), img.px.end());
    write_f32(path, raw);
}

Image read_slice_pixels(const fs::path& path, i64 h, i64 w) {
    const std::vector<float> raw = read_f32(path);
    if (static_cast<i64>(raw.size()) != h * w)
        throw DataError("slice '" + path.string() + "': expected " + std::to_string(h * w) +
                        " pixels, found " + std::to_string(raw.size()));
    Image img(h, w);
    for (std::size_t i = 0; i < raw.size(); ++i) img.px[i] = static_cast<double>(raw[i]);
    return img;
}

// ---- minimal PNG writer (8-bit grayscale, stored deflate blocks) ----

namespace {

std::uint32_t crc32_of(const std::string& bytes) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t n = 0; n < 256; ++n) {
            std::uint32_t c = n;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[n] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xffffffffu;
    for (unsigned char ch : bytes) c = table[(c ^ ch) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

std::uint32_t adler32_of(const std::string& bytes) {
    std::uint32_t a = 1, b = 0;
    for (unsigned char ch : bytes) {
        a = (a + ch) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

void put_be32(std::string& out, std::uint32_t x) {
    out.push_back(static_cast<char>((x >> 24) & 0xff));
    out.push_back(static_cast<char>((x >> 16) & 0xff));
    out.push_back(static_cast<char>((x >> 8) & 0xff));
    out.push_back(static_cast<char>(x & 0xff));
}

void put_chunk(std::string& out, const char type[4], const std::string& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    std::string body(type, 4);
    body += data;
    out += body;
    put_be32(out, crc32_of(body));
}

}  // namespace

void write_png_gray8(const fs::path& path, const Image& img) {
    if (img.h < 1 || img.w < 1) throw DataError("png export: empty image");

    std::string raw;  // filter byte 0 + row per scanline
    raw.reserve(static_cast<std::size_t>(img.h * (img.w + 1)));
    for (i64 y = 0; y < img.h; ++y) {
        raw.push_back('\0');
        for (i64 x = 0; x < img.w; ++x) {
            const double v = std::lround((img.at(y, x) + 1.0) * 127.5);
            const double c = std::min(255.0, std::max(0.0, v));
            raw.push_back(static_cast<char>(static_cast<unsigned char>(c)));
        }
    }

    // zlib stream with stored (uncompressed) deflate blocks.
    std::string z;
    z.push_back('\x78');
    z.push_back('\x01');
    std::size_t pos = 0;
    while (pos < raw.size() || raw.empty()) {
        const std::size_t len = std::min<std::size_t>(65535, raw.size() - pos);
        const bool final = pos + len == raw.size();
        z.push_back(final ? '\x01' : '\x00');
        z.push_back(static_cast<char>(len & 0xff));
        z.push_back(static_cast<char>((len >> 8) & 0xff));
        z.push_back(static_cast<char>(~len & 0xff));
        z.push_back(static_cast<char>((~len >> 8) & 0xff));
        z.append(raw, pos, len);
        pos += len;
        if (final) break;
    }
    put_be32(z, adler32_of(raw));

    std::string png("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(img.w));
    put_be32(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.push_back(8);     // bit depth
    ihdr.push_back(0);     // grayscale
    ihdr.push_back(0);     // compression
    ihdr.push_back(0);     // filter
    ihdr.push_back(0);     // no interlace
    put_chunk(png, "IHDR", ihdr);
    put_chunk(png, "IDAT", z);
    put_chunk(png, "IEND", "");
    write_file_bytes(path, png);
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : manifest.records) {
        nlohmann::json row = {
            {"case_id", r.case_id},
            {"sequence", to_string(r.sequence)},
            {"class_label", to_string(r.class_label)},
            {"provenance", to_string(r.provenance)},
            {"path", r.path},
            {"height", r.pixels.h},
            {"width", r.pixels.w},
        };
        if (r.slice_index) row["slice_index"] = *r.slice_index;
        if (r.pixels.h == 0 && !r.path.empty()) {
            // metadata-only record: dims unknown here would break loading
            throw DataError("save_manifest: record '" + r.case_id +
                            "' has a path but no pixel dimensions");
        }
        records.push_back(std::move(row));
    }
    nlohmann::json j = {{"name", manifest.name},
                        {"split", to_string(manifest.split)},
                        {"records", std::move(records)}};
    save_json_file(path, j);
}

DatasetManifest load_manifest(const fs::path& path) {
    const nlohmann::json j = load_json_file(path);
    for (const char* key : {"name", "split", "records"})
        if (!j.contains(key))
            throw DataError("manifest '" + path.string() + "': missing field '" + key + "'");
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.split = split_from_string(j.at("split").get<std::string>());
    for (const auto& row : j.at("records")) {
        SliceRecord r;
        r.case_id = row.at("case_id").get<std::string>();
        r.sequence = sequence_from_string(row.at("sequence").get<std::string>());
        r.class_label = class_from_string(row.at("class_label").get<std::string>());
        r.provenance = provenance_from_string(row.at("provenance").get<std::string>());
        r.path = row.at("path").get<std::string>();
        if (row.contains("slice_index")) r.slice_index = row.at("slice_index").get<i64>();
        r.pixels.h = row.at("height").get<i64>();
        r.pixels.w = row.at("width").get<i64>();
        r.pixels.px.clear();  // dims recorded, payload loaded on demand
        m.records.push_back(std::move(r));
    }
    return m;
}

Image load_record_pixels(const fs::path& manifest_dir, const SliceRecord& record) {
    if (record.path.empty())
        throw DataError("record '" + record.case_id + "' has no pixel path");
    return read_slice_pixels(manifest_dir / record.path, record.pixels.h, record.pixels.w);
}

void load_all_pixels(const fs::path& manifest_path, DatasetManifest& manifest) {
    const fs::path dir = manifest_path.parent_path();
    for (auto& r : manifest.records) {
        if (!r.pixels.px.empty()) continue;
        r.pixels = load_record_pixels(dir, r);
    }
}

void dump_named_tensors(const fs::path& dir,
                        const std::vector<std::pair<std::string, Tensor>>& tensors) {
    fs::create_directories(dir);
    nlohmann::json index = nlohmann::json::array();
    int i = 0;
    for (const auto& [name, tensor] : tensors) {
        const std::string file = "blob_" + std::to_string(i++) + ".f32";
        std::vector<float> raw(tensor.v.begin(), tensor.v.end());
        write_f32(dir / file, raw);
        index.push_back({{"name", name}, {"shape", tensor.shape}, {"file", file}});
    }
    save_json_file(dir / "index.json", index);
}

}  // namespace resvit
