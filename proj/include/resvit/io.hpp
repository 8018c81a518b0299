#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "resvit/data.hpp"
#include "resvit/tensor.hpp"

namespace resvit {

namespace fs = std::filesystem;

// ---- raw little-endian containers ----
void write_f32(const fs::path& path, const std::vector<float>& values);
std::vector<float> read_f32(const fs::path& path);
void write_i32(const fs::path& path, const std::vector<std::int32_t>& values);
std::vector<std::int32_t> read_i32(const fs::path& path);

// ---- volume containers ----
// A volume is <stem>.f32 (raw little-endian float32, x fastest) plus a JSON
// sidecar <stem>.json with fields {case_id, sequence, shape [X,Y,Z],
// seg_path?, class_label}; seg_path points at a raw little-endian int32 file
// of the same shape.
void write_volume(const fs::path& sidecar_path, const VolumeRecord& volume);
VolumeRecord read_volume(const fs::path& sidecar_path);

// ---- slice containers ----
// Raw float32 row-major pixels; height/width live in the manifest record.
void write_slice_pixels(const fs::path& path, const Image& img);
Image read_slice_pixels(const fs::path& path, i64 h, i64 w);

// 8-bit grayscale PNG for visual inspection; v in [-1,1] maps to
// round((v+1)*127.5) clamped to [0,255].
void write_png_gray8(const fs::path& path, const Image& img);

// ---- manifests ----
// JSON record descriptors with paths relative to the manifest's directory.
void save_manifest(const fs::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const fs::path& path);
Image load_record_pixels(const fs::path& manifest_dir, const SliceRecord& record);
// Loads pixel payloads for every record (relative to the manifest location).
void load_all_pixels(const fs::path& manifest_path, DatasetManifest& manifest);

// ---- debug dumps ----
// JSON index + one float32 blob per named tensor.
void dump_named_tensors(const fs::path& dir, const std::vector<std::pair<std::string, Tensor>>& tensors);

nlohmann::json load_json_file(const fs::path& path);
void save_json_file(const fs::path& path, const nlohmann::json& j);

}  // namespace resvit
