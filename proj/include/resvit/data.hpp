#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "resvit/image.hpp"

namespace resvit {

enum class Sequence { T1, T2, FLAIR };
enum class ClassLabel { no_tumor, glioma, meningioma, pituitary };
enum class Provenance { real, synthetic };
enum class Split { train, test };

std::string to_string(Sequence s);
std::string to_string(ClassLabel c);
std::string to_string(Provenance p);
std::string to_string(Split s);
Sequence sequence_from_string(const std::string& s);
ClassLabel class_from_string(const std::string& s);
Provenance provenance_from_string(const std::string& s);
Split split_from_string(const std::string& s);

// 3D scalar grid stored x-fastest: index = x + nx*(y + ny*z). Axial slice z is
// therefore one contiguous nx*ny block.
struct Volume {
    i64 nx = 0, ny = 0, nz = 0;
    std::vector<float> voxels;

    i64 numel() const { return nx * ny * nz; }
    float at(i64 x, i64 y, i64 z) const {
        return voxels[static_cast<std::size_t>(x + nx * (y + ny * z))];
    }
};

struct SegVolume {
    i64 nx = 0, ny = 0, nz = 0;
    std::vector<std::int32_t> labels;

    i64 numel() const { return nx * ny * nz; }
    std::int32_t at(i64 x, i64 y, i64 z) const {
        return labels[static_cast<std::size_t>(x + nx * (y + ny * z))];
    }
};

// One 3D acquisition with optional segmentation and case metadata.
struct VolumeRecord {
    std::string case_id;
    Sequence sequence = Sequence::T1;
    Volume voxels;
    std::optional<SegVolume> seg;
    ClassLabel class_label = ClassLabel::no_tumor;

    void validate() const;  // seg shape matches, labels nonnegative, nz >= 1
};

// One normalized 2D training/eval image. `pixels` may be empty for
// metadata-only manifest rows; `path` then locates the float32 container.
struct SliceRecord {
    std::string case_id;
    Sequence sequence = Sequence::T1;
    ClassLabel class_label = ClassLabel::no_tumor;
    Provenance provenance = Provenance::real;
    std::optional<i64> slice_index;
    std::string path;
    Image pixels;
};

struct DatasetManifest {
    std::string name;
    Split split = Split::train;
    std::vector<SliceRecord> records;

    std::map<ClassLabel, i64> per_class_counts() const;
};

// Per-axial-slice count of nonzero segmentation voxels (length nz).
std::vector<i64> tumor_coverage(const SegVolume& seg);

// Indices of the k slices with largest coverage, descending; ties take the
// lower slice index. Requires at least k slices with positive coverage.
std::vector<i64> select_tumor_slices(const VolumeRecord& volume, i64 k);

// Among zero-coverage slices, the k closest to floor(nz/2); ties take the
// lower index. Requires at least k zero-coverage slices.
std::vector<i64> select_healthy_slices(const VolumeRecord& volume, i64 k);

Image extract_axial_slice(const Volume& volume, i64 z);

// Bilinear resize to target x target, then per-slice min-max mapping onto
// [-1,1]; constant slices map to all -1.
Image normalize_slice(const Image& raw, i64 target = 256);

// Deterministic stratified split: records are canonically sorted, shuffled
// per class with a seed-derived stream, and the first round(fraction*N) of
// each class go to train.
std::pair<DatasetManifest, DatasetManifest> split_dataset(const std::vector<SliceRecord>& records,
                                                          double train_fraction,
                                                          std::uint64_t seed,
                                                          const std::string& name = "dataset");

using SliceSynthesizer = std::function<Image(const SliceRecord& source)>;
using PairedSourceLookup = std::function<const SliceRecord*(const SliceRecord& target)>;

// Appends one synthetic record per tumor-class training record, synthesized
// from the record's paired source-sequence slice. Real records are preserved
// untouched; missing pairs abort with the offending case ids.
DatasetManifest build_augmented(const DatasetManifest& train, const SliceSynthesizer& synthesize,
                                const std::set<ClassLabel>& tumor_classes,
                                const PairedSourceLookup& paired_source);

}  // namespace resvit
