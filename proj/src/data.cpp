#include "resvit/data.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "resvit/rng.hpp"

namespace resvit {

std::string to_string(Sequence s) {
    switch (s) {
        case Sequence::T1: return "T1";
        case Sequence::T2: return "T2";
        case Sequence::FLAIR: return "FLAIR";
    }
    return "T1";
}

std::string to_string(ClassLabel c) {
    switch (c) {
        case ClassLabel::no_tumor: return "no_tumor";
        case ClassLabel::glioma: return "glioma";
        case ClassLabel::meningioma: return "meningioma";
        case ClassLabel::pituitary: return "pituitary";
    }
    return "no_tumor";
}

std::string to_string(Provenance p) { return p == Provenance::real ? "real" : "synthetic"; }

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Sequence sequence_from_string(const std::string& s) {
    if (s == "T1") return Sequence::T1;
    if (s == "T2") return Sequence::T2;
    if (s == "FLAIR") return Sequence::FLAIR;
    throw DataError("unknown sequence '" + s + "'");
}

ClassLabel class_from_string(const std::string& s) {
    if (s == "no_tumor") return ClassLabel::no_tumor;
    if (s == "glioma") return ClassLabel::glioma;
    if (s == "meningioma") return ClassLabel::meningioma;
    if (s == "pituitary") return ClassLabel::pituitary;
    throw DataError("unknown class label '" + s + "'");
}

Provenance provenance_from_string(const std::string& s) {
    if (s == "real") return Provenance::real;
    if (s == "synthetic") return Provenance::synthetic;
    throw DataError("unknown provenance '" + s + "'");
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw DataError("unknown split '" + s + "'");
}

void VolumeRecord::validate() const {
    if (voxels.nx < 1 || voxels.ny < 1 || voxels.nz < 1)
        throw DataError("volume '" + case_id + "': empty voxel grid");
    if (static_cast<i64>(voxels.voxels.size()) != voxels.numel())
        throw DataError("volume '" + case_id + "': voxel buffer does not match shape");
    if (seg) {
        if (seg->nx != voxels.nx || seg->ny != voxels.ny || seg->nz != voxels.nz)
            throw DataError("volume '" + case_id + "': segmentation shape differs from voxels");
        for (std::int32_t v : seg->labels)
            if (v < 0) throw DataError("volume '" + case_id + "': negative segmentation label");
    }
}

std::map<ClassLabel, i64> DatasetManifest::per_class_counts() const {
    std::map<ClassLabel, i64> counts;
    for (const auto& r : records) counts[r.class_label]++;
    return counts;
}

std::vector<i64> tumor_coverage(const SegVolume& seg) {
    if (seg.numel() == 0 || seg.labels.empty()) throw DataError("tumor_coverage: empty volume");
    std::vector<i64> counts(static_cast<std::size_t>(seg.nz), 0);
    const i64 plane = seg.nx * seg.ny;
    for (i64 z = 0; z < seg.nz; ++z) {
        i64 c = 0;
        const std::int32_t* p = seg.labels.data() + z * plane;
        for (i64 i = 0; i < plane; ++i)
            if (p[i] != 0) ++c;
        counts[static_cast<std::size_t>(z)] = c;
    }
    return counts;
}

std::vector<i64> select_tumor_slices(const VolumeRecord& volume, i64 k) {
    if (!volume.seg)
        throw DataError("select_tumor_slices: volume '" + volume.case_id +
                        "' has no segmentation");
    if (k < 1) throw ConfigError("select_tumor_slices: k must be >= 1");
    const std::vector<i64> coverage = tumor_coverage(*volume.seg);
    std::vector<i64> candidates;
    for (i64 z = 0; z < static_cast<i64>(coverage.size()); ++z)
        if (coverage[static_cast<std::size_t>(z)] > 0) candidates.push_back(z);
    if (static_cast<i64>(candidates.size()) < k)
        throw DataError("select_tumor_slices: volume '" + volume.case_id + "' has only " +
                        std::to_string(candidates.size()) + " slices with tumor coverage, need " +
                        std::to_string(k));
    std::stable_sort(candidates.begin(), candidates.end(), [&](i64 a, i64 b) {
        const i64 ca = coverage[static_cast<std::size_t>(a)];
        const i64 cb = coverage[static_cast<std::size_t>(b)];
        if (ca != cb) return ca > cb;
        return a < b;
    });
    candidates.resize(static_cast<std::size_t>(k));
    return candidates;
}

std::vector<i64> select_healthy_slices(const VolumeRecord& volume, i64 k) {
    if (!volume.seg)
        throw DataError("select_healthy_slices: volume '" + volume.case_id +
                        "' has no segmentation");
    if (k < 1) throw ConfigError("select_healthy_slices: k must be >= 1");
    const std::vector<i64> coverage = tumor_coverage(*volume.seg);
    const i64 nz = static_cast<i64>(coverage.size());
    const i64 center = nz / 2;
    std::vector<i64> candidates;
    for (i64 z = 0; z < nz; ++z)
        if (coverage[static_cast<std::size_t>(z)] == 0) candidates.push_back(z);
    if (static_cast<i64>(candidates.size()) < k)
        throw DataError("select_healthy_slices: volume '" + volume.case_id + "' has only " +
                        std::to_string(candidates.size()) + " tumor-free slices, need " +
                        std::to_string(k));
    std::stable_sort(candidates.begin(), candidates.end(), [&](i64 a, i64 b) {
        const i64 da = std::abs(a - center), db = std::abs(b - center);
        if (da != db) return da < db;
        return a < b;
    });
    candidates.resize(static_cast<std::size_t>(k));
    return candidates;
}

Image extract_axial_slice(const Volume& volume, i64 z) {
    if (z < 0 || z >= volume.nz)
        throw DataError("extract_axial_slice: slice " + std::to_string(z) +
                        " outside volume depth " + std::to_string(volume.nz));
    Image img(volume.ny, volume.nx);
    const i64 plane = volume.nx * volume.ny;
    for (i64 i = 0; i < plane; ++i)
        img.px[static_cast<std::size_t>(i)] =
            static_cast<double>(volume.voxels[static_cast<std::size_t>(z * plane + i)]);
    return img;
}

Image normalize_slice(const Image& raw, i64 target) {
    if (raw.h < 1 || raw.w < 1) throw DataError("normalize_slice: empty input");
    for (double v : raw.px)
        if (!std::isfinite(v)) throw NumericError("normalize_slice: non-finite input value");
    Image img = (raw.h == target && raw.w == target) ? raw : bilinear_resize(raw, target, target);
    double lo = img.px[0], hi = img.px[0];
    for (double v : img.px) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi == lo) {
        for (double& v : img.px) v = -1.0;
        return img;
    }
    const double s = 2.0 / (hi - lo);
    for (double& v : img.px) v = (v - lo) * s - 1.0;
    return img;
}

namespace {

// Canonical record identity; the split must not depend on input order.
std::tuple<std::string, int, i64, int, std::string> sort_key(const SliceRecord& r) {
    return {r.case_id, static_cast<int>(r.sequence), r.slice_index.value_or(-1),
            static_cast<int>(r.provenance), r.path};
}

}  // namespace

std::pair<DatasetManifest, DatasetManifest> split_dataset(const std::vector<SliceRecord>& records,
                                                          double train_fraction,
                                                          std::uint64_t seed,
                                                          const std::string& name) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("split_dataset: train fraction must be in (0,1)");
    if (records.empty()) throw DataError("split_dataset: no records");

    std::vector<const SliceRecord*> sorted;
    sorted.reserve(records.size());
    for (const auto& r : records) sorted.push_back(&r);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const SliceRecord* a, const SliceRecord* b) {
                         return sort_key(*a) < sort_key(*b);
                     });

    // The split unit is the slice: all sequences of one (case, slice) move
    // together, otherwise synthesis pairs would straddle the train/test
    // boundary. With one sequence per slice this reduces to per-record.
    std::map<ClassLabel, std::vector<std::vector<const SliceRecord*>>> by_class;
    {
        std::map<std::tuple<int, std::string, i64>, std::vector<const SliceRecord*>> groups;
        for (const SliceRecord* r : sorted)
            groups[{static_cast<int>(r->class_label), r->case_id, r->slice_index.value_or(-1)}]
                .push_back(r);
        for (auto& [key, members] : groups)
            by_class[static_cast<ClassLabel>(std::get<0>(key))].push_back(std::move(members));
    }
    for (const auto& [label, groups] : by_class) {
        std::size_t records = 0;
        for (const auto& g : groups) records += g.size();
        if (records < 2)
            throw DataError("split_dataset: class '" + to_string(label) + "' has only " +
                            std::to_string(records) + " record(s), need at least 2");
    }

    DatasetManifest train{name + "_train", Split::train, {}};
    DatasetManifest test{name + "_test", Split::test, {}};
    for (auto& [label, groups] : by_class) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label)));
        rng.shuffle(groups);
        const i64 n = static_cast<i64>(groups.size());
        const i64 n_train = std::llround(train_fraction * static_cast<double>(n));
        for (i64 i = 0; i < n; ++i)
            for (const SliceRecord* r : groups[static_cast<std::size_t>(i)])
                (i < n_train ? train : test).records.push_back(*r);
    }
    return {train, test};
}

DatasetManifest build_augmented(const DatasetManifest& train, const SliceSynthesizer& synthesize,
                                const std::set<ClassLabel>& tumor_classes,
                                const PairedSourceLookup& paired_source) {
    if (train.split != Split::train)
        throw DataError("build_augmented: refusing to augment a non-train manifest");
    for (ClassLabel c : tumor_classes)
        if (c != ClassLabel::glioma && c != ClassLabel::meningioma)
            throw ConfigError("build_augmented: tumor classes must be glioma/meningioma");

    std::vector<std::string> missing;
    std::vector<SliceRecord> synthetic;
    for (const auto& r : train.records) {
        if (!tumor_classes.count(r.class_label)) continue;
        const SliceRecord* source = paired_source(r);
        if (!source) {
            missing.push_back(r.case_id);
            continue;
        }
        SliceRecord s;
        s.case_id = r.case_id;
        s.sequence = r.sequence;
        s.class_label = r.class_label;
        s.provenance = Provenance::synthetic;
        s.slice_index = r.slice_index;
        s.pixels = synthesize(*source);
        synthetic.push_back(std::move(s));
    }
    if (!missing.empty()) {
        std::string list;
        for (std::size_t i = 0; i < missing.size(); ++i)
            list += (i ? ", " : "") + missing[i];
        throw DataError("build_augmented: missing paired source slice for case(s): " + list);
    }
    DatasetManifest out = train;
    out.name = train.name + "_augmented";
    for (auto& s : synthetic) out.records.push_back(std::move(s));
    return out;
}

}  // namespace resvit
