#include "resvit/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "resvit/config.hpp"
#include "resvit/io.hpp"
#include "resvit/training.hpp"

namespace resvit {

namespace {

std::string slice_filename(const SliceRecord& r) {
    return r.case_id + "_" + to_string(r.sequence) + "_" +
           (r.slice_index ? std::to_string(*r.slice_index) : std::string("x")) + "_" +
           to_string(r.provenance) + ".f32";
}

void print_count_table(const DatasetManifest& train, const DatasetManifest& test) {
    const auto tr = train.per_class_counts();
    const auto te = test.per_class_counts();
    std::set<ClassLabel> labels;
    for (const auto& [c, n] : tr) labels.insert(c);
    for (const auto& [c, n] : te) labels.insert(c);
    std::printf("%-12s %8s %8s\n", "class", "train", "test");
    i64 total_tr = 0, total_te = 0;
    for (ClassLabel c : labels) {
        const i64 a = tr.count(c) ? tr.at(c) : 0;
        const i64 b = te.count(c) ? te.at(c) : 0;
        total_tr += a;
        total_te += b;
        std::printf("%-12s %8lld %8lld\n", to_string(c).c_str(), static_cast<long long>(a),
                    static_cast<long long>(b));
    }
    std::printf("%-12s %8lld %8lld\n", "total", static_cast<long long>(total_tr),
                static_cast<long long>(total_te));
}

struct IngestOptions {
    std::string volumes_dir;
    std::string out_dir;
    i64 tumor_k = 5;
    i64 healthy_k = 5;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    i64 image_size = 256;
    bool png_export = false;
    std::string name = "dataset";
};

void cmd_ingest(const IngestOptions& opt) {
    std::vector<fs::path> sidecars;
    if (!fs::is_directory(opt.volumes_dir))
        throw DataError("ingest: '" + opt.volumes_dir + "' is not a directory");
    for (const auto& entry : fs::directory_iterator(opt.volumes_dir))
        if (entry.path().extension() == ".json") sidecars.push_back(entry.path());
    std::sort(sidecars.begin(), sidecars.end());
    if (sidecars.empty()) throw DataError("ingest: no volume sidecars in '" + opt.volumes_dir + "'");

    const fs::path out_dir(opt.out_dir);
    fs::create_directories(out_dir / "slices");

    std::vector<SliceRecord> records;
    auto add_slice = [&](const VolumeRecord& vol, i64 z, ClassLabel label) {
        SliceRecord r;
        r.case_id = vol.case_id;
        r.sequence = vol.sequence;
        r.class_label = label;
        r.provenance = Provenance::real;
        r.slice_index = z;
        r.pixels = normalize_slice(extract_axial_slice(vol.voxels, z), opt.image_size);
        r.path = "slices/" + slice_filename(r);
        write_slice_pixels(out_dir / r.path, r.pixels);
        if (opt.png_export) {
            fs::path png = out_dir / r.path;
            png.replace_extension(".png");
            write_png_gray8(png, r.pixels);
        }
        records.push_back(std::move(r));
    };

    for (const fs::path& sidecar : sidecars) {
        VolumeRecord vol = read_volume(sidecar);
        if (!vol.seg) {
            if (vol.class_label != ClassLabel::no_tumor)
                throw DataError("ingest: case '" + vol.case_id +
                                "' has a tumor label but no segmentation");
            // Tumor-free acquisitions behave as an all-zero segmentation.
            SegVolume zero;
            zero.nx = vol.voxels.nx;
            zero.ny = vol.voxels.ny;
            zero.nz = vol.voxels.nz;
            zero.labels.assign(static_cast<std::size_t>(zero.numel()), 0);
            vol.seg = std::move(zero);
        }
        const bool has_tumor = vol.class_label != ClassLabel::no_tumor;
        if (has_tumor)
            for (i64 z : select_tumor_slices(vol, opt.tumor_k)) add_slice(vol, z, vol.class_label);
        for (i64 z : select_healthy_slices(vol, opt.healthy_k))
            add_slice(vol, z, ClassLabel::no_tumor);
    }

    auto [train, test] = split_dataset(records, opt.train_fraction, opt.seed, opt.name);
    save_manifest(out_dir / (opt.name + "_train.json"), train);
    save_manifest(out_dir / (opt.name + "_test.json"), test);
    print_count_table(train, test);
    std::printf("wrote %s and %s\n", (out_dir / (opt.name + "_train.json")).c_str(),
                (out_dir / (opt.name + "_test.json")).c_str());
}

std::vector<PairedSample> load_pairs(const fs::path& manifest_path,
                                     const std::vector<Sequence>& sequences) {
    DatasetManifest m = load_manifest(manifest_path);
    load_all_pixels(manifest_path, m);
    return build_paired_samples(m, sequences);
}

void write_runlog(const fs::path& out_dir, const std::string& stem, const RunLog& log) {
    fs::create_directories(out_dir);
    save_json_file(out_dir / (stem + ".json"), log.to_json());
    std::ofstream csv(out_dir / (stem + ".csv"));
    csv << log.to_csv();
}

void cmd_pretrain(const std::string& config_path, const std::string& out_ckpt,
                  const std::string& resume_path) {
    const ExperimentConfig cfg = ExperimentConfig::load(config_path);
    const fs::path root = cfg.data_root();
    const auto train_pairs = load_pairs(root / cfg.train_manifest(), cfg.sequences());
    const auto test_pairs = load_pairs(root / cfg.test_manifest(), cfg.sequences());

    Checkpoint resume;
    const Checkpoint* resume_ptr = nullptr;
    if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        resume_ptr = &resume;
    }
    const fs::path out_dir = cfg.out_dir();
    fs::create_directories(out_dir);
    PretrainRunResult result =
        run_pretrain(train_pairs, test_pairs, cfg.generator(), cfg.discriminator(),
                     cfg.pretrain(), cfg.json(), resume_ptr, &out_dir);
    save_checkpoint(out_ckpt, result.checkpoint);
    write_runlog(out_dir, "pretrain_runlog", result.log);
    std::printf("pretrain finished: %zu steps, checkpoint at %s\n", result.log.rows.size(),
                out_ckpt.c_str());
    std::printf("%s", result.eval.to_table().c_str());
}

// Rebuilds a generator from a checkpoint's embedded experiment config.
struct RestoredGenerator {
    ExperimentConfig cfg;
    Generator gen;
    std::vector<Sequence> sequences;
    AvailabilityMask mask;
};

RestoredGenerator restore_generator(const Checkpoint& ckpt) {
    if (ckpt.manifest.value("kind", std::string()) != "generator")
        throw DataError("checkpoint is not a generator checkpoint");
    ExperimentConfig cfg = ExperimentConfig::from_json(ckpt.manifest.at("config"));
    Rng rng(0);
    RestoredGenerator out{cfg, Generator(cfg.generator(), rng), cfg.sequences(),
                          cfg.source_mask()};
    restore_params(ckpt, out.gen.named_parameters());
    return out;
}

struct RestoredClassifier {
    ExperimentConfig cfg;
    Classifier clf;
};

RestoredClassifier restore_classifier(const Checkpoint& ckpt) {
    if (ckpt.manifest.value("kind", std::string()) != "classifier")
        throw DataError("checkpoint is not a classifier checkpoint");
    ExperimentConfig cfg = ExperimentConfig::from_json(ckpt.manifest.at("config"));
    Rng rng(0);
    RestoredClassifier out{cfg, Classifier(cfg.classifier(), rng)};
    restore_params(ckpt, out.clf.named_parameters());
    return out;
}

void cmd_synthesize(const std::string& ckpt_path, const std::string& manifest_path,
                    const std::string& out_dir_s, const std::string& augment_manifest,
                    const std::string& tumor_classes_csv) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    RestoredGenerator rg = restore_generator(ckpt);

    Sequence target = rg.sequences[0];
    for (std::size_t i = 0; i < rg.sequences.size(); ++i)
        if (rg.mask.a[i] == 0) target = rg.sequences[i];

    DatasetManifest sources = load_manifest(manifest_path);
    load_all_pixels(manifest_path, sources);
    const SliceSynthesizer synth =
        make_slice_synthesizer(rg.gen, rg.sequences, rg.mask, target);

    const fs::path out_dir(out_dir_s);
    fs::create_directories(out_dir / "slices");

    auto write_synth_record = [&](SliceRecord&& r) {
        r.path = "slices/" + slice_filename(r);
        write_slice_pixels(out_dir / r.path, r.pixels);
        return std::move(r);
    };

    if (augment_manifest.empty()) {
        // Translate every source-sequence record into one synthetic target
        // slice; records of other sequences in a mixed manifest are skipped.
        DatasetManifest out;
        out.name = sources.name + "_synthetic";
        out.split = sources.split;
        for (const auto& src : sources.records) {
            if (src.provenance != Provenance::real) continue;
            i64 seq_idx = -1;
            for (std::size_t i = 0; i < rg.sequences.size(); ++i)
                if (rg.sequences[i] == src.sequence && rg.mask.a[i] == 1)
                    seq_idx = static_cast<i64>(i);
            if (seq_idx < 0) continue;
            SliceRecord r;
            r.case_id = src.case_id;
            r.sequence = target;
            r.class_label = src.class_label;
            r.provenance = Provenance::synthetic;
            r.slice_index = src.slice_index;
            r.pixels = synth(src);
            out.records.push_back(write_synth_record(std::move(r)));
        }
        if (out.records.empty())
            throw DataError("synthesize: manifest holds no source-sequence records");
        save_manifest(out_dir / "synthetic.json", out);
        std::printf("wrote %zu synthetic slices and %s\n", out.records.size(),
                    (out_dir / "synthetic.json").c_str());
        return;
    }

    // Augmentation mode: double the tumor classes of the base train manifest.
    std::set<ClassLabel> tumor_classes;
    std::string token;
    std::istringstream ss(tumor_classes_csv.empty() ? "glioma,meningioma" : tumor_classes_csv);
    while (std::getline(ss, token, ',')) tumor_classes.insert(class_from_string(token));

    DatasetManifest base = load_manifest(augment_manifest);
    load_all_pixels(augment_manifest, base);
    std::map<std::pair<std::string, i64>, const SliceRecord*> source_index;
    for (const auto& r : sources.records) {
        if (r.provenance != Provenance::real) continue;
        i64 seq_idx = -1;
        for (std::size_t i = 0; i < rg.sequences.size(); ++i)
            if (rg.sequences[i] == r.sequence && rg.mask.a[i] == 1) seq_idx = static_cast<i64>(i);
        if (seq_idx >= 0) source_index[{r.case_id, r.slice_index.value_or(-1)}] = &r;
    }
    const PairedSourceLookup lookup = [&](const SliceRecord& t) -> const SliceRecord* {
        auto it = source_index.find({t.case_id, t.slice_index.value_or(-1)});
        return it == source_index.end() ? nullptr : it->second;
    };

    // The augmentation unit is the target-sequence view: synthetic slices
    // are appended for tumor-class records of the synthesized sequence.
    DatasetManifest target_view{base.name, base.split, {}};
    for (const auto& r : base.records)
        if (r.sequence == target && r.provenance == Provenance::real)
            target_view.records.push_back(r);
    DatasetManifest augmented_view = build_augmented(target_view, synth, tumor_classes, lookup);

    // Re-home every record under out_dir so the augmented manifest is
    // self-contained (real pixel payloads are float32 copies, bit-identical).
    DatasetManifest augmented{base.name + "_augmented", base.split, {}};
    for (const auto& r : base.records) {
        SliceRecord copy = r;
        augmented.records.push_back(write_synth_record(std::move(copy)));
    }
    for (std::size_t i = target_view.records.size(); i < augmented_view.records.size(); ++i)
        augmented.records.push_back(
            write_synth_record(std::move(augmented_view.records[i])));
    save_manifest(out_dir / "augmented_train.json", augmented);
    print_count_table(augmented, DatasetManifest{"", Split::test, {}});
    std::printf("wrote %s\n", (out_dir / "augmented_train.json").c_str());
}

std::vector<LabeledSlice> manifest_to_labeled(const fs::path& manifest_path,
                                              const std::vector<ClassLabel>& classes,
                                              Sequence wanted) {
    DatasetManifest m = load_manifest(manifest_path);
    load_all_pixels(manifest_path, m);
    std::vector<LabeledSlice> out;
    for (const auto& r : m.records) {
        if (r.sequence != wanted) continue;
        const auto it = std::find(classes.begin(), classes.end(), r.class_label);
        if (it == classes.end())
            throw DataError("finetune: record class '" + to_string(r.class_label) +
                            "' not in configured class set");
        out.push_back({r.pixels, static_cast<i64>(it - classes.begin())});
    }
    if (out.empty())
        throw DataError("no records of sequence " + to_string(wanted) + " in '" +
                        manifest_path.string() + "'");
    return out;
}

void cmd_finetune(const std::string& config_path, const std::string& init, const std::string& out_ckpt,
                  const std::string& resume_path) {
    const ExperimentConfig cfg = ExperimentConfig::load(config_path);
    const fs::path root = cfg.data_root();
    const Sequence wanted = cfg.classify_sequence();
    const auto train = manifest_to_labeled(root / cfg.train_manifest(), cfg.classes(), wanted);
    const auto test = manifest_to_labeled(root / cfg.test_manifest(), cfg.classes(), wanted);

    FinetuneConfig fcfg = cfg.finetune();
    std::string init_path = init.empty() ? fcfg.init : init;

    Checkpoint init_ckpt;
    const Checkpoint* init_ptr = nullptr;
    if (init_path != "fresh" && !init_path.empty()) {
        init_ckpt = load_checkpoint(init_path);
        init_ptr = &init_ckpt;
    }
    Checkpoint resume;
    const Checkpoint* resume_ptr = nullptr;
    if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        resume_ptr = &resume;
    }

    FinetuneRunResult result = run_finetune(train, test, cfg.classifier(), fcfg, cfg.json(),
                                            init_ptr, resume_ptr);
    save_checkpoint(out_ckpt, result.best);
    const fs::path out_dir = cfg.out_dir();
    save_checkpoint(fs::path(out_ckpt).concat(".final"), result.final);
    write_runlog(out_dir, "finetune_runlog", result.log);
    std::printf("finetune finished: best epoch %lld\n",
                static_cast<long long>(result.best_epoch));
    std::printf("%s", result.best_report.to_table().c_str());
}

void print_formatted(const nlohmann::json& as_json, const std::string& as_csv,
                     const std::string& as_table, const std::string& format) {
    if (format == "json") {
        std::printf("%s\n", as_json.dump(2).c_str());
    } else if (format == "csv") {
        std::printf("%s", as_csv.c_str());
    } else {
        std::printf("%s", as_table.c_str());
    }
}

void cmd_evaluate(const std::string& ckpt_path, const std::string& manifest_path,
                  const std::string& task, const std::string& format) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    if (task == "synth") {
        RestoredGenerator rg = restore_generator(ckpt);
        const auto pairs = load_pairs(manifest_path, rg.sequences);
        const SynthesisReport report =
            evaluate_synthesis(rg.gen, pairs, rg.mask, rg.cfg.metrics_max_val());
        print_formatted(report.to_json(), report.to_csv(), report.to_table(), format);
    } else if (task == "classify") {
        RestoredClassifier rc = restore_classifier(ckpt);
        const auto samples =
            manifest_to_labeled(manifest_path, rc.cfg.classes(), rc.cfg.classify_sequence());
        const ClassificationReport report =
            evaluate_classifier(rc.clf, samples, rc.cfg.finetune());
        print_formatted(report.to_json(), report.to_csv(), report.to_table(), format);
    } else {
        throw ConfigError("evaluate: task must be 'synth' or 'classify'");
    }
}

void cmd_report(const std::string& runlog_path, const std::string& format) {
    const nlohmann::json j = load_json_file(runlog_path);
    if (format == "json") {
        std::printf("%s\n", j.dump(2).c_str());
        return;
    }
    if (format == "csv") {
        const auto& cols = j.at("columns");
        for (std::size_t i = 0; i < cols.size(); ++i)
            std::printf("%s%s", i ? "," : "", cols[i].get<std::string>().c_str());
        std::printf("\n");
        for (const auto& row : j.at("rows")) {
            bool first = true;
            for (const auto& v : row) {
                std::printf("%s%.17g", first ? "" : ",", v.get<double>());
                first = false;
            }
            std::printf("\n");
        }
        return;
    }
    std::printf("seed: %llu\nconfig digest: %s\nsteps: %zu\n",
                static_cast<unsigned long long>(j.at("seed").get<std::uint64_t>()),
                j.at("config_digest").get<std::string>().c_str(), j.at("rows").size());
    for (const auto& e : j.at("evals")) std::printf("eval: %s\n", e.dump().c_str());
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"two-stage MRI synthesis pretraining and tumor classification pipeline"};
    app.require_subcommand(1);

    IngestOptions ingest;
    auto* c_ingest = app.add_subcommand("ingest", "select slices from volumes, build manifests");
    c_ingest->add_option("--volumes", ingest.volumes_dir, "directory of volume sidecars")
        ->required();
    c_ingest->add_option("--out", ingest.out_dir, "output directory")->required();
    c_ingest->add_option("--tumor-k", ingest.tumor_k, "tumor slices per case");
    c_ingest->add_option("--healthy-k", ingest.healthy_k, "healthy slices per case");
    c_ingest->add_option("--train-fraction", ingest.train_fraction, "train split fraction");
    c_ingest->add_option("--seed", ingest.seed, "split seed");
    c_ingest->add_option("--image-size", ingest.image_size, "normalized slice size");
    c_ingest->add_option("--name", ingest.name, "dataset name");
    c_ingest->add_flag("--png", ingest.png_export, "also export PNG previews");

    std::string config_path, out_path, resume_path, init_path;
    auto* c_pretrain = app.add_subcommand("pretrain", "stage 1: synthesis pretraining");
    c_pretrain->add_option("--config", config_path, "experiment config JSON")->required();
    c_pretrain->add_option("--out", out_path, "output checkpoint path")->required();
    c_pretrain->add_option("--resume", resume_path, "resume from checkpoint");

    std::string ckpt_path, manifest_path, synth_out, augment_manifest, tumor_classes;
    auto* c_synth = app.add_subcommand("synthesize", "translate slices with a trained generator");
    c_synth->add_option("--ckpt", ckpt_path, "generator checkpoint")->required();
    c_synth->add_option("--manifest", manifest_path, "source slice manifest")->required();
    c_synth->add_option("--out", synth_out, "output directory")->required();
    c_synth->add_option("--augment", augment_manifest, "train manifest to augment");
    c_synth->add_option("--tumor-classes", tumor_classes, "comma-separated tumor classes");

    auto* c_finetune = app.add_subcommand("finetune", "stage 2: classifier fine-tuning");
    c_finetune->add_option("--config", config_path, "experiment config JSON")->required();
    c_finetune->add_option("--init", init_path, "'fresh' or a stage-1 checkpoint");
    c_finetune->add_option("--out", out_path, "output checkpoint path")->required();
    c_finetune->add_option("--resume", resume_path, "resume from checkpoint");

    std::string task = "synth", format = "table";
    auto* c_eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a manifest");
    c_eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    c_eval->add_option("--manifest", manifest_path, "manifest path")->required();
    c_eval->add_option("--task", task, "synth|classify")->required();
    c_eval->add_option("--format", format, "table|json|csv");

    std::string runlog_path;
    auto* c_report = app.add_subcommand("report", "re-emit a run log");
    c_report->add_option("--runlog", runlog_path, "run log JSON")->required();
    c_report->add_option("--format", format, "table|json|csv");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            std::cout << app.help();
            return 0;
        }
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    }

    try {
        if (app.got_subcommand(c_ingest)) {
            cmd_ingest(ingest);
        } else if (app.got_subcommand(c_pretrain)) {
            cmd_pretrain(config_path, out_path, resume_path);
        } else if (app.got_subcommand(c_synth)) {
            cmd_synthesize(ckpt_path, manifest_path, synth_out, augment_manifest, tumor_classes);
        } else if (app.got_subcommand(c_finetune)) {
            cmd_finetune(config_path, init_path, out_path, resume_path);
        } else if (app.got_subcommand(c_eval)) {
            cmd_evaluate(ckpt_path, manifest_path, task, format);
        } else if (app.got_subcommand(c_report)) {
            cmd_report(runlog_path, format);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

}  // namespace resvit
