#include "pfadseg/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "pfadseg/dataset.hpp"
#include "pfadseg/errors.hpp"
#include "pfadseg/report.hpp"
#include "pfadseg/toy.hpp"
#include "pfadseg/trainer.hpp"
#include "pfadseg/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pfadseg {

namespace {

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string category;
    std::string device = "cpu";
    std::optional<double> channel_scale;
    bool no_rcm = false;
    bool no_aff = false;
    bool no_pcar = false;
    std::string out_dir;
    bool overwrite = false;
    std::string data_root;
    std::string checkpoint;
    std::string maps_dir;
    std::string textures;
    std::vector<std::string> images;
    int count = 4;
    int size = 64;
    int train_images = 8;
    int good_test = 4;
    int anomalous_test = 4;
};

void add_common(CLI::App& cmd, Options& o) {
    cmd.add_option("--config", o.config_path, "Flat key = value config file");
    cmd.add_option("--seed", o.seed, "Random seed (overrides the config)");
    cmd.add_option("--category", o.category, "Dataset category");
    cmd.add_option("--device", o.device, "Compute device; only 'cpu' is supported");
    cmd.add_option("--channel-scale", o.channel_scale, "Channel width multiplier (overrides the config)");
    cmd.add_flag("--no-rcm", o.no_rcm, "Drop the rectangular self-calibration module");
    cmd.add_flag("--no-aff", o.no_aff, "Merge residuals by addition instead of attentional fusion");
    cmd.add_flag("--no-pcar", o.no_pcar, "Use a plain 3x3 convolution instead of PCAR");
    cmd.add_option("--out-dir", o.out_dir, "Run directory for all outputs");
    cmd.add_flag("--overwrite", o.overwrite, "Replace an existing run directory");
    cmd.add_option("--data-root", o.data_root, "Dataset root (default: $PFADSEG_DATA_ROOT)");
}

TrainConfig resolve_config(const Options& o) {
    if (o.device != "cpu") throw ConfigError("device '" + o.device + "' is not available; only 'cpu' is supported");
    TrainConfig c = o.config_path.empty() ? TrainConfig{} : TrainConfig::load(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (o.channel_scale) c.channel_scale = *o.channel_scale;
    if (o.no_rcm) c.use_rcm = false;
    if (o.no_aff) c.use_aff = false;
    if (o.no_pcar) c.use_pcar = false;
    if (!o.textures.empty()) c.textures_dir = o.textures;
    return c;
}

fs::path data_root(const Options& o) { return o.data_root.empty() ? default_data_root() : fs::path(o.data_root); }

fs::path require_out_dir(const Options& o) {
    if (o.out_dir.empty()) throw UsageError("--out-dir is required");
    return o.out_dir;
}

/// Creates a fresh run directory. Existing artifacts are never touched
/// without --overwrite.
fs::path prepare_run_dir(const Options& o) {
    const fs::path dir = require_out_dir(o);
    if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir))) {
        if (!o.overwrite) {
            throw UsageError("run directory " + dir.string() + " already exists; pass --overwrite to replace it");
        }
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot write " + path.string());
    f << text;
}

void write_run_info(const fs::path& dir, const std::string& command, const TrainConfig& config,
                    const std::string& teacher_digest, const std::string& category) {
    json j;
    j["command"] = command;
    j["category"] = category;
    j["seed"] = config.seed;
    j["teacher_digest"] = teacher_digest;
    j["version"] = version();
    j["config"] = "config.txt";
    write_text(dir / "run.json", j.dump(2) + "\n");
    write_text(dir / "config.txt", config.snapshot());
}

const CategoryLayout& pick_category(const DatasetLayout& layout, const std::string& name) {
    if (!name.empty()) return layout.category(name);
    if (layout.categories.size() == 1) return layout.categories.front();
    throw UsageError("dataset has " + std::to_string(layout.categories.size()) +
                     " categories; choose one with --category");
}

synth::TextureStore textures_for(const TrainConfig& config) {
    if (config.textures_dir.empty()) throw ConfigError("textures_dir is not set (config key or --textures)");
    auto store = synth::TextureStore::from_directory(config.textures_dir);
    if (store.empty()) throw ConfigError("no texture images in " + config.textures_dir);
    return store;
}

class JsonLog {
public:
    explicit JsonLog(const fs::path& path) : f_(path, std::ios::app) {
        if (!f_) throw LoadError("cannot open log " + path.string());
    }
    void operator()(const StepLog& s) {
        json j{{"stage", s.stage}, {"iteration", s.iteration}, {"loss", s.loss}, {"wall_time", s.seconds}};
        if (s.stage == "segmentation") {
            j["focal"] = s.focal;
            j["l1"] = s.l1;
        }
        f_ << j.dump() << "\n";
        f_.flush();
    }

private:
    std::ofstream f_;
};

std::string relative_key(const TestSample& s) { return s.defect + "/" + s.image.stem().string(); }

// ---------------------------------------------------------------- commands

int cmd_train_student(const Options& o, std::ostream& out) {
    TrainConfig config = resolve_config(o);
    config.validate();
    const DatasetLayout layout = ingest_dataset(data_root(o));
    const CategoryLayout& cat = pick_category(layout, o.category);
    const auto textures = textures_for(config);
    auto teacher = make_teacher(config);
    const fs::path dir = prepare_run_dir(o);
    write_run_info(dir, "train-student", config, teacher->digest(), cat.name);
    JsonLog log(dir / "train_log.jsonl");
    const auto normals = load_images(cat.train);
    StageResult r = train_student(normals, textures, config, *teacher, std::ref(log));
    r.checkpoint.save(dir / "student.ckpt");
    out << "student checkpoint " << (dir / "student.ckpt").string() << " sha256 " << r.checkpoint.digest() << "\n";
    return 0;
}

int cmd_train_seg(const Options& o, std::ostream& out) {
    if (o.checkpoint.empty()) throw UsageError("train-seg needs --checkpoint <student.ckpt>");
    Checkpoint ck = Checkpoint::load(o.checkpoint);
    if (!o.textures.empty()) ck.config.textures_dir = o.textures;
    const DatasetLayout layout = ingest_dataset(data_root(o));
    const CategoryLayout& cat = pick_category(layout, o.category);
    const auto textures = textures_for(ck.config);
    auto teacher = make_teacher(ck.config);
    const fs::path dir = prepare_run_dir(o);
    write_run_info(dir, "train-seg", ck.config, teacher->digest(), cat.name);
    JsonLog log(dir / "train_log.jsonl");
    const auto normals = load_images(cat.train);
    StageResult r = train_segmentation(normals, textures, ck, *teacher, std::ref(log));
    r.checkpoint.save(dir / "seg.ckpt");
    out << "segmentation checkpoint " << (dir / "seg.ckpt").string() << " sha256 " << r.checkpoint.digest()
        << "\n";
    return 0;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
    if (o.checkpoint.empty() == o.maps_dir.empty()) {
        throw UsageError("evaluate needs exactly one of --checkpoint or --maps-dir");
    }
    const DatasetLayout layout = ingest_dataset(data_root(o));
    std::vector<const CategoryLayout*> cats;
    if (o.category.empty()) {
        for (const auto& c : layout.categories) cats.push_back(&c);
    } else {
        cats.push_back(&layout.category(o.category));
    }

    std::optional<Checkpoint> ck;
    std::unique_ptr<Teacher> teacher;
    std::unique_ptr<Detector> detector;
    TrainConfig config = resolve_config(o);
    std::string teacher_digest = "none";
    if (!o.checkpoint.empty()) {
        ck = Checkpoint::load(o.checkpoint);
        config = ck->config;
        teacher = make_teacher(config);
        detector = std::make_unique<Detector>(*ck, *teacher);
        teacher_digest = ck->teacher_digest;
    }
    const fs::path dir = prepare_run_dir(o);
    write_run_info(dir, "evaluate", config, teacher_digest, o.category.empty() ? "all" : o.category);

    MetricReport report;
    for (const CategoryLayout* cat : cats) {
        EvaluationInput in;
        for (const TestSample& s : cat->test) {
            const ImageInfo info = probe_image(s.image);
            ProbMap map;
            double score = 0.0;
            if (detector) {
                Inference inf = detector->infer(load_image(s.image));
                map = std::move(inf.map);
                score = inf.score;
                const fs::path out = dir / "maps" / cat->name / (relative_key(s) + ".npy");
                fs::create_directories(out.parent_path());
                save_npy(out, map);
            } else {
                const fs::path p = fs::path(o.maps_dir) / cat->name / (relative_key(s) + ".npy");
                if (!fs::exists(p)) throw ValidationError("missing probability map " + p.string());
                map = load_npy(p);
                if (map.height != info.height || map.width != info.width) {
                    throw ValidationError("map " + p.string() + " does not match its image size");
                }
                score = image_score(map, config.top_k);
            }
            in.masks.push_back(s.mask ? load_mask(*s.mask) : AnomalyMask(info.height, info.width));
            in.maps.push_back(std::move(map));
            in.scores.push_back(score);
            in.labels.push_back(s.anomalous() ? 1 : 0);
        }
        report.categories.push_back(compute_metrics(cat->name, in));
    }
    write_text(dir / "report.json", report.to_json());
    write_text(dir / "report.csv", report.to_csv());
    out << report.to_csv();
    return 0;
}

int cmd_visualize(const Options& o, std::ostream& out) {
    if (o.checkpoint.empty()) throw UsageError("visualize needs --checkpoint <seg.ckpt>");
    const Checkpoint ck = Checkpoint::load(o.checkpoint);
    auto teacher = make_teacher(ck.config);
    Detector detector(ck, *teacher);
    std::vector<std::pair<fs::path, std::string>> jobs;  // (image, output stem)
    if (!o.images.empty()) {
        for (const auto& p : o.images) jobs.emplace_back(p, fs::path(p).stem().string());
    } else {
        const DatasetLayout layout = ingest_dataset(data_root(o));
        const CategoryLayout& cat = pick_category(layout, o.category);
        for (const auto& s : cat.test) jobs.emplace_back(s.image, cat.name + "/" + relative_key(s));
    }
    const fs::path dir = prepare_run_dir(o);
    write_run_info(dir, "visualize", ck.config, ck.teacher_digest, o.category);
    json scores = json::object();
    for (const auto& [path, stem] : jobs) {
        const Image image = load_image(path);
        const Inference inf = detector.infer(image);
        fs::create_directories((dir / stem).parent_path());
        save_png(dir / (stem + "_overlay.png"), heatmap_overlay(image, inf.map));
        save_png16(dir / (stem + "_map.png"), inf.map);
        scores[stem] = inf.score;
    }
    write_text(dir / "scores.json", scores.dump(2) + "\n");
    out << "wrote " << jobs.size() << " heatmap overlays to " << dir.string() << "\n";
    return 0;
}

int cmd_synth_preview(const Options& o, std::ostream& out) {
    const TrainConfig config = resolve_config(o);
    config.synthesis.validate();
    const auto textures = textures_for(config);
    std::vector<fs::path> sources;
    if (!o.images.empty()) {
        for (const auto& p : o.images) sources.emplace_back(p);
    } else {
        const DatasetLayout layout = ingest_dataset(data_root(o));
        sources = pick_category(layout, o.category).train;
    }
    if (o.count < 1) throw UsageError("--count must be at least 1");
    const fs::path dir = prepare_run_dir(o);
    write_run_info(dir, "synth-preview", config, "none", o.category);
    Rng rng(config.seed);
    json samples = json::array();
    for (int i = 0; i < o.count; ++i) {
        const fs::path& src = sources[static_cast<std::size_t>(i) % sources.size()];
        const auto pair = synth::sample_training_pair(load_image(src), textures, config.synthesis, rng);
        char stem[32];
        std::snprintf(stem, sizeof stem, "%03d", i);
        save_png(dir / (std::string(stem) + "_anomalous.png"), pair.anomalous);
        save_png(dir / (std::string(stem) + "_mask.png"), pair.mask);
        samples.push_back({{"index", i},
                           {"source", src.filename().string()},
                           {"beta", pair.beta},
                           {"texture_index", pair.texture_index},
                           {"coverage", pair.mask.coverage()}});
    }
    write_text(dir / "samples.json", samples.dump(2) + "\n");
    out << "wrote " << o.count << " synthetic pairs to " << dir.string() << "\n";
    return 0;
}

int cmd_toy_data(const Options& o, std::ostream& out) {
    toy::DatasetSpec spec;
    spec.size = o.size;
    spec.train_images = o.train_images;
    spec.good_test_images = o.good_test;
    spec.anomalous_test_images = o.anomalous_test;
    spec.seed = o.seed.value_or(0);
    if (spec.size < 32 || spec.size % 32 != 0) throw UsageError("--size must be a positive multiple of 32");
    if (spec.train_images < 1 || spec.good_test_images < 0 || spec.anomalous_test_images < 0) {
        throw UsageError("image counts must be nonnegative and --train at least 1");
    }
    const fs::path dir = prepare_run_dir(o);
    const std::string category = o.category.empty() ? "toy" : o.category;
    toy::write_dataset(dir, category, spec);
    out << ingest_dataset(dir).summary();
    return 0;
}

json inventory_json(const nn::Module& m) {
    json j = json::object();
    for (const auto& [kind, count] : nn::block_inventory(m)) j[kind] = count;
    return j;
}

int cmd_inspect(const Options& o, std::ostream& out) {
    TrainConfig config = resolve_config(o);
    config.validate();
    Rng rng(config.seed);
    Student student({config.channel_scale, config.use_aff, config.use_pcar}, rng);
    int in = 0;
    for (int base : FeaturePyramid::kBaseChannels) in += scaled_channels(base, config.channel_scale);
    SegHead seg({in, config.channel_scale, config.use_aff, config.use_pcar, config.use_rcm}, rng);
    std::size_t ns = 0, nh = 0;
    for (const auto& [name, p] : student.named_parameters()) ns += p.value().size();
    for (const auto& [name, p] : seg.named_parameters()) nh += p.value().size();
    json j{{"use_rcm", config.use_rcm},
           {"use_aff", config.use_aff},
           {"use_pcar", config.use_pcar},
           {"student", inventory_json(student)},
           {"seg_head", inventory_json(seg)},
           {"student_parameters", ns},
           {"seg_head_parameters", nh}};
    out << j.dump(2) << "\n";
    return 0;
}

void print_error(std::ostream& err, const std::string& kind, const std::string& message) {
    err << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Anomaly detection with denoising distillation and guided segmentation", "pfadseg"};
    app.set_version_flag("--version", std::string(version()));
    app.require_subcommand(1);
    Options o;

    auto* ts = app.add_subcommand("train-student", "Stage one: distill the teacher into the denoising student");
    add_common(*ts, o);
    ts->add_option("--textures", o.textures, "Directory of anomaly source textures");

    auto* tg = app.add_subcommand("train-seg", "Stage two: train the segmentation head");
    add_common(*tg, o);
    tg->add_option("--checkpoint", o.checkpoint, "Stage-one checkpoint");
    tg->add_option("--textures", o.textures, "Directory of anomaly source textures");

    auto* ev = app.add_subcommand("evaluate", "Compute the metric report on a test set");
    add_common(*ev, o);
    ev->add_option("--checkpoint", o.checkpoint, "Stage-two checkpoint to run inference with");
    ev->add_option("--maps-dir", o.maps_dir, "Precomputed maps: <dir>/<category>/<defect>/<stem>.npy");

    auto* vz = app.add_subcommand("visualize", "Write heatmap overlays");
    add_common(*vz, o);
    vz->add_option("--checkpoint", o.checkpoint, "Stage-two checkpoint");
    vz->add_option("--image", o.images, "Input image (repeatable; default: the category test set)");

    auto* sp = app.add_subcommand("synth-preview", "Write synthetic anomaly samples");
    add_common(*sp, o);
    sp->add_option("--textures", o.textures, "Directory of anomaly source textures");
    sp->add_option("--image", o.images, "Normal image (repeatable; default: the category train set)");
    sp->add_option("--count", o.count, "Number of samples");

    auto* td = app.add_subcommand("toy-data", "Generate a small procedural dataset");
    add_common(*td, o);
    td->add_option("--size", o.size, "Image side length");
    td->add_option("--train", o.train_images, "Training images");
    td->add_option("--good-test", o.good_test, "Normal test images");
    td->add_option("--anomalous-test", o.anomalous_test, "Anomalous test images");

    auto* ins = app.add_subcommand("inspect", "Print the block inventory of the configured networks");
    add_common(*ins, o);

    std::vector<std::string> argv_store{"pfadseg"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForVersion&) {
        out << version() << "\n";
        return 0;
    } catch (const CLI::Success&) {
        out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
        return 0;
    } catch (const CLI::ParseError& e) {
        print_error(err, "usage", e.what());
        return 2;
    }

    try {
        if (ts->parsed()) return cmd_train_student(o, out);
        if (tg->parsed()) return cmd_train_seg(o, out);
        if (ev->parsed()) return cmd_evaluate(o, out);
        if (vz->parsed()) return cmd_visualize(o, out);
        if (sp->parsed()) return cmd_synth_preview(o, out);
        if (td->parsed()) return cmd_toy_data(o, out);
        if (ins->parsed()) return cmd_inspect(o, out);
        throw UsageError("no command given");
    } catch (const UsageError& e) {
        print_error(err, e.kind(), e.what());
        return 2;
    } catch (const Error& e) {
        print_error(err, e.kind(), e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error(err, "internal", e.what());
        return 1;
    }
}

}  // namespace pfadseg
