#include "pfadseg/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pfadseg/errors.hpp"

namespace pfadseg {

namespace {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
    return out;
}

long long parse_int(const std::string& key, const std::string& v) {
    long long out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError("config key '" + key + "': expected a nonnegative integer, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(static_cast<int>(parse_int(key, trim(item))));
    }
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::map<std::string, std::string> to_map(const TrainConfig& c) {
    std::map<std::string, std::string> m;
    m["stage1_iters"] = std::to_string(c.stage1_iters);
    m["stage2_iters"] = std::to_string(c.stage2_iters);
    m["batch_size"] = std::to_string(c.batch_size);
    m["lr_student"] = format_double(c.lr_student);
    m["lr_seg_blocks"] = format_double(c.lr_seg_blocks);
    m["lr_rcm"] = format_double(c.lr_rcm);
    m["momentum"] = format_double(c.momentum);
    m["weight_decay"] = format_double(c.weight_decay);
    m["image_size"] = std::to_string(c.image_size);
    m["seed"] = std::to_string(c.seed);
    m["channel_scale"] = format_double(c.channel_scale);
    m["use_rcm"] = c.use_rcm ? "true" : "false";
    m["use_aff"] = c.use_aff ? "true" : "false";
    m["use_pcar"] = c.use_pcar ? "true" : "false";
    m["focal_gamma"] = format_double(c.focal_gamma);
    m["focal_eps"] = format_double(c.focal_eps);
    m["top_k"] = std::to_string(c.top_k);
    m["loss_guard"] = format_double(c.loss_guard);
    m["anomaly_pool"] = std::to_string(c.anomaly_pool);
    m["beta_min"] = format_double(c.synthesis.beta_min);
    m["beta_max"] = format_double(c.synthesis.beta_max);
    m["perlin_scales"] = join_ints(c.synthesis.perlin_scales);
    m["binarize_threshold"] = format_double(c.synthesis.binarize_threshold);
    m["max_mask_attempts"] = std::to_string(c.synthesis.max_mask_attempts);
    m["teacher_weights"] = c.teacher_weights;
    m["random_teacher"] = c.random_teacher ? "true" : "false";
    m["textures_dir"] = c.textures_dir;
    return m;
}

Tensor stack_images(const std::vector<const Image*>& images) {
    std::vector<Tensor> parts;
    parts.reserve(images.size());
    for (const Image* im : images) parts.push_back(im->pixels);
    return stack_batch(parts);
}

std::vector<Image> at_training_size(const std::vector<Image>& normals, int size) {
    std::vector<Image> out;
    out.reserve(normals.size());
    for (const Image& im : normals) {
        out.push_back(im.height() == size && im.width() == size ? im : resize_bilinear(im, size, size));
    }
    return out;
}

/// Draws dataset indices epoch by epoch so small sets are covered evenly.
class IndexSampler {
public:
    explicit IndexSampler(std::size_t n) : n_(n) {}
    std::size_t next(Rng& rng) {
        if (cursor_ == order_.size()) {
            order_.resize(n_);
            for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
            for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng.index(i)]);
            cursor_ = 0;
        }
        return order_[cursor_++];
    }

private:
    std::size_t n_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

struct Batch {
    Tensor clean;
    Tensor anomalous;
    Tensor masks;  // downsampled by 4, N x 1 x h x w
};

Batch draw_batch(const std::vector<Image>& normals, const synth::TextureStore& textures,
                 const std::vector<std::vector<synth::TrainingPair>>& pool, const TrainConfig& cfg,
                 IndexSampler& sampler, Rng& rng, bool want_masks) {
    std::vector<const Image*> clean, anomalous;
    std::vector<synth::TrainingPair> fresh;
    fresh.reserve(static_cast<std::size_t>(cfg.batch_size));
    std::vector<Tensor> masks;
    for (int b = 0; b < cfg.batch_size; ++b) {
        const std::size_t idx = sampler.next(rng);
        const synth::TrainingPair* pair = nullptr;
        if (!pool.empty()) {
            pair = &pool[idx][rng.index(pool[idx].size())];
        } else {
            fresh.push_back(synth::sample_training_pair(normals[idx], textures, cfg.synthesis, rng));
            pair = &fresh.back();
        }
        clean.push_back(&normals[idx]);
        anomalous.push_back(&pair->anomalous);
        if (want_masks) masks.push_back(losses::downsample_mask(pair->mask, 4).to_tensor());
    }
    Batch out;
    out.clean = stack_images(clean);
    out.anomalous = stack_images(anomalous);
    if (want_masks) out.masks = stack_batch(masks);
    return out;
}

void guard_loss(const std::string& stage, int iteration, const std::vector<std::pair<std::string, double>>& terms,
                double limit, const nn::Module& model) {
    bool bad = false;
    for (const auto& [name, v] : terms) bad = bad || !std::isfinite(v) || v > limit;
    if (!bad) return;
    std::ostringstream msg;
    msg << stage << " training diverged at iteration " << iteration << ":";
    for (const auto& [name, v] : terms) msg << " " << name << "=" << v;
    msg << " (guard " << limit << ")";
    std::vector<std::pair<double, std::string>> scale;
    for (const auto& [name, p] : model.named_parameters()) {
        double ss = 0.0;
        for (double x : p.value().values()) ss += x * x;
        scale.emplace_back(std::sqrt(ss), name);
        if (!p.value().all_finite()) msg << "; non-finite parameter " << name;
    }
    std::sort(scale.rbegin(), scale.rend());
    msg << "; largest parameter norms:";
    for (std::size_t i = 0; i < std::min<std::size_t>(3, scale.size()); ++i) {
        msg << " " << scale[i].second << "=" << scale[i].first;
    }
    throw DivergenceError(msg.str());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

StudentConfig student_config(const TrainConfig& c) { return {c.channel_scale, c.use_aff, c.use_pcar}; }

SegHeadConfig seg_config(const TrainConfig& c, const Teacher& teacher) {
    int in = 0;
    for (int base : FeaturePyramid::kBaseChannels) in += scaled_channels(base, teacher.channel_scale());
    return {in, c.channel_scale, c.use_aff, c.use_pcar, c.use_rcm};
}

constexpr std::uint64_t kPoolStream = 0x706f6f6cULL;
constexpr std::uint64_t kTeacherStream = 0x7465616368ULL;

}  // namespace

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
    auto need = [](bool ok, const std::string& key, const std::string& what) {
        if (!ok) throw ConfigError("config key '" + key + "': " + what);
    };
    need(stage1_iters >= 1, "stage1_iters", "must be at least 1");
    need(stage2_iters >= 1, "stage2_iters", "must be at least 1");
    need(batch_size >= 1, "batch_size", "must be at least 1");
    need(lr_student > 0.0 && std::isfinite(lr_student), "lr_student", "must be positive");
    need(lr_seg_blocks > 0.0 && std::isfinite(lr_seg_blocks), "lr_seg_blocks", "must be positive");
    need(lr_rcm > 0.0 && std::isfinite(lr_rcm), "lr_rcm", "must be positive");
    need(momentum >= 0.0 && momentum < 1.0, "momentum", "must lie in [0, 1)");
    need(weight_decay >= 0.0 && std::isfinite(weight_decay), "weight_decay", "must be nonnegative");
    need(image_size >= 32 && image_size % 32 == 0, "image_size", "must be a positive multiple of 32");
    need(channel_scale > 0.0 && std::isfinite(channel_scale), "channel_scale", "must be positive");
    need(top_k >= 1, "top_k", "must be at least 1");
    need(loss_guard > 0.0, "loss_guard", "must be positive");
    need(anomaly_pool >= 0, "anomaly_pool", "must be nonnegative");
    losses::LossConfig{focal_gamma, focal_eps}.validate();
    synthesis.validate();
}

std::string TrainConfig::snapshot() const {
    std::string out;
    for (const auto& [k, v] : to_map(*this)) out += k + " = " + v + "\n";
    return out;
}

void TrainConfig::apply(const std::map<std::string, std::string>& values) {
    for (const auto& [key, v] : values) {
        if (key == "stage1_iters") stage1_iters = static_cast<int>(parse_int(key, v));
        else if (key == "stage2_iters") stage2_iters = static_cast<int>(parse_int(key, v));
        else if (key == "batch_size") batch_size = static_cast<int>(parse_int(key, v));
        else if (key == "lr_student") lr_student = parse_double(key, v);
        else if (key == "lr_seg_blocks") lr_seg_blocks = parse_double(key, v);
        else if (key == "lr_rcm") lr_rcm = parse_double(key, v);
        else if (key == "momentum") momentum = parse_double(key, v);
        else if (key == "weight_decay") weight_decay = parse_double(key, v);
        else if (key == "image_size") image_size = static_cast<int>(parse_int(key, v));
        else if (key == "seed") seed = parse_u64(key, v);
        else if (key == "channel_scale") channel_scale = parse_double(key, v);
        else if (key == "use_rcm") use_rcm = parse_bool(key, v);
        else if (key == "use_aff") use_aff = parse_bool(key, v);
        else if (key == "use_pcar") use_pcar = parse_bool(key, v);
        else if (key == "focal_gamma") focal_gamma = parse_double(key, v);
        else if (key == "focal_eps") focal_eps = parse_double(key, v);
        else if (key == "top_k") top_k = static_cast<int>(parse_int(key, v));
        else if (key == "loss_guard") loss_guard = parse_double(key, v);
        else if (key == "anomaly_pool") anomaly_pool = static_cast<int>(parse_int(key, v));
        else if (key == "beta_min") synthesis.beta_min = parse_double(key, v);
        else if (key == "beta_max") synthesis.beta_max = parse_double(key, v);
        else if (key == "perlin_scales") synthesis.perlin_scales = parse_int_list(key, v);
        else if (key == "binarize_threshold") synthesis.binarize_threshold = parse_double(key, v);
        else if (key == "max_mask_attempts") synthesis.max_mask_attempts = static_cast<int>(parse_int(key, v));
        else if (key == "teacher_weights") teacher_weights = v;
        else if (key == "random_teacher") random_teacher = parse_bool(key, v);
        else if (key == "textures_dir") textures_dir = v;
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

TrainConfig TrainConfig::parse(const std::string& text) {
    TrainConfig c;
    c.apply(parse_key_values(text));
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> out;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

std::unique_ptr<Teacher> make_teacher(const TrainConfig& config) {
    if (config.random_teacher) {
        Rng rng(config.seed ^ kTeacherStream);
        return std::make_unique<Teacher>(config.channel_scale, rng);
    }
    if (config.teacher_weights.empty()) {
        throw ConfigError("no teacher: set teacher_weights or random_teacher = true");
    }
    return load_pretrained(config.teacher_weights, config.channel_scale);
}

// ------------------------------------------------------------ checkpoint

TensorArchive Checkpoint::to_archive() const {
    TensorArchive ar;
    ar.meta["kind"] = "checkpoint";
    ar.meta["stage"] = stage;
    ar.meta["iteration"] = std::to_string(iteration);
    ar.meta["teacher_digest"] = teacher_digest;
    ar.meta["rng_state"] = rng_state;
    ar.meta["config"] = config.snapshot();
    ar.tensors = tensors;
    return ar;
}

Checkpoint Checkpoint::from_archive(const TensorArchive& ar) {
    auto get = [&](const char* key) -> const std::string& {
        auto it = ar.meta.find(key);
        if (it == ar.meta.end()) throw LoadError(std::string("checkpoint: missing meta field '") + key + "'");
        return it->second;
    };
    if (get("kind") != "checkpoint") throw LoadError("archive is not a checkpoint");
    Checkpoint c;
    c.stage = get("stage");
    if (c.stage != "student" && c.stage != "segmentation") {
        throw LoadError("checkpoint: unknown stage '" + c.stage + "'");
    }
    try {
        c.iteration = std::stoi(get("iteration"));
        c.config = TrainConfig::parse(get("config"));
    } catch (const ConfigError& e) {
        throw LoadError(std::string("checkpoint: bad config snapshot: ") + e.what());
    } catch (const std::logic_error&) {
        throw LoadError("checkpoint: bad iteration field");
    }
    c.teacher_digest = get("teacher_digest");
    c.rng_state = get("rng_state");
    c.tensors = ar.tensors;
    return c;
}

void Checkpoint::save(const std::filesystem::path& path) const { to_archive().save(path); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    return from_archive(TensorArchive::load(path));
}

void export_state(const nn::Module& module, const std::string& prefix,
                  std::vector<std::pair<std::string, Tensor>>& out) {
    for (const auto& [name, v] : module.named_state()) out.emplace_back(prefix + name, v.value());
}

void import_state(nn::Module& module, const std::string& prefix,
                  const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::map<std::string, const Tensor*> index;
    for (const auto& [name, t] : tensors) index[name] = &t;
    for (auto& [name, var] : module.named_state()) {
        auto it = index.find(prefix + name);
        if (it == index.end()) throw LoadError("checkpoint: missing tensor '" + prefix + name + "'");
        if (it->second->shape() != var.shape()) {
            throw LoadError("checkpoint: tensor '" + prefix + name + "' has shape " +
                            it->second->shape().str() + ", expected " + var.shape().str());
        }
        ag::Var v = var;
        v.mutable_value() = *it->second;
    }
}

// ------------------------------------------------------------- optimizer

Sgd::Sgd(std::vector<Group> groups, double momentum, double weight_decay)
    : groups_(std::move(groups)), momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& g : groups_) buffers_.emplace_back(g.params.size());
}

void Sgd::zero_grad() {
    for (auto& g : groups_)
        for (auto& [name, p] : g.params) p.zero_grad();
}

void Sgd::step() {
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
        Group& g = groups_[gi];
        for (std::size_t pi = 0; pi < g.params.size(); ++pi) {
            ag::Var& p = g.params[pi].second;
            if (p.grad().empty()) continue;
            Tensor& value = p.mutable_value();
            const Tensor& grad = p.grad();
            Tensor& buf = buffers_[gi][pi];
            const bool first = buf.empty();
            if (first) buf = Tensor(value.shape());
            for (std::size_t i = 0; i < value.size(); ++i) {
                const double d = grad[i] + weight_decay_ * value[i];
                buf[i] = first ? d : momentum_ * buf[i] + d;
                value[i] -= g.lr * buf[i];
            }
        }
    }
}

std::vector<Sgd::Group> seg_param_groups(const SegHead& head, const TrainConfig& config) {
    Sgd::Group blocks{"seg_blocks", config.lr_seg_blocks, {}};
    Sgd::Group rcm{"rcm", config.lr_rcm, {}};
    for (auto& [name, p] : head.named_parameters()) {
        (name.rfind("rcm.", 0) == 0 ? rcm : blocks).params.emplace_back(name, p);
    }
    std::vector<Sgd::Group> out{blocks};
    if (!rcm.params.empty()) out.push_back(rcm);
    return out;
}

// -------------------------------------------------------------- training

std::vector<std::vector<synth::TrainingPair>> build_anomaly_pool(const std::vector<Image>& normals,
                                                                  const synth::TextureStore& textures,
                                                                  const TrainConfig& config) {
    std::vector<std::vector<synth::TrainingPair>> pool;
    if (config.anomaly_pool == 0) return pool;
    Rng rng(config.seed ^ kPoolStream);
    const auto sized = at_training_size(normals, config.image_size);
    for (const Image& im : sized) {
        auto& entry = pool.emplace_back();
        for (int k = 0; k < config.anomaly_pool; ++k) {
            entry.push_back(synth::sample_training_pair(im, textures, config.synthesis, rng));
        }
    }
    return pool;
}

StageResult train_student(const std::vector<Image>& normals, const synth::TextureStore& textures,
                          const TrainConfig& config, Teacher& teacher, const LogSink& log) {
    config.validate();
    if (normals.empty()) throw ConfigError("train_student: no normal training images");
    if (textures.empty()) throw ConfigError("train_student: texture store is empty");
    if (std::abs(teacher.channel_scale() - config.channel_scale) > 0.0) {
        throw ConfigError("teacher channel_scale differs from config channel_scale");
    }
    const auto images = at_training_size(normals, config.image_size);
    const auto pool = build_anomaly_pool(normals, textures, config);

    Rng rng(config.seed);
    Rng init_rng = rng.split();
    Student student(student_config(config), init_rng);
    student.set_training(true);
    Sgd opt({{"student", config.lr_student, student.named_parameters()}}, config.momentum,
            config.weight_decay);
    IndexSampler sampler(images.size());

    StageResult result;
    const auto t0 = std::chrono::steady_clock::now();
    for (int it = 1; it <= config.stage1_iters; ++it) {
        Batch batch = draw_batch(images, textures, pool, config, sampler, rng, false);
        const FeaturePyramid target = teacher.forward(batch.clean);
        const FeaturePyramid pred = student.forward(batch.anomalous);
        ag::Var loss = losses::cosine_distance_loss(target, pred);
        const double value = loss.value().item();
        guard_loss("student", it, {{"cosine", value}}, config.loss_guard, student);
        opt.zero_grad();
        loss.backward();
        opt.step();
        result.losses.push_back(value);
        if (log) log({"student", it, value, 0.0, 0.0, seconds_since(t0)});
    }

    Checkpoint& ck = result.checkpoint;
    ck.stage = "student";
    ck.iteration = config.stage1_iters;
    ck.teacher_digest = teacher.digest();
    ck.rng_state = rng.state();
    ck.config = config;
    export_state(student, "student.", ck.tensors);
    return result;
}

StageResult train_segmentation(const std::vector<Image>& normals, const synth::TextureStore& textures,
                               const Checkpoint& student_checkpoint, Teacher& teacher,
                               const LogSink& log) {
    const TrainConfig& config = student_checkpoint.config;
    config.validate();
    if (normals.empty()) throw ConfigError("train_segmentation: no normal training images");
    if (textures.empty()) throw ConfigError("train_segmentation: texture store is empty");
    if (student_checkpoint.stage != "student") {
        throw LoadError("train_segmentation needs a stage-one checkpoint, got stage '" +
                        student_checkpoint.stage + "'");
    }
    if (student_checkpoint.teacher_digest != teacher.digest()) {
        throw LoadError("student checkpoint was trained against teacher " + student_checkpoint.teacher_digest +
                        ", loaded teacher is " + teacher.digest());
    }
    const auto images = at_training_size(normals, config.image_size);
    const auto pool = build_anomaly_pool(normals, textures, config);

    Rng rng(0);
    rng.restore(student_checkpoint.rng_state);
    Rng unused(0);
    Student student(student_config(config), unused);
    import_state(student, "student.", student_checkpoint.tensors);
    student.set_training(false);
    student.set_requires_grad(false);

    Rng init_rng = rng.split();
    SegHead seg(seg_config(config, teacher), init_rng);
    seg.set_training(true);
    Sgd opt(seg_param_groups(seg, config), config.momentum, config.weight_decay);
    const losses::LossConfig loss_cfg{config.focal_gamma, config.focal_eps};
    IndexSampler sampler(images.size());

    StageResult result;
    const auto t0 = std::chrono::steady_clock::now();
    for (int it = 1; it <= config.stage2_iters; ++it) {
        Batch batch = draw_batch(images, textures, pool, config, sampler, rng, true);
        const FeaturePyramid ft = teacher.forward(batch.anomalous);
        const FeaturePyramid fs = student.forward(batch.anomalous);
        ag::Var prob = seg.forward(build_seg_input(ft, fs));
        losses::SegLoss loss = losses::seg_loss(prob, batch.masks, loss_cfg);
        const double total = loss.total.value().item();
        const double focal = loss.focal.value().item();
        const double l1 = loss.l1.value().item();
        guard_loss("segmentation", it, {{"total", total}, {"focal", focal}, {"l1", l1}}, config.loss_guard,
                   seg);
        opt.zero_grad();
        loss.total.backward();
        opt.step();
        result.losses.push_back(total);
        if (log) log({"segmentation", it, total, focal, l1, seconds_since(t0)});
    }

    Checkpoint& ck = result.checkpoint;
    ck.stage = "segmentation";
    ck.iteration = config.stage2_iters;
    ck.teacher_digest = student_checkpoint.teacher_digest;
    ck.rng_state = rng.state();
    ck.config = config;
    for (const auto& entry : student_checkpoint.tensors) {
        if (entry.first.rfind("student.", 0) == 0) ck.tensors.push_back(entry);
    }
    export_state(seg, "seg.", ck.tensors);
    return result;
}

// ------------------------------------------------------------- inference

Detector::Detector(const Checkpoint& checkpoint, Teacher& teacher)
    : config_(checkpoint.config), teacher_(teacher) {
    if (checkpoint.stage != "segmentation") {
        throw LoadError("inference needs a segmentation checkpoint, got stage '" + checkpoint.stage + "'");
    }
    if (checkpoint.teacher_digest != teacher.digest()) {
        throw LoadError("checkpoint was trained against teacher " + checkpoint.teacher_digest +
                        ", loaded teacher is " + teacher.digest());
    }
    Rng unused(0);
    student_ = std::make_unique<Student>(student_config(config_), unused);
    seg_ = std::make_unique<SegHead>(seg_config(config_, teacher), unused);
    import_state(*student_, "student.", checkpoint.tensors);
    import_state(*seg_, "seg.", checkpoint.tensors);
    for (nn::Module* m : {static_cast<nn::Module*>(student_.get()), static_cast<nn::Module*>(seg_.get())}) {
        m->set_training(false);
        m->set_requires_grad(false);
    }
}

ProbMap Detector::infer_native(const Image& image) {
    const int size = config_.image_size;
    const Image input =
        image.height() == size && image.width() == size ? image : resize_bilinear(image, size, size);
    const FeaturePyramid ft = teacher_.forward(input.pixels);
    const FeaturePyramid fs = student_->forward(input.pixels);
    return ProbMap::from_tensor(seg_->forward(build_seg_input(ft, fs)).value());
}

Inference Detector::infer(const Image& image) {
    ProbMap native = infer_native(image);
    Inference out;
    out.map = resize_bilinear(native, image.height(), image.width());
    out.score = image_score(out.map, config_.top_k);
    return out;
}

}  // namespace pfadseg
