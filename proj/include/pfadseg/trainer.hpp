#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pfadseg/archive.hpp"
#include "pfadseg/losses.hpp"
#include "pfadseg/seghead.hpp"
#include "pfadseg/student.hpp"
#include "pfadseg/synth.hpp"
#include "pfadseg/teacher.hpp"

namespace pfadseg {

/// Every knob of a training run. The flat `key = value` config file uses
/// exactly these field names (see README for the full table).
struct TrainConfig {
    int stage1_iters = 3000;
    int stage2_iters = 4000;
    int batch_size = 16;
    double lr_student = 0.5;
    double lr_seg_blocks = 0.1;
    double lr_rcm = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int image_size = 256;
    std::uint64_t seed = 0;
    double channel_scale = 1.0;
    bool use_rcm = true;
    bool use_aff = true;
    bool use_pcar = true;
    double focal_gamma = 4.0;
    double focal_eps = 1e-7;
    int top_k = kDefaultTopK;
    /// Abort when a loss exceeds this or turns non-finite.
    double loss_guard = 1e4;
    /// 0 draws a fresh anomaly for every sample. N > 0 synthesizes N fixed
    /// anomalies per normal image once, up front, and trains on those.
    int anomaly_pool = 0;
    synth::SynthesisConfig synthesis;
    /// Archive with converted ImageNet weights for the teacher.
    std::string teacher_weights;
    /// Use a seeded random teacher instead of teacher_weights (toy runs).
    bool random_teacher = false;
    std::string textures_dir;

    /// Throws ConfigError naming the offending key.
    void validate() const;
    /// Canonical `key = value` text, keys sorted. Parsing it back yields an
    /// identical config.
    std::string snapshot() const;
    /// Applies `key = value` assignments; unknown keys throw ConfigError.
    void apply(const std::map<std::string, std::string>& values);
    static TrainConfig parse(const std::string& text);
    static TrainConfig load(const std::filesystem::path& path);
};

/// Parses flat `key = value` lines. '#' starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Teacher for a run: the pretrained archive, or a seeded random network
/// when `random_teacher` is set.
std::unique_ptr<Teacher> make_teacher(const TrainConfig& config);

/// Trained weights plus everything needed to reproduce or resume.
struct Checkpoint {
    std::string stage;  // "student" or "segmentation"
    int iteration = 0;
    std::string teacher_digest;
    std::string rng_state;
    TrainConfig config;
    /// "student.<path>" and (stage two) "seg.<path>" tensors.
    std::vector<std::pair<std::string, Tensor>> tensors;

    TensorArchive to_archive() const;
    static Checkpoint from_archive(const TensorArchive& archive);
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
    std::string digest() const { return to_archive().digest(); }
};

/// Copies `module`'s state into `out` under `prefix`.
void export_state(const nn::Module& module, const std::string& prefix,
                  std::vector<std::pair<std::string, Tensor>>& out);
/// Overwrites `module`'s state from `tensors`; throws LoadError on a missing
/// name or shape mismatch.
void import_state(nn::Module& module, const std::string& prefix,
                  const std::vector<std::pair<std::string, Tensor>>& tensors);

/// Plain SGD with momentum and L2 weight decay, matching the common
/// framework update: buf = m * buf + (g + wd * p); p -= lr * buf.
class Sgd {
public:
    struct Group {
        std::string name;
        double lr = 0.0;
        std::vector<std::pair<std::string, ag::Var>> params;
    };

    Sgd(std::vector<Group> groups, double momentum, double weight_decay);
    void zero_grad();
    void step();
    const std::vector<Group>& groups() const { return groups_; }

private:
    std::vector<Group> groups_;
    double momentum_;
    double weight_decay_;
    std::vector<std::vector<Tensor>> buffers_;
};

/// Residual blocks and the output convolution at lr_seg_blocks, RCM at
/// lr_rcm.
std::vector<Sgd::Group> seg_param_groups(const SegHead& head, const TrainConfig& config);

struct StepLog {
    std::string stage;
    int iteration = 0;
    double loss = 0.0;
    double focal = 0.0;  // stage two only
    double l1 = 0.0;     // stage two only
    double seconds = 0.0;
};
using LogSink = std::function<void(const StepLog&)>;

struct StageResult {
    Checkpoint checkpoint;
    std::vector<double> losses;  // one per iteration
};

/// Fixed synthetic anomalies, `config.anomaly_pool` per image, drawn from a
/// stream derived from the seed alone so both stages (and evaluation)
/// see the same pairs. Empty when anomaly_pool == 0.
std::vector<std::vector<synth::TrainingPair>> build_anomaly_pool(const std::vector<Image>& normals,
                                                                  const synth::TextureStore& textures,
                                                                  const TrainConfig& config);

/// Stage one: the student sees pseudo-anomalous images and learns to emit
/// the frozen teacher's features of the clean originals (cosine loss).
StageResult train_student(const std::vector<Image>& normals, const synth::TextureStore& textures,
                          const TrainConfig& config, Teacher& teacher, const LogSink& log = {});

/// Stage two: teacher and student frozen, both fed pseudo-anomalous images;
/// the segmentation head learns the downsampled masks (focal + L1).
StageResult train_segmentation(const std::vector<Image>& normals, const synth::TextureStore& textures,
                               const Checkpoint& student_checkpoint, Teacher& teacher,
                               const LogSink& log = {});

struct Inference {
    ProbMap map;  // input resolution
    double score = 0.0;
};

/// Eval-mode pipeline rebuilt from a stage-two checkpoint.
class Detector {
public:
    /// Throws LoadError when the checkpoint is not a segmentation checkpoint
    /// or was trained against a different teacher.
    Detector(const Checkpoint& checkpoint, Teacher& teacher);

    /// Resizes to the training resolution when needed, and returns the map
    /// bilinearly resampled back to the input size.
    Inference infer(const Image& image);
    /// Map at the head's native (image_size / 4) resolution.
    ProbMap infer_native(const Image& image);

    Student& student() { return *student_; }
    SegHead& seg_head() { return *seg_; }

private:
    TrainConfig config_;
    Teacher& teacher_;
    std::unique_ptr<Student> student_;
    std::unique_ptr<SegHead> seg_;
};

}  // namespace pfadseg
