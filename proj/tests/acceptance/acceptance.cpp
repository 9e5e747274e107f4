// Acceptance harness. Prints one line per criterion:
//   PASS|FAIL|SKIP <criterion> <details>
// and exits nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "pfadseg/archive.hpp"
#include "pfadseg/errors.hpp"
#include "pfadseg/losses.hpp"
#include "pfadseg/metrics.hpp"
#include "pfadseg/report.hpp"
#include "pfadseg/seghead.hpp"
#include "pfadseg/student.hpp"
#include "pfadseg/synth.hpp"
#include "pfadseg/teacher.hpp"
#include "pfadseg/toy.hpp"
#include "pfadseg/trainer.hpp"

using namespace pfadseg;
using gradcheck::probe;
using gradcheck::randn;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

/// Collects failed sub-checks of one criterion.
struct Criterion {
    std::string name;
    Clock::time_point start = Clock::now();
    std::vector<std::string> problems;
    std::ostringstream info;

    explicit Criterion(std::string n) : name(std::move(n)) {}

    void expect(bool ok, const std::string& what) {
        if (!ok) problems.push_back(what);
    }
    double seconds() const { return std::chrono::duration<double>(Clock::now() - start).count(); }

    void finish(double time_limit) {
        const double s = seconds();
        if (s > time_limit) problems.push_back("runtime " + std::to_string(s) + " s over " + std::to_string(time_limit));
        std::ostringstream line;
        line << (problems.empty() ? "PASS " : "FAIL ") << name << " time=" << s << "s";
        const std::string extra = info.str();
        if (!extra.empty()) line << " " << extra;
        const std::size_t shown = std::min<std::size_t>(problems.size(), 5);
        for (std::size_t i = 0; i < shown; ++i) line << " | " << problems[i];
        if (problems.size() > shown) line << " | (" << problems.size() - shown << " more)";
        std::printf("%s\n", line.str().c_str());
        std::fflush(stdout);
        if (!problems.empty()) ++g_failures;
    }
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void loss_identities() {
    Criterion c("loss_identity");
    Rng rng(101);
    FeaturePyramid a, neg;
    for (int i = 0; i < 3; ++i) {
        const int ch = 16 << i, side = 16 >> i;
        a.levels[i] = ag::constant(randn({2, ch, side, side}, rng));
        Tensor flipped = a.levels[i].value();
        for (double& v : flipped.values()) v = -v;
        neg.levels[i] = ag::constant(flipped);
    }
    const double same = losses::cosine_distance_loss(a, a).value().item();
    const double anti = losses::cosine_distance_loss(a, neg).value().item();
    c.expect(std::abs(same) <= 1e-5, "identical pyramids gave " + fmt(same));
    c.expect(std::abs(anti - 6.0) <= 1e-5, "antipodal pyramids gave " + fmt(anti));

    Tensor k({2, 1, 16, 16});
    for (double& v : k.values()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    const double seg = losses::seg_loss(ag::constant(k), k).total.value().item();
    c.expect(seg <= 1e-5, "L_seg(K, K) = " + fmt(seg));
    c.info << "L_cos(same)=" << fmt(same) << " L_cos(anti)=" << fmt(anti) << " L_seg=" << fmt(seg);
    c.finish(5.0);
}

void gradient_suite() {
    Criterion c("gradient_suite");
    Rng rng(202);
    gradcheck::Options opts;
    double worst = 0.0;
    auto record = [&](const std::string& what, const gradcheck::Report& r) {
        worst = std::max(worst, r.worst());
        c.expect(r.worst() < 1e-3, what + ": " + r.describe());
    };

    // Three samples: batch statistics over two pooled values are degenerate.
    ag::Var x = ag::parameter(randn({3, 4, 6, 6}, rng));
    {
        nn::Spr spr(4, rng);
        record("spr", gradcheck::check([&] { return probe(spr.forward(x)); }, gradcheck::module_slots(spr, x), opts));
    }
    {
        nn::Pcar pcar(4, rng);
        record("pcar",
               gradcheck::check([&] { return probe(pcar.forward(x)); }, gradcheck::module_slots(pcar, x), opts));
    }
    {
        nn::Aff aff(4, rng);
        ag::Var res = ag::parameter(randn({3, 4, 6, 6}, rng));
        auto slots = gradcheck::module_slots(aff, x);
        slots.push_back({"residual", res});
        record("aff", gradcheck::check([&] { return probe(aff.forward(x, res)); }, slots, opts));
    }
    {
        nn::Rcm rcm(4, rng);
        record("rcm", gradcheck::check([&] { return probe(rcm.forward(x)); }, gradcheck::module_slots(rcm, x), opts));
    }
    for (const nn::BlockConfig cfg : {nn::BlockConfig{4, 4, 1, true, true}, nn::BlockConfig{4, 6, 2, true, true},
                                      nn::BlockConfig{4, 6, 2, false, false}}) {
        nn::PaResidualBlock block(cfg, rng);
        record("pa_residual(" + std::to_string(cfg.in_channels) + "->" + std::to_string(cfg.out_channels) + ")",
               gradcheck::check([&] { return probe(block.forward(x)); }, gradcheck::module_slots(block, x), opts));
    }
    {
        FeaturePyramid t, s;
        std::vector<gradcheck::Slot> slots;
        for (int i = 0; i < 3; ++i) {
            const int side = 6 >> i;
            t.levels[i] = ag::parameter(randn({2, 3, side, side}, rng));
            s.levels[i] = ag::parameter(randn({2, 3, side, side}, rng));
            slots.push_back({"teacher" + std::to_string(i), t.levels[i]});
            slots.push_back({"student" + std::to_string(i), s.levels[i]});
        }
        record("cosine_loss", gradcheck::check([&] { return losses::cosine_distance_loss(t, s); }, slots, opts));
    }
    Tensor p0({2, 1, 6, 6}), k({2, 1, 6, 6});
    for (std::size_t i = 0; i < p0.size(); ++i) {
        p0[i] = rng.uniform(0.05, 0.95);
        k[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    }
    ag::Var p = ag::parameter(p0);
    for (double gamma : {0.0, 2.0, 4.0}) {
        record("focal(gamma=" + fmt(gamma) + ")",
               gradcheck::check([&] { return losses::focal_loss(p, k, {gamma, 1e-7}); }, {{"prob", p}}, opts));
    }
    record("l1", gradcheck::check([&] { return losses::l1_loss(p, k); }, {{"prob", p}}, opts));
    c.info << "worst_rel_error=" << fmt(worst);
    c.finish(120.0);
}

void shape_suite() {
    Criterion c("shape_invariants");
    Rng rng(303);
    double worst_softmax = 0.0;
    for (auto [h, w] : {std::pair{8, 8}, std::pair{17, 23}, std::pair{64, 64}}) {
        for (int ch : {8, 16}) {
            const std::string tag = std::to_string(ch) + "x" + std::to_string(h) + "x" + std::to_string(w);
            const ag::Var x = ag::constant(randn({2, ch, h, w}, rng));
            nn::Spr spr(ch, rng);
            nn::Pcar pcar(ch, rng);
            nn::Rcm rcm(ch, rng);
            c.expect(spr.forward(x).shape() == x.shape(), "spr shape " + tag);
            c.expect(rcm.forward(x).shape() == x.shape(), "rcm shape " + tag);
            const nn::Pcar::Output out = pcar.forward_detailed(x);
            c.expect(out.out.shape() == x.shape(), "pcar shape " + tag);
            const Tensor& wts = out.weights.value();
            const std::size_t per = wts.size() / 2;
            for (int n = 0; n < 2; ++n) {
                double sum = 0.0;
                for (std::size_t i = 0; i < per; ++i) sum += wts[n * per + i];
                worst_softmax = std::max(worst_softmax, std::abs(sum - 1.0));
            }
        }
    }
    c.expect(worst_softmax <= 1e-5, "softmax sum off by " + fmt(worst_softmax));

    FeaturePyramid ft, fs;
    for (int i = 0; i < 3; ++i) {
        const int ch = 8 << i, side = 16 >> i;
        ft.levels[i] = ag::constant(randn({2, ch, side, side}, rng));
        fs.levels[i] = ag::constant(randn({2, ch, side, side}, rng));
    }
    double sim_lo = 0.0, sim_hi = 0.0;
    for (int i = 0; i < 3; ++i) {
        const Tensor s = ag::sum_channels(cosine_similarity_map(ft[i], fs[i])).value();
        for (double v : s.values()) {
            sim_lo = std::min(sim_lo, v);
            sim_hi = std::max(sim_hi, v);
        }
    }
    c.expect(sim_lo >= -1.0 - 1e-6 && sim_hi <= 1.0 + 1e-6, "SimMap sums span [" + fmt(sim_lo) + ", " + fmt(sim_hi) + "]");

    const ag::Var seg_in = build_seg_input(ft, fs);
    SegHead head({seg_in.shape().c, 0.125, true, true, true}, rng);
    const Tensor prob = head.forward(seg_in).value();
    const auto [pmin, pmax] = std::minmax_element(prob.values().begin(), prob.values().end());
    c.expect(*pmin >= 0.0 && *pmax <= 1.0, "ProbMap spans [" + fmt(*pmin) + ", " + fmt(*pmax) + "]");
    c.info << "softmax_dev=" << fmt(worst_softmax) << " simmap=[" << fmt(sim_lo) << "," << fmt(sim_hi) << "]";
    c.finish(30.0);
}

void metric_oracle_suite() {
    Criterion c("metric_oracle");
    Rng rng(404);
    int undefined_k = 0;
    double worst = 0.0, worst_pro = 0.0;
    for (int t = 0; t < 200; ++t) {
        const oracle::MetricCase mc = oracle::random_case(rng, 16);
        const std::string tag = "case " + std::to_string(t) + " ";
        const double auc = metrics::image_auc(mc.image_scores, mc.image_labels);
        const double ap = metrics::pixel_ap(mc.maps, mc.masks);
        const double iap = metrics::iap(mc.maps, mc.masks);
        const double pro = metrics::pro_score(mc.maps, mc.masks);
        const oracle::IapResult o = oracle::iap_enumerate(mc.maps, mc.masks);
        const double d_auc = std::abs(auc - oracle::auc_pairwise(mc.image_scores, mc.image_labels));
        const double d_ap = std::abs(ap - oracle::pixel_ap(mc.maps, mc.masks));
        const double d_iap = std::abs(iap - o.iap);
        const double d_pro = std::abs(pro - oracle::pro_enumerate(mc.maps, mc.masks, 0.3));
        c.expect(d_auc <= 1e-9, tag + "image_auc off by " + fmt(d_auc));
        c.expect(d_ap <= 1e-9, tag + "pixel_ap off by " + fmt(d_ap));
        c.expect(d_iap <= 1e-9, tag + "iap off by " + fmt(d_iap));
        c.expect(d_pro <= 1e-6, tag + "pro off by " + fmt(d_pro));
        worst = std::max({worst, d_auc, d_ap, d_iap});
        worst_pro = std::max(worst_pro, d_pro);
        if (o.iap_at_90 >= 0.0) {
            const double d = std::abs(metrics::iap_at_k(mc.maps, mc.masks, 90) - o.iap_at_90);
            c.expect(d <= 1e-9, tag + "iap@90 off by " + fmt(d));
            worst = std::max(worst, d);
        } else {
            ++undefined_k;
            bool threw = false;
            try {
                metrics::iap_at_k(mc.maps, mc.masks, 90);
            } catch (const UndefinedMetric&) {
                threw = true;
            }
            c.expect(threw, tag + "iap@90 defined where the oracle never reaches 90% recall");
        }
    }
    c.info << "worst=" << fmt(worst) << " worst_pro=" << fmt(worst_pro) << " iap90_undefined=" << undefined_k;
    c.finish(60.0);
}

void synthesis_suite() {
    Criterion c("synthesis");
    const auto normals = toy::normal_images(2, 64, 11);
    const auto textures = toy::texture_images(3, 64, 12);
    const AnomalyMask empty(64, 64), full(64, 64, 1);
    c.expect(synth::blend_anomaly(normals[0], textures[0], empty, 0.8).pixels.storage() == normals[0].pixels.storage(),
             "K = 0 must return the normal image");
    c.expect(synth::blend_anomaly(normals[0], textures[0], full, 0.0).pixels.storage() == normals[0].pixels.storage(),
             "beta = 0 must return the normal image");
    c.expect(synth::blend_anomaly(normals[0], textures[0], full, 1.0).pixels.storage() == textures[0].pixels.storage(),
             "K = 1, beta = 1 must return the texture");

    const synth::TextureStore store(textures);
    const synth::SynthesisConfig cfg;
    Rng a(7), b(7);
    for (int i = 0; i < 5; ++i) {
        const auto pa = synth::sample_training_pair(normals[i % 2], store, cfg, a);
        const auto pb = synth::sample_training_pair(normals[i % 2], store, cfg, b);
        c.expect(pa.mask.data == pb.mask.data && pa.anomalous.pixels.storage() == pb.anomalous.pixels.storage() &&
                     pa.beta == pb.beta,
                 "draw " + std::to_string(i) + " differs under the same seed");
    }
    Rng m1(7), m2(7);
    c.expect(synth::generate_perlin_mask(256, 256, cfg, m1).data == synth::generate_perlin_mask(256, 256, cfg, m2).data,
             "perlin masks differ under the same seed");

    Rng many(99);
    int empties = 0;
    double coverage = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto pair = synth::sample_training_pair(normals[i % 2], store, cfg, many);
        if (pair.mask.count() == 0) ++empties;
        coverage += pair.mask.coverage();
    }
    c.expect(empties == 0, std::to_string(empties) + " empty masks in 1000 draws");
    c.info << "mean_coverage=" << fmt(coverage / 1000.0);
    c.finish(30.0);
}

/// One full toy run: both stages, then train-set evaluation.
struct ToyRun {
    TrainConfig config;
    std::string teacher_digest_before, teacher_digest_after;
    StageResult stage1, stage2;
    double native_ap = 0.0, full_ap = 0.0, full_ap_ceiling = 0.0;
    double mask_mean = 0.0, background_mean = 0.0;
    bool inference_deterministic = true;
    std::string report_json;
    double seconds = 0.0;
};

TrainConfig toy_config() {
    TrainConfig c;
    c.stage1_iters = 200;
    c.stage2_iters = 300;
    c.batch_size = 8;
    c.image_size = 64;
    c.channel_scale = 0.25;
    c.random_teacher = true;
    c.anomaly_pool = 1;
    c.seed = 2024;
    return c;
}

ToyRun run_toy() {
    const Clock::time_point start = Clock::now();
    ToyRun run;
    run.config = toy_config();
    const auto normals = toy::normal_images(8, 64, run.config.seed);
    const synth::TextureStore textures(toy::texture_images(6, 64, run.config.seed + 1));
    auto teacher = make_teacher(run.config);
    run.teacher_digest_before = teacher->digest();
    run.stage1 = train_student(normals, textures, run.config, *teacher);
    run.stage2 = train_segmentation(normals, textures, run.stage1.checkpoint, *teacher);
    run.teacher_digest_after = teacher->digest();

    const auto pool = build_anomaly_pool(normals, textures, run.config);
    Detector det(run.stage2.checkpoint, *teacher);
    std::vector<ProbMap> native_maps, full_maps, ceiling_maps;
    std::vector<AnomalyMask> native_masks, full_masks;
    EvaluationInput eval;
    double mask_sum = 0.0, bg_sum = 0.0;
    std::size_t mask_n = 0, bg_n = 0;
    for (std::size_t i = 0; i < normals.size(); ++i) {
        const synth::TrainingPair& pair = pool[i][0];
        const AnomalyMask small = losses::downsample_mask(pair.mask, 4);
        native_maps.push_back(det.infer_native(pair.anomalous));
        native_masks.push_back(small);

        const Inference inf = det.infer(pair.anomalous);
        const Inference again = det.infer(pair.anomalous);
        run.inference_deterministic = run.inference_deterministic && inf.map.data == again.map.data &&
                                      inf.score == again.score;
        for (std::size_t j = 0; j < inf.map.data.size(); ++j) {
            if (pair.mask.data[j]) {
                mask_sum += inf.map.data[j];
                ++mask_n;
            } else {
                bg_sum += inf.map.data[j];
                ++bg_n;
            }
        }
        full_maps.push_back(inf.map);
        full_masks.push_back(pair.mask);

        // Best achievable full-resolution map from a native-resolution mask.
        ProbMap ceiling(pair.mask.height, pair.mask.width);
        for (int y = 0; y < ceiling.height; ++y)
            for (int x = 0; x < ceiling.width; ++x) ceiling.at(y, x) = small.at(y / 4, x / 4);
        ceiling_maps.push_back(ceiling);

        eval.maps.push_back(inf.map);
        eval.masks.push_back(pair.mask);
        eval.scores.push_back(inf.score);
        eval.labels.push_back(1);
        const Inference clean = det.infer(normals[i]);
        eval.maps.push_back(clean.map);
        eval.masks.push_back(AnomalyMask(clean.map.height, clean.map.width));
        eval.scores.push_back(clean.score);
        eval.labels.push_back(0);
    }
    run.native_ap = metrics::pixel_ap(native_maps, native_masks);
    run.full_ap = metrics::pixel_ap(full_maps, full_masks);
    run.full_ap_ceiling = metrics::pixel_ap(ceiling_maps, full_masks);
    run.mask_mean = mask_n ? mask_sum / static_cast<double>(mask_n) : 0.0;
    run.background_mean = bg_n ? bg_sum / static_cast<double>(bg_n) : 0.0;
    MetricReport report;
    report.categories.push_back(compute_metrics("toy", eval));
    run.report_json = report.to_json();
    run.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return run;
}

double tail_mean(const std::vector<double>& v, std::size_t n) {
    n = std::min(n, v.size());
    return std::accumulate(v.end() - static_cast<std::ptrdiff_t>(n), v.end(), 0.0) / static_cast<double>(n);
}

void toy_overfit(const ToyRun& run) {
    Criterion c("toy_overfit");
    c.start = Clock::now() - std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(run.seconds));
    const double cos0 = run.stage1.losses.front(), cos1 = tail_mean(run.stage1.losses, 10);
    const double seg0 = run.stage2.losses.front(), seg1 = tail_mean(run.stage2.losses, 10);
    c.expect(run.stage1.losses.size() == 200 && run.stage2.losses.size() == 300, "unexpected iteration counts");
    c.expect(cos1 <= 0.5 * cos0, "L_cos " + fmt(cos0) + " -> " + fmt(cos1));
    c.expect(seg1 <= 0.2 * seg0, "L_seg " + fmt(seg0) + " -> " + fmt(seg1));
    c.expect(run.native_ap > 0.9, "train-set pixel AP " + fmt(run.native_ap));
    c.expect(run.teacher_digest_before == run.teacher_digest_after, "teacher weights changed during training");
    c.expect(run.inference_deterministic, "repeated inference differs");
    c.expect(run.mask_mean > run.background_mean,
             "mask mean " + fmt(run.mask_mean) + " <= background mean " + fmt(run.background_mean));
    c.info << "L_cos=" << fmt(cos0) << "->" << fmt(cos1) << " (" << fmt(cos1 / cos0) << "x)"
           << " L_seg=" << fmt(seg0) << "->" << fmt(seg1) << " (" << fmt(seg1 / seg0) << "x)"
           << " pixel_ap=" << fmt(run.native_ap) << " pixel_ap_full_res=" << fmt(run.full_ap)
           << " full_res_ceiling=" << fmt(run.full_ap_ceiling) << " mask_mean=" << fmt(run.mask_mean)
           << " background_mean=" << fmt(run.background_mean);
    c.finish(600.0);
}

void gradient_coverage() {
    Criterion c("student_gradient_coverage");
    TrainConfig cfg = toy_config();
    Rng rng(cfg.seed);
    Teacher teacher(cfg.channel_scale, rng);
    Student student({cfg.channel_scale, true, true}, rng);
    Tensor images({2, 3, 64, 64});
    for (double& v : images.values()) v = rng.uniform();
    losses::cosine_distance_loss(teacher.forward(images), student.forward(images)).backward();
    int zero = 0, total = 0;
    for (const auto& [name, p] : student.named_parameters()) {
        ++total;
        bool nonzero = false;
        if (!p.grad().empty())
            for (double g : p.grad().values()) nonzero = nonzero || g != 0.0;
        if (!nonzero) {
            ++zero;
            c.expect(false, "no gradient reaches " + name);
        }
    }
    c.info << "parameters=" << total << " without_gradient=" << zero;
    c.finish(60.0);
}

void ablation_structure() {
    Criterion c("ablation_structure");
    struct Row {
        int row;
        bool rcm, aff, pcar;
    };
    const auto normals = toy::normal_images(2, 32, 5);
    const synth::TextureStore textures(toy::texture_images(2, 32, 6));
    for (const Row r : {Row{1, false, false, false}, Row{4, false, false, true}, Row{6, false, true, true},
                        Row{7, true, true, true}}) {
        TrainConfig cfg;
        cfg.stage1_iters = 1;
        cfg.stage2_iters = 1;
        cfg.batch_size = 2;
        cfg.image_size = 32;
        cfg.channel_scale = 0.125;
        cfg.random_teacher = true;
        cfg.seed = 77;
        cfg.use_rcm = r.rcm;
        cfg.use_aff = r.aff;
        cfg.use_pcar = r.pcar;
        const std::string tag = "row " + std::to_string(r.row) + ": ";
        try {
            auto teacher = make_teacher(cfg);
            const StageResult s1 = train_student(normals, textures, cfg, *teacher);
            const StageResult s2 = train_segmentation(normals, textures, s1.checkpoint, *teacher);
            c.expect(std::isfinite(s1.losses.at(0)) && std::isfinite(s2.losses.at(0)), tag + "non-finite loss");
            Detector det(s2.checkpoint, *teacher);
            const int s_pcar = nn::count_kind(det.student(), "pcar"), s_aff = nn::count_kind(det.student(), "aff");
            const int h_pcar = nn::count_kind(det.seg_head(), "pcar"), h_aff = nn::count_kind(det.seg_head(), "aff");
            const int h_rcm = nn::count_kind(det.seg_head(), "rcm");
            c.expect((s_pcar > 0) == r.pcar && (h_pcar > 0) == r.pcar, tag + "PCAR presence mismatch");
            c.expect((s_aff > 0) == r.aff && (h_aff > 0) == r.aff, tag + "AFF presence mismatch");
            c.expect((h_rcm > 0) == r.rcm && nn::count_kind(det.student(), "rcm") == 0, tag + "RCM presence mismatch");
            c.expect(nn::count_kind(det.student(), "pa_residual") == 16 && nn::count_kind(det.seg_head(), "pa_residual") == 2,
                     tag + "residual block count changed");
            c.info << "row" << r.row << "{pcar=" << s_pcar + h_pcar << ",aff=" << s_aff + h_aff << ",rcm=" << h_rcm << "} ";
        } catch (const std::exception& e) {
            c.expect(false, tag + e.what());
        }
    }
    c.finish(60.0);
}

void determinism(const ToyRun& first) {
    Criterion c("determinism");
    const ToyRun second = run_toy();
    c.expect(first.stage1.checkpoint.digest() == second.stage1.checkpoint.digest(), "stage-one checkpoints differ");
    c.expect(first.stage2.checkpoint.digest() == second.stage2.checkpoint.digest(), "stage-two checkpoints differ");
    const std::string r1 = sha256_hex(std::vector<std::uint8_t>(first.report_json.begin(), first.report_json.end()));
    const std::string r2 = sha256_hex(std::vector<std::uint8_t>(second.report_json.begin(), second.report_json.end()));
    c.expect(r1 == r2, "reports differ");
    c.info << "checkpoint=" << second.stage2.checkpoint.digest().substr(0, 16) << " report=" << r1.substr(0, 16);
    c.finish(600.0);
}

/// Reference targets for a full-scale run, checked only when a report from
/// such a run is supplied through PFADSEG_FULLSCALE_REPORT.
void full_scale_targets() {
    const char* path = std::getenv("PFADSEG_FULLSCALE_REPORT");
    if (!path || !*path) {
        std::printf(
            "SKIP full_scale_targets set PFADSEG_FULLSCALE_REPORT to a report.json from a full-scale run "
            "(targets image_auc 98.9, pixel_ap 76.4, iap 78.7, iap_at_90 62.7, tolerance 1.0)\n");
        return;
    }
    Criterion c("full_scale_targets");
    try {
        const auto bytes = read_file_bytes(path);
        const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
        const auto& mean = j.at("mean");
        for (const auto& [key, target] : {std::pair<const char*, double>{"image_auc", 98.9}, {"pixel_ap", 76.4},
                                          {"iap", 78.7}, {"iap_at_90", 62.7}}) {
            if (mean.at(key).is_null()) {
                c.expect(false, std::string(key) + " is undefined");
                continue;
            }
            const double got = 100.0 * mean.at(key).get<double>();
            c.expect(std::abs(got - target) <= 1.0, std::string(key) + " " + fmt(got) + " vs " + fmt(target));
            c.info << key << "=" << fmt(got) << " ";
        }
    } catch (const std::exception& e) {
        c.expect(false, e.what());
    }
    c.finish(1e9);
}

}  // namespace

int main() {
    loss_identities();
    gradient_suite();
    shape_suite();
    metric_oracle_suite();
    synthesis_suite();
    gradient_coverage();
    ablation_structure();
    const ToyRun run = run_toy();
    toy_overfit(run);
    determinism(run);
    full_scale_targets();
    std::printf("%s %d criteria failed\n", g_failures ? "FAILED" : "OK", g_failures);
    return g_failures ? 1 : 0;
}
