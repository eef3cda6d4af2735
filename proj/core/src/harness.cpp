#include "pcdistill/harness.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "pcdistill/errors.hpp"
#include "pcdistill/ot.hpp"
#include "pcdistill/pointops.hpp"

namespace pcdistill::harness {

namespace {

// Tags for deriving the independent sub-streams of one run.
constexpr std::uint64_t kTagTeacherInit = 0x7e11;
constexpr std::uint64_t kTagStudentInit = 0x57bd;
constexpr std::uint64_t kTagBkrInit = 0xb412;
constexpr std::uint64_t kTagShuffle = 0x5f1e;
constexpr std::uint64_t kTagTrainSplit = 0;
constexpr std::uint64_t kTagTestSplit = 1;

std::uint64_t item_fps_seed(std::uint64_t role_seed, std::uint64_t split_tag, int item) {
    return seed_combine(seed_combine(role_seed, split_tag),
                        static_cast<std::uint64_t>(item));
}

int argmax_class(const Mat& logits) {
    int best = 0;
    for (Index c = 1; c < logits.cols(); ++c)
        if (logits(0, c) > logits(0, best)) best = c;  // ties: lowest class
    return best;
}

void optimizer_step(diff::ParamStore& store, const OptimizerConfig& optim) {
    if (optim.kind == OptimizerConfig::Kind::adam)
        store.adam_step(optim.lr);
    else
        store.sgd_step(optim.lr);
}

Metrics evaluate(const nets::Encoder& net, const LabeledClouds& split,
                 std::uint64_t fps_seed, int classes) {
    std::vector<int> preds;
    preds.reserve(split.clouds.size());
    for (std::size_t i = 0; i < split.clouds.size(); ++i) {
        nets::ForwardTrace trace = net.forward(
            split.clouds[i], item_fps_seed(fps_seed, kTagTestSplit, static_cast<int>(i)));
        preds.push_back(argmax_class(trace.logits.value()));
    }
    return compute_metrics(preds, split.labels, classes);
}

/// Per-level distillation loss for one item. Teacher features enter as
/// frozen constants, so no gradient reaches the teacher.
diff::DiffNode level_loss(bkr::Mode mode, const diff::DiffNode& out,
                          const Mat& student_positions, const nets::FrozenTrace& teacher,
                          std::size_t level, const DistillConfig& cfg) {
    const Mat& f_t = teacher.features[level];
    switch (mode) {
        case bkr::Mode::fl2: {
            // `out` is already the adapter-projected student feature.
            diff::DiffNode r = diff::sub(out, diff::DiffNode::constant(f_t));
            return diff::scale(diff::reduce_sum(diff::hadamard(r, r)),
                               1.0 / static_cast<double>(f_t.rows()));
        }
        case bkr::Mode::remd:
            return ot::remd_loss(out, f_t);
        default: {
            ot::FmdOptions opt;
            opt.k = std::min<Index>(cfg.fmd_k, f_t.rows());
            opt.tau = cfg.fmd_tau;
            opt.normalize_apc = cfg.apc_normalize;
            return ot::fmd_loss(out, student_positions, f_t, teacher.positions[level], opt);
        }
    }
}

struct DistillContext {
    explicit DistillContext(const DistillConfig& c) : cfg(c) {}

    const DistillConfig& cfg;
    const nets::Encoder* teacher = nullptr;  // null for plain training
    std::optional<bkr::BkrParams> bkr_params;
    std::vector<std::optional<nets::FrozenTrace>> teacher_cache;
};

/// Loss graph for one training item. Returns (node, ce value, distill value).
struct ItemLoss {
    diff::DiffNode node;
    double ce = 0.0;
    double distill = 0.0;
};

ItemLoss item_loss(DistillContext& ctx, const nets::Encoder& student, const Mat& cloud,
                   int label, int item_index) {
    const DistillConfig& cfg = ctx.cfg;
    nets::ForwardTrace trace = student.forward(
        cloud, item_fps_seed(cfg.seeds.student_fps, kTagTrainSplit, item_index));
    diff::DiffNode ce = diff::softmax_cross_entropy(trace.logits, label);

    ItemLoss result;
    result.ce = ce.scalar();
    if (!ctx.teacher || cfg.lambda == 0.0) {
        result.node = ce;
        return result;
    }

    auto& cached = ctx.teacher_cache[static_cast<std::size_t>(item_index)];
    if (!cached) {
        // The teacher trace depends only on (cloud, teacher fps seed), so it
        // is computed once per item and reused every epoch.
        cached = nets::freeze(ctx.teacher->forward(
            cloud, item_fps_seed(cfg.seeds.teacher_fps, kTagTrainSplit, item_index)));
    }

    bkr::ReconfiguredStack stack = bkr::reconfigure(trace.levels, *ctx.bkr_params);
    diff::DiffNode distill_sum;
    for (std::size_t l = 0; l < stack.out.size(); ++l) {
        diff::DiffNode ll =
            level_loss(cfg.mode, stack.out[l], trace.levels[l].positions, *cached, l, cfg);
        distill_sum = distill_sum ? diff::add(distill_sum, ll) : ll;
    }
    result.distill = distill_sum.scalar();
    result.node = diff::add(ce, diff::scale(distill_sum, cfg.lambda));
    return result;
}

RunReport run_training(const DistillConfig& cfg, DistillContext& ctx,
                       const nets::Encoder& student, diff::ParamStore& student_store,
                       const Dataset& ds) {
    RunReport report;
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<int> order(ds.train.clouds.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(seed_combine(seed_combine(cfg.seeds.data, kTagShuffle),
                                     static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        EpochStats stats;
        std::size_t item_count = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(stop - start);
            for (std::size_t b = start; b < stop; ++b) {
                const int idx = order[b];
                ItemLoss loss = item_loss(ctx, student, ds.train.clouds[static_cast<std::size_t>(idx)],
                                          ds.train.labels[static_cast<std::size_t>(idx)], idx);
                diff::backward(diff::scale(loss.node, inv_batch));
                stats.ce += loss.ce;
                stats.distill += loss.distill;
                ++item_count;
            }
            optimizer_step(student_store, cfg.optim);
        }
        stats.ce /= static_cast<double>(item_count);
        stats.distill /= static_cast<double>(item_count);
        stats.total = stats.ce + cfg.lambda * stats.distill;
        if (!std::isfinite(stats.total))
            throw NumericError("training diverged at epoch " + std::to_string(epoch));
        report.epochs.push_back(stats);
    }

    report.test = evaluate(student, ds.test, cfg.seeds.student_fps, cfg.encoder.classes);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace

void DistillConfig::validate() const {
    encoder.validate();
    if (lambda < 0.0) throw ConfigError("distill: lambda must be >= 0");
    if (fmd_k < 1) throw ConfigError("distill: fmd k must be >= 1");
    if (epochs < 1) throw ConfigError("distill: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("distill: batch_size must be >= 1");
    if (student_width <= 0.0) throw ConfigError("distill: student width must be positive");
    if (data.points_per_cloud < encoder.points_per_level.front())
        throw ConfigError("distill: points_per_cloud smaller than first encoder level");
}

RunReport pretrain_teacher(const DistillConfig& cfg, diff::ParamStore& teacher) {
    cfg.validate();
    DistillConfig tcfg = cfg;
    tcfg.lambda = 0.0;
    tcfg.encoder.width_scale = 1.0;

    DatasetConfig data_cfg = tcfg.data;
    data_cfg.seed = tcfg.seeds.data;
    Dataset ds = gen_dataset(data_cfg);
    nets::Encoder net(tcfg.encoder, teacher, "teacher",
                      seed_combine(tcfg.seeds.init, kTagTeacherInit));
    // The teacher samples with its own FPS stream during its own training.
    DistillConfig loop_cfg = tcfg;
    loop_cfg.seeds.student_fps = tcfg.seeds.teacher_fps;

    DistillContext ctx{loop_cfg};
    RunReport report;
    try {
        report = run_training(loop_cfg, ctx, net, teacher, ds);
    } catch (const NumericError& e) {
        report.ok = false;
        report.error = e.what();
    }
    return report;
}

RunReport distill(const DistillConfig& cfg, const diff::ParamStore& teacher_params,
                  diff::ParamStore& student) {
    cfg.validate();
    DatasetConfig data_cfg = cfg.data;
    data_cfg.seed = cfg.seeds.data;
    Dataset ds = gen_dataset(data_cfg);

    nets::EncoderConfig teacher_cfg = cfg.encoder;
    teacher_cfg.width_scale = 1.0;
    diff::ParamStore teacher_store;
    nets::Encoder teacher(teacher_cfg, teacher_store, "teacher",
                          seed_combine(cfg.seeds.init, kTagTeacherInit));
    teacher_store.copy_values_from(teacher_params);

    nets::EncoderConfig student_cfg = cfg.encoder;
    student_cfg.width_scale = cfg.student_width;
    nets::Encoder student_net(student_cfg, student, "student",
                              seed_combine(cfg.seeds.init, kTagStudentInit));

    DistillContext ctx{cfg};
    if (cfg.lambda > 0.0) {
        ctx.teacher = &teacher;
        Rng bkr_rng(seed_combine(cfg.seeds.init, kTagBkrInit));
        ctx.bkr_params = bkr::BkrParams::create(student, "bkr", student_cfg.scaled_dims(),
                                                teacher_cfg.scaled_dims(), cfg.mode, bkr_rng);
        ctx.teacher_cache.resize(ds.train.clouds.size());
    }

    RunReport report;
    try {
        report = run_training(cfg, ctx, student_net, student, ds);
    } catch (const NumericError& e) {
        report.ok = false;
        report.error = e.what();
    }
    return report;
}

RunReport train_student_plain(const DistillConfig& cfg, diff::ParamStore& student) {
    cfg.validate();
    DistillConfig scfg = cfg;
    scfg.lambda = 0.0;
    DatasetConfig data_cfg = scfg.data;
    data_cfg.seed = scfg.seeds.data;
    Dataset ds = gen_dataset(data_cfg);

    nets::EncoderConfig student_cfg = scfg.encoder;
    student_cfg.width_scale = scfg.student_width;
    nets::Encoder net(student_cfg, student, "student",
                      seed_combine(scfg.seeds.init, kTagStudentInit));

    DistillContext ctx{scfg};
    RunReport report;
    try {
        report = run_training(scfg, ctx, net, student, ds);
    } catch (const NumericError& e) {
        report.ok = false;
        report.error = e.what();
    }
    return report;
}

void dry_run(const DistillConfig& cfg) {
    cfg.validate();
    nets::EncoderConfig teacher_cfg = cfg.encoder;
    teacher_cfg.width_scale = 1.0;
    nets::EncoderConfig student_cfg = cfg.encoder;
    student_cfg.width_scale = cfg.student_width;

    diff::ParamStore teacher_store, student_store;
    nets::Encoder teacher(teacher_cfg, teacher_store, "teacher",
                          seed_combine(cfg.seeds.init, kTagTeacherInit));
    nets::Encoder student(student_cfg, student_store, "student",
                          seed_combine(cfg.seeds.init, kTagStudentInit));

    Rng cloud_rng(seed_combine(cfg.seeds.data, 0xd4));
    Mat cloud = make_cloud(ShapeClass::sphere, cfg.data.points_per_cloud,
                           cfg.data.noise_sigma, cloud_rng);

    DistillConfig probe = cfg;
    probe.lambda = probe.lambda > 0.0 ? probe.lambda : 1.0;  // force the distill path
    DistillContext ctx{probe};
    ctx.teacher = &teacher;
    Rng bkr_rng(seed_combine(cfg.seeds.init, kTagBkrInit));
    ctx.bkr_params = bkr::BkrParams::create(student_store, "bkr", student_cfg.scaled_dims(),
                                            teacher_cfg.scaled_dims(), cfg.mode, bkr_rng);
    ctx.teacher_cache.resize(1);
    ItemLoss loss = item_loss(ctx, student, cloud, 0, 0);
    if (!std::isfinite(loss.node.scalar()))
        throw NumericError("dry run produced a non-finite loss");
}

SeedPack derive_run_seeds(const SeedPack& base, std::uint64_t run_seed) {
    SeedPack s = base;
    s.init = seed_combine(base.init, run_seed);
    s.student_fps = seed_combine(base.student_fps, run_seed);
    return s;  // data and teacher streams stay fixed across the matrix
}

AblateResult ablate(const DistillConfig& base, const std::vector<bkr::Mode>& modes,
                    const std::vector<std::uint64_t>& seeds,
                    const diff::ParamStore& teacher_params) {
    AblateResult result;
    for (bkr::Mode mode : modes) {
        std::vector<double> oas, maccs;
        for (std::uint64_t seed : seeds) {
            DistillConfig cfg = base;
            cfg.mode = mode;
            cfg.seeds = derive_run_seeds(base.seeds, seed);
            AblateRow row;
            row.mode = bkr::to_string(mode);
            row.seed = seed;
            try {
                diff::ParamStore student;
                RunReport rep = distill(cfg, teacher_params, student);
                if (!rep.ok) {
                    row.failed = true;
                    row.error = rep.error;
                } else {
                    row.oa = rep.test.oa;
                    row.macc = rep.test.macc;
                    row.final_ce = rep.epochs.back().ce;
                    row.final_distill = rep.epochs.back().distill;
                    row.wall_seconds = rep.wall_seconds;
                    oas.push_back(row.oa);
                    maccs.push_back(row.macc);
                }
            } catch (const std::exception& e) {
                row.failed = true;
                row.error = e.what();
            }
            result.rows.push_back(row);
        }

        AblateSummary s;
        s.mode = bkr::to_string(mode);
        s.runs = static_cast<int>(oas.size());
        auto mean = [](const std::vector<double>& v) {
            return v.empty() ? 0.0
                             : std::accumulate(v.begin(), v.end(), 0.0) /
                                   static_cast<double>(v.size());
        };
        auto stdev = [&](const std::vector<double>& v, double m) {
            if (v.size() < 2) return 0.0;
            double acc = 0.0;
            for (double x : v) acc += (x - m) * (x - m);
            return std::sqrt(acc / static_cast<double>(v.size() - 1));
        };
        s.oa_mean = mean(oas);
        s.oa_std = stdev(oas, s.oa_mean);
        s.macc_mean = mean(maccs);
        s.macc_std = stdev(maccs, s.macc_mean);
        result.summaries.push_back(s);
    }
    return result;
}

HistogramResult inconsistency_histogram(const std::vector<Mat>& clouds,
                                        const HistogramConfig& cfg) {
    if (cfg.n_bins < 1) throw std::invalid_argument("histogram: n_bins must be >= 1");
    if (cfg.sample_m < 1) throw std::invalid_argument("histogram: sample_m must be >= 1");

    HistogramResult res;
    res.counts.assign(static_cast<std::size_t>(cfg.n_bins), 0);
    const double bin_width = 2.0 / static_cast<double>(cfg.n_bins);
    std::int64_t above_one = 0;

    for (std::size_t ci = 0; ci < clouds.size(); ++ci) {
        const Mat& cloud = clouds[ci];
        if (cloud.rows() < cfg.sample_m) {
            ++res.clouds_skipped;
            continue;
        }
        const std::uint64_t ts = seed_combine(cfg.teacher_seed, ci);
        const std::uint64_t ss =
            cfg.shared_seed ? ts : seed_combine(cfg.student_seed, ci);
        std::vector<Index> t_sel = pointops::fps(cloud, cfg.sample_m, ts);
        std::vector<Index> s_sel = pointops::fps(cloud, cfg.sample_m, ss);

        Mat t_pts(cfg.sample_m, 3), s_pts(cfg.sample_m, 3);
        for (Index i = 0; i < cfg.sample_m; ++i) {
            t_pts.row(i) = cloud.row(t_sel[static_cast<std::size_t>(i)]);
            s_pts.row(i) = cloud.row(s_sel[static_cast<std::size_t>(i)]);
        }

        for (Index i = 0; i < cfg.sample_m; ++i) {
            double d;
            if (cfg.pair_by_nearest) {
                d = (s_pts.rowwise() - t_pts.row(i)).rowwise().norm().minCoeff();
            } else {
                d = (t_pts.row(i) - s_pts.row(i)).norm();
            }
            int bin = static_cast<int>(d / bin_width);
            bin = std::min(std::max(bin, 0), cfg.n_bins - 1);
            ++res.counts[static_cast<std::size_t>(bin)];
            if (d > 1.0) ++above_one;
            ++res.pairs;
        }
        ++res.clouds_used;
    }

    res.frequency.assign(static_cast<std::size_t>(cfg.n_bins), 0.0);
    if (res.pairs > 0) {
        for (int b = 0; b < cfg.n_bins; ++b)
            res.frequency[static_cast<std::size_t>(b)] =
                static_cast<double>(res.counts[static_cast<std::size_t>(b)]) /
                static_cast<double>(res.pairs);
        res.fraction_gt_1 = static_cast<double>(above_one) / static_cast<double>(res.pairs);
    }
    return res;
}

}  // namespace pcdistill::harness
