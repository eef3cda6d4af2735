// pcdistill: dataset generation, teacher pretraining, student distillation,
// ablation matrices, OT solver benchmarking, and the FPS position-
// inconsistency study. All artifacts are CSV or binary checkpoints and are
// byte-identical across reruns with the same config and seeds; wall-clock
// columns only appear with --timing.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pcdistill/bkr.hpp"
#include "pcdistill/config.hpp"
#include "pcdistill/dataset.hpp"
#include "pcdistill/errors.hpp"
#include "pcdistill/harness.hpp"
#include "pcdistill/io.hpp"
#include "pcdistill/ot.hpp"
#include "pcdistill/param_store.hpp"
#include "pcdistill/pointops.hpp"

namespace fs = std::filesystem;
using namespace pcdistill;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct GlobalOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 1234;
    bool seed_given = false;
    bool dry_run = false;
    bool timing = false;
};

const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys = {
        "data.n_train", "data.n_test", "data.points_per_cloud", "data.noise_sigma",
        "data.format",
        "encoder.levels", "encoder.points_per_level", "encoder.dims_per_level",
        "encoder.knn_group", "encoder.classes",
        "student.width",
        "distill.mode", "distill.lambda", "distill.teacher_checkpoint",
        "fmd.k", "fmd.tau", "fmd.apc_normalize",
        "optim.kind", "optim.lr",
        "train.epochs", "train.batch_size",
        "seed.master", "seed.data", "seed.teacher_fps", "seed.student_fps", "seed.init",
        "ablate.modes", "ablate.seeds",
        "otbench.sizes", "otbench.dims", "otbench.repeats", "otbench.eps", "otbench.seed",
        "hist.n_clouds", "hist.points", "hist.noise_sigma", "hist.sample_m", "hist.bins",
        "hist.teacher_seed", "hist.student_seed", "hist.shared_seed", "hist.pairing",
    };
    return keys;
}

Config load_config(const GlobalOpts& g) {
    if (g.config_path.empty()) return Config{};
    Config cfg = Config::load(g.config_path);
    cfg.validate_keys(known_config_keys());
    return cfg;
}

harness::SeedPack read_seeds(const Config& cfg, const GlobalOpts& g) {
    std::uint64_t master = cfg.get_seed("seed.master", 1234);
    if (g.seed_given) master = g.seed;
    harness::SeedPack base = harness::SeedPack::from_master(master);
    harness::SeedPack s;
    s.data = cfg.get_seed("seed.data", base.data);
    s.teacher_fps = cfg.get_seed("seed.teacher_fps", base.teacher_fps);
    s.student_fps = cfg.get_seed("seed.student_fps", base.student_fps);
    s.init = cfg.get_seed("seed.init", base.init);
    return s;
}

harness::DistillConfig read_distill_config(const Config& cfg, const GlobalOpts& g) {
    harness::DistillConfig d;
    d.data.n_train = static_cast<int>(cfg.get_int("data.n_train", 256));
    d.data.n_test = static_cast<int>(cfg.get_int("data.n_test", 128));
    d.data.points_per_cloud = cfg.get_int("data.points_per_cloud", 96);
    d.data.noise_sigma = cfg.get_double("data.noise_sigma", 0.02);

    d.encoder.levels = static_cast<int>(cfg.get_int("encoder.levels", 3));
    auto pts = cfg.get_int_list("encoder.points_per_level", {64, 16, 1});
    d.encoder.points_per_level.assign(pts.begin(), pts.end());
    auto dims = cfg.get_int_list("encoder.dims_per_level", {32, 64, 128});
    d.encoder.dims_per_level.assign(dims.begin(), dims.end());
    d.encoder.knn_group = static_cast<int>(cfg.get_int("encoder.knn_group", 8));
    d.encoder.classes = static_cast<int>(cfg.get_int("encoder.classes", 4));

    d.student_width = cfg.get_double("student.width", 0.125);
    d.mode = bkr::mode_from_string(cfg.get_string("distill.mode", "bkr_fmd"));
    d.lambda = cfg.get_double("distill.lambda", 0.1);
    d.fmd_k = cfg.get_int("fmd.k", 5);
    d.fmd_tau = cfg.get_double("fmd.tau", -1.0);
    d.apc_normalize = cfg.get_bool("fmd.apc_normalize", true);

    const std::string optim = cfg.get_string("optim.kind", "adam");
    if (optim == "adam")
        d.optim.kind = harness::OptimizerConfig::Kind::adam;
    else if (optim == "sgd")
        d.optim.kind = harness::OptimizerConfig::Kind::sgd;
    else
        throw ConfigError("optim.kind must be adam or sgd, got '" + optim + "'");
    d.optim.lr = cfg.get_double("optim.lr", 3e-3);
    d.epochs = static_cast<int>(cfg.get_int("train.epochs", 30));
    d.batch_size = static_cast<int>(cfg.get_int("train.batch_size", 16));

    d.seeds = read_seeds(cfg, g);
    d.data.seed = d.seeds.data;
    return d;
}

std::string fmt(double v) { return io::format_double(v); }

void write_report_files(const std::string& prefix, const harness::RunReport& report,
                        const fs::path& out, bool timing) {
    io::CsvWriter epochs({"epoch", "loss_total", "loss_ce", "loss_distill"});
    for (std::size_t e = 0; e < report.epochs.size(); ++e)
        epochs.add_row({std::to_string(e), fmt(report.epochs[e].total),
                        fmt(report.epochs[e].ce), fmt(report.epochs[e].distill)});
    epochs.write((out / (prefix + "_report.csv")).string());

    std::vector<std::string> header = {"oa", "macc", "status"};
    if (timing) header.push_back("wall_seconds");
    io::CsvWriter summary(header);
    std::vector<std::string> row = {fmt(report.test.oa), fmt(report.test.macc),
                                    report.ok ? "ok" : "failed: " + report.error};
    if (timing) row.push_back(fmt(report.wall_seconds));
    summary.add_row(row);
    summary.write((out / (prefix + "_summary.csv")).string());

    const int classes = static_cast<int>(report.test.confusion.rows());
    std::vector<std::string> chead = {"true_class"};
    for (int c = 0; c < classes; ++c) chead.push_back("pred_" + std::to_string(c));
    io::CsvWriter confusion(chead);
    for (int r = 0; r < classes; ++r) {
        std::vector<std::string> crow = {std::to_string(r)};
        for (int c = 0; c < classes; ++c)
            crow.push_back(std::to_string(report.test.confusion(r, c)));
        confusion.add_row(crow);
    }
    confusion.write((out / (prefix + "_confusion.csv")).string());
}

void print_epoch_tail(const harness::RunReport& report) {
    if (report.epochs.empty()) return;
    const auto& last = report.epochs.back();
    std::cout << "final epoch: total=" << fmt(last.total) << " ce=" << fmt(last.ce)
              << " distill=" << fmt(last.distill) << "\n";
    std::cout << "test: OA=" << fmt(report.test.oa) << " mAcc=" << fmt(report.test.macc)
              << " (wall " << fmt(report.wall_seconds) << "s)\n";
}

int cmd_gen(const GlobalOpts& g) {
    Config cfg = load_config(g);
    harness::DatasetConfig dc;
    dc.n_train = static_cast<int>(cfg.get_int("data.n_train", 256));
    dc.n_test = static_cast<int>(cfg.get_int("data.n_test", 128));
    dc.points_per_cloud = cfg.get_int("data.points_per_cloud", 96);
    dc.noise_sigma = cfg.get_double("data.noise_sigma", 0.02);
    dc.seed = read_seeds(cfg, g).data;
    const std::string format = cfg.get_string("data.format", "pcld");
    if (format != "pcld" && format != "csv")
        throw ConfigError("data.format must be pcld or csv");
    if (g.dry_run) return kExitOk;

    harness::Dataset ds = harness::gen_dataset(dc);
    for (const auto& [split_name, split] :
         {std::pair<const char*, const harness::LabeledClouds*>{"train", &ds.train},
          {"test", &ds.test}}) {
        fs::path dir = fs::path(g.out_dir) / split_name;
        fs::create_directories(dir);
        io::CsvWriter labels({"file", "label", "class"});
        for (std::size_t i = 0; i < split->clouds.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "cloud_%05zu.%s", i, format.c_str());
            PointCloud pc;
            pc.positions = split->clouds[i];
            if (format == "pcld")
                io::write_cloud_pcld((dir / name).string(), pc);
            else
                io::write_cloud_csv((dir / name).string(), pc);
            labels.add_row({name, std::to_string(split->labels[i]),
                            harness::shape_name(
                                static_cast<harness::ShapeClass>(split->labels[i]))});
        }
        labels.write((dir / "labels.csv").string());
    }
    std::cout << "wrote " << dc.n_train << " train / " << dc.n_test << " test clouds to "
              << g.out_dir << "\n";
    return kExitOk;
}

int cmd_train(const GlobalOpts& g) {
    Config cfg = load_config(g);
    harness::DistillConfig d = read_distill_config(cfg, g);
    if (g.dry_run) {
        harness::dry_run(d);
        return kExitOk;
    }

    diff::ParamStore teacher;
    harness::RunReport report = harness::pretrain_teacher(d, teacher);
    fs::create_directories(g.out_dir);
    if (report.ok) teacher.save((fs::path(g.out_dir) / "teacher.pdkp").string());
    write_report_files("train", report, g.out_dir, g.timing);
    print_epoch_tail(report);
    return report.ok ? kExitOk : kExitRuntime;
}

int cmd_distill(const GlobalOpts& g) {
    Config cfg = load_config(g);
    harness::DistillConfig d = read_distill_config(cfg, g);
    const std::string default_ckpt = (fs::path(g.out_dir) / "teacher.pdkp").string();
    const std::string ckpt = cfg.get_string("distill.teacher_checkpoint", default_ckpt);
    if (g.dry_run) {
        harness::dry_run(d);
        return kExitOk;
    }
    if (!fs::exists(ckpt)) throw IoError("teacher checkpoint not found: " + ckpt);

    diff::ParamStore teacher;
    teacher.load(ckpt);
    diff::ParamStore student;
    harness::RunReport report = harness::distill(d, teacher, student);
    fs::create_directories(g.out_dir);
    if (report.ok) student.save((fs::path(g.out_dir) / "student.pdkp").string());
    write_report_files("distill", report, g.out_dir, g.timing);
    print_epoch_tail(report);
    return report.ok ? kExitOk : kExitRuntime;
}

int cmd_ablate(const GlobalOpts& g) {
    Config cfg = load_config(g);
    harness::DistillConfig d = read_distill_config(cfg, g);
    const std::string default_ckpt = (fs::path(g.out_dir) / "teacher.pdkp").string();
    const std::string ckpt = cfg.get_string("distill.teacher_checkpoint", default_ckpt);

    std::vector<std::string> mode_names = cfg.get_string_list(
        "ablate.modes",
        {"fl2", "remd", "fmd", "tdkr_fmd", "bukr_fmd", "tdkr_bukr_fmd", "bkr_fmd"});
    std::vector<bkr::Mode> modes;
    for (const auto& m : mode_names) modes.push_back(bkr::mode_from_string(m));
    std::vector<std::int64_t> seed_list = cfg.get_int_list("ablate.seeds", {0, 1, 2, 3, 4});
    std::vector<std::uint64_t> seeds(seed_list.begin(), seed_list.end());
    if (g.dry_run) {
        harness::dry_run(d);
        return kExitOk;
    }
    if (!fs::exists(ckpt)) throw IoError("teacher checkpoint not found: " + ckpt);

    diff::ParamStore teacher;
    teacher.load(ckpt);
    harness::AblateResult res = harness::ablate(d, modes, seeds, teacher);

    fs::create_directories(g.out_dir);
    std::vector<std::string> header = {"mode",     "seed",       "status", "oa",
                                       "macc",     "final_ce",   "final_distill"};
    if (g.timing) header.push_back("wall_seconds");
    io::CsvWriter rows(header);
    for (const auto& r : res.rows) {
        std::vector<std::string> row = {r.mode,
                                        std::to_string(r.seed),
                                        r.failed ? "failed: " + r.error : "ok",
                                        fmt(r.oa),
                                        fmt(r.macc),
                                        fmt(r.final_ce),
                                        fmt(r.final_distill)};
        if (g.timing) row.push_back(fmt(r.wall_seconds));
        rows.add_row(row);
    }
    rows.write((fs::path(g.out_dir) / "ablate.csv").string());

    io::CsvWriter summary({"mode", "runs", "oa_mean", "oa_std", "macc_mean", "macc_std"});
    for (const auto& s : res.summaries)
        summary.add_row({s.mode, std::to_string(s.runs), fmt(s.oa_mean), fmt(s.oa_std),
                         fmt(s.macc_mean), fmt(s.macc_std)});
    summary.write((fs::path(g.out_dir) / "ablate_summary.csv").string());

    for (const auto& s : res.summaries)
        std::cout << s.mode << ": OA " << fmt(s.oa_mean) << " +- " << fmt(s.oa_std)
                  << ", mAcc " << fmt(s.macc_mean) << " +- " << fmt(s.macc_std) << " ("
                  << s.runs << " runs)\n";
    return kExitOk;
}

int cmd_ot_bench(const GlobalOpts& g) {
    Config cfg = load_config(g);
    std::vector<std::int64_t> sizes = cfg.get_int_list("otbench.sizes", {2, 3, 4, 5, 6, 7});
    std::vector<std::int64_t> dims = cfg.get_int_list("otbench.dims", {1, 2, 8});
    const int repeats = static_cast<int>(cfg.get_int("otbench.repeats", 3));
    std::vector<std::string> eps_list =
        cfg.get_string_list("otbench.eps", {"0.1", "0.01", "0.001"});
    const std::uint64_t seed = cfg.get_seed("otbench.seed", read_seeds(cfg, g).data);
    if (g.dry_run) return kExitOk;

    for (auto n : sizes)
        if (n < 2 || n > 8) throw ConfigError("otbench.sizes must lie in [2, 8]");

    std::vector<std::string> header = {"instance_id", "n", "method", "cost", "iters"};
    if (g.timing) header.push_back("wall_time_us");
    io::CsvWriter csv(header);

    Rng rng(seed);
    auto emit = [&](const std::string& id, std::int64_t n, const std::string& method,
                    double cost, int iters, double us) {
        std::vector<std::string> row = {id, std::to_string(n), method, fmt(cost),
                                        std::to_string(iters)};
        if (g.timing) row.push_back(fmt(us));
        csv.add_row(row);
    };
    auto timed = [&](auto&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        auto value = fn();
        const double us = std::chrono::duration<double, std::micro>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
        return std::pair(value, us);
    };

    for (std::int64_t n : sizes) {
        for (std::int64_t dim : dims) {
            for (int r = 0; r < repeats; ++r) {
                Mat fa(n, dim), fb(n, dim);
                for (Index i = 0; i < n; ++i)
                    for (Index c = 0; c < dim; ++c) {
                        fa(i, c) = rng.uniform();
                        fb(i, c) = rng.uniform();
                    }
                auto a = ot::WeightedFeatureSet::uniform(fa);
                auto b = ot::WeightedFeatureSet::uniform(fb);
                const std::string id = "n" + std::to_string(n) + "_d" + std::to_string(dim) +
                                       "_r" + std::to_string(r);

                auto [bf, bf_us] = timed([&] { return ot::emd_bruteforce(a, b); });
                emit(id, n, "bruteforce", bf, 0, bf_us);
                auto [as, as_us] = timed([&] { return ot::emd_assignment(a, b).first; });
                emit(id, n, "assignment", as, 0, as_us);
                auto [rm, rm_us] = timed([&] { return ot::remd(a, b); });
                emit(id, n, "remd", rm, 0, rm_us);
                for (const std::string& eps_str : eps_list) {
                    const double eps = std::stod(eps_str);
                    auto [sk, sk_us] =
                        timed([&] { return ot::sinkhorn(a, b, eps, 200000, 1e-9); });
                    emit(id, n, "sinkhorn_eps" + eps_str, sk.cost, sk.iterations, sk_us);
                }
            }
        }
    }
    fs::create_directories(g.out_dir);
    csv.write((fs::path(g.out_dir) / "ot_bench.csv").string());
    std::cout << "wrote " << (fs::path(g.out_dir) / "ot_bench.csv").string() << "\n";
    return kExitOk;
}

int cmd_inconsistency_hist(const GlobalOpts& g) {
    Config cfg = load_config(g);
    const int n_clouds = static_cast<int>(cfg.get_int("hist.n_clouds", 500));
    const Index points = cfg.get_int("hist.points", 1024);
    const double noise = cfg.get_double("hist.noise_sigma", 0.02);
    harness::HistogramConfig hc;
    hc.sample_m = cfg.get_int("hist.sample_m", 512);
    hc.n_bins = static_cast<int>(cfg.get_int("hist.bins", 40));
    harness::SeedPack seeds = read_seeds(cfg, g);
    hc.teacher_seed = cfg.get_seed("hist.teacher_seed", seeds.teacher_fps);
    hc.student_seed = cfg.get_seed("hist.student_seed", seeds.student_fps);
    hc.shared_seed = cfg.get_bool("hist.shared_seed", false);
    const std::string pairing = cfg.get_string("hist.pairing", "order");
    if (pairing == "nearest")
        hc.pair_by_nearest = true;
    else if (pairing != "order")
        throw ConfigError("hist.pairing must be order or nearest");
    if (g.dry_run) return kExitOk;

    std::vector<Mat> clouds;
    clouds.reserve(static_cast<std::size_t>(n_clouds));
    const std::uint64_t base = seed_combine(seeds.data, 0x415c);
    for (int i = 0; i < n_clouds; ++i) {
        Rng rng(seed_combine(base, static_cast<std::uint64_t>(i)));
        clouds.push_back(harness::make_cloud(
            static_cast<harness::ShapeClass>(i % harness::kNumClasses), points, noise, rng));
    }

    harness::HistogramResult res = harness::inconsistency_histogram(clouds, hc);

    fs::create_directories(g.out_dir);
    io::CsvWriter hist({"bin_index", "bin_lo", "bin_hi", "count", "frequency"});
    const double w = 2.0 / hc.n_bins;
    for (int b = 0; b < hc.n_bins; ++b)
        hist.add_row({std::to_string(b), fmt(b * w), fmt((b + 1) * w),
                      std::to_string(res.counts[static_cast<std::size_t>(b)]),
                      fmt(res.frequency[static_cast<std::size_t>(b)])});
    hist.write((fs::path(g.out_dir) / "hist.csv").string());

    io::CsvWriter summary(
        {"clouds_used", "clouds_skipped", "pairs", "fraction_gt_1", "pairing"});
    summary.add_row({std::to_string(res.clouds_used), std::to_string(res.clouds_skipped),
                     std::to_string(res.pairs), fmt(res.fraction_gt_1), pairing});
    summary.write((fs::path(g.out_dir) / "hist_summary.csv").string());

    std::cout << "pairs=" << res.pairs << " fraction(d>1)=" << fmt(res.fraction_gt_1)
              << " skipped=" << res.clouds_skipped << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"point cloud feature distillation workbench"};
    app.require_subcommand(1);
    app.fallthrough();  // accept global options after the subcommand too

    GlobalOpts g;
    app.add_option("--config", g.config_path, "flat key=value config file");
    app.add_option("--out", g.out_dir, "output directory for artifacts");
    auto* seed_opt = app.add_option("--seed", g.seed, "master seed override");
    app.add_flag("--dry-run", g.dry_run, "validate config and shapes, write nothing");
    app.add_flag("--timing", g.timing,
                 "include wall-clock columns (breaks byte-identical reruns)");

    auto* gen = app.add_subcommand("gen", "generate the synthetic shape dataset");
    auto* train = app.add_subcommand("train", "pretrain the width-1 teacher");
    auto* distill = app.add_subcommand("distill", "distill the student from a teacher");
    auto* ablate = app.add_subcommand("ablate", "run the mode x seed ablation matrix");
    auto* ot_bench = app.add_subcommand("ot-bench", "benchmark the OT solvers");
    auto* hist = app.add_subcommand("inconsistency-hist",
                                    "FPS position-inconsistency histogram");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }
    g.seed_given = seed_opt->count() > 0;

    try {
        if (gen->parsed()) return cmd_gen(g);
        if (train->parsed()) return cmd_train(g);
        if (distill->parsed()) return cmd_distill(g);
        if (ablate->parsed()) return cmd_ablate(g);
        if (ot_bench->parsed()) return cmd_ot_bench(g);
        if (hist->parsed()) return cmd_inconsistency_hist(g);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
