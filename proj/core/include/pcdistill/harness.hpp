#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pcdistill/bkr.hpp"
#include "pcdistill/dataset.hpp"
#include "pcdistill/metrics.hpp"
#include "pcdistill/nets.hpp"
#include "pcdistill/param_store.hpp"

namespace pcdistill::harness {

struct OptimizerConfig {
    enum class Kind { sgd, adam };
    Kind kind = Kind::adam;
    double lr = 3e-3;
};

/// The four seeds that fully determine a run: synthetic data, teacher-side
/// FPS, student-side FPS, and parameter initialization. Defaults derive from
/// master seed 1234, matching the CLI.
struct SeedPack {
    std::uint64_t data = seed_combine(1234, 1);
    std::uint64_t teacher_fps = seed_combine(1234, 2);
    std::uint64_t student_fps = seed_combine(1234, 3);
    std::uint64_t init = seed_combine(1234, 4);

    static SeedPack from_master(std::uint64_t master) {
        return {seed_combine(master, 1), seed_combine(master, 2), seed_combine(master, 3),
                seed_combine(master, 4)};
    }
};

struct DistillConfig {
    DatasetConfig data;
    nets::EncoderConfig encoder;  // teacher topology; width_scale is forced to 1
    double student_width = 0.125;
    bkr::Mode mode = bkr::Mode::bkr_fmd;
    double lambda = 0.1;
    Index fmd_k = 5;
    double fmd_tau = -1.0;  // <= 0: adaptive (mean kNN distance per level)
    bool apc_normalize = true;  // stabilizes training; ot::fmd_loss default stays literal
    OptimizerConfig optim;
    int epochs = 30;
    int batch_size = 16;
    SeedPack seeds;

    void validate() const;
};

struct EpochStats {
    double total = 0.0;    // ce + lambda * distill
    double ce = 0.0;       // mean cross-entropy
    double distill = 0.0;  // mean unweighted sum of per-level losses
};

struct RunReport {
    std::vector<EpochStats> epochs;
    Metrics test;
    double wall_seconds = 0.0;  // console diagnostics; not part of artifacts
    bool ok = true;
    std::string error;
};

/// Trains the width-1 encoder with cross-entropy only. Parameters are left in
/// `teacher` (prefix "teacher"). A diverged run returns ok=false instead of
/// throwing.
RunReport pretrain_teacher(const DistillConfig& cfg, diff::ParamStore& teacher);

/// Distills the width-scaled student against a frozen teacher. teacher_params
/// must hold the "teacher"-prefixed parameters from pretraining. With
/// lambda == 0 the run reduces exactly to plain student training. The trained
/// student (plus adapters/BKR parameters) is left in `student`.
RunReport distill(const DistillConfig& cfg, const diff::ParamStore& teacher_params,
                  diff::ParamStore& student);

/// Cross-entropy-only training of the width-scaled student, no teacher
/// involved. Consumes exactly the seed streams distill uses, so a
/// lambda == 0 distillation reproduces this trajectory bit for bit.
RunReport train_student_plain(const DistillConfig& cfg, diff::ParamStore& student);

/// Builds every network and runs one forward/reconfigure/loss round on a
/// synthetic cloud, surfacing shape and configuration errors without
/// training or writing anything.
void dry_run(const DistillConfig& cfg);

struct AblateRow {
    std::string mode;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    double oa = 0.0;
    double macc = 0.0;
    double final_ce = 0.0;
    double final_distill = 0.0;
    double wall_seconds = 0.0;
};

struct AblateSummary {
    std::string mode;
    int runs = 0;
    double oa_mean = 0.0, oa_std = 0.0;
    double macc_mean = 0.0, macc_std = 0.0;
};

struct AblateResult {
    std::vector<AblateRow> rows;
    std::vector<AblateSummary> summaries;
};

/// Full cross-product of modes x seeds against one pretrained teacher. Each
/// run derives its init and student-FPS seeds from the run seed; data and
/// teacher seeds stay fixed so every mode sees the same task. Failures are
/// recorded as rows and the batch continues.
AblateResult ablate(const DistillConfig& base, const std::vector<bkr::Mode>& modes,
                    const std::vector<std::uint64_t>& seeds,
                    const diff::ParamStore& teacher_params);

/// Per-run seed derivation used by ablate (exposed for reproducing a single
/// row).
SeedPack derive_run_seeds(const SeedPack& base, std::uint64_t run_seed);

struct HistogramConfig {
    Index sample_m = 512;
    int n_bins = 40;
    std::uint64_t teacher_seed = 101;
    std::uint64_t student_seed = 202;
    bool shared_seed = false;          // control condition: both roles sample alike
    bool pair_by_nearest = false;      // default pairs i-th selection with i-th
};

struct HistogramResult {
    std::vector<double> frequency;  // normalized, over [0, 2]
    std::vector<std::int64_t> counts;
    double fraction_gt_1 = 0.0;
    std::int64_t pairs = 0;
    int clouds_used = 0;
    int clouds_skipped = 0;
};

/// Position-inconsistency study: per cloud, sample sample_m points twice with
/// independent per-cloud seeds (teacher vs student role), pair the i-th
/// selections and histogram the pair distances over [0, 2].
HistogramResult inconsistency_histogram(const std::vector<Mat>& clouds,
                                        const HistogramConfig& cfg);

}  // namespace pcdistill::harness
