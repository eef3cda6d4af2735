#pragma once

#include <string>
#include <vector>

#include "pcdistill/diff.hpp"
#include "pcdistill/param_store.hpp"
#include "pcdistill/types.hpp"

namespace pcdistill::bkr {

/// Features of one encoder resolution level. The global level has a single
/// row whose position is the centroid of the previous level.
struct LevelFeature {
    int level = 0;       // 0-based
    Mat positions;       // n_l x 3
    diff::DiffNode features;  // n_l x d_l
    bool is_global = false;
};

/// Distillation variants, one per ablation row. Cross-level passes are only
/// built when the mode uses them.
enum class Mode { fl2, remd, fmd, tdkr_fmd, bukr_fmd, tdkr_bukr_fmd, bkr_fmd };

Mode mode_from_string(const std::string& s);
std::string to_string(Mode m);
const std::vector<Mode>& all_modes();

bool mode_uses_tdkr(Mode m);
bool mode_uses_bukr(Mode m);
bool mode_uses_residual(Mode m);
/// Modes that need the per-level projection of the raw student feature
/// (baselines, BUKR input, residual term).
bool mode_uses_projection(Mode m);

struct LinearParams {
    diff::DiffNode w, b;
};

struct GateParams {
    LinearParams fc;  // (2d) -> 2
};

/// Per-level parameters for the reconfiguration passes. Parameters are
/// per-level (not shared) and only the groups a mode needs are created, so
/// every registered parameter receives gradient on every step.
struct BkrParams {
    std::vector<LinearParams> td_proj_s;    // d_l^s -> d_l^t
    std::vector<LinearParams> td_proj_up;   // l < L-1: d_{l+1}^t -> d_l^t
    std::vector<GateParams> td_gate;        // l < L-1
    std::vector<LinearParams> bu_proj_td;   // d_l^t -> d_l^t
    std::vector<LinearParams> bu_proj_down; // l > 0: d_{l-1}^t -> d_l^t
    std::vector<GateParams> bu_gate;        // l > 0
    std::vector<LinearParams> proj;         // d_l^s -> d_l^t (baseline/residual)
    Mode mode = Mode::bkr_fmd;

    static BkrParams create(diff::ParamStore& store, const std::string& prefix,
                            const std::vector<int>& student_dims,
                            const std::vector<int>& teacher_dims, Mode mode, Rng& rng);
};

/// Output of one reconfiguration pass. td/bu stay empty for modes that skip
/// those passes; out[l] always matches the teacher feature width at level l.
struct ReconfiguredStack {
    std::vector<diff::DiffNode> td;
    std::vector<diff::DiffNode> bu;
    std::vector<diff::DiffNode> out;
};

/// Gated two-stream fusion: per-point gates from a sigmoid 1x1 convolution
/// over the concatenation, g1 scaling x and g2 scaling y.
diff::DiffNode gate_fuse(const diff::DiffNode& x, const diff::DiffNode& y,
                         const GateParams& g);

/// Top-down pass: the top level is projected to its teacher width; every
/// lower level fuses its projected student feature with the upsampled (and
/// width-matched) feature from the level above.
std::vector<diff::DiffNode> tdkr(const std::vector<LevelFeature>& student,
                                 const BkrParams& p);

/// Bottom-up pass over td_in (the top-down outputs, or projected student
/// features when running without TDKR).
std::vector<diff::DiffNode> bukr(const std::vector<diff::DiffNode>& td_in,
                                 const std::vector<LevelFeature>& student,
                                 const BkrParams& p);

/// Full reconfiguration under the given mode's ablation flags.
ReconfiguredStack reconfigure(const std::vector<LevelFeature>& student, const BkrParams& p);

}  // namespace pcdistill::bkr
