#include "pcdistill/bkr.hpp"

#include <cmath>
#include <stdexcept>

#include "pcdistill/errors.hpp"
#include "pcdistill/pointops.hpp"

namespace pcdistill::bkr {

namespace {

LinearParams make_linear(diff::ParamStore& store, const std::string& name, Index d_in,
                         Index d_out, double stddev, Rng& rng) {
    LinearParams p;
    p.w = store.create_normal(name + ".W", d_in, d_out, stddev, rng);
    p.b = store.create_zeros(name + ".b", 1, d_out);
    return p;
}

diff::DiffNode apply(const LinearParams& p, const diff::DiffNode& x) {
    return diff::pointwise_linear(x, p.w, p.b);
}

/// Upsample a coarse node to the fine positions through a constant
/// row-stochastic matrix (repetition when the source is global).
diff::DiffNode upsample(const diff::DiffNode& coarse, const Mat& pos_coarse,
                        const Mat& pos_fine, bool source_global) {
    if (source_global)
        return diff::left_apply(Mat::Ones(pos_fine.rows(), 1), coarse);
    return diff::left_apply(pointops::interp_weights(pos_coarse, pos_fine), coarse);
}

/// Downsample a fine node by the nearest-neighbor gather matrix.
diff::DiffNode downsample(const diff::DiffNode& fine, const Mat& pos_fine,
                          const Mat& pos_coarse) {
    std::vector<Index> idx = pointops::nearest_indices(pos_fine, pos_coarse);
    Mat select = Mat::Zero(pos_coarse.rows(), pos_fine.rows());
    for (Index j = 0; j < pos_coarse.rows(); ++j) select(j, idx[static_cast<std::size_t>(j)]) = 1.0;
    return diff::left_apply(select, fine);
}

}  // namespace

Mode mode_from_string(const std::string& s) {
    for (Mode m : all_modes())
        if (to_string(m) == s) return m;
    throw ConfigError("unknown distillation mode: " + s);
}

std::string to_string(Mode m) {
    switch (m) {
        case Mode::fl2: return "fl2";
        case Mode::remd: return "remd";
        case Mode::fmd: return "fmd";
        case Mode::tdkr_fmd: return "tdkr_fmd";
        case Mode::bukr_fmd: return "bukr_fmd";
        case Mode::tdkr_bukr_fmd: return "tdkr_bukr_fmd";
        case Mode::bkr_fmd: return "bkr_fmd";
    }
    throw std::invalid_argument("bad mode enum");
}

const std::vector<Mode>& all_modes() {
    static const std::vector<Mode> modes = {Mode::fl2,      Mode::remd,
                                            Mode::fmd,      Mode::tdkr_fmd,
                                            Mode::bukr_fmd, Mode::tdkr_bukr_fmd,
                                            Mode::bkr_fmd};
    return modes;
}

bool mode_uses_tdkr(Mode m) {
    return m == Mode::tdkr_fmd || m == Mode::tdkr_bukr_fmd || m == Mode::bkr_fmd;
}

bool mode_uses_bukr(Mode m) {
    return m == Mode::bukr_fmd || m == Mode::tdkr_bukr_fmd || m == Mode::bkr_fmd;
}

bool mode_uses_residual(Mode m) { return m == Mode::bkr_fmd; }

bool mode_uses_projection(Mode m) {
    return m == Mode::fl2 || m == Mode::remd || m == Mode::fmd || m == Mode::bukr_fmd ||
           m == Mode::bkr_fmd;
}

BkrParams BkrParams::create(diff::ParamStore& store, const std::string& prefix,
                            const std::vector<int>& student_dims,
                            const std::vector<int>& teacher_dims, Mode mode, Rng& rng) {
    if (student_dims.size() != teacher_dims.size() || student_dims.empty())
        throw ConfigError("BkrParams: student/teacher level count mismatch");
    const std::size_t levels = student_dims.size();

    BkrParams p;
    p.mode = mode;
    auto kaiming = [](int fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); };
    // Gates start near the neutral 0.5/0.5 mixture (small weights, zero bias).
    constexpr double kGateStd = 0.01;

    if (mode_uses_tdkr(mode)) {
        for (std::size_t l = 0; l < levels; ++l) {
            const std::string base = prefix + ".td.l" + std::to_string(l);
            p.td_proj_s.push_back(make_linear(store, base + ".proj_s", student_dims[l],
                                              teacher_dims[l], kaiming(student_dims[l]), rng));
            if (l + 1 < levels) {
                p.td_proj_up.push_back(make_linear(store, base + ".proj_up", teacher_dims[l + 1],
                                                   teacher_dims[l], kaiming(teacher_dims[l + 1]),
                                                   rng));
                GateParams g;
                g.fc = make_linear(store, base + ".gate", 2 * teacher_dims[l], 2, kGateStd, rng);
                p.td_gate.push_back(g);
            }
        }
    }
    if (mode_uses_bukr(mode)) {
        for (std::size_t l = 0; l < levels; ++l) {
            const std::string base = prefix + ".bu.l" + std::to_string(l);
            p.bu_proj_td.push_back(make_linear(store, base + ".proj_td", teacher_dims[l],
                                               teacher_dims[l], kaiming(teacher_dims[l]), rng));
            if (l > 0) {
                p.bu_proj_down.push_back(make_linear(store, base + ".proj_down",
                                                     teacher_dims[l - 1], teacher_dims[l],
                                                     kaiming(teacher_dims[l - 1]), rng));
                GateParams g;
                g.fc = make_linear(store, base + ".gate", 2 * teacher_dims[l], 2, kGateStd, rng);
                p.bu_gate.push_back(g);
            }
        }
    }
    if (mode_uses_projection(mode)) {
        for (std::size_t l = 0; l < levels; ++l) {
            p.proj.push_back(make_linear(store, prefix + ".proj.l" + std::to_string(l),
                                         student_dims[l], teacher_dims[l],
                                         kaiming(student_dims[l]), rng));
        }
    }
    return p;
}

diff::DiffNode gate_fuse(const diff::DiffNode& x, const diff::DiffNode& y,
                         const GateParams& g) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw std::invalid_argument("gate_fuse: operand shape mismatch");
    diff::DiffNode w = diff::sigmoid(apply(g.fc, diff::concat_cols(x, y)));
    diff::DiffNode g1 = diff::slice_cols(w, 0, 1);
    diff::DiffNode g2 = diff::slice_cols(w, 1, 1);
    return diff::add(diff::scale_rows(x, g1), diff::scale_rows(y, g2));
}

std::vector<diff::DiffNode> tdkr(const std::vector<LevelFeature>& student,
                                 const BkrParams& p) {
    const std::size_t levels = student.size();
    if (levels == 0 || p.td_proj_s.size() != levels)
        throw ConfigError("tdkr: level/parameter count mismatch");

    std::vector<diff::DiffNode> td(levels);
    td[levels - 1] = apply(p.td_proj_s[levels - 1], student[levels - 1].features);
    for (std::size_t l = levels - 1; l-- > 0;) {
        diff::DiffNode up = upsample(td[l + 1], student[l + 1].positions,
                                     student[l].positions, student[l + 1].is_global);
        diff::DiffNode up_matched = apply(p.td_proj_up[l], up);
        diff::DiffNode s_matched = apply(p.td_proj_s[l], student[l].features);
        td[l] = gate_fuse(s_matched, up_matched, p.td_gate[l]);
    }
    return td;
}

std::vector<diff::DiffNode> bukr(const std::vector<diff::DiffNode>& td_in,
                                 const std::vector<LevelFeature>& student,
                                 const BkrParams& p) {
    const std::size_t levels = student.size();
    if (td_in.size() != levels || p.bu_proj_td.size() != levels)
        throw ConfigError("bukr: level/parameter count mismatch");

    std::vector<diff::DiffNode> bu(levels);
    bu[0] = apply(p.bu_proj_td[0], td_in[0]);
    for (std::size_t l = 1; l < levels; ++l) {
        diff::DiffNode down =
            downsample(bu[l - 1], student[l - 1].positions, student[l].positions);
        diff::DiffNode down_matched = apply(p.bu_proj_down[l - 1], down);
        diff::DiffNode td_matched = apply(p.bu_proj_td[l], td_in[l]);
        bu[l] = gate_fuse(td_matched, down_matched, p.bu_gate[l - 1]);
    }
    return bu;
}

ReconfiguredStack reconfigure(const std::vector<LevelFeature>& student, const BkrParams& p) {
    const std::size_t levels = student.size();
    ReconfiguredStack stack;

    std::vector<diff::DiffNode> projected;
    if (mode_uses_projection(p.mode)) {
        projected.reserve(levels);
        for (std::size_t l = 0; l < levels; ++l)
            projected.push_back(apply(p.proj[l], student[l].features));
    }

    if (mode_uses_tdkr(p.mode)) stack.td = tdkr(student, p);

    if (mode_uses_bukr(p.mode)) {
        // Without TDKR the bottom-up pass consumes the projected student
        // features directly.
        const std::vector<diff::DiffNode>& td_in =
            mode_uses_tdkr(p.mode) ? stack.td : projected;
        stack.bu = bukr(td_in, student, p);
    }

    switch (p.mode) {
        case Mode::fl2:
        case Mode::remd:
        case Mode::fmd:
            stack.out = projected;
            break;
        case Mode::tdkr_fmd:
            stack.out = stack.td;
            break;
        case Mode::bukr_fmd:
        case Mode::tdkr_bukr_fmd:
            stack.out = stack.bu;
            break;
        case Mode::bkr_fmd:
            stack.out.reserve(levels);
            for (std::size_t l = 0; l < levels; ++l)
                stack.out.push_back(diff::add(stack.bu[l], projected[l]));
            break;
    }
    return stack;
}

}  // namespace pcdistill::bkr
