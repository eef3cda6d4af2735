#include "pcdistill/nets.hpp"

#include <cmath>
#include <stdexcept>

#include "pcdistill/errors.hpp"
#include "pcdistill/pointops.hpp"
#include "pcdistill/rng.hpp"

namespace pcdistill::nets {

std::vector<int> EncoderConfig::scaled_dims() const {
    std::vector<int> dims;
    dims.reserve(dims_per_level.size());
    for (int d : dims_per_level)
        dims.push_back(std::max(1, static_cast<int>(std::lround(d * width_scale))));
    return dims;
}

void EncoderConfig::validate() const {
    if (levels < 1) throw ConfigError("encoder: levels must be >= 1");
    if (points_per_level.size() != static_cast<std::size_t>(levels))
        throw ConfigError("encoder: points_per_level length != levels");
    if (dims_per_level.size() != static_cast<std::size_t>(levels))
        throw ConfigError("encoder: dims_per_level length != levels");
    for (std::size_t l = 0; l + 1 < points_per_level.size(); ++l)
        if (points_per_level[l + 1] >= points_per_level[l])
            throw ConfigError("encoder: points_per_level must be strictly decreasing");
    for (Index n : points_per_level)
        if (n < 1) throw ConfigError("encoder: level sizes must be >= 1");
    for (int d : dims_per_level)
        if (d < 1) throw ConfigError("encoder: level dims must be >= 1");
    if (knn_group < 1) throw ConfigError("encoder: knn_group must be >= 1");
    if (classes < 2) throw ConfigError("encoder: classes must be >= 2");
    if (width_scale <= 0.0) throw ConfigError("encoder: width_scale must be positive");
}

FrozenTrace freeze(const ForwardTrace& trace) {
    FrozenTrace f;
    f.positions.reserve(trace.levels.size());
    f.features.reserve(trace.levels.size());
    for (const auto& lv : trace.levels) {
        f.positions.push_back(lv.positions);
        f.features.push_back(lv.features.value());
    }
    f.logits = trace.logits.value();
    return f;
}

bkr::LevelFeature sa_level(const bkr::LevelFeature& input, Index n_out, Index knn_group,
                           const diff::DiffNode& w, const diff::DiffNode& b,
                           std::uint64_t fps_seed, int level_index) {
    const Index n_in = input.positions.rows();
    if (n_out > n_in) throw ConfigError("sa_level: n_out exceeds input size");

    bkr::LevelFeature out;
    out.level = level_index;

    Index group;
    if (n_out == 1) {
        // Global level: pool over every input point around the centroid.
        out.positions = input.positions.colwise().mean();
        out.is_global = true;
        group = n_in;
    } else {
        std::vector<Index> centers = pointops::fps(input.positions, n_out, fps_seed);
        out.positions.resize(n_out, 3);
        for (Index i = 0; i < n_out; ++i)
            out.positions.row(i) = input.positions.row(centers[static_cast<std::size_t>(i)]);
        group = std::min<Index>(knn_group, n_in);
    }

    // Neighbor gather as a constant selection matrix, relative positions as a
    // constant side input.
    Mat select = Mat::Zero(n_out * group, n_in);
    Mat relpos(n_out * group, 3);
    if (out.is_global) {
        for (Index j = 0; j < n_in; ++j) {
            select(j, j) = 1.0;
            relpos.row(j) = input.positions.row(j) - out.positions.row(0);
        }
    } else {
        NeighborIndex nb = pointops::knn(out.positions, input.positions, group);
        for (Index i = 0; i < n_out; ++i) {
            for (Index c = 0; c < group; ++c) {
                const Index row = i * group + c;
                select(row, nb.indices(i, c)) = 1.0;
                relpos.row(row) =
                    input.positions.row(nb.indices(i, c)) - out.positions.row(i);
            }
        }
    }

    diff::DiffNode gathered = diff::left_apply(select, input.features);
    diff::DiffNode lifted = diff::concat_cols(gathered, diff::DiffNode::constant(relpos));
    diff::DiffNode activated = diff::relu(diff::pointwise_linear(lifted, w, b));
    out.features = diff::group_max_rows(activated, group);
    return out;
}

Encoder::Encoder(EncoderConfig cfg, diff::ParamStore& store, std::string prefix,
                 std::uint64_t init_seed)
    : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(init_seed);
    const std::vector<int> dims = cfg_.scaled_dims();
    auto kaiming = [](Index fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };

    Index d_in = 3;  // level-0 features are the coordinates themselves
    for (int l = 0; l < cfg_.levels; ++l) {
        const Index fan_in = d_in + 3;
        LevelParams p;
        p.w = store.create_normal(prefix + ".l" + std::to_string(l) + ".W", fan_in, dims[l],
                                  kaiming(fan_in), rng);
        p.b = store.create_zeros(prefix + ".l" + std::to_string(l) + ".b", 1, dims[l]);
        level_mlp_.push_back(p);
        d_in = dims[l];
    }

    const Index d_top = dims.back();
    head_hidden_.w =
        store.create_normal(prefix + ".head.fc1.W", d_top, d_top, kaiming(d_top), rng);
    head_hidden_.b = store.create_zeros(prefix + ".head.fc1.b", 1, d_top);
    head_out_.w = store.create_normal(prefix + ".head.fc2.W", d_top, cfg_.classes,
                                      std::sqrt(1.0 / static_cast<double>(d_top)), rng);
    head_out_.b = store.create_zeros(prefix + ".head.fc2.b", 1, cfg_.classes);
}

ForwardTrace Encoder::forward(const Mat& positions, std::uint64_t fps_seed) const {
    if (positions.rows() < cfg_.points_per_level[0])
        throw std::invalid_argument("encoder forward: cloud smaller than first level");
    if (positions.cols() != 3)
        throw std::invalid_argument("encoder forward: positions must be N x 3");

    ForwardTrace trace;
    bkr::LevelFeature current;
    current.level = -1;
    current.positions = positions;
    current.features = diff::DiffNode::constant(positions);

    for (int l = 0; l < cfg_.levels; ++l) {
        current = sa_level(current, cfg_.points_per_level[static_cast<std::size_t>(l)],
                           cfg_.knn_group, level_mlp_[static_cast<std::size_t>(l)].w,
                           level_mlp_[static_cast<std::size_t>(l)].b,
                           seed_combine(fps_seed, static_cast<std::uint64_t>(l)), l);
        trace.levels.push_back(current);
    }

    diff::DiffNode global = current.features;
    if (global.rows() > 1) global = diff::reduce_max_rows(global);
    diff::DiffNode hidden =
        diff::relu(diff::pointwise_linear(global, head_hidden_.w, head_hidden_.b));
    trace.logits = diff::pointwise_linear(hidden, head_out_.w, head_out_.b);
    return trace;
}

std::int64_t Encoder::param_count() const {
    std::int64_t n = 0;
    for (const auto& p : level_mlp_) n += p.w.value().size() + p.b.value().size();
    n += head_hidden_.w.value().size() + head_hidden_.b.value().size();
    n += head_out_.w.value().size() + head_out_.b.value().size();
    return n;
}

TeacherStudentPair teacher_student_pair(const EncoderConfig& base, double student_width) {
    base.validate();
    TeacherStudentPair pair;
    pair.teacher_cfg = base;
    pair.teacher_cfg.width_scale = 1.0;
    pair.student_cfg = base;
    pair.student_cfg.width_scale = student_width;
    return pair;
}

}  // namespace pcdistill::nets
