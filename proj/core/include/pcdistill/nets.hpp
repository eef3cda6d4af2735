#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcdistill/bkr.hpp"
#include "pcdistill/diff.hpp"
#include "pcdistill/param_store.hpp"
#include "pcdistill/types.hpp"

namespace pcdistill::nets {

/// Topology of the hierarchical encoder. Teacher and student share the level
/// structure and the sampling schedule; width_scale shrinks every feature
/// width (1 for the teacher, 1/8 for the student).
struct EncoderConfig {
    int levels = 3;
    std::vector<Index> points_per_level = {64, 16, 1};
    std::vector<int> dims_per_level = {32, 64, 128};
    int knn_group = 8;
    int classes = 4;
    double width_scale = 1.0;

    /// Per-level widths after scaling: max(1, round(d * width_scale)).
    std::vector<int> scaled_dims() const;
    void validate() const;
};

/// One forward pass: the captured per-level features plus the class logits.
struct ForwardTrace {
    std::vector<bkr::LevelFeature> levels;
    diff::DiffNode logits;  // 1 x C
};

/// Value-only snapshot of a trace (teacher side of distillation: positions
/// and feature values with no gradient graph attached).
struct FrozenTrace {
    std::vector<Mat> positions;
    std::vector<Mat> features;
    Mat logits;
};

FrozenTrace freeze(const ForwardTrace& trace);

/// Hierarchical point encoder: each level samples centroids by seeded FPS,
/// groups neighbors, lifts (feature, relative position) pairs through a
/// shared pointwise MLP and max-pools each group. A level with one output
/// point pools globally over the previous level.
class Encoder {
  public:
    Encoder(EncoderConfig cfg, diff::ParamStore& store, std::string prefix,
            std::uint64_t init_seed);

    /// Runs the chain of set-abstraction levels and the classifier head.
    /// fps_seed drives the per-level sampling; two encoders with different
    /// seeds select different centroids from the same cloud.
    ForwardTrace forward(const Mat& positions, std::uint64_t fps_seed) const;

    const EncoderConfig& config() const { return cfg_; }
    std::int64_t param_count() const;

  private:
    struct LevelParams {
        diff::DiffNode w, b;
    };
    EncoderConfig cfg_;
    std::vector<LevelParams> level_mlp_;
    LevelParams head_hidden_;
    LevelParams head_out_;
};

/// One set-abstraction level as a standalone operation (the encoder chains
/// these). Returns the new level feature; input features and positions must
/// have matching row counts.
bkr::LevelFeature sa_level(const bkr::LevelFeature& input, Index n_out, Index knn_group,
                           const diff::DiffNode& w, const diff::DiffNode& b,
                           std::uint64_t fps_seed, int level_index);

/// Teacher/student pair sharing topology: width 1 vs width_scale, with
/// independently seeded parameter draws. FPS seeds are supplied per forward
/// call, which is where the teacher/student misalignment comes from.
struct TeacherStudentPair {
    EncoderConfig teacher_cfg;
    EncoderConfig student_cfg;
};

TeacherStudentPair teacher_student_pair(const EncoderConfig& base, double student_width);

}  // namespace pcdistill::nets
