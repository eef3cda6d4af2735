#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcdistill/rng.hpp"
#include "pcdistill/types.hpp"

namespace pcdistill::harness {

/// Four surface classes, chosen so curvature differences make the sampled
/// sets FPS-sensitive.
enum class ShapeClass { sphere, cube, cylinder, cone };

constexpr int kNumClasses = 4;

const char* shape_name(ShapeClass c);

struct DatasetConfig {
    int n_train = 256;
    int n_test = 128;
    Index points_per_cloud = 96;
    double noise_sigma = 0.02;
    std::uint64_t seed = 1;
};

struct LabeledClouds {
    std::vector<Mat> clouds;  // each N x 3, normalized into [-1, 1]^3
    std::vector<int> labels;
};

struct Dataset {
    LabeledClouds train;
    LabeledClouds test;
};

/// One point drawn uniformly from the raw (un-normalized) surface.
Eigen::RowVector3d sample_surface_point(ShapeClass c, Rng& rng);

/// n surface points of one class, before jitter and normalization.
Mat sample_surface(ShapeClass c, Index n, Rng& rng);

/// Center at the centroid and scale by the max point norm, fitting the cloud
/// into the unit ball (all coordinates in [-1, 1]).
Mat normalize_cloud(Mat cloud);

/// One finished training sample: surface points, Gaussian jitter, normalize.
Mat make_cloud(ShapeClass c, Index n, double noise_sigma, Rng& rng);

/// Balanced, label-interleaved train/test split, deterministic per seed.
Dataset gen_dataset(const DatasetConfig& cfg);

}  // namespace pcdistill::harness
