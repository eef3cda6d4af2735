#pragma once

#include <cstdint>
#include <vector>

#include "pcdistill/types.hpp"

namespace pcdistill::pointops {

/// Dense Euclidean distance matrix: entry (i, j) = ||a_i - b_j||_2.
/// Works for any common column count (3-D positions or d-dim features).
Mat pairwise_dist(const Mat& a, const Mat& b);

/// Farthest point sampling. The first index is drawn uniformly from the
/// seeded generator; each subsequent index maximizes the minimum distance to
/// the points already selected (ties: lowest index). Deterministic given
/// (positions, m, seed).
std::vector<Index> fps(const Mat& positions, Index m, std::uint64_t seed);
std::vector<Index> fps(const PointCloud& cloud, Index m, std::uint64_t seed);

/// Brute-force k nearest neighbors of each query row in the reference set.
NeighborIndex knn(const Mat& query, const Mat& reference, Index k);

/// Row-stochastic interpolation weights: row i holds the normalized inverse
/// squared distance weights of the k_interp coarse points nearest to fine
/// point i (zeros elsewhere). w_j = 1 / (d_j^2 + 1e-8), normalized to sum 1.
Mat interp_weights(const Mat& pos_coarse, const Mat& pos_fine, Index k_interp = 3);

/// Upsample coarse per-point features to the fine positions by inverse
/// squared distance interpolation over the k_interp nearest coarse points.
Mat interp_upsample(const Mat& feat_coarse, const Mat& pos_coarse, const Mat& pos_fine,
                    Index k_interp = 3);

/// Index of the fine point nearest to each coarse position (ties: lowest).
std::vector<Index> nearest_indices(const Mat& pos_fine, const Mat& pos_coarse);

/// Downsample by nearest-neighbor gather: row j is the fine feature at the
/// fine position closest to coarse position j. Exact when the coarse
/// positions are an FPS subset of the fine positions.
Mat nn_downsample(const Mat& feat_fine, const Mat& pos_fine, const Mat& pos_coarse);

/// Repeat a single global feature row n times.
Mat repeat_global(const Mat& feat, Index n);

}  // namespace pcdistill::pointops
