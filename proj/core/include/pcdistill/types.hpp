#pragma once

#include <Eigen/Dense>

namespace pcdistill {

// Row-major throughout: point i / feature row i is contiguous, and the binary
// formats store row-major doubles.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using IMat = Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// A set of N points in 3-space with an optional N x d feature matrix
/// (features has zero rows when absent).
struct PointCloud {
    Mat positions;  // N x 3
    Mat features;   // N x d or 0 x 0

    Index size() const { return positions.rows(); }
    bool has_features() const { return features.size() > 0; }
};

/// Result of a k-nearest-neighbor query: row i lists the k reference indices
/// closest to query point i, sorted by ascending distance (ties: lowest index).
struct NeighborIndex {
    IMat indices;   // N_q x k
    Mat distances;  // N_q x k, nonnegative, nondecreasing along each row
};

}  // namespace pcdistill
