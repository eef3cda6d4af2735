#include "pcdistill/pointops.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#include "pcdistill/rng.hpp"

namespace pcdistill::pointops {

Mat pairwise_dist(const Mat& a, const Mat& b) {
    if (a.rows() == 0 || b.rows() == 0)
        throw std::invalid_argument("pairwise_dist: empty input");
    if (a.cols() != b.cols())
        throw std::invalid_argument("pairwise_dist: column mismatch");
    Mat out(a.rows(), b.rows());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < b.rows(); ++j)
            out(i, j) = (a.row(i) - b.row(j)).norm();
    return out;
}

std::vector<Index> fps(const Mat& positions, Index m, std::uint64_t seed) {
    const Index n = positions.rows();
    if (m < 1 || m > n)
        throw std::invalid_argument("fps: m must be in [1, N]");

    Rng rng(seed);
    std::vector<Index> selected;
    selected.reserve(static_cast<std::size_t>(m));
    selected.push_back(static_cast<Index>(rng.index(static_cast<std::uint64_t>(n))));

    Vec min_sq = (positions.rowwise() - positions.row(selected[0])).rowwise().squaredNorm();
    for (Index s = 1; s < m; ++s) {
        Index best = 0;
        double best_d = -1.0;
        for (Index i = 0; i < n; ++i) {
            if (min_sq(i) > best_d) {  // strict: ties keep the lowest index
                best_d = min_sq(i);
                best = i;
            }
        }
        selected.push_back(best);
        Vec d = (positions.rowwise() - positions.row(best)).rowwise().squaredNorm();
        min_sq = min_sq.cwiseMin(d);
    }
    return selected;
}

std::vector<Index> fps(const PointCloud& cloud, Index m, std::uint64_t seed) {
    return fps(cloud.positions, m, seed);
}

NeighborIndex knn(const Mat& query, const Mat& reference, Index k) {
    if (k < 1 || k > reference.rows())
        throw std::invalid_argument("knn: k must be in [1, N_ref]");
    if (query.rows() == 0)
        throw std::invalid_argument("knn: empty query");

    NeighborIndex out;
    out.indices.resize(query.rows(), k);
    out.distances.resize(query.rows(), k);

    std::vector<std::pair<double, Index>> cand(static_cast<std::size_t>(reference.rows()));
    for (Index i = 0; i < query.rows(); ++i) {
        for (Index j = 0; j < reference.rows(); ++j)
            cand[static_cast<std::size_t>(j)] = {(query.row(i) - reference.row(j)).norm(), j};
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (Index c = 0; c < k; ++c) {
            out.distances(i, c) = cand[static_cast<std::size_t>(c)].first;
            out.indices(i, c) = cand[static_cast<std::size_t>(c)].second;
        }
    }
    return out;
}

Mat interp_weights(const Mat& pos_coarse, const Mat& pos_fine, Index k_interp) {
    if (pos_coarse.rows() == 0)
        throw std::invalid_argument("interp_weights: empty coarse set");
    const Index k = std::min<Index>(k_interp, pos_coarse.rows());
    NeighborIndex nb = knn(pos_fine, pos_coarse, k);

    Mat w = Mat::Zero(pos_fine.rows(), pos_coarse.rows());
    constexpr double kEps = 1e-8;
    for (Index i = 0; i < pos_fine.rows(); ++i) {
        double total = 0.0;
        for (Index c = 0; c < k; ++c)
            total += 1.0 / (nb.distances(i, c) * nb.distances(i, c) + kEps);
        for (Index c = 0; c < k; ++c)
            w(i, nb.indices(i, c)) =
                1.0 / (nb.distances(i, c) * nb.distances(i, c) + kEps) / total;
    }
    return w;
}

Mat interp_upsample(const Mat& feat_coarse, const Mat& pos_coarse, const Mat& pos_fine,
                    Index k_interp) {
    if (feat_coarse.rows() != pos_coarse.rows())
        throw std::invalid_argument("interp_upsample: coarse feature/position mismatch");
    return interp_weights(pos_coarse, pos_fine, k_interp) * feat_coarse;
}

std::vector<Index> nearest_indices(const Mat& pos_fine, const Mat& pos_coarse) {
    if (pos_fine.rows() == 0)
        throw std::invalid_argument("nearest_indices: empty fine set");
    NeighborIndex nb = knn(pos_coarse, pos_fine, 1);
    std::vector<Index> idx(static_cast<std::size_t>(pos_coarse.rows()));
    for (Index j = 0; j < pos_coarse.rows(); ++j)
        idx[static_cast<std::size_t>(j)] = nb.indices(j, 0);
    return idx;
}

Mat nn_downsample(const Mat& feat_fine, const Mat& pos_fine, const Mat& pos_coarse) {
    if (feat_fine.rows() != pos_fine.rows())
        throw std::invalid_argument("nn_downsample: fine feature/position mismatch");
    std::vector<Index> idx = nearest_indices(pos_fine, pos_coarse);
    Mat out(pos_coarse.rows(), feat_fine.cols());
    for (Index j = 0; j < pos_coarse.rows(); ++j)
        out.row(j) = feat_fine.row(idx[static_cast<std::size_t>(j)]);
    return out;
}

Mat repeat_global(const Mat& feat, Index n) {
    if (feat.rows() != 1)
        throw std::invalid_argument("repeat_global: expected a single row");
    if (n < 1)
        throw std::invalid_argument("repeat_global: n must be >= 1");
    Mat out(n, feat.cols());
    for (Index i = 0; i < n; ++i) out.row(i) = feat.row(0);
    return out;
}

}  // namespace pcdistill::pointops
