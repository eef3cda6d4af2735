#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "pcdistill/pointops.hpp"
#include "pcdistill/rng.hpp"

using namespace pcdistill;
using namespace pcdistill::pointops;

namespace {

Mat random_points(Index n, Index d, std::uint64_t seed) {
    Rng rng(seed);
    Mat m(n, d);
    for (Index i = 0; i < n; ++i)
        for (Index c = 0; c < d; ++c) m(i, c) = rng.uniform(-1.0, 1.0);
    return m;
}

Mat points3(std::initializer_list<std::initializer_list<double>> rows) {
    Mat m(static_cast<Index>(rows.size()), 3);
    Index i = 0;
    for (const auto& r : rows) {
        Index c = 0;
        for (double v : r) m(i, c++) = v;
        ++i;
    }
    return m;
}

}  // namespace

TEST_CASE("pairwise_dist basics") {
    Mat single = points3({{0, 0, 0}});
    CHECK(pairwise_dist(single, single)(0, 0) == 0.0);

    Mat a = points3({{0, 0, 0}});
    Mat b = points3({{3, 4, 0}});
    CHECK(pairwise_dist(a, b)(0, 0) == doctest::Approx(5.0));

    Mat a2 = points3({{0, 0, 0}, {1, 0, 0}});
    Mat b2 = points3({{0, 1, 0}});
    Mat d = pairwise_dist(a2, b2);
    CHECK(d(0, 0) == doctest::Approx(1.0));
    CHECK(d(1, 0) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("pairwise_dist transpose symmetry and self-distance") {
    Mat a = random_points(7, 3, 11);
    Mat b = random_points(5, 3, 12);
    Mat dab = pairwise_dist(a, b);
    Mat dba = pairwise_dist(b, a);
    CHECK((dab - dba.transpose()).cwiseAbs().maxCoeff() == 0.0);

    Mat daa = pairwise_dist(a, a);
    for (Index i = 0; i < a.rows(); ++i) CHECK(daa(i, i) == 0.0);
    CHECK((daa - daa.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pairwise_dist rejects empty input") {
    Mat empty(0, 3);
    Mat one = points3({{0, 0, 0}});
    CHECK_THROWS_AS(pairwise_dist(empty, one), std::invalid_argument);
    CHECK_THROWS_AS(pairwise_dist(one, empty), std::invalid_argument);
}

TEST_CASE("fps greedy max-min on collinear points") {
    Mat pts = points3({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}});
    // Find a seed whose uniform draw lands on index 0, then the greedy step
    // must take the far end.
    std::uint64_t seed = 0;
    while (fps(pts, 1, seed)[0] != 0) ++seed;
    std::vector<Index> sel = fps(pts, 2, seed);
    CHECK(sel[0] == 0);
    CHECK(sel[1] == 3);
}

TEST_CASE("fps m=N is a permutation and deterministic") {
    Mat pts = random_points(12, 3, 21);
    std::vector<Index> a = fps(pts, 12, 77);
    std::vector<Index> b = fps(pts, 12, 77);
    CHECK(a == b);
    std::set<Index> unique(a.begin(), a.end());
    CHECK(unique.size() == 12);
}

TEST_CASE("fps min selected distance is nonincreasing in m") {
    Mat pts = random_points(40, 3, 31);
    auto min_pairwise = [&](const std::vector<Index>& sel) {
        double best = 1e300;
        for (std::size_t i = 0; i < sel.size(); ++i)
            for (std::size_t j = i + 1; j < sel.size(); ++j)
                best = std::min(best, (pts.row(sel[i]) - pts.row(sel[j])).norm());
        return best;
    };
    double prev = 1e300;
    for (Index m = 2; m <= 16; ++m) {
        double cur = min_pairwise(fps(pts, m, 5));
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("fps rejects bad m") {
    Mat pts = random_points(4, 3, 41);
    CHECK_THROWS_AS(fps(pts, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(fps(pts, 5, 1), std::invalid_argument);
}

TEST_CASE("fps accepts a point cloud directly") {
    PointCloud cloud;
    cloud.positions = random_points(8, 3, 42);
    CHECK(fps(cloud, 3, 9) == fps(cloud.positions, 3, 9));
}

TEST_CASE("knn self query and hand-checked ordering") {
    Mat pts = random_points(6, 3, 51);
    NeighborIndex self = knn(pts, pts, 1);
    for (Index i = 0; i < 6; ++i) {
        CHECK(self.indices(i, 0) == i);
        CHECK(self.distances(i, 0) == 0.0);
    }

    Mat q = points3({{0, 0, 0}});
    Mat ref = points3({{1, 0, 0}, {0.5, 0, 0}});
    NeighborIndex nb = knn(q, ref, 2);
    CHECK(nb.indices(0, 0) == 1);
    CHECK(nb.indices(0, 1) == 0);
    CHECK(nb.distances(0, 0) == doctest::Approx(0.5));
    CHECK(nb.distances(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("knn ties resolve to the lowest reference index") {
    Mat q = points3({{0, 0, 0}});
    Mat ref = points3({{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}});
    NeighborIndex nb = knn(q, ref, 3);
    CHECK(nb.indices(0, 0) == 0);
    CHECK(nb.indices(0, 1) == 1);
    CHECK(nb.indices(0, 2) == 2);
}

TEST_CASE("knn permutation equivariance") {
    Mat q = random_points(5, 3, 61);
    Mat ref = random_points(9, 3, 62);
    NeighborIndex base = knn(q, ref, 4);

    // Reverse the reference rows; reported indices must follow.
    Mat rev(ref.rows(), 3);
    for (Index i = 0; i < ref.rows(); ++i) rev.row(i) = ref.row(ref.rows() - 1 - i);
    NeighborIndex perm = knn(q, rev, 4);
    for (Index i = 0; i < q.rows(); ++i) {
        for (Index c = 0; c < 4; ++c) {
            CHECK(perm.indices(i, c) == ref.rows() - 1 - base.indices(i, c));
            CHECK(perm.distances(i, c) == doctest::Approx(base.distances(i, c)));
        }
    }
}

TEST_CASE("knn rejects k beyond the reference size") {
    Mat pts = random_points(3, 3, 71);
    CHECK_THROWS_AS(knn(pts, pts, 4), std::invalid_argument);
}

TEST_CASE("interp_upsample coincident point dominates") {
    Mat pos_coarse = points3({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}});
    Mat feat_coarse(3, 2);
    feat_coarse << 1, 2, 3, 4, 5, 6;
    Mat pos_fine = points3({{0, 0, 0}});
    Mat up = interp_upsample(feat_coarse, pos_coarse, pos_fine, 3);
    CHECK(std::abs(up(0, 0) - 1.0) < 1e-6);
    CHECK(std::abs(up(0, 1) - 2.0) < 1e-6);
}

TEST_CASE("interp_upsample equidistant neighbors average evenly") {
    Mat pos_coarse = points3({{1, 0, 0}, {-0.5, 0.8660254037844386, 0},
                              {-0.5, -0.8660254037844386, 0}});
    Mat feat_coarse = Mat::Identity(3, 3);
    Mat pos_fine = points3({{0, 0, 0}});
    Mat up = interp_upsample(feat_coarse, pos_coarse, pos_fine, 3);
    for (Index c = 0; c < 3; ++c) CHECK(up(0, c) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("interp_upsample rejects an empty coarse set") {
    Mat empty(0, 3);
    Mat fine = random_points(3, 3, 82);
    CHECK_THROWS_AS(interp_upsample(Mat(0, 2), empty, fine, 3), std::invalid_argument);
}

TEST_CASE("interp_upsample degenerate single coarse point") {
    Mat pos_coarse = points3({{0.3, 0.2, 0.1}});
    Mat feat_coarse(1, 2);
    feat_coarse << 7, -2;
    Mat pos_fine = random_points(5, 3, 81);
    Mat up = interp_upsample(feat_coarse, pos_coarse, pos_fine, 3);
    for (Index i = 0; i < 5; ++i) {
        CHECK(up(i, 0) == doctest::Approx(7.0));
        CHECK(up(i, 1) == doctest::Approx(-2.0));
    }
}

TEST_CASE("interp_upsample rows stay inside the neighbor envelope") {
    Mat pos_coarse = random_points(10, 3, 91);
    Mat feat_coarse = random_points(10, 4, 92);
    Mat pos_fine = random_points(20, 3, 93);
    NeighborIndex nb = knn(pos_fine, pos_coarse, 3);
    Mat up = interp_upsample(feat_coarse, pos_coarse, pos_fine, 3);
    for (Index i = 0; i < 20; ++i) {
        for (Index c = 0; c < 4; ++c) {
            double lo = 1e300, hi = -1e300;
            for (Index k = 0; k < 3; ++k) {
                lo = std::min(lo, feat_coarse(nb.indices(i, k), c));
                hi = std::max(hi, feat_coarse(nb.indices(i, k), c));
            }
            CHECK(up(i, c) >= lo - 1e-9);
            CHECK(up(i, c) <= hi + 1e-9);
        }
    }
}

TEST_CASE("nn_downsample gathers exactly on subset positions") {
    Mat pos_fine = random_points(12, 3, 101);
    Mat feat_fine = random_points(12, 5, 102);
    std::vector<Index> pick = {0, 3, 7};
    Mat pos_coarse(3, 3);
    for (Index j = 0; j < 3; ++j) pos_coarse.row(j) = pos_fine.row(pick[static_cast<std::size_t>(j)]);
    Mat down = nn_downsample(feat_fine, pos_fine, pos_coarse);
    for (Index j = 0; j < 3; ++j)
        CHECK((down.row(j) - feat_fine.row(pick[static_cast<std::size_t>(j)])).cwiseAbs().maxCoeff() ==
              0.0);
}

TEST_CASE("nn_downsample single fine point and tie rule") {
    Mat pos_fine = points3({{0.1, 0.2, 0.3}});
    Mat feat_fine(1, 2);
    feat_fine << 4, 5;
    Mat pos_coarse = random_points(4, 3, 111);
    Mat down = nn_downsample(feat_fine, pos_fine, pos_coarse);
    for (Index j = 0; j < 4; ++j) {
        CHECK(down(j, 0) == 4.0);
        CHECK(down(j, 1) == 5.0);
    }

    // Coarse point equidistant from two fine points: lowest index wins.
    Mat pf = points3({{1, 0, 0}, {-1, 0, 0}});
    Mat ff(2, 1);
    ff << 10, 20;
    Mat pc = points3({{0, 0, 0}});
    CHECK(nn_downsample(ff, pf, pc)(0, 0) == 10.0);
}

TEST_CASE("repeat_global") {
    Mat feat(1, 2);
    feat << 1, 2;
    Mat rep = repeat_global(feat, 3);
    CHECK(rep.rows() == 3);
    for (Index i = 0; i < 3; ++i) {
        CHECK(rep(i, 0) == 1.0);
        CHECK(rep(i, 1) == 2.0);
    }
    CHECK((repeat_global(feat, 1) - feat).cwiseAbs().maxCoeff() == 0.0);
    CHECK(rep.colwise().sum()(0) == doctest::Approx(3.0));
    CHECK_THROWS_AS(repeat_global(feat, 0), std::invalid_argument);
}
