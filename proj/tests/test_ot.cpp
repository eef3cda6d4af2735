#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pcdistill/diff.hpp"
#include "pcdistill/ot.hpp"
#include "pcdistill/pointops.hpp"
#include "pcdistill/rng.hpp"

using namespace pcdistill;
using namespace pcdistill::ot;

namespace {

Mat random_mat(Index r, Index c, std::uint64_t seed) {
    Rng rng(seed);
    Mat m(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = rng.uniform();
    return m;
}

Mat random_normal(Index r, Index c, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Mat m(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
}

WeightedFeatureSet set1d(std::initializer_list<double> values) {
    Mat m(static_cast<Index>(values.size()), 1);
    Index i = 0;
    for (double v : values) m(i++, 0) = v;
    return WeightedFeatureSet::uniform(std::move(m));
}

}  // namespace

TEST_CASE("emd_bruteforce hand instances") {
    auto a = set1d({0.0, 1.0});
    auto b = set1d({0.1, 0.9});
    // identity matching: (0.1 + 0.1)/2; swap: (0.9 + 0.9)/2
    CHECK(emd_bruteforce(a, b) == doctest::Approx(0.1));
    CHECK(emd_bruteforce(a, a) == 0.0);

    auto sa = set1d({0.3});
    auto sb = set1d({0.8});
    CHECK(emd_bruteforce(sa, sb) == doctest::Approx(0.5));
}

TEST_CASE("emd_bruteforce guards") {
    auto big = WeightedFeatureSet::uniform(random_mat(9, 2, 1));
    CHECK_THROWS_AS(emd_bruteforce(big, big), std::invalid_argument);

    WeightedFeatureSet lop = set1d({0.0, 1.0});
    lop.weights(0) = 0.9;
    lop.weights(1) = 0.1;
    CHECK_THROWS_AS(emd_bruteforce(lop, lop), std::invalid_argument);
    CHECK_THROWS_AS(emd_bruteforce(set1d({0.0}), set1d({0.0, 1.0})),
                    std::invalid_argument);
}

TEST_CASE("emd_assignment agrees with the brute-force oracle on 200 instances") {
    Rng pick(42);
    for (int trial = 0; trial < 200; ++trial) {
        const Index n = 2 + static_cast<Index>(pick.index(6));  // 2..7
        const Index dims[] = {1, 2, 8};
        const Index d = dims[pick.index(3)];
        auto a = WeightedFeatureSet::uniform(random_mat(n, d, 10000 + trial));
        auto b = WeightedFeatureSet::uniform(random_mat(n, d, 20000 + trial));
        auto [cost, plan] = emd_assignment(a, b);
        CHECK(std::abs(cost - emd_bruteforce(a, b)) <= 1e-9);
        // Plan is a permutation matrix scaled by 1/n.
        CHECK((plan.flow.rowwise().sum().array() - 1.0 / n).abs().maxCoeff() < 1e-12);
        CHECK((plan.flow.colwise().sum().array() - 1.0 / n).abs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("emd_assignment identity and scale homogeneity") {
    auto a = WeightedFeatureSet::uniform(random_mat(5, 3, 7));
    auto [cost, plan] = emd_assignment(a, a);
    CHECK(cost == doctest::Approx(0.0));
    for (Index i = 0; i < 5; ++i) CHECK(plan.flow(i, i) == doctest::Approx(0.2));

    auto b = WeightedFeatureSet::uniform(random_mat(5, 3, 8));
    double base = emd_assignment(a, b).first;
    WeightedFeatureSet a3 = a, b3 = b;
    a3.features *= 3.0;
    b3.features *= 3.0;
    CHECK(emd_assignment(a3, b3).first == doctest::Approx(3.0 * base));
}

TEST_CASE("remd hand instance and identity") {
    auto a = set1d({0.0, 1.0});
    auto b = set1d({0.1, 0.9});
    CHECK(remd(a, b) == doctest::Approx(0.1));
    CHECK(remd(a, a) == 0.0);
}

TEST_CASE("remd is a lower bound on exact EMD across 200 instances") {
    Rng pick(43);
    for (int trial = 0; trial < 200; ++trial) {
        const Index n = 2 + static_cast<Index>(pick.index(6));
        const Index dims[] = {1, 2, 8};
        const Index d = dims[pick.index(3)];
        auto a = WeightedFeatureSet::uniform(random_mat(n, d, 30000 + trial));
        auto b = WeightedFeatureSet::uniform(random_mat(n, d, 40000 + trial));
        CHECK(remd(a, b) <= emd_assignment(a, b).first + 1e-9);
    }
}

TEST_CASE("remd positive on disjoint sets") {
    auto a = set1d({0.0, 0.2});
    auto b = set1d({5.0, 6.0});
    CHECK(remd(a, b) > 0.0);
}

TEST_CASE("sinkhorn approaches exact EMD at small regularization") {
    auto a = set1d({0.0, 1.0});
    auto b = set1d({0.1, 0.9});
    SinkhornResult res = sinkhorn(a, b, 1e-3);
    CHECK(std::abs(res.cost - 0.1) < 1e-2);
    CHECK(res.converged);
    CHECK(res.marginal_error < 1e-9);

    // identical sets: cost collapses with eps
    auto c = WeightedFeatureSet::uniform(random_mat(4, 2, 9));
    CHECK(sinkhorn(c, c, 1e-3).cost < 5e-3);
}

TEST_CASE("sinkhorn cost approaches EMD as eps shrinks") {
    auto a = WeightedFeatureSet::uniform(random_mat(6, 2, 140));
    auto b = WeightedFeatureSet::uniform(random_mat(6, 2, 141));
    const double exact = emd_assignment(a, b).first;
    double prev_gap = 1e300;
    for (double eps : {0.1, 0.01, 0.001}) {
        const double gap = std::abs(sinkhorn(a, b, eps).cost - exact);
        CHECK(gap <= prev_gap + 1e-12);
        prev_gap = gap;
    }
}

TEST_CASE("sinkhorn marginals match the input weights") {
    Rng rng(11);
    auto a = WeightedFeatureSet::uniform(random_mat(5, 2, 12));
    auto b = WeightedFeatureSet::uniform(random_mat(5, 2, 13));
    // nonuniform weights exercise the general path
    for (Index i = 0; i < 5; ++i) {
        a.weights(i) = 0.5 + rng.uniform();
        b.weights(i) = 0.5 + rng.uniform();
    }
    SinkhornResult res = sinkhorn(a, b, 1e-2, 2000000, 1e-10);
    CHECK(res.converged);
    Vec wa = a.weights / a.weights.sum();
    Vec wb = b.weights / b.weights.sum();
    CHECK((res.plan.flow.rowwise().sum() - wa).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((res.plan.flow.colwise().sum().transpose() - wb).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("sinkhorn rejects bad inputs and flags non-convergence") {
    auto a = set1d({0.0, 1.0});
    CHECK_THROWS_AS(sinkhorn(a, a, 0.0), std::invalid_argument);
    WeightedFeatureSet zero = a;
    zero.weights(0) = 0.0;
    CHECK_THROWS_AS(sinkhorn(zero, a, 1e-2), std::invalid_argument);

    auto c = WeightedFeatureSet::uniform(random_mat(6, 2, 14));
    auto d = WeightedFeatureSet::uniform(random_mat(6, 2, 15));
    SinkhornResult starved = sinkhorn(c, d, 1e-3, 3, 1e-14);
    CHECK_FALSE(starved.converged);  // flagged, not thrown
}

TEST_CASE("fmd_plan one-hot, symmetry, and flat-kernel limits") {
    Mat pos_s = random_normal(6, 3, 16, 0.5);
    Mat pos_t = random_normal(8, 3, 17, 0.5);

    SparsePlan k1 = fmd_plan(pos_s, pos_t, 1, 0.3);
    for (Index i = 0; i < 6; ++i) CHECK(k1.weights(i, 0) == 1.0);

    // two equidistant neighbors: exact 0.5/0.5 split
    Mat ps(1, 3), pt(2, 3);
    ps << 0, 0, 0;
    pt << 1, 0, 0, -1, 0, 0;
    SparsePlan sym = fmd_plan(ps, pt, 2, 0.7);
    CHECK(sym.weights(0, 0) == 0.5);
    CHECK(sym.weights(0, 1) == 0.5);

    SparsePlan flat = fmd_plan(pos_s, pos_t, 4, 1e9);
    CHECK((flat.weights.array() - 0.25).abs().maxCoeff() < 1e-6);

    SparsePlan p = fmd_plan(pos_s, pos_t, 5, 0.2);
    CHECK((p.weights.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-9);
    CHECK(p.weights.minCoeff() >= 0.0);

    CHECK_THROWS_AS(fmd_plan(pos_s, pos_t, 9, 0.3), std::invalid_argument);
    CHECK_THROWS_AS(fmd_plan(pos_s, pos_t, 2, 0.0), std::invalid_argument);
}

TEST_CASE("apc_weights clamped inner products") {
    // hand instance: F_r = [[1,1],[0,1]], mean teacher feature [0.5, 1]
    Mat f_t(2, 2);
    f_t << 1, 0, 0, 2;  // column means: 0.5, 1
    diff::DiffNode f_r = diff::DiffNode::param((Mat(2, 2) << 1, 1, 0, 1).finished());
    diff::DiffNode s = apc_weights(f_r, f_t);
    CHECK(s.value()(0, 0) == doctest::Approx(1.5));
    CHECK(s.value()(1, 0) == doctest::Approx(1.0));

    // orthogonal mean: all clamped to zero
    Mat f_t2(2, 2);
    f_t2 << 0, 1, 0, -1;
    diff::DiffNode f_r2 = diff::DiffNode::param((Mat(1, 2) << 3, 0).finished());
    CHECK(apc_weights(f_r2, f_t2).value()(0, 0) == 0.0);

    // aligned unit vector
    Mat f_t3 = (Mat(1, 2) << 1, 0).finished();
    diff::DiffNode f_r3 = diff::DiffNode::param((Mat(1, 2) << 1, 0).finished());
    CHECK(apc_weights(f_r3, f_t3).value()(0, 0) == doctest::Approx(1.0));

    CHECK_THROWS_AS(apc_weights(f_r, Mat::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("fmd_loss identity and fully hand-evaluated instance") {
    Mat pos = random_normal(5, 3, 18, 0.5);
    Mat feat = random_normal(5, 4, 19, 1.0);
    diff::DiffNode f_r = diff::DiffNode::param(feat);
    FmdOptions k1;
    k1.k = 1;
    CHECK(fmd_loss(f_r, pos, feat, pos, k1).scalar() == 0.0);

    // positions offset by 0.1 in z, k = 1: plan picks the aligned teacher
    // point; residual norms are 1 and 1; APC weights 1.5 and 1.0.
    Mat pos_s(2, 3), pos_t(2, 3);
    pos_s << 0, 0, 0, 1, 0, 0;
    pos_t << 0, 0, 0.1, 1, 0, 0.1;
    diff::DiffNode fr = diff::DiffNode::param((Mat(2, 2) << 1, 1, 0, 1).finished());
    Mat ft(2, 2);
    ft << 1, 0, 0, 2;
    CHECK(fmd_loss(fr, pos_s, ft, pos_t, k1).scalar() == doctest::Approx(2.5));
}

TEST_CASE("fmd_loss rejects mismatched shapes") {
    Mat pos_s = random_normal(4, 3, 300, 0.5);
    Mat pos_t = random_normal(5, 3, 301, 0.5);
    diff::DiffNode f_r = diff::DiffNode::param(random_normal(4, 3, 302));
    FmdOptions opt;
    opt.k = 2;
    CHECK_THROWS_AS(fmd_loss(f_r, pos_s, random_normal(5, 4, 303), pos_t, opt),
                    std::invalid_argument);  // feature dim
    CHECK_THROWS_AS(fmd_loss(f_r, pos_t, random_normal(5, 3, 304), pos_t, opt),
                    std::invalid_argument);  // row count
    FmdOptions big;
    big.k = 6;
    CHECK_THROWS_AS(fmd_loss(f_r, pos_s, random_normal(5, 3, 305), pos_t, big),
                    std::invalid_argument);  // k > N_t
}

TEST_CASE("fmd_loss gradient matches finite differences") {
    Mat pos_s = random_normal(8, 3, 20, 0.5);
    Mat pos_t = random_normal(8, 3, 21, 0.5);
    Mat f_t = random_normal(8, 4, 22, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        diff::DiffNode f_r =
            diff::DiffNode::param(random_normal(8, 4, 23 + static_cast<std::uint64_t>(trial)));
        std::vector<diff::DiffNode> params = {f_r};
        FmdOptions opt;
        opt.k = 3;
        auto f = [&] { return fmd_loss(f_r, pos_s, f_t, pos_t, opt); };
        CHECK(diff::grad_check(f, params, 1e-5) < 1e-4);

        FmdOptions norm = opt;
        norm.normalize_apc = true;
        auto fn = [&] { return fmd_loss(f_r, pos_s, f_t, pos_t, norm); };
        CHECK(diff::grad_check(fn, params, 1e-5) < 1e-4);
    }
}

TEST_CASE("fmd_loss is invariant to teacher permutations") {
    Mat pos_s = random_normal(7, 3, 30, 0.5);
    Mat pos_t = random_normal(9, 3, 31, 0.5);
    Mat f_t = random_normal(9, 4, 32);
    diff::DiffNode f_r = diff::DiffNode::param(random_normal(7, 4, 33));
    FmdOptions opt;
    opt.k = 4;
    opt.tau = 0.4;
    const double base = fmd_loss(f_r, pos_s, f_t, pos_t, opt).scalar();

    Rng rng(34);
    std::vector<Index> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Mat pos_p(9, 3), f_p(9, 4);
    for (Index i = 0; i < 9; ++i) {
        pos_p.row(i) = pos_t.row(perm[static_cast<std::size_t>(i)]);
        f_p.row(i) = f_t.row(perm[static_cast<std::size_t>(i)]);
    }
    CHECK(std::abs(fmd_loss(f_r, pos_s, f_p, pos_p, opt).scalar() - base) <= 1e-12);
}

TEST_CASE("fmd_loss nonnegative and global-barycenter limit") {
    Mat pos_s = random_normal(6, 3, 40, 0.5);
    Mat pos_t = random_normal(10, 3, 41, 0.5);
    Mat f_t = random_normal(10, 3, 42);
    diff::DiffNode f_r = diff::DiffNode::param(random_normal(6, 3, 43));

    FmdOptions opt;
    opt.k = 10;       // every teacher point in every row's neighborhood
    opt.tau = 1e8;    // flat kernel
    const double loss = fmd_loss(f_r, pos_s, f_t, pos_t, opt).scalar();
    CHECK(loss >= 0.0);

    // independent evaluation of sum_i s_i ||F_r_i - mean(F_t)||
    Mat mean = f_t.colwise().mean();
    double expected = 0.0;
    for (Index i = 0; i < 6; ++i) {
        const double s = std::max(0.0, f_r.value().row(i).dot(mean.row(0)));
        expected += s * (f_r.value().row(i) - mean.row(0)).norm();
    }
    CHECK(loss == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("fl2_loss identity adapter values") {
    Mat f_t = random_normal(4, 3, 50);
    diff::DiffNode f_s = diff::DiffNode::param(f_t);
    diff::DiffNode w = diff::DiffNode::param(Mat::Identity(3, 3));
    diff::DiffNode b = diff::DiffNode::param(Mat::Zero(1, 3));
    CHECK(fl2_loss(f_s, f_t, w, b).scalar() == 0.0);

    diff::DiffNode zero = diff::DiffNode::param(Mat::Zero(1, 1));
    diff::DiffNode w1 = diff::DiffNode::param(Mat::Identity(1, 1));
    diff::DiffNode b1 = diff::DiffNode::param(Mat::Zero(1, 1));
    CHECK(fl2_loss(zero, (Mat(1, 1) << 2.0).finished(), w1, b1).scalar() ==
          doctest::Approx(4.0));

    CHECK_THROWS_AS(fl2_loss(f_s, Mat::Zero(3, 3), w, b), std::invalid_argument);
}

TEST_CASE("teacher permutation breaks fl2 but not fmd") {
    Mat pos = random_normal(6, 3, 60, 0.5);
    Mat f_t = random_normal(6, 3, 61);
    diff::DiffNode f_s = diff::DiffNode::param(random_normal(6, 3, 62));
    diff::DiffNode w = diff::DiffNode::param(Mat::Identity(3, 3));
    diff::DiffNode b = diff::DiffNode::param(Mat::Zero(1, 3));

    std::vector<Index> perm = {3, 1, 5, 0, 2, 4};
    Mat pos_p(6, 3), f_p(6, 3);
    for (Index i = 0; i < 6; ++i) {
        pos_p.row(i) = pos.row(perm[static_cast<std::size_t>(i)]);
        f_p.row(i) = f_t.row(perm[static_cast<std::size_t>(i)]);
    }

    const double fl2_base = fl2_loss(f_s, f_t, w, b).scalar();
    const double fl2_perm = fl2_loss(f_s, f_p, w, b).scalar();
    CHECK(std::abs(fl2_base - fl2_perm) > 1e-6);  // index-aligned: order matters

    FmdOptions opt;
    opt.k = 3;
    opt.tau = 0.5;
    const double fmd_base = fmd_loss(f_s, pos, f_t, pos, opt).scalar();
    const double fmd_perm = fmd_loss(f_s, pos, f_p, pos_p, opt).scalar();
    CHECK(std::abs(fmd_base - fmd_perm) <= 1e-12);
}

TEST_CASE("remd_loss matches the plain solver and differentiates") {
    Mat f_t = random_normal(7, 3, 70);
    Mat f_s = random_normal(5, 3, 71);
    diff::DiffNode node = diff::DiffNode::param(f_s);
    const double via_graph = remd_loss(node, f_t).scalar();
    const double via_solver =
        remd(WeightedFeatureSet::uniform(f_s), WeightedFeatureSet::uniform(f_t));
    CHECK(via_graph == doctest::Approx(via_solver).epsilon(1e-12));

    std::vector<diff::DiffNode> params = {node};
    auto f = [&] { return remd_loss(node, f_t); };
    CHECK(diff::grad_check(f, params, 1e-5) < 1e-4);
}

TEST_CASE("adaptive_tau equals the mean kNN distance") {
    Mat pos_s = random_normal(5, 3, 80, 0.5);
    Mat pos_t = random_normal(7, 3, 81, 0.5);
    NeighborIndex nb = pointops::knn(pos_s, pos_t, 3);
    CHECK(adaptive_tau(pos_s, pos_t, 3) == doctest::Approx(nb.distances.mean()));
    CHECK(adaptive_tau(pos_s, pos_s, 1) == 1e-12);  // coincident guard
}
